"""U-Net texture branch with a ResNet-style encoder."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import TextureBranchConfig


class FusionShapeError(ValueError):
    pass


def conv3x3(cin, cout, stride=1):
    return nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)


class BasicBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.conv1 = conv3x3(cin, cout, stride)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = conv3x3(cout, cout)
        self.bn2 = nn.BatchNorm2d(cout)
        self.downsample = None
        if stride != 1 or cin != cout:
            self.downsample = nn.Sequential(
                nn.Conv2d(cin, cout, 1, stride=stride, bias=False), nn.BatchNorm2d(cout)
            )

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + identity)


def _layer(cin, cout, blocks, stride):
    layers = [BasicBlock(cin, cout, stride)]
    layers += [BasicBlock(cout, cout) for _ in range(blocks - 1)]
    return nn.Sequential(*layers)


class ResNetEncoder(nn.Module):
    """Encoder returning one feature map per stage (strides 2, 4, ..., 2**n)."""

    def __init__(self, cfg: TextureBranchConfig):
        super().__init__()
        ch = cfg.encoder_stage_channels
        if cfg.backbone == "resnet34-like":
            stem = nn.Sequential(
                nn.Conv2d(cfg.in_channels, ch[0], 7, stride=2, padding=3, bias=False),
                nn.BatchNorm2d(ch[0]),
                nn.ReLU(inplace=True),
            )
            blocks = (3, 4, 6, 3)
            stages = [stem, nn.Sequential(nn.MaxPool2d(3, stride=2, padding=1), _layer(ch[0], ch[1], blocks[0], 1))]
            for i in range(2, 5):
                stages.append(_layer(ch[i - 1], ch[i], blocks[i - 1], 2))
        else:
            stem = nn.Sequential(
                nn.Conv2d(cfg.in_channels, ch[0], 3, stride=2, padding=1, bias=False),
                nn.BatchNorm2d(ch[0]),
                nn.ReLU(inplace=True),
            )
            stages = [stem] + [BasicBlock(ch[i - 1], ch[i], stride=2) for i in range(1, len(ch))]
        self.stages = nn.ModuleList(stages)


class DecoderBlock(nn.Module):
    def __init__(self, cin: int, cskip: int, cout: int):
        super().__init__()
        self.conv1 = nn.Sequential(conv3x3(cin + cskip, cout), nn.BatchNorm2d(cout), nn.ReLU(inplace=True))
        self.conv2 = nn.Sequential(conv3x3(cout, cout), nn.BatchNorm2d(cout), nn.ReLU(inplace=True))

    def forward(self, x, skip=None):
        x = F.interpolate(x, scale_factor=2.0, mode="nearest")
        if skip is not None:
            x = torch.cat([x, skip], dim=1)
        return self.conv2(self.conv1(x))


class TextureUNet(nn.Module):
    """U-Net over the 5-band aerial patch.

    Fusion masks and the projected metadata vector are added to each encoder
    stage output before it feeds the next stage and the skip connection.
    """

    def __init__(self, cfg: TextureBranchConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = ResNetEncoder(cfg)
        enc = cfg.encoder_stage_channels
        dec = cfg.decoder_channels
        blocks = []
        cin = enc[-1]
        for i in range(len(enc) - 1):
            blocks.append(DecoderBlock(cin, enc[-2 - i], dec[i]))
            cin = dec[i]
        if cfg.full_res_block:
            blocks.append(DecoderBlock(cin, 0, dec[-1]))
            cin = dec[-1]
        self.decoder = nn.ModuleList(blocks)
        self.head = nn.Conv2d(cin, cfg.n_classes, 3, padding=1)

    def forward(self, x, fusion_masks=None, metadata_vecs=None):
        """Return (logits, encoder features).

        ``fusion_masks`` is an optional list with one (B, C, H, W) tensor per
        stage; ``metadata_vecs`` an optional list with one (B, C) tensor per stage.
        """
        feats = []
        out = x
        for i, stage in enumerate(self.encoder.stages):
            out = stage(out)
            if fusion_masks is not None:
                mask = fusion_masks[i]
                if mask.shape != out.shape:
                    raise FusionShapeError(
                        f"fusion mask for stage {i} has shape {tuple(mask.shape)}, "
                        f"feature map has {tuple(out.shape)}"
                    )
                out = out + mask
            if metadata_vecs is not None:
                out = out + metadata_vecs[i][:, :, None, None]
            feats.append(out)
        y = feats[-1]
        n_skip = len(feats) - 1
        for i, block in enumerate(self.decoder):
            skip = feats[-2 - i] if i < n_skip else None
            y = block(y, skip)
        logits = self.head(y)
        if logits.shape[-2:] != x.shape[-2:]:
            logits = F.interpolate(logits, size=x.shape[-2:], mode="bilinear", align_corners=False)
        return logits, feats
