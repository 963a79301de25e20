"""U-TAE spatio-temporal branch.

A per-date convolutional encoder, a lightweight temporal attention encoder
(L-TAE) applied pixel-wise at the lowest resolution, and a decoder in which
the attention masks collapse the temporal axis of each skip connection.
Padded dates (``pad_mask`` True) receive zero attention.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import TemporalBranchConfig


class EmptyTemporalAxisError(ValueError):
    pass


def _norm(ch):
    # up to 4 groups; the group count must divide the width
    return nn.GroupNorm(math.gcd(4, ch), ch)


class ConvLayer(nn.Module):
    def __init__(self, widths: list[int], k: int = 3, s: int = 1, p: int = 1, last_relu: bool = True):
        super().__init__()
        layers = []
        for i in range(len(widths) - 1):
            layers.append(nn.Conv2d(widths[i], widths[i + 1], k, stride=s, padding=p))
            layers.append(_norm(widths[i + 1]))
            if last_relu or i < len(widths) - 2:
                layers.append(nn.ReLU())
        self.conv = nn.Sequential(*layers)

    def forward(self, x):
        return self.conv(x)


def per_date(module, x):
    """Apply a 2-D module to every date of a (B, T, C, H, W) tensor."""
    b, t = x.shape[:2]
    out = module(x.reshape(b * t, *x.shape[2:]))
    return out.view(b, t, *out.shape[1:])


class DownConvBlock(nn.Module):
    def __init__(self, d_in: int, d_out: int):
        super().__init__()
        self.down = ConvLayer([d_in, d_in], k=4, s=2, p=1)
        self.conv1 = ConvLayer([d_in, d_out])
        self.conv2 = ConvLayer([d_out, d_out])

    def forward(self, x):
        out = self.conv1(self.down(x))
        return out + self.conv2(out)


class UpConvBlock(nn.Module):
    def __init__(self, d_in: int, d_out: int, d_skip: int):
        super().__init__()
        self.skip_conv = nn.Sequential(nn.Conv2d(d_skip, d_skip, 1), _norm(d_skip), nn.ReLU())
        self.up = nn.Sequential(nn.ConvTranspose2d(d_in, d_out, 4, stride=2, padding=1), _norm(d_out), nn.ReLU())
        self.conv1 = ConvLayer([d_out + d_skip, d_out])
        self.conv2 = ConvLayer([d_out, d_out])

    def forward(self, x, skip):
        out = self.up(x)
        out = torch.cat([out, self.skip_conv(skip)], dim=1)
        out = self.conv1(out)
        return out + self.conv2(out)


class PositionalEncoder(nn.Module):
    """Sinusoidal encoding of acquisition day-of-year, repeated once per head."""

    def __init__(self, d: int, period: float = 1000.0, repeat: int = 1):
        super().__init__()
        self.d = d
        self.repeat = repeat
        self.period = period

    def forward(self, positions):
        # always evaluated in float64 so that casting the module cannot alter the encoding
        exponent = 2 * (torch.arange(self.d, device=positions.device) // 2).double() / self.d
        x = positions[..., None].double() / torch.pow(self.period, exponent)
        even = torch.arange(self.d, device=x.device) % 2 == 0
        x = torch.where(even, torch.sin(x), torch.cos(x))
        return x.repeat(*([1] * (x.dim() - 1)), self.repeat)


class MasterQueryAttention(nn.Module):
    """Multi-head attention with one learned query per head."""

    def __init__(self, n_head: int, d_k: int, d_in: int):
        super().__init__()
        self.n_head, self.d_k, self.d_in = n_head, d_k, d_in
        self.Q = nn.Parameter(torch.zeros(n_head, d_k))
        nn.init.normal_(self.Q, mean=0.0, std=math.sqrt(2.0 / d_k))
        self.fc1_k = nn.Linear(d_in, n_head * d_k)
        nn.init.normal_(self.fc1_k.weight, mean=0.0, std=math.sqrt(2.0 / d_k))

    def forward(self, v, pad_mask=None):
        # v: (N, T, d_in) -> attention (n_head, N, T), output (n_head, N, d_in / n_head)
        n, t, _ = v.shape
        k = self.fc1_k(v).view(n, t, self.n_head, self.d_k)
        scores = torch.einsum("nthd,hd->hnt", k, self.Q) / math.sqrt(self.d_k)
        if pad_mask is not None:
            scores = scores.masked_fill(pad_mask[None], float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        vh = v.view(n, t, self.n_head, self.d_in // self.n_head)
        out = torch.einsum("hnt,ntha->hna", attn, vh)
        return out, attn


class LTAE2d(nn.Module):
    def __init__(self, cfg: TemporalBranchConfig):
        super().__init__()
        c_in = cfg.encoder_widths[-1]
        self.n_head = cfg.attention_heads
        self.in_norm = nn.GroupNorm(cfg.attention_heads, c_in)
        self.inconv = nn.Linear(c_in, cfg.d_model)
        self.positional = PositionalEncoder(cfg.d_model // cfg.attention_heads, cfg.positional_period, cfg.attention_heads)
        self.attention = MasterQueryAttention(cfg.attention_heads, cfg.d_k, cfg.d_model)
        self.mlp = nn.Sequential(nn.Linear(cfg.d_model, c_in), nn.BatchNorm1d(c_in), nn.ReLU())
        self.dropout = nn.Dropout(cfg.dropout)
        self.out_norm = nn.GroupNorm(cfg.attention_heads, c_in)

    def forward(self, x, positions, pad_mask=None):
        b, t, d, h, w = x.shape
        out = x.permute(0, 3, 4, 1, 2).reshape(b * h * w * t, d)
        # normalised per date so padded dates never leak into real ones
        out = self.inconv(self.in_norm(out)).view(b * h * w, t, -1)
        pos = positions[:, None, None, :].expand(b, h, w, t).reshape(b * h * w, t)
        out = out + self.positional(pos).to(out.dtype)
        pm = None if pad_mask is None else pad_mask[:, None, None, :].expand(b, h, w, t).reshape(b * h * w, t)
        out, attn = self.attention(out, pm)
        out = out.permute(1, 0, 2).reshape(b * h * w, -1)
        out = self.dropout(self.mlp(out))
        out = self.out_norm(out)
        out = out.view(b, h, w, -1).permute(0, 3, 1, 2)
        attn = attn.view(self.n_head, b, h, w, t).permute(0, 1, 4, 2, 3)  # head, B, T, h, w
        return out, attn


def temporal_aggregate(x, attn):
    """Collapse the time axis of (B, T, C, H, W) features using per-head attention masks."""
    n_head, b, t, h, w = attn.shape
    a = attn.reshape(n_head * b, t, h, w)
    if x.shape[-2:] != (h, w):
        a = F.interpolate(a, size=x.shape[-2:], mode="bilinear", align_corners=False)
    a = a.view(n_head, b, t, *x.shape[-2:])
    groups = torch.stack(x.chunk(n_head, dim=2))  # head, B, T, C/head, H, W
    out = (a[:, :, :, None] * groups).sum(dim=2)
    return torch.cat(list(out), dim=1)


class UTAE(nn.Module):
    def __init__(self, cfg: TemporalBranchConfig):
        super().__init__()
        self.cfg = cfg
        enc, dec = cfg.encoder_widths, cfg.decoder_widths
        n = len(enc)
        self.in_conv = nn.Sequential(ConvLayer([cfg.in_channels, enc[0]]), ConvLayer([enc[0], enc[0]]))
        self.down_blocks = nn.ModuleList(DownConvBlock(enc[i], enc[i + 1]) for i in range(n - 1))
        self.up_blocks = nn.ModuleList(UpConvBlock(dec[i], dec[i - 1], enc[i - 1]) for i in range(n - 1, 0, -1))
        self.temporal_encoder = LTAE2d(cfg)
        self.out_conv = nn.Sequential(
            ConvLayer([dec[0], cfg.head_hidden]), nn.Conv2d(cfg.head_hidden, cfg.n_classes, 1)
        )

    def forward(self, x, positions, pad_mask=None):
        """x: (B, T, C, S, S); positions: (B, T) day of year.

        Returns (class logits (B, 13, S, S), embedding (B, E, S, S)).
        """
        if x.shape[1] == 0:
            raise EmptyTemporalAxisError("temporal branch received a series with no dates")
        if positions.shape != x.shape[:2]:
            raise ValueError(f"positions shape {tuple(positions.shape)} does not match series {tuple(x.shape[:2])}")
        feats = [per_date(self.in_conv, x)]
        for block in self.down_blocks:
            feats.append(per_date(block, feats[-1]))
        out, attn = self.temporal_encoder(feats[-1], positions, pad_mask)
        for i, block in enumerate(self.up_blocks):
            skip = temporal_aggregate(feats[-(i + 2)], attn)
            out = block(out, skip)
        return self.out_conv(out), out
