"""Two-branch texture + time network and its checkpoint format."""

from __future__ import annotations

from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from ..data_model import N_CLASSES, Nomenclature, default_nomenclature
from .config import ConfigurationError, FusionConfig, TemporalBranchConfig, TextureBranchConfig
from .fusion import FusionModule
from .metadata import ENCODING_SIZE, MetadataInjector
from .temporal import UTAE
from .texture import TextureUNet

AERIAL_SCALE = 255.0
SAT_SCALE = 10_000.0  # BOA reflectance quantification


def normalize_aerial(pixels: np.ndarray) -> np.ndarray:
    return pixels.astype(np.float32) / AERIAL_SCALE


def normalize_sat(data: np.ndarray) -> np.ndarray:
    return data.astype(np.float32) / SAT_SCALE


class UTT(nn.Module):
    """Texture (U-Net) branch fused with a time-series (U-TAE) branch.

    With ``temporal=None`` the model is the aerial-only U-Net baseline.
    """

    def __init__(
        self,
        texture: TextureBranchConfig,
        temporal: TemporalBranchConfig | None = None,
        fusion: FusionConfig | None = None,
        use_metadata: bool = False,
    ):
        super().__init__()
        self.texture_cfg = texture
        self.temporal_cfg = temporal
        self.fusion_cfg = fusion if fusion is not None else FusionConfig()
        self.use_metadata = use_metadata
        self.texture = TextureUNet(texture)
        self.temporal = UTAE(temporal) if temporal is not None else None
        self.fusion = (
            FusionModule(temporal.embedding_channels, texture.encoder_stage_channels, self.fusion_cfg)
            if temporal is not None
            else None
        )
        self.metadata = MetadataInjector(texture.encoder_stage_channels, ENCODING_SIZE) if use_metadata else None
        if texture.pretrained_weights:
            state = torch.load(texture.pretrained_weights, map_location="cpu", weights_only=True)
            self.texture.encoder.load_state_dict(state, strict=False)

    @property
    def has_temporal(self) -> bool:
        return self.temporal is not None

    def forward(self, aerial, sat=None, positions=None, pad_mask=None, centroids=None, metadata=None):
        """Return (aerial logits, satellite logits or None).

        The temporal branch runs only when ``sat`` is given; passing
        ``sat=None`` on a fused model is how modality dropout skips it.
        """
        sat_logits = None
        masks = None
        if self.temporal is not None and sat is not None:
            sat_logits, embedding = self.temporal(sat, positions, pad_mask)
            stages = self.texture_cfg.stage_specs(*aerial.shape[-2:])
            masks = self.fusion(embedding, centroids, stages)
        mtd = None
        if self.metadata is not None and metadata is not None:
            mtd = self.metadata(metadata)
        logits, _ = self.texture(aerial, masks, mtd)
        return logits, sat_logits


def save_checkpoint(path, model: UTT, nomenclature: Nomenclature, seed: int, extra: dict | None = None) -> None:
    payload = {
        "state_dict": model.state_dict(),
        "texture_config": asdict(model.texture_cfg),
        "temporal_config": asdict(model.temporal_cfg) if model.temporal_cfg is not None else None,
        "fusion_config": asdict(model.fusion_cfg),
        "use_metadata": model.use_metadata,
        "nomenclature": nomenclature.to_dict(),
        "seed": seed,
        "extra": extra or {},
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path) -> tuple[UTT, dict]:
    """Rebuild the model stored by :func:`save_checkpoint`.

    Raises ConfigurationError when the stored nomenclature does not have the
    expected number of classes.
    """
    payload = torch.load(path, map_location="cpu", weights_only=False)
    entries = payload.get("nomenclature") or default_nomenclature().to_dict()
    if len(entries) != N_CLASSES:
        raise ConfigurationError(f"checkpoint has {len(entries)} classes, expected {N_CLASSES}")
    tex = dict(payload["texture_config"])
    tex["pretrained_weights"] = None
    temporal = payload["temporal_config"]
    model = UTT(
        TextureBranchConfig(**tex),
        TemporalBranchConfig(**temporal) if temporal is not None else None,
        FusionConfig(**payload["fusion_config"]),
        payload["use_metadata"],
    )
    model.load_state_dict(payload["state_dict"])
    model.eval()
    info = {
        "nomenclature": Nomenclature.from_dict(entries),
        "seed": payload.get("seed"),
        "extra": payload.get("extra", {}),
    }
    return model, info
