"""Fusion module: turns the temporal-branch embedding into one additive mask
per texture-encoder stage."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..dataset_io import window_start
from .config import ConfigurationError, FeatureMapSpec, FusionConfig


def footprint_origin(centroid, footprint_px: int, size: int) -> tuple[int, int]:
    """Top-left corner of the aerial footprint window inside an S x S super-patch."""
    if footprint_px > size:
        raise ConfigurationError(f"footprint of {footprint_px} px does not fit a {size} px super-patch")
    return window_start(int(centroid[0]), footprint_px, size), window_start(int(centroid[1]), footprint_px, size)


def crop_footprint(x: torch.Tensor, centroids, footprint_px: int) -> torch.Tensor:
    """Crop a (B, C, S, S) tensor to each sample's footprint window."""
    size = x.shape[-1]
    crops = []
    for i, centroid in enumerate(centroids):
        r0, c0 = footprint_origin(centroid, footprint_px, size)
        crops.append(x[i, :, r0:r0 + footprint_px, c0:c0 + footprint_px])
    return torch.stack(crops)


def crop_interp_sat_logits(sat_logits: torch.Tensor, centroids, footprint_px: int = 10,
                           target=(512, 512)) -> torch.Tensor:
    """Crop satellite logits to the aerial footprint and resample them bilinearly to the label grid."""
    crop = crop_footprint(sat_logits, centroids, footprint_px)
    return F.interpolate(crop, size=tuple(target), mode="bilinear", align_corners=False)


class FusionCropped(nn.Module):
    def __init__(self, emb_channels: int, out_channels: int, footprint_px: int, kernel: int = 1):
        super().__init__()
        self.footprint_px = footprint_px
        self.conv = nn.Conv2d(emb_channels, out_channels, kernel, padding=kernel // 2)

    def forward(self, embedding, centroids, size):
        x = self.conv(crop_footprint(embedding, centroids, self.footprint_px))
        return F.interpolate(x, size=tuple(size), mode="bilinear", align_corners=False)


class FusionCollapsed(nn.Module):
    def __init__(self, emb_channels: int, out_channels: int, hidden=None, dropout: float = 0.1):
        super().__init__()
        h1, h2 = hidden if hidden is not None else (emb_channels, 2 * emb_channels)
        self.mlp = nn.Sequential(
            nn.Linear(emb_channels, h1), nn.ReLU(), nn.Dropout(dropout),
            nn.Linear(h1, h2), nn.ReLU(), nn.Dropout(dropout),
            nn.Linear(h2, out_channels),
        )

    def forward(self, embedding, size):
        v = self.mlp(embedding.mean(dim=(-2, -1)))
        return v[:, :, None, None].expand(-1, -1, *size)


class FusionModule(nn.Module):
    def __init__(self, emb_channels: int, stage_channels: list[int], cfg: FusionConfig):
        super().__init__()
        if not (cfg.use_cropped or cfg.use_collapsed):
            raise ConfigurationError("at least one of use_cropped / use_collapsed must be enabled")
        self.cfg = cfg
        self.cropped = None
        self.collapsed = None
        if cfg.use_cropped:
            self.cropped = nn.ModuleList(
                FusionCropped(emb_channels, ch, cfg.footprint_px, cfg.cropped_kernel) for ch in stage_channels
            )
        if cfg.use_collapsed:
            self.collapsed = nn.ModuleList(
                FusionCollapsed(emb_channels, ch, cfg.mlp_hidden, cfg.mlp_dropout) for ch in stage_channels
            )

    def forward(self, embedding, centroids, stages: list[FeatureMapSpec]):
        masks = []
        for i, spec in enumerate(stages):
            size = (spec.height, spec.width)
            mask = None
            if self.cropped is not None:
                mask = self.cropped[i](embedding, centroids, size)
            if self.collapsed is not None:
                m = self.collapsed[i](embedding, size)
                mask = m if mask is None else mask + m
            masks.append(mask)
        return masks


def build_fusion_masks(module: FusionModule, embedding, centroids, stages: list[FeatureMapSpec]):
    """Per-stage additive masks: cropped + collapsed (or whichever is enabled)."""
    return module(embedding, centroids, stages)
