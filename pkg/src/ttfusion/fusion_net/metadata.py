"""Positional encoding of aerial patch location and its injection MLP."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from ..data_model import PatchMetadata

ENCODING_SIZE = 32


class MetadataError(ValueError):
    pass


def encode_metadata(meta: PatchMetadata | None, size: int = ENCODING_SIZE, period: float = 10_000.0) -> np.ndarray:
    """Sinusoidal encoding of the patch centroid: ``size // 2`` values for x, the rest for y."""
    if meta is None or meta.x is None or meta.y is None:
        raise MetadataError("metadata with x/y coordinates is required")
    half = size // 2
    out = []
    for coord, d in ((float(meta.x), half), (float(meta.y), size - half)):
        i = np.arange(d)
        angle = coord / np.power(period, 2 * (i // 2) / d)
        out.append(np.where(i % 2 == 0, np.sin(angle), np.cos(angle)))
    return np.concatenate(out)


class MetadataInjector(nn.Module):
    """MLP mapping the encoding to one additive vector per encoder stage."""

    def __init__(self, stage_channels: list[int], size: int = ENCODING_SIZE, hidden: int = 64):
        super().__init__()
        self.trunk = nn.Sequential(nn.Linear(size, hidden), nn.ReLU(), nn.Linear(hidden, hidden), nn.ReLU())
        self.heads = nn.ModuleList(nn.Linear(hidden, ch) for ch in stage_channels)

    def forward(self, encoding: torch.Tensor) -> list[torch.Tensor]:
        h = self.trunk(encoding)
        return [head(h) for head in self.heads]
