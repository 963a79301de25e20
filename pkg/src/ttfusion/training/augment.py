from __future__ import annotations

from typing import Literal

import numpy as np

BOTH_BRANCHES = "both_branches"
AERIAL_ONLY = "aerial_only"


def apply_transform(arr: np.ndarray, flip_h: bool, flip_v: bool, rot: int) -> np.ndarray:
    """Flip then rotate the last two axes (rot in quarter turns, counter-clockwise)."""
    if flip_h:
        arr = arr[..., ::-1]
    if flip_v:
        arr = arr[..., ::-1, :]
    if rot % 4:
        arr = np.rot90(arr, k=rot, axes=(-2, -1))
    return np.ascontiguousarray(arr)


def augment(image: np.ndarray, mask: np.ndarray, p: float, rng: np.random.Generator):
    """With probability ``p`` apply one of the 16 flip/rotation combinations to both arrays."""
    if p <= 0 or rng.random() >= p:
        return image, mask
    flip_h, flip_v = (bool(b) for b in rng.integers(0, 2, size=2))
    rot = int(rng.integers(0, 4))
    return apply_transform(image, flip_h, flip_v, rot), apply_transform(mask, flip_h, flip_v, rot)


def modality_dropout(threshold: float, rng: np.random.Generator) -> Literal["both_branches", "aerial_only"]:
    """One uniform draw in (0, 1] per batch; above the threshold the temporal branch is dropped."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    draw = 1.0 - rng.random()
    return AERIAL_ONLY if draw > threshold else BOTH_BRANCHES
