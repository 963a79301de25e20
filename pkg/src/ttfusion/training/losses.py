"""Weighted categorical cross-entropy and the two-branch loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch
import torch.nn.functional as F

from ..data_model import Nomenclature, class_weights


class CELoss(NamedTuple):
    value: torch.Tensor
    empty: bool  # no pixel carried a nonzero class weight


def _as_batch(logits, target):
    if logits.dim() == 3:
        logits = logits[None]
    if target.dim() == 2:
        target = target[None]
    return logits, target


def ce_loss(logits: torch.Tensor, target: torch.Tensor, weights) -> CELoss:
    """Class-weighted cross-entropy averaged over the pixels whose class weight is nonzero.

    ``target`` holds canonical class values 1..13; ``weights[k-1]`` is the
    weight of class k. Pixels of zero-weight classes are dropped before the
    reduction, so their logits cannot influence the value.
    """
    logits, target = _as_batch(logits, target)
    w = torch.as_tensor(np.asarray(weights), dtype=logits.dtype, device=logits.device)
    idx = (target.long() - 1).unsqueeze(1)
    nll = -F.log_softmax(logits, dim=1).gather(1, idx).squeeze(1)
    pix_w = w[idx.squeeze(1)]
    sel = pix_w != 0
    if not bool(sel.any()):
        return CELoss(logits.sum() * 0.0, True)
    return CELoss((pix_w[sel] * nll[sel]).sum() / pix_w[sel].sum(), False)


@dataclass
class TTLoss:
    total: torch.Tensor
    aerial: torch.Tensor
    sat: torch.Tensor
    aerial_empty: bool = False
    sat_empty: bool = False

    def __iter__(self):
        return iter((self.total, self.aerial, self.sat))


def tt_loss(aerial_logits, sat_logits_upsampled, target, nomenclature: Nomenclature | None = None,
            aerial_weights=None, sat_weights=None) -> TTLoss:
    """Sum of the aerial and satellite cross-entropies.

    ``sat_logits_upsampled`` may be None (aerial-only step); the satellite
    term is then zero.
    """
    if aerial_weights is None:
        aerial_weights = class_weights(nomenclature, "aerial")
    if sat_weights is None and sat_logits_upsampled is not None:
        sat_weights = class_weights(nomenclature, "sat")
    la = ce_loss(aerial_logits, target, aerial_weights)
    if sat_logits_upsampled is None:
        ls = CELoss(torch.zeros((), dtype=la.value.dtype, device=la.value.device), True)
    else:
        ls = ce_loss(sat_logits_upsampled, target, sat_weights)
    return TTLoss(la.value + ls.value, la.value, ls.value, la.empty, ls.empty)
