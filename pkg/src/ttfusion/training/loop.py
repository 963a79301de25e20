"""Optimisation loop: SGD, plateau scheduler on validation loss, early stopping."""

from __future__ import annotations

import json
import logging
import math
import random
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..data_model import Nomenclature, class_weights, default_nomenclature
from ..dataset_io import DatasetManifest
from ..evaluation import ConfusionMatrix, aggregate, confusion, miou, per_class_iou
from ..fusion_net import (
    UTT,
    FusionConfig,
    TemporalBranchConfig,
    TextureBranchConfig,
    crop_interp_sat_logits,
    save_checkpoint,
)
from ..temporal_prep import FilterConfig
from .augment import AERIAL_ONLY, augment, modality_dropout
from .data import Batch, PatchDataset, PrepOptions, Sample, collate
from .losses import tt_loss

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 0.001
    momentum: float = 0.9
    plateau_patience: int = 10
    plateau_factor: float = 0.5
    early_stop_patience: int = 30
    early_stop_min_delta: float = 0.0
    max_epochs: int = 100
    batch_size: int = 10
    seed: int = 2022
    modality_dropout_threshold: float = 0.5
    augmentation_prob: float = 0.5
    use_filter: bool = False
    use_monthly_average: bool = False
    use_metadata: bool = False
    use_augmentation: bool = False
    use_modality_dropout: bool = False
    train_domains: int = 32
    val_domains: int = 8
    track_train_miou: bool = False
    stop_at_train_miou: float | None = None
    filter: FilterConfig = field(default_factory=FilterConfig)

    def __post_init__(self):
        if isinstance(self.filter, dict):
            self.filter = FilterConfig(**self.filter)
        problems = []
        if self.lr < 0:
            problems.append("lr must be >= 0")
        for name in ("plateau_patience", "early_stop_patience", "max_epochs", "batch_size",
                     "train_domains", "val_domains"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be positive")
        for name in ("modality_dropout_threshold", "augmentation_prob", "momentum"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                problems.append(f"{name} must lie in [0, 1]")
        if not 0.0 < self.plateau_factor < 1.0:
            problems.append("plateau_factor must lie in (0, 1)")
        if problems:
            raise ValueError("; ".join(problems))


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_miou: float | None
    lr: float
    train_miou: float | None = None
    aerial_only_batches: int = 0


@dataclass
class TrainState:
    epoch: int = 0
    best_val_loss: float = math.inf
    best_epoch: int = 0
    epochs_since_best: int = 0
    rng_state: dict | None = None
    history: list[EpochRecord] = field(default_factory=list)
    stopped_early: bool = False


@dataclass
class TrainResult:
    checkpoint: Path
    state: TrainState
    model: UTT


def seed_everything(seed: int) -> np.random.Generator:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)
    return np.random.default_rng(seed)


def split_domains(manifest: DatasetManifest, cfg: TrainConfig) -> tuple[DatasetManifest, DatasetManifest]:
    """Disjoint train/validation domain sets in the configured proportion."""
    domains = list(manifest.domains)
    if len(domains) < 2:
        raise ValueError("need at least two domains to carve out a validation split")
    n_val = max(1, round(len(domains) * cfg.val_domains / (cfg.train_domains + cfg.val_domains)))
    n_val = min(n_val, len(domains) - 1)
    return manifest.subset(domains[:-n_val]), manifest.subset(domains[-n_val:])


def build_model(texture: TextureBranchConfig, temporal: TemporalBranchConfig | None,
                fusion: FusionConfig | None, use_metadata: bool) -> UTT:
    return UTT(texture, temporal, fusion, use_metadata)


def _forward(model: UTT, batch: Batch, use_sat: bool):
    if use_sat and model.has_temporal and batch.sat is not None:
        return model(batch.aerial, batch.sat, batch.positions, batch.pad_mask, batch.centroids, batch.metadata)
    return model(batch.aerial, metadata=batch.metadata)


def batch_loss(model: UTT, batch: Batch, nomenclature: Nomenclature, use_sat: bool = True):
    logits, sat_logits = _forward(model, batch, use_sat)
    sat_up = None
    if sat_logits is not None:
        sat_up = crop_interp_sat_logits(sat_logits, batch.centroids, model.fusion_cfg.footprint_px, logits.shape[-2:])
    return tt_loss(logits, sat_up, batch.label, nomenclature), logits


@torch.no_grad()
def evaluate_model(model: UTT, dataset: PatchDataset, nomenclature: Nomenclature, batch_size: int = 4):
    """Return (mean validation loss over batches, aggregated confusion matrix)."""
    model.eval()
    losses, weights, mats = [], [], []
    for start in range(0, len(dataset), batch_size):
        samples = [dataset[i] for i in range(start, min(start + batch_size, len(dataset)))]
        batch = collate(samples, with_sat=model.has_temporal)
        terms, logits = batch_loss(model, batch, nomenclature)
        losses.append(float(terms.total))
        weights.append(len(samples))
        pred = logits.argmax(dim=1).numpy() + 1
        for k in range(len(samples)):
            mats.append(confusion(pred[k], batch.label[k].numpy()))
    return float(np.average(losses, weights=weights)), aggregate(mats)


def _safe_miou(m: ConfusionMatrix) -> float | None:
    ious = per_class_iou(m)
    return None if np.isnan(ious).all() else miou(ious)


def train(
    manifest: DatasetManifest,
    train_cfg: TrainConfig,
    texture_cfg: TextureBranchConfig,
    temporal_cfg: TemporalBranchConfig | None,
    fusion_cfg: FusionConfig,
    out_dir,
    val_manifest: DatasetManifest | None = None,
    nomenclature: Nomenclature | None = None,
) -> TrainResult:
    """Train a model and keep the checkpoint of the best validation-loss epoch.

    ``temporal_cfg=None`` trains the aerial-only U-Net. Writes
    ``best.ckpt``, ``history.jsonl`` (one record per epoch) and
    ``timing.jsonl`` (wall-clock times, kept apart so the history is
    reproducible byte for byte).
    """
    nomenclature = nomenclature or default_nomenclature()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if val_manifest is None:
        manifest, val_manifest = split_domains(manifest, train_cfg)
    if len(manifest) == 0 or len(val_manifest) == 0:
        raise ValueError("training and validation sets must both be non-empty")

    rng = seed_everything(train_cfg.seed)
    with_sat = temporal_cfg is not None
    prep = PrepOptions(fusion_cfg.sat_superpatch_size, train_cfg.use_filter, train_cfg.use_monthly_average,
                       train_cfg.filter)
    train_ds = PatchDataset(manifest, prep, with_sat, train_cfg.use_metadata)
    val_ds = PatchDataset(val_manifest, prep, with_sat, train_cfg.use_metadata)

    model = build_model(texture_cfg, temporal_cfg, fusion_cfg, train_cfg.use_metadata)
    optimizer = torch.optim.SGD(model.parameters(), lr=train_cfg.lr, momentum=train_cfg.momentum)
    scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(
        optimizer, mode="min", factor=train_cfg.plateau_factor, patience=train_cfg.plateau_patience
    )
    aerial_w = class_weights(nomenclature, "aerial")
    if not aerial_w.any():
        raise ValueError("every aerial class weight is zero")

    ckpt = out / "best.ckpt"
    state = TrainState()
    hist_path = out / "history.jsonl"
    timing_path = out / "timing.jsonl"
    hist_path.write_text("")
    timing_path.write_text("")
    t_start = time.perf_counter()

    for epoch in range(1, train_cfg.max_epochs + 1):
        model.train()
        order = rng.permutation(len(train_ds))
        epoch_losses, dropped = [], 0
        for start in range(0, len(order), train_cfg.batch_size):
            samples = []
            for i in order[start:start + train_cfg.batch_size]:
                s = train_ds[int(i)]
                if train_cfg.use_augmentation:
                    img, lab = augment(s.aerial, s.label, train_cfg.augmentation_prob, rng)
                    s = Sample(s.patch_id, img, lab, s.sat, s.dates, s.centroid, s.metadata)
                samples.append(s)
            use_sat = with_sat
            if with_sat and train_cfg.use_modality_dropout:
                use_sat = modality_dropout(train_cfg.modality_dropout_threshold, rng) != AERIAL_ONLY
                dropped += int(not use_sat)
            batch = collate(samples, with_sat=use_sat)
            terms, _ = batch_loss(model, batch, nomenclature, use_sat)
            if not torch.isfinite(terms.total):
                raise TrainingDivergedError(
                    f"non-finite loss {terms.total.item()} at epoch {epoch}, batch ids {batch.ids}"
                )
            optimizer.zero_grad(set_to_none=True)
            terms.total.backward()
            optimizer.step()
            epoch_losses.append((terms.total.item(), len(samples)))

        train_loss = float(np.average([v for v, _ in epoch_losses], weights=[n for _, n in epoch_losses]))
        val_loss, val_cm = evaluate_model(model, val_ds, nomenclature, train_cfg.batch_size)
        train_miou = None
        if train_cfg.track_train_miou or train_cfg.stop_at_train_miou is not None:
            _, train_cm = evaluate_model(model, train_ds, nomenclature, train_cfg.batch_size)
            train_miou = _safe_miou(train_cm)
        lr_now = optimizer.param_groups[0]["lr"]
        scheduler.step(val_loss)

        rec = EpochRecord(epoch, train_loss, val_loss, _safe_miou(val_cm), lr_now, train_miou, dropped)
        state.history.append(rec)
        state.epoch = epoch
        with open(hist_path, "a") as fh:
            fh.write(json.dumps(asdict(rec)) + "\n")
        with open(timing_path, "a") as fh:
            fh.write(json.dumps({"epoch": epoch, "wall_time": time.perf_counter() - t_start}) + "\n")
        log.info("epoch %d train %.4f val %.4f mIoU %s", epoch, train_loss, val_loss, rec.val_miou)

        if val_loss < state.best_val_loss - train_cfg.early_stop_min_delta:
            state.best_val_loss = val_loss
            state.best_epoch = epoch
            state.epochs_since_best = 0
            save_checkpoint(ckpt, model, nomenclature, train_cfg.seed,
                            {"epoch": epoch, "train_config": _jsonable(asdict(train_cfg))})
        else:
            state.epochs_since_best += 1
        if state.epochs_since_best >= train_cfg.early_stop_patience:
            state.stopped_early = True
            break
        if (train_cfg.stop_at_train_miou is not None and train_miou is not None
                and train_miou >= train_cfg.stop_at_train_miou):
            save_checkpoint(out / "last.ckpt", model, nomenclature, train_cfg.seed,
                            {"epoch": epoch, "train_config": _jsonable(asdict(train_cfg))})
            break

    state.rng_state = rng.bit_generator.state
    return TrainResult(ckpt, state, model)


def _jsonable(d):
    return json.loads(json.dumps(d, default=lambda o: asdict(o) if hasattr(o, "__dataclass_fields__") else str(o)))


@torch.no_grad()
def predict_dataset(model: UTT, dataset: PatchDataset, batch_size: int = 4):
    """Yield (patch id, class raster with values 1..13) for every patch of ``dataset``."""
    model.eval()
    for start in range(0, len(dataset), batch_size):
        samples = [dataset[i] for i in range(start, min(start + batch_size, len(dataset)))]
        batch = collate(samples, with_sat=model.has_temporal)
        logits, _ = _forward(model, batch, use_sat=True)
        pred = (logits.argmax(dim=1) + 1).numpy().astype(np.uint8)
        for pid, p in zip(batch.ids, pred):
            yield pid, p
