from .augment import AERIAL_ONLY, BOTH_BRANCHES, apply_transform, augment, modality_dropout
from .data import Batch, PatchDataset, PrepOptions, Sample, collate
from .loop import (
    EpochRecord,
    TrainConfig,
    TrainingDivergedError,
    TrainResult,
    TrainState,
    batch_loss,
    evaluate_model,
    predict_dataset,
    split_domains,
    train,
)
from .losses import CELoss, TTLoss, ce_loss, tt_loss

__all__ = [
    "AERIAL_ONLY",
    "BOTH_BRANCHES",
    "Batch",
    "CELoss",
    "EpochRecord",
    "PatchDataset",
    "PrepOptions",
    "Sample",
    "TTLoss",
    "TrainConfig",
    "TrainResult",
    "TrainState",
    "TrainingDivergedError",
    "apply_transform",
    "augment",
    "batch_loss",
    "ce_loss",
    "collate",
    "evaluate_model",
    "modality_dropout",
    "predict_dataset",
    "split_domains",
    "train",
    "tt_loss",
]
