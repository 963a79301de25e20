"""Challenge metric: per-patch confusion matrices, aggregation, per-class IoU
and mIoU over the 12 scored classes, plus report artifacts."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data_model import N_CLASSES, OTHER_CLASS, LabelMask, Nomenclature, default_nomenclature

N_SCORED = N_CLASSES - 1


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """13 x 13 counts; rows are reference classes, columns predictions (class k at index k-1)."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.shape != (N_CLASSES, N_CLASSES):
            raise EvaluationError(f"confusion matrix must be {N_CLASSES}x{N_CLASSES}, got {c.shape}")
        if (c < 0).any():
            raise EvaluationError("confusion matrix has negative counts")
        object.__setattr__(self, "counts", c.astype(np.int64))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)


@dataclass(frozen=True)
class EvalReport:
    per_class_iou: tuple[float, ...]  # classes 1..12, NaN when undefined
    miou: float
    normalized_matrix: np.ndarray
    class_pixels: tuple[int, ...]
    class_percent: tuple[float, ...]
    pixel_count: int


def predicted_classes(pred: np.ndarray) -> np.ndarray:
    """Class raster (values 1..13) from a raster or from (13, H, W) logits.

    ``np.argmax`` returns the first maximum, i.e. ties go to the lowest class.
    """
    pred = np.asarray(pred)
    if pred.ndim == 3:
        if pred.shape[0] != N_CLASSES:
            raise EvaluationError(f"logits must have {N_CLASSES} channels, got {pred.shape[0]}")
        return pred.argmax(axis=0).astype(np.int64) + 1
    return pred.astype(np.int64)


def confusion(pred, target) -> ConfusionMatrix:
    target_px = target.pixels if isinstance(target, LabelMask) else np.asarray(target)
    if isinstance(target, LabelMask) and not target.canonical:
        raise EvaluationError("target mask must be remapped to canonical classes first")
    cls = predicted_classes(pred)
    if cls.shape != target_px.shape:
        raise EvaluationError(f"prediction shape {cls.shape} does not match target shape {target_px.shape}")
    t = target_px.astype(np.int64).ravel()
    p = cls.ravel()
    if t.size and (t.min() < 1 or t.max() > N_CLASSES or p.min() < 1 or p.max() > N_CLASSES):
        raise EvaluationError(f"class values must lie in [1, {N_CLASSES}]")
    counts = np.bincount((t - 1) * N_CLASSES + (p - 1), minlength=N_CLASSES * N_CLASSES)
    return ConfusionMatrix(counts.reshape(N_CLASSES, N_CLASSES))


def aggregate(matrices) -> ConfusionMatrix:
    matrices = list(matrices)
    if not matrices:
        raise EvaluationError("cannot aggregate an empty list of confusion matrices")
    total = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    for m in matrices:
        total += m.counts
    return ConfusionMatrix(total)


def per_class_iou(m: ConfusionMatrix) -> np.ndarray:
    """IoU of classes 1..12; NaN marks a class absent from both prediction and reference."""
    c = m.counts
    tp = np.diag(c).astype(np.float64)
    fp = c.sum(axis=0) - tp
    fn = c.sum(axis=1) - tp
    denom = tp + fp + fn
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(denom > 0, tp / np.where(denom > 0, denom, 1), np.nan)
    return iou[: OTHER_CLASS - 1]


def miou(per_class) -> float:
    v = np.asarray(per_class, dtype=np.float64)
    defined = v[~np.isnan(v)]
    if defined.size == 0:
        raise EvaluationError("no class has a defined IoU")
    return float(np.mean(defined))


def normalize_rows(m: ConfusionMatrix) -> np.ndarray:
    c = m.counts.astype(np.float64)
    rows = c.sum(axis=1, keepdims=True)
    return np.divide(c, rows, out=np.zeros_like(c), where=rows > 0)


def build_report(m: ConfusionMatrix) -> EvalReport:
    ious = per_class_iou(m)
    pixels = m.counts.sum(axis=1)
    total = int(pixels.sum())
    percent = pixels / total * 100 if total else np.zeros(N_CLASSES)
    return EvalReport(
        per_class_iou=tuple(float(v) for v in ious),
        miou=miou(ious),
        normalized_matrix=normalize_rows(m),
        class_pixels=tuple(int(v) for v in pixels),
        class_percent=tuple(float(v) for v in percent),
        pixel_count=total,
    )


def _fmt(v: float) -> str:
    return "nan" if np.isnan(v) else repr(float(v))


def metrics_dict(rep: EvalReport, nomenclature: Nomenclature | None = None) -> dict:
    names = (nomenclature or default_nomenclature()).names
    return {
        "per_class_iou": {names[i]: (None if np.isnan(v) else v) for i, v in enumerate(rep.per_class_iou)},
        "miou": rep.miou,
        "pixel_count": rep.pixel_count,
    }


def report(m: ConfusionMatrix, out_dir, nomenclature: Nomenclature | None = None, plots: bool = True) -> EvalReport:
    """Compute the report and write metrics.json, CSV tables and the heatmap/frequency plots."""
    nomenclature = nomenclature or default_nomenclature()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rep = build_report(m)
    names = nomenclature.names

    (out / "metrics.json").write_text(json.dumps(metrics_dict(rep, nomenclature), indent=2) + "\n")
    np.savetxt(out / "confusion_matrix.csv", m.counts, fmt="%d", delimiter=",")

    with open(out / "per_class_iou.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mIoU", *names[: N_SCORED]])
        w.writerow([_fmt(rep.miou), *(_fmt(v) for v in rep.per_class_iou)])
    with open(out / "class_frequencies.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "value", "pixels", "percent"])
        for i, name in enumerate(names):
            w.writerow([name, i + 1, rep.class_pixels[i], _fmt(rep.class_percent[i])])

    if plots:
        _plot_heatmap(rep.normalized_matrix, names, out / "confusion_matrix.png")
        _plot_frequencies(rep.class_percent, nomenclature, out / "class_frequencies.png")
    return rep


def _plot_heatmap(norm: np.ndarray, names, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(9, 8))
    im = ax.imshow(norm, cmap="Blues", vmin=0.0, vmax=1.0)
    ax.set_xticks(range(len(names)), names, rotation=90)
    ax.set_yticks(range(len(names)), names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("reference")
    for r in range(norm.shape[0]):
        for c in range(norm.shape[1]):
            if norm[r, c] >= 0.005:
                ax.text(c, r, f"{norm[r, c]:.2f}", ha="center", va="center", fontsize=6,
                        color="white" if norm[r, c] > 0.5 else "black")
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def _plot_frequencies(percent, nomenclature: Nomenclature, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(9, 4))
    ax.bar(range(N_CLASSES), percent, color=[c.color for c in nomenclature.classes], edgecolor="black")
    ax.set_xticks(range(N_CLASSES), nomenclature.names, rotation=60, ha="right")
    ax.set_ylabel("% of pixels")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
