"""Command-line driver: generate | preprocess | train | predict | evaluate.

Exit codes: 0 success, 1 runtime failure, 2 validation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import shutil
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2

log = logging.getLogger("ttfusion")


class UsageError(Exception):
    """Bad input detected before any work starts (exit 2)."""


def _int_range(text: str) -> tuple[int, int]:
    m = re.fullmatch(r"(\d+)(?:[:-](\d+))?", text.strip())
    if not m:
        raise argparse.ArgumentTypeError(f"expected N or MIN:MAX, got {text!r}")
    lo = int(m.group(1))
    hi = int(m.group(2)) if m.group(2) else lo
    return lo, hi


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _prepare_out(path: Path, force: bool) -> None:
    if path.exists() and any(path.iterdir()):
        if not force:
            raise UsageError(f"{path} exists and is not empty (use --force to overwrite)")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)


# ---------------------------------------------------------------- generate

def cmd_generate(args) -> int:
    from .synthetic import SyntheticSpec, generate_synthetic

    spec = SyntheticSpec(
        domains=args.domains,
        areas_per_domain=args.areas,
        patches_per_area=args.patches,
        t_range=args.t,
        seed=args.seed,
        val_domains=args.val_domains,
        test_domains=args.test_domains,
        clouds=not args.no_clouds,
        nodata_prob=args.nodata_prob,
        **({"sat_classes": args.sat_classes} if args.sat_classes else {}),
        shared_texture=args.shared_texture or (),
    )
    errors = spec.validate()
    if errors:
        raise UsageError("; ".join(errors))
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise UsageError(f"{out} exists and is not empty (use --force to overwrite)")
    summary = generate_synthetic(spec, out, overwrite=args.force)
    n = sum(v for split in summary.values() for areas in split.values() for v in areas.values())
    print(f"wrote {n} patches to {out}")
    return EXIT_OK


# -------------------------------------------------------------- preprocess

def cmd_preprocess(args) -> int:
    from .dataset_io import scan_dataset
    from .temporal_prep import FilterConfig
    from .training import PatchDataset, PrepOptions

    root = Path(args.dataset)
    if not root.is_dir():
        raise UsageError(f"dataset directory {root} does not exist")
    filt = FilterConfig(args.prob_threshold, args.coverage_threshold)
    prep = PrepOptions(args.superpatch_size, args.filter, args.monthly_average, filt)
    manifest = scan_dataset(root, args.split)
    if len(manifest) == 0:
        raise UsageError(f"no patches found for split {args.split!r} under {root}")
    out = Path(args.out)
    _prepare_out(out, args.force)
    ds = PatchDataset(manifest, prep, with_sat=True, cache=False)
    counts = {}
    for i in range(len(ds)):
        s = ds[i]
        np.save(out / f"SAT_{s.patch_id}.npy", s.sat)
        np.save(out / f"DOY_{s.patch_id}.npy", s.dates)
        counts[s.patch_id] = int(s.sat.shape[0])
    (out / "dates_per_patch.json").write_text(json.dumps(counts, indent=2, sort_keys=True) + "\n")
    print(f"prepared {len(counts)} super-patch series in {out}")
    return EXIT_OK


# ------------------------------------------------------------------- train

def _val_manifest(root: Path):
    from .dataset_io import scan_dataset

    val = scan_dataset(root, "val")
    return val if len(val) else None


def cmd_train(args) -> int:
    from .config import CONFIG_ENV_VAR, load_run_config
    from .dataset_io import scan_dataset
    from .training import train

    cfg_path = args.config or os.environ.get(CONFIG_ENV_VAR)
    if not cfg_path:
        raise UsageError(f"no configuration given (pass --config or set {CONFIG_ENV_VAR})")
    overrides = {}
    if args.dataset:
        overrides["dataset"] = str(Path(args.dataset).resolve())
    if args.out:
        overrides["out_dir"] = str(Path(args.out).resolve())
    if args.unet_only:
        overrides["model.unet_only"] = True
    if args.epochs:
        overrides["train.max_epochs"] = args.epochs
    run = load_run_config(cfg_path, overrides)
    root = Path(run.dataset)
    if not root.is_dir():
        raise UsageError(f"dataset directory {root} does not exist")
    manifest = scan_dataset(root, "train")
    if len(manifest) == 0:
        raise UsageError(f"no training patches under {root}")
    out = Path(run.out_dir)
    _prepare_out(out, args.force)
    (out / "run_config.json").write_text(run.model_dump_json(indent=2) + "\n")
    tcfg = run.train_config()
    result = train(manifest, tcfg, run.texture_config(), run.temporal_config(), run.fusion_config(), out,
                   val_manifest=_val_manifest(root))
    best = result.state.history[result.state.best_epoch - 1]
    miou = "n/a" if best.val_miou is None else f"{best.val_miou:.4f}"
    print(f"best epoch {result.state.best_epoch}: val loss {best.val_loss:.4f}, val mIoU {miou}")
    print(f"checkpoint: {result.checkpoint}")
    return EXIT_OK


# ----------------------------------------------------------------- predict

def cmd_predict(args) -> int:
    from .data_model import N_CLASSES
    from .dataset_io import scan_dataset, write_raster
    from .fusion_net import load_checkpoint
    from .temporal_prep import FilterConfig
    from .training import PatchDataset, PrepOptions, predict_dataset

    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise UsageError(f"checkpoint {ckpt} does not exist")
    root = Path(args.dataset)
    if not root.is_dir():
        raise UsageError(f"dataset directory {root} does not exist")
    model, info = load_checkpoint(ckpt)
    n_ckpt = len(info["nomenclature"].classes)
    if n_ckpt != N_CLASSES:
        raise UsageError(f"checkpoint has {n_ckpt} classes, dataset nomenclature has {N_CLASSES}")
    tcfg = info["extra"].get("train_config", {})
    prep = PrepOptions(
        model.fusion_cfg.sat_superpatch_size,
        bool(tcfg.get("use_filter", False)),
        bool(tcfg.get("use_monthly_average", False)),
        FilterConfig(**tcfg["filter"]) if isinstance(tcfg.get("filter"), dict) else FilterConfig(),
    )
    manifest = scan_dataset(root, args.split)
    if len(manifest) == 0:
        raise UsageError(f"no patches found for split {args.split!r} under {root}")
    out = Path(args.out)
    _prepare_out(out, args.force)
    ds = PatchDataset(manifest, prep, with_sat=model.has_temporal, with_metadata=model.use_metadata, cache=False)
    n = 0
    for pid, pred in predict_dataset(model, ds, args.batch_size):
        write_raster(pred, out / f"PRED_{pid.split('_', 1)[1]}.tif")
        n += 1
    print(f"wrote {n} predictions to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- evaluate

_PRED_RE = re.compile(r"^PRED_(\d+)\.tif$")
_MSK_RE = re.compile(r"^MSK_(\d+)\.tif$")


def _index_rasters(root: Path, pattern: re.Pattern) -> dict[str, Path]:
    found = {}
    for p in sorted(root.rglob("*.tif")):
        m = pattern.match(p.name)
        if m:
            found[m.group(1)] = p
    return found


def cmd_evaluate(args) -> int:
    from .data_model import remap_labels
    from .dataset_io import read_label, read_raster
    from .evaluation import ConfusionMatrix, aggregate, confusion, report

    if args.matrix:
        try:
            counts = np.loadtxt(args.matrix, delimiter=",", dtype=np.int64, ndmin=2)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read confusion matrix {args.matrix}: {exc}") from None
        m = ConfusionMatrix(counts)
    else:
        if not args.pred or not args.labels:
            raise UsageError("evaluate needs --pred and --labels, or --matrix")
        preds = _index_rasters(Path(args.pred), _PRED_RE) if Path(args.pred).is_dir() else {}
        labels = _index_rasters(Path(args.labels), _MSK_RE) if Path(args.labels).is_dir() else {}
        if not preds:
            raise UsageError(f"no PRED_<id>.tif files under {args.pred}")
        missing_pred = sorted(set(labels) - set(preds))
        missing_lab = sorted(set(preds) - set(labels))
        if missing_pred or missing_lab:
            parts = []
            if missing_pred:
                parts.append("no prediction for ids " + ", ".join(missing_pred))
            if missing_lab:
                parts.append("no label for ids " + ", ".join(missing_lab))
            raise UsageError("; ".join(parts))
        mats = []
        for pid in sorted(preds):
            mats.append(confusion(read_raster(preds[pid]), remap_labels(read_label(labels[pid]))))
        m = aggregate(mats)
    rep = report(m, Path(args.out), plots=not args.no_plots)
    print(f"mIoU {rep.miou:.4f}")
    return EXIT_OK


# -------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ttfusion", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset in the on-disk layout")
    g.add_argument("--domains", type=int, default=1, help="number of training domains")
    g.add_argument("--areas", type=int, default=1, help="areas per domain")
    g.add_argument("--patches", type=int, default=4, help="patches per area")
    g.add_argument("--t", type=_int_range, default=(20, 30), metavar="N|MIN:MAX",
                   help="acquisition dates per area (20..114)")
    g.add_argument("--val-domains", type=int, default=0, help="number of validation domains")
    g.add_argument("--test-domains", type=int, default=0, help="number of test domains")
    g.add_argument("--seed", type=int, default=0, help="generator seed")
    g.add_argument("--no-clouds", action="store_true", help="render cloud-free series")
    g.add_argument("--nodata-prob", type=float, default=0.0, help="probability of a nodata stripe per date")
    g.add_argument("--sat-classes", type=_int_list, default=None, metavar="K,K,...",
                   help="classes drawn as satellite-scale parcels")
    g.add_argument("--shared-texture", type=_int_list, default=None, metavar="K,K,...",
                   help="classes rendered with identical aerial texture")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    g.set_defaults(func=cmd_generate)

    pp = sub.add_parser("preprocess", help="crop, filter and composite the satellite series of every patch")
    pp.add_argument("--dataset", required=True, help="dataset root")
    pp.add_argument("--split", default="train", choices=("train", "val", "test"))
    pp.add_argument("--superpatch-size", type=int, default=40, help="super-patch side in satellite pixels")
    pp.add_argument("--filter", action="store_true", help="drop cloudy/snowy dates")
    pp.add_argument("--monthly-average", action="store_true", help="average clear dates per month")
    pp.add_argument("--prob-threshold", type=int, default=50, help="cloud/snow probability threshold (0..100)")
    pp.add_argument("--coverage-threshold", type=float, default=0.6, help="max cloudy fraction of a kept date")
    pp.add_argument("--out", required=True, help="output directory")
    pp.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    pp.set_defaults(func=cmd_preprocess)

    t = sub.add_parser("train", help="train a model from a JSON run configuration")
    t.add_argument("--config", help="run configuration (default: $TTFUSION_CONFIG)")
    t.add_argument("--dataset", help="override the configured dataset root")
    t.add_argument("--out", help="override the configured output directory")
    t.add_argument("--epochs", type=int, help="override the maximum number of epochs")
    t.add_argument("--unet-only", action="store_true", help="train the aerial-only baseline")
    t.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="write PRED_<id>.tif class rasters")
    pr.add_argument("--checkpoint", required=True, help="checkpoint written by train")
    pr.add_argument("--dataset", required=True, help="dataset root")
    pr.add_argument("--split", default="test", choices=("train", "val", "test"))
    pr.add_argument("--batch-size", type=int, default=4)
    pr.add_argument("--out", required=True, help="output directory")
    pr.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("evaluate", help="score predictions and write metrics, tables and plots")
    e.add_argument("--pred", help="directory holding PRED_<id>.tif")
    e.add_argument("--labels", help="directory holding MSK_<id>.tif (searched recursively)")
    e.add_argument("--matrix", help="score a 13x13 confusion matrix CSV instead of rasters")
    e.add_argument("--no-plots", action="store_true", help="skip the PNG figures")
    e.add_argument("--out", required=True, help="output directory")
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    from .config import RunConfigError
    from .dataset_io import ConsistencyError, DatasetStructureError, FormatError
    from .evaluation import EvaluationError
    from .fusion_net import ConfigurationError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, RunConfigError, ConfigurationError, DatasetStructureError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (EvaluationError, FormatError, ConsistencyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
