"""Procedural dataset generator writing the same on-disk layout as real data.

Labels come first: a parcel map is drawn at satellite resolution over each
super-area, aerial labels are read off that map through the patch footprint
and decorated with small aerial-only objects. Aerial textures and satellite
seasonal profiles are then rendered from the labels, so both modalities carry
learnable signal.
"""

from __future__ import annotations

import datetime as dt
import logging
import math
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data_model import (
    N_SAT_BANDS,
    PATCH_SIZE,
    AcquisitionRecord,
    AerialPatch,
    LabelMask,
    PatchMetadata,
    SentinelSeries,
)
from .dataset_io import (
    CENTROIDS_FILE,
    METADATA_FILE,
    save_centroids,
    save_metadata,
    write_aerial,
    write_label,
    write_sentinel,
)

log = logging.getLogger(__name__)

MIN_DATES, MAX_DATES = 20, 114
FOOTPRINT_PX = 10

# classes drawn at satellite scale and those only visible in the aerial image
SAT_SCALE_CLASSES = (4, 5, 6, 7, 8, 9, 10, 11, 12)
OVERLAY_CLASSES = (1, 2, 3)
OTHER_RAW_VALUES = tuple(range(13, 20))


@dataclass(frozen=True)
class SyntheticSpec:
    domains: int = 1
    areas_per_domain: int = 1
    patches_per_area: int = 4
    t_range: tuple[int, int] = (20, 30)
    height: int | None = None
    width: int | None = None
    seed: int = 0
    val_domains: int = 0
    test_domains: int = 0
    year: int = 2021
    clouds: bool = True
    nodata_prob: float = 0.0
    sat_classes: tuple[int, ...] = SAT_SCALE_CLASSES
    overlay_classes: tuple[int, ...] = OVERLAY_CLASSES
    other_prob: float = 0.3
    shared_texture: tuple[int, ...] = ()
    buffer_px: int = 12
    parcel_px: float = 5.0

    def validate(self) -> list[str]:
        errors = []
        lo, hi = self.t_range
        if not (MIN_DATES <= lo <= hi <= MAX_DATES):
            errors.append(f"t_range {self.t_range} must satisfy {MIN_DATES} <= min <= max <= {MAX_DATES}")
        for name in ("domains", "areas_per_domain", "patches_per_area"):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be >= 1")
        for name in ("val_domains", "test_domains", "buffer_px"):
            if getattr(self, name) < 0:
                errors.append(f"{name} must be >= 0")
        if not self.sat_classes:
            errors.append("sat_classes must not be empty")
        if not 0.0 <= self.nodata_prob < 1.0:
            errors.append("nodata_prob must lie in [0, 1)")
        rows, cols = patch_grid(max(self.patches_per_area, 1))
        if self.height is not None and self.height < rows * FOOTPRINT_PX:
            errors.append(f"height {self.height} cannot hold {rows} patch rows")
        if self.width is not None and self.width < cols * FOOTPRINT_PX:
            errors.append(f"width {self.width} cannot hold {cols} patch columns")
        return errors


class GeneratorError(RuntimeError):
    pass


def patch_grid(n: int) -> tuple[int, int]:
    rows = int(math.floor(math.sqrt(n)))
    while n % rows:
        rows -= 1
    return rows, n // rows


# ---------------------------------------------------------------------------
# class appearance

def _aerial_palette(rng: np.random.Generator, shared: tuple[int, ...]) -> dict[int, dict]:
    """Per-class colour means (5 bands), noise level and stripe pattern."""
    palette = {}
    # spread means on a coarse lattice so classes stay separable
    base = rng.permutation(np.array(
        [[r, g, b] for r in (40, 110, 180) for g in (50, 120, 190) for b in (45, 115, 185)]
    ))
    for k, value in enumerate(range(1, 20)):
        rgb = base[k % len(base)].astype(float)
        nir = 60.0 + 12.0 * (value % 13)
        elev = {1: 200.0, 6: 150.0, 7: 140.0, 8: 90.0}.get(value, 40.0 + 3 * value)
        palette[value] = {
            "mean": np.array([*rgb, nir, elev]),
            "noise": 6.0 + (value % 4) * 2.0,
            "stripe_period": 0.0 if value not in (9, 11, 12) else 6.0 + (value % 3) * 4.0,
            "stripe_angle": (value * 37 % 180) * math.pi / 180.0,
        }
    if shared:
        ref = palette[shared[0]]
        for value in shared[1:]:
            palette[value] = ref
    return palette


def _seasonal_profiles(rng: np.random.Generator) -> dict[int, dict]:
    """Per-class band means, seasonal amplitude and peak day."""
    profiles = {}
    for value in range(1, 20):
        vegetated = value in (6, 7, 8, 9, 10, 11, 12)
        base = rng.uniform(400, 2500, size=N_SAT_BANDS)
        if vegetated:
            base[6:8] += 1500.0  # red-edge / NIR plateau
        amp = rng.uniform(100, 500, size=N_SAT_BANDS)
        if vegetated:
            amp[3:8] *= 3.0
        profiles[value] = {"base": base, "amp": amp, "peak": float(rng.uniform(60, 300))}
    # herbaceous and agricultural land peak at clearly different seasons
    profiles[10]["peak"] = 110.0
    profiles[11]["peak"] = 220.0
    profiles[11]["amp"] = profiles[11]["amp"] * 1.5
    profiles[12]["peak"] = 40.0
    return profiles


# ---------------------------------------------------------------------------
# rendering

def _parcel_map(rng, h, w, classes, parcel_px):
    n_seeds = max(2, int(round(h * w / (parcel_px ** 2))))
    seeds = rng.uniform(0, [h, w], size=(n_seeds, 2))
    seed_cls = rng.choice(np.asarray(classes), size=n_seeds)
    rr, cc = np.mgrid[0:h, 0:w]
    pts = np.stack([rr.ravel() + 0.5, cc.ravel() + 0.5], axis=1)
    d2 = ((pts[:, None, :] - seeds[None, :, :]) ** 2).sum(-1)
    return seed_cls[d2.argmin(1)].reshape(h, w).astype(np.uint8)


def _footprint_labels(class_map, r0, c0):
    idx = (np.arange(PATCH_SIZE) * FOOTPRINT_PX) // PATCH_SIZE
    return class_map[r0 + idx[:, None], c0 + idx[None, :]].copy()


def _overlay_objects(rng, labels, overlay_classes, other_prob):
    n_obj = int(rng.integers(1, 4)) if overlay_classes else 0
    for _ in range(n_obj):
        value = int(rng.choice(overlay_classes))
        hh, ww = rng.integers(48, 120, size=2)
        r, c = rng.integers(0, PATCH_SIZE - hh), rng.integers(0, PATCH_SIZE - ww)
        labels[r:r + hh, c:c + ww] = value
    if rng.random() < other_prob:
        value = int(rng.choice(OTHER_RAW_VALUES))
        hh, ww = rng.integers(40, 90, size=2)
        r, c = rng.integers(0, PATCH_SIZE - hh), rng.integers(0, PATCH_SIZE - ww)
        labels[r:r + hh, c:c + ww] = value
    return labels


def _render_aerial(rng, labels, palette):
    img = np.empty((5, PATCH_SIZE, PATCH_SIZE), dtype=np.float64)
    rr, cc = np.mgrid[0:PATCH_SIZE, 0:PATCH_SIZE]
    noise = rng.standard_normal((5, PATCH_SIZE, PATCH_SIZE))
    for value in np.unique(labels):
        sel = labels == value
        p = palette[int(value)]
        px = p["mean"][:, None] + p["noise"] * noise[:, sel]
        if p["stripe_period"]:
            phase = (rr[sel] * math.cos(p["stripe_angle"]) + cc[sel] * math.sin(p["stripe_angle"]))
            px = px + 18.0 * np.sin(2 * math.pi * phase / p["stripe_period"])[None, :]
        img[:, sel] = px
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def _acquisition_days(rng, t, year):
    n_days = 366 if (year % 4 == 0 and year % 100) or year % 400 == 0 else 365
    days = np.sort(rng.choice(np.arange(1, n_days + 1), size=t, replace=False))
    records = []
    for i, doy in enumerate(days):
        date = dt.date(year, 1, 1) + dt.timedelta(days=int(doy) - 1)
        platform = "S2A" if i % 2 == 0 else "S2B"
        records.append(AcquisitionRecord(platform, date, dt.time(10, 40, 21), 8 + (i % 3) * 43, "31TCJ"))
    return days, tuple(records)


def _blob(rng, h, w, coverage):
    """Boolean mask of roughly ``coverage`` fraction, spatially coherent."""
    if coverage <= 0:
        return np.zeros((h, w), bool)
    field = rng.standard_normal((max(2, h // 6), max(2, w // 6)))
    ry = np.linspace(0, field.shape[0] - 1, h)
    rx = np.linspace(0, field.shape[1] - 1, w)
    y0 = np.floor(ry).astype(int).clip(0, field.shape[0] - 2)
    x0 = np.floor(rx).astype(int).clip(0, field.shape[1] - 2)
    fy, fx = (ry - y0)[:, None], (rx - x0)[None, :]
    f = (field[y0][:, x0] * (1 - fy) * (1 - fx) + field[y0 + 1][:, x0] * fy * (1 - fx)
         + field[y0][:, x0 + 1] * (1 - fy) * fx + field[y0 + 1][:, x0 + 1] * fy * fx)
    thr = np.quantile(f, 1.0 - coverage)
    return f >= thr


def _render_series(rng, area_id, class_map, profiles, t, year, clouds, nodata_prob):
    h, w = class_map.shape
    days, records = _acquisition_days(rng, t, year)
    data = np.empty((t, N_SAT_BANDS, h, w), dtype=np.float64)
    masks = np.zeros((t, 2, h, w), dtype=np.uint8)
    bases = np.stack([profiles[int(v)]["base"] for v in range(1, 20)])
    amps = np.stack([profiles[int(v)]["amp"] for v in range(1, 20)])
    peaks = np.array([profiles[int(v)]["peak"] for v in range(1, 20)])
    cls_idx = class_map.astype(int) - 1
    forced_cloudy = int(rng.integers(0, t)) if clouds else -1
    for k, doy in enumerate(days):
        season = np.exp(-0.5 * ((doy - peaks) / 45.0) ** 2)  # (19,)
        refl = bases + amps * season[:, None]  # (19, 10)
        frame = refl[cls_idx].transpose(2, 0, 1) + 60.0 * rng.standard_normal((N_SAT_BANDS, h, w))
        if clouds:
            coverage = rng.uniform(0.6, 1.0) if (k == forced_cloudy or rng.random() < 0.2) else rng.uniform(0.0, 0.3)
            cloud = _blob(rng, h, w, coverage)
            prob = np.where(cloud, rng.integers(60, 101, size=(h, w)), rng.integers(0, 30, size=(h, w)))
            masks[k, 1] = prob
            frame[:, cloud] = 7000.0 + 300.0 * rng.standard_normal((N_SAT_BANDS, int(cloud.sum())))
            if doy < 60 or doy > 330:
                snow = _blob(rng, h, w, rng.uniform(0.0, 0.2))
                masks[k, 0] = np.where(snow, 90, 0)
        # reflectance 0 on every band is reserved for nodata
        data[k] = np.clip(np.rint(frame), 1, 65535)
        if nodata_prob and rng.random() < nodata_prob:
            edge = int(rng.integers(1, max(2, w // 4)))
            data[k, :, :, :edge] = 0.0
    return SentinelSeries(area_id, data.astype(np.uint16), masks, records)


# ---------------------------------------------------------------------------

def generate_synthetic(spec: SyntheticSpec, out_dir, overwrite: bool = False) -> dict:
    """Write a complete dataset tree to ``out_dir`` and return a summary of its contents."""
    errors = spec.validate()
    if errors:
        raise ValueError("; ".join(errors))
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()):
        if not overwrite:
            raise GeneratorError(f"{out} exists and is not empty; pass overwrite to replace it")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(spec.seed)
    palette = _aerial_palette(rng, tuple(spec.shared_texture))
    profiles = _seasonal_profiles(rng)
    rows, cols = patch_grid(spec.patches_per_area)
    h = spec.height or rows * FOOTPRINT_PX + 2 * spec.buffer_px
    w = spec.width or cols * FOOTPRINT_PX + 2 * spec.buffer_px

    centroids: dict[str, tuple[int, int]] = {}
    metadata: dict[str, PatchMetadata] = {}
    summary = {"train": {}, "val": {}, "test": {}}
    counter = 0
    domain_no = 0
    for split, n_dom in (("train", spec.domains), ("val", spec.val_domains), ("test", spec.test_domains)):
        for _ in range(n_dom):
            domain_no += 1
            domain = f"D{domain_no:03d}_{spec.year}"
            for a in range(spec.areas_per_domain):
                letters = "".join(rng.choice(list("ABCDEFGHIJKLMNOPQRSTUVWXYZ"), size=2))
                area_dir = f"Z{a + 1}_{letters}"
                area_id = f"{domain}-{area_dir}"
                class_map = _parcel_map(rng, h, w, spec.sat_classes, spec.parcel_px)
                t = int(rng.integers(spec.t_range[0], spec.t_range[1] + 1))
                series = _render_series(rng, area_id, class_map, profiles, t, spec.year,
                                        spec.clouds, spec.nodata_prob)
                write_sentinel(series, out / f"sen_{split}" / domain / area_dir / "sen")
                grid_r0 = (h - rows * FOOTPRINT_PX) // 2
                grid_c0 = (w - cols * FOOTPRINT_PX) // 2
                x0 = 300_000.0 + 20_000.0 * domain_no
                y0 = 6_800_000.0 - 15_000.0 * domain_no + 1_000.0 * a
                for i in range(spec.patches_per_area):
                    counter += 1
                    pid = f"IMG_{counter:06d}"
                    pr, pc = divmod(i, cols)
                    r0 = grid_r0 + pr * FOOTPRINT_PX
                    c0 = grid_c0 + pc * FOOTPRINT_PX
                    labels = _footprint_labels(class_map, r0, c0)
                    labels = _overlay_objects(rng, labels, spec.overlay_classes, spec.other_prob)
                    pixels = _render_aerial(rng, labels, palette)
                    meta = PatchMetadata(
                        acquisition_date=dt.date(spec.year, int(rng.integers(4, 12)), int(rng.integers(1, 29))),
                        acquisition_time=dt.time(int(rng.integers(9, 16)), int(rng.integers(0, 60))),
                        x=round(x0 + (c0 - grid_c0) * 10.24 * 10 + 51.2, 2),
                        y=round(y0 - (r0 - grid_r0) * 10.24 * 10 - 51.2, 2),
                        z=round(float(rng.uniform(20, 900)), 2),
                        camera="UCE-M3-f120000-01#36;6.00",
                    )
                    write_aerial(AerialPatch(pid, pixels, meta),
                                 out / f"aerial_{split}" / domain / area_dir / "img" / f"{pid}.tif")
                    write_label(LabelMask(labels),
                                out / f"labels_{split}" / domain / area_dir / "msk" / f"MSK_{counter:06d}.tif")
                    centroids[pid] = (r0 + FOOTPRINT_PX // 2, c0 + FOOTPRINT_PX // 2)
                    metadata[pid] = meta
                summary[split].setdefault(domain, {})[area_id] = spec.patches_per_area
    save_centroids(centroids, out / CENTROIDS_FILE)
    save_metadata(metadata, out / METADATA_FILE)
    log.info("generated %d patches under %s", counter, out)
    return summary
