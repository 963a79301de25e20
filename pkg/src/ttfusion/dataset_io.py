"""Reading and writing the on-disk dataset layout.

Layout under a dataset root, for split in {train, val, test}::

    aerial_<split>/<domain_year>/<area>/img/IMG_<id>.tif
    sen_<split>/<domain_year>/<area>/sen/SEN2_<area_id>_{data,masks}.npy
    sen_<split>/<domain_year>/<area>/sen/SEN2_<area_id>_products.txt
    labels_<split>/<domain_year>/<area>/msk/MSK_<id>.tif
    metadata_aerial.json
    centroids_sp_to_patch.json

``area_id`` is ``<domain_year>-<area>``, e.g. ``D077_2021-Z9_AF``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tifffile

from .data_model import (
    AERIAL_BANDS,
    PATCH_SIZE,
    AcquisitionRecord,
    AerialPatch,
    LabelMask,
    PatchMetadata,
    SentinelSeries,
    SuperPatchIndex,
)

SPLITS = ("train", "val", "test")
METADATA_FILE = "metadata_aerial.json"
CENTROIDS_FILE = "centroids_sp_to_patch.json"
MAX_SUPERPATCH_SIZE = 110


class DatasetStructureError(RuntimeError):
    pass


class FormatError(ValueError):
    pass


class ConsistencyError(ValueError):
    pass


class UncroppableError(ValueError):
    pass


@dataclass(frozen=True)
class PatchEntry:
    patch_id: str
    aerial_path: Path
    label_path: Path | None
    area_id: str


@dataclass
class DatasetManifest:
    root: Path
    split: str
    domains: list[str] = field(default_factory=list)
    areas: dict[str, list[str]] = field(default_factory=dict)
    patch_index: list[PatchEntry] = field(default_factory=list)
    sen_dirs: dict[str, Path] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.patch_index)

    def entry(self, patch_id: str) -> PatchEntry:
        for e in self.patch_index:
            if e.patch_id == patch_id:
                return e
        raise KeyError(patch_id)

    def subset(self, domains) -> DatasetManifest:
        """Restrict the manifest to the given domains."""
        domains = [d for d in self.domains if d in set(domains)]
        areas = {d: self.areas[d] for d in domains}
        keep_areas = {a for d in domains for a in areas[d]}
        return DatasetManifest(
            self.root,
            self.split,
            domains,
            areas,
            [e for e in self.patch_index if e.area_id in keep_areas],
            {a: p for a, p in self.sen_dirs.items() if a in keep_areas},
        )


@dataclass(frozen=True, eq=False)
class SuperPatch:
    data: np.ndarray  # (T, 10, S, S)
    masks: np.ndarray  # (T, 2, S, S)
    origin: tuple[int, int]
    source_area: str
    products: tuple[AcquisitionRecord, ...] = ()

    @property
    def size(self) -> int:
        return self.data.shape[-1]

    def as_series(self) -> SentinelSeries:
        return SentinelSeries(self.source_area, self.data, self.masks, self.products)


def area_id_for(domain: str, area_dir: str) -> str:
    return f"{domain}-{area_dir}"


def scan_dataset(root, split: str) -> DatasetManifest:
    """Enumerate domains, areas and patches of one split, sorted lexicographically."""
    root = Path(root)
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}; expected one of {SPLITS}")
    if not root.is_dir():
        raise DatasetStructureError(f"dataset root {root} does not exist")
    manifest = DatasetManifest(root, split)
    aerial_root = root / f"aerial_{split}"
    if not aerial_root.is_dir():
        return manifest
    sen_root = root / f"sen_{split}"
    label_root = root / f"labels_{split}"
    labels_required = split != "test" or label_root.is_dir()

    for domain_dir in sorted(p for p in aerial_root.iterdir() if p.is_dir()):
        domain = domain_dir.name
        area_ids = []
        for area_dir in sorted(p for p in domain_dir.iterdir() if p.is_dir()):
            area_id = area_id_for(domain, area_dir.name)
            sen_dir = sen_root / domain / area_dir.name / "sen"
            if not sen_dir.is_dir() or not list(sen_dir.glob("SEN2_*_data.npy")):
                raise DatasetStructureError(f"area {area_id}: missing satellite counterpart {sen_dir}")
            msk_dir = label_root / domain / area_dir.name / "msk"
            if labels_required and not msk_dir.is_dir():
                raise DatasetStructureError(f"area {area_id}: missing labels counterpart {msk_dir}")
            area_ids.append(area_id)
            manifest.sen_dirs[area_id] = sen_dir
            for img in sorted((area_dir / "img").glob("IMG_*.tif")):
                patch_id = img.stem
                label = msk_dir / f"MSK_{patch_id.split('_', 1)[1]}.tif"
                if labels_required and not label.is_file():
                    raise DatasetStructureError(f"area {area_id}: patch {patch_id} has no label file {label}")
                manifest.patch_index.append(
                    PatchEntry(patch_id, img, label if label.is_file() else None, area_id)
                )
        if area_ids:
            manifest.domains.append(domain)
            manifest.areas[domain] = area_ids
    manifest.patch_index.sort(key=lambda e: e.patch_id)
    return manifest


def _tiff_bytes_kwargs() -> dict:
    return dict(photometric="minisblack", metadata=None, software=None)


def read_aerial(path, metadata: PatchMetadata | None = None) -> AerialPatch:
    path = Path(path)
    arr = tifffile.imread(path)
    if arr.ndim == 3 and arr.shape[-1] == len(AERIAL_BANDS) and arr.shape[0] != len(AERIAL_BANDS):
        arr = np.moveaxis(arr, -1, 0)
    expected = (len(AERIAL_BANDS), PATCH_SIZE, PATCH_SIZE)
    if arr.shape != expected:
        raise FormatError(f"{path.name}: found shape {arr.shape}, expected {expected}")
    if arr.dtype != np.uint8:
        raise FormatError(f"{path.name}: found dtype {arr.dtype}, expected uint8")
    return AerialPatch(path.stem, np.ascontiguousarray(arr), metadata)


def write_aerial(patch: AerialPatch, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tifffile.imwrite(path, patch.pixels, planarconfig="separate", **_tiff_bytes_kwargs())


def read_label(path) -> LabelMask:
    path = Path(path)
    arr = tifffile.imread(path)
    if arr.ndim == 3 and 1 in (arr.shape[0], arr.shape[-1]):
        arr = arr.reshape(arr.shape[-2:] if arr.shape[0] == 1 else arr.shape[:2])
    if arr.shape != (PATCH_SIZE, PATCH_SIZE):
        raise FormatError(f"{path.name}: found shape {arr.shape}, expected {(PATCH_SIZE, PATCH_SIZE)}")
    return LabelMask(np.ascontiguousarray(arr.astype(np.uint8)), canonical=False)


def write_label(mask: LabelMask, path) -> None:
    write_raster(mask.pixels, path)


def write_raster(pixels: np.ndarray, path) -> None:
    """Write a single-band uint8 class raster."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tifffile.imwrite(path, np.asarray(pixels, dtype=np.uint8), **_tiff_bytes_kwargs())


def read_raster(path) -> np.ndarray:
    return np.asarray(tifffile.imread(path))


def sentinel_paths(area_dir) -> tuple[Path, Path, Path]:
    """Locate the data/masks/products triple inside a ``sen`` directory."""
    area_dir = Path(area_dir)
    data = sorted(area_dir.glob("SEN2_*_data.npy"))
    if len(data) != 1:
        raise DatasetStructureError(f"{area_dir}: expected one SEN2_*_data.npy, found {len(data)}")
    stem = data[0].name[: -len("_data.npy")]
    masks = area_dir / f"{stem}_masks.npy"
    products = area_dir / f"{stem}_products.txt"
    for p in (masks, products):
        if not p.is_file():
            raise DatasetStructureError(f"{area_dir}: missing {p.name}")
    return data[0], masks, products


def read_sentinel(area_dir, area_id: str | None = None) -> SentinelSeries:
    data_p, masks_p, products_p = sentinel_paths(area_dir)
    data = np.load(data_p)
    masks = np.load(masks_p)
    lines = [ln for ln in products_p.read_text().splitlines() if ln.strip()]
    lengths = (data.shape[0] if data.ndim else 0, masks.shape[0] if masks.ndim else 0, len(lines))
    if len(set(lengths)) != 1:
        raise ConsistencyError(
            f"{area_dir}: temporal lengths disagree: data={lengths[0]}, masks={lengths[1]}, products={lengths[2]}"
        )
    if not np.issubdtype(masks.dtype, np.integer):
        raise FormatError(f"{masks_p.name}: masks must be integer, got {masks.dtype}")
    if masks.size and (masks.min() < 0 or masks.max() > 100):
        raise FormatError(f"{masks_p.name}: mask values outside [0, 100]")
    if area_id is None:
        area_id = data_p.name[len("SEN2_"): -len("_data.npy")]
        if area_id.startswith("sp_"):
            area_id = area_id[3:]
    products = tuple(AcquisitionRecord.parse(ln) for ln in lines)
    return SentinelSeries(area_id, data.astype(np.uint16, copy=False), masks.astype(np.uint8), products)


def write_sentinel(series: SentinelSeries, sen_dir) -> None:
    sen_dir = Path(sen_dir)
    sen_dir.mkdir(parents=True, exist_ok=True)
    stem = f"SEN2_{series.area_id}"
    np.save(sen_dir / f"{stem}_data.npy", np.ascontiguousarray(series.data, dtype=np.uint16))
    np.save(sen_dir / f"{stem}_masks.npy", np.ascontiguousarray(series.masks, dtype=np.uint8))
    (sen_dir / f"{stem}_products.txt").write_text(
        "".join(p.to_product_name() + "\n" for p in series.products)
    )


def _coord(key: str, value) -> tuple[int, int]:
    # Centroid pairs are interpreted as (row, col) in the super-area array.
    if (
        not isinstance(value, (list, tuple))
        or len(value) != 2
        or not all(isinstance(v, int) and not isinstance(v, bool) for v in value)
    ):
        raise ValueError(f"centroid for {key!r} must be a 2-element integer list, got {value!r}")
    return int(value[0]), int(value[1])


def load_centroids(path) -> SuperPatchIndex:
    def pairs_hook(pairs):
        seen = {}
        for k, v in pairs:
            if k in seen:
                warnings.warn(f"duplicate centroid key {k!r} in {path}; keeping the last value", stacklevel=2)
            seen[k] = v
        return seen

    raw = json.loads(Path(path).read_text(), object_pairs_hook=pairs_hook)
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: centroids file must hold a JSON object")
    return SuperPatchIndex({k: _coord(k, v) for k, v in raw.items()})


def save_centroids(index: SuperPatchIndex | dict, path) -> None:
    entries = index.entries if isinstance(index, SuperPatchIndex) else index
    payload = {k: [int(r), int(c)] for k, (r, c) in sorted(entries.items())}
    Path(path).write_text(json.dumps(payload, indent=1) + "\n")


def load_metadata(path) -> dict[str, PatchMetadata]:
    raw = json.loads(Path(path).read_text())
    return {k: PatchMetadata.from_json(v) for k, v in raw.items()}


def save_metadata(meta: dict[str, PatchMetadata], path) -> None:
    payload = {k: meta[k].to_json() for k in sorted(meta)}
    Path(path).write_text(json.dumps(payload, indent=1) + "\n")


def window_start(center: int, size: int, extent: int) -> int:
    """Start of a ``size`` window nominally covering [center - size//2, center + ceil(size/2)),
    shifted inward so that it lies within [0, extent)."""
    start = center - size // 2
    return min(max(start, 0), extent - size)


def crop_superpatch(series: SentinelSeries, centroid: tuple[int, int], size: int) -> SuperPatch:
    h, w = series.data.shape[-2:]
    if size > MAX_SUPERPATCH_SIZE:
        raise UncroppableError(f"super-patch size {size} exceeds the {MAX_SUPERPATCH_SIZE}-pixel limit")
    if size < 1 or size > min(h, w):
        raise UncroppableError(f"{series.area_id}: size {size} does not fit the {h}x{w} super-area")
    r0 = window_start(int(centroid[0]), size, h)
    c0 = window_start(int(centroid[1]), size, w)
    return SuperPatch(
        series.data[:, :, r0:r0 + size, c0:c0 + size],
        series.masks[:, :, r0:r0 + size, c0:c0 + size],
        (r0, c0),
        series.area_id,
        series.products,
    )

