"""Domain types, the 13-class nomenclature and label remapping."""

from __future__ import annotations

import datetime as dt
import re
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

PATCH_SIZE = 512
AERIAL_BANDS = ("blue", "green", "red", "nir", "elevation")
N_SAT_BANDS = 10
N_CLASSES = 13
OTHER_CLASS = 13
PLOWED_LAND_CLASS = 12
RAW_LABEL_MAX = 19

PATCH_ID_RE = re.compile(r"^IMG_(\d+)$")
AREA_ID_RE = re.compile(r"^(?P<domain>D\d{3}_\d{4})-(?P<area>[A-Za-z0-9]+)_(?P<letters>[A-Za-z]+)$")


class InvalidLabelError(ValueError):
    """Raised when a label raster carries a value outside the raw range."""


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class ClassInfo:
    value: int
    name: str
    color: str
    aerial_weight: float = 1.0
    sat_weight: float = 1.0


@dataclass(frozen=True)
class Nomenclature:
    classes: tuple[ClassInfo, ...]

    def __post_init__(self):
        if len(self.classes) != N_CLASSES:
            raise ValueError(f"nomenclature needs {N_CLASSES} classes, got {len(self.classes)}")
        values = [c.value for c in self.classes]
        if values != list(range(1, N_CLASSES + 1)):
            raise ValueError(f"class values must be 1..{N_CLASSES} in order, got {values}")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.classes]

    def to_dict(self) -> list[dict]:
        return [vars(c).copy() for c in self.classes]

    @classmethod
    def from_dict(cls, entries: list[dict]) -> Nomenclature:
        return cls(tuple(ClassInfo(**e) for e in entries))

    def with_weights(self, aerial=None, sat=None) -> Nomenclature:
        """Return a copy with the given weight vectors substituted."""
        classes = []
        for i, c in enumerate(self.classes):
            classes.append(
                replace(
                    c,
                    aerial_weight=c.aerial_weight if aerial is None else float(aerial[i]),
                    sat_weight=c.sat_weight if sat is None else float(sat[i]),
                )
            )
        return Nomenclature(tuple(classes))


# (name, colour, pixel frequency over the full dataset)
_TABLE = [
    ("building", "#db0e9a", 1_453_245_093),
    ("pervious surface", "#938e7b", 1_495_168_513),
    ("impervious surface", "#f80c00", 2_467_133_374),
    ("bare soil", "#a97101", 629_187_886),
    ("water", "#1553ae", 922_004_548),
    ("coniferous", "#194a26", 873_397_479),
    ("deciduous", "#46e483", 3_531_567_944),
    ("brushwood", "#f3a60d", 1_284_640_813),
    ("vineyard", "#660082", 612_965_642),
    ("herbaceous vegetation", "#55ff00", 3_717_682_095),
    ("agricultural land", "#fff30d", 2_541_274_397),
    ("plowed land", "#e4df7c", 703_518_642),
    ("other", "#000000", 153_055_302),
]

REFERENCE_PIXEL_COUNTS = np.array([row[2] for row in _TABLE], dtype=np.int64)


def default_nomenclature() -> Nomenclature:
    classes = []
    for value, (name, color, _) in enumerate(_TABLE, start=1):
        aerial_w = 0.0 if value == OTHER_CLASS else 1.0
        sat_w = 0.0 if value in (OTHER_CLASS, PLOWED_LAND_CLASS) else 1.0
        classes.append(ClassInfo(value, name, color, aerial_w, sat_w))
    return Nomenclature(tuple(classes))


def class_weights(nomenclature: Nomenclature, branch: Literal["aerial", "sat"]) -> np.ndarray:
    """Per-class loss weights (index 0 is class 1) for one network branch."""
    if branch == "aerial":
        return np.array([c.aerial_weight for c in nomenclature.classes], dtype=np.float64)
    if branch == "sat":
        return np.array([c.sat_weight for c in nomenclature.classes], dtype=np.float64)
    raise ValueError(f"unknown branch {branch!r}; expected 'aerial' or 'sat'")


@dataclass(frozen=True)
class PatchMetadata:
    acquisition_date: dt.date
    acquisition_time: dt.time
    x: float
    y: float
    z: float
    camera: str

    def to_json(self) -> dict:
        return {
            "date": self.acquisition_date.isoformat(),
            "time": self.acquisition_time.strftime("%Hh%M"),
            "patch_centroid_x": self.x,
            "patch_centroid_y": self.y,
            "patch_centroid_z": self.z,
            "camera": self.camera,
        }

    @classmethod
    def from_json(cls, d: dict) -> PatchMetadata:
        missing = [k for k in ("date", "time", "patch_centroid_x", "patch_centroid_y",
                               "patch_centroid_z", "camera") if k not in d]
        if missing:
            raise KeyError(f"metadata record missing fields: {missing}")
        t = d["time"].replace("h", ":")
        return cls(
            acquisition_date=dt.date.fromisoformat(d["date"]),
            acquisition_time=dt.time.fromisoformat(t),
            x=float(d["patch_centroid_x"]),
            y=float(d["patch_centroid_y"]),
            z=float(d["patch_centroid_z"]),
            camera=str(d["camera"]),
        )


@dataclass(frozen=True, eq=False)
class AerialPatch:
    id: str
    pixels: np.ndarray  # (5, 512, 512) uint8
    metadata: PatchMetadata | None = None

    def __post_init__(self):
        if not PATCH_ID_RE.match(self.id):
            raise ValueError(f"patch id {self.id!r} does not match IMG_<number>")
        expected = (len(AERIAL_BANDS), PATCH_SIZE, PATCH_SIZE)
        if self.pixels.shape != expected:
            raise ShapeError(f"aerial patch {self.id}: found shape {self.pixels.shape}, expected {expected}")
        if self.pixels.dtype != np.uint8:
            raise ShapeError(f"aerial patch {self.id}: dtype {self.pixels.dtype}, expected uint8")
        self.pixels.flags.writeable = False

    @property
    def number(self) -> str:
        return self.id.split("_", 1)[1]


@dataclass(frozen=True)
class AcquisitionRecord:
    platform: Literal["S2A", "S2B"]
    date: dt.date
    time: dt.time
    orbit: int
    tile: str
    name: str = ""

    @property
    def day_of_year(self) -> int:
        return self.date.timetuple().tm_yday

    @classmethod
    def parse(cls, product: str) -> AcquisitionRecord:
        """Parse a product name such as ``S2A_MSIL2A_20210415T104021_N0300_R008_T31TCJ_20210415T134437``.

        Fields are taken positionally from the underscore-separated tokens:
        platform, level, first datetime, baseline, relative orbit, tile.
        """
        tokens = product.strip().split("_")
        if len(tokens) < 6:
            raise ValueError(f"product name {product!r} has {len(tokens)} tokens, expected at least 6")
        platform = tokens[0]
        if platform not in ("S2A", "S2B"):
            raise ValueError(f"product name {product!r}: unknown platform {platform!r}")
        stamp = tokens[2]
        try:
            when = dt.datetime.strptime(stamp, "%Y%m%dT%H%M%S")
        except ValueError as exc:
            raise ValueError(f"product name {product!r}: bad acquisition stamp {stamp!r}") from exc
        orbit_tok = tokens[4]
        if not orbit_tok.startswith("R") or not orbit_tok[1:].isdigit():
            raise ValueError(f"product name {product!r}: bad orbit token {orbit_tok!r}")
        return cls(platform, when.date(), when.time(), int(orbit_tok[1:]), tokens[5].lstrip("T"), product.strip())

    def to_product_name(self) -> str:
        if self.name:
            return self.name
        stamp = dt.datetime.combine(self.date, self.time).strftime("%Y%m%dT%H%M%S")
        return f"{self.platform}_MSIL2A_{stamp}_N0300_R{self.orbit:03d}_T{self.tile}_{stamp}"


@dataclass(frozen=True, eq=False)
class SentinelSeries:
    area_id: str
    data: np.ndarray  # (T, 10, H, W) uint16
    masks: np.ndarray  # (T, 2, H, W) snow, cloud in [0, 100]
    products: tuple[AcquisitionRecord, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "products", tuple(self.products))
        if self.data.ndim != 4 or self.data.shape[1] != N_SAT_BANDS:
            raise ShapeError(f"{self.area_id}: data shape {self.data.shape}, expected (T, {N_SAT_BANDS}, H, W)")
        if self.masks.ndim != 4 or self.masks.shape[1] != 2:
            raise ShapeError(f"{self.area_id}: masks shape {self.masks.shape}, expected (T, 2, H, W)")
        lengths = (self.data.shape[0], self.masks.shape[0], len(self.products))
        if len(set(lengths)) != 1:
            raise ShapeError(f"{self.area_id}: temporal lengths disagree (data, masks, products) = {lengths}")
        if self.data.shape[2:] != self.masks.shape[2:]:
            raise ShapeError(f"{self.area_id}: data grid {self.data.shape[2:]} != masks grid {self.masks.shape[2:]}")
        if self.masks.size and (self.masks.min() < 0 or self.masks.max() > 100):
            raise ValueError(f"{self.area_id}: mask values outside [0, 100]")

    @property
    def n_dates(self) -> int:
        return self.data.shape[0]

    @property
    def day_of_year(self) -> np.ndarray:
        return np.array([p.day_of_year for p in self.products], dtype=np.int64)

    def select(self, keep) -> SentinelSeries:
        """Keep the dates at the given indices (or boolean mask), in order."""
        keep = np.asarray(keep)
        if keep.dtype == bool:
            keep = np.flatnonzero(keep)
        return SentinelSeries(
            self.area_id,
            self.data[keep],
            self.masks[keep],
            tuple(self.products[i] for i in keep),
        )


@dataclass(frozen=True, eq=False)
class LabelMask:
    pixels: np.ndarray  # (512, 512) uint8
    canonical: bool = False

    def __post_init__(self):
        if self.pixels.ndim != 2:
            raise ShapeError(f"label mask must be 2-D, got shape {self.pixels.shape}")
        hi = N_CLASSES if self.canonical else RAW_LABEL_MAX
        _check_label_range(self.pixels, hi)


def _check_label_range(pixels: np.ndarray, hi: int) -> None:
    bad = (pixels < 1) | (pixels > hi)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise InvalidLabelError(
            f"label value {int(pixels[r, c])} at pixel (row={r}, col={c}) outside [1, {hi}]"
        )


def remap_labels(mask: LabelMask) -> LabelMask:
    """Merge every raw value >= 13 into the "other" class."""
    _check_label_range(mask.pixels, RAW_LABEL_MAX)
    out = np.minimum(mask.pixels, OTHER_CLASS).astype(np.uint8)
    return LabelMask(out, canonical=True)


@dataclass(frozen=True)
class SuperPatchIndex:
    entries: dict[str, tuple[int, int]]

    def __getitem__(self, patch_id: str) -> tuple[int, int]:
        return self.entries[patch_id]

    def __contains__(self, patch_id: str) -> bool:
        return patch_id in self.entries

    def __len__(self) -> int:
        return len(self.entries)


def domain_of_area(area_id: str) -> str:
    m = AREA_ID_RE.match(area_id)
    if not m:
        raise ValueError(f"area id {area_id!r} does not match domain_year-areanumber_letters")
    return m.group("domain")
