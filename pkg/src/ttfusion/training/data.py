"""Sample loading: aerial patch, canonical label, prepared super-patch series."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..data_model import LabelMask, PatchMetadata, SuperPatchIndex, remap_labels
from ..dataset_io import (
    CENTROIDS_FILE,
    METADATA_FILE,
    DatasetManifest,
    crop_superpatch,
    load_centroids,
    load_metadata,
    read_aerial,
    read_label,
    read_sentinel,
)
from ..fusion_net.metadata import encode_metadata
from ..fusion_net.model import normalize_aerial, normalize_sat
from ..temporal_prep import FilterConfig, filter_nodata, prepare_series


@dataclass
class Sample:
    patch_id: str
    aerial: np.ndarray  # (5, H, W) float32 in [0, 1]
    label: np.ndarray | None  # (H, W) canonical classes 1..13
    sat: np.ndarray | None  # (T, 10, S, S) float32
    dates: np.ndarray | None  # (T,) day of year
    centroid: tuple[int, int] | None  # footprint centre inside the super-patch
    metadata: np.ndarray | None  # (32,)


@dataclass
class Batch:
    ids: list[str]
    aerial: torch.Tensor
    label: torch.Tensor | None
    sat: torch.Tensor | None
    positions: torch.Tensor | None
    pad_mask: torch.Tensor | None
    centroids: list[tuple[int, int]] | None
    metadata: torch.Tensor | None


@dataclass(frozen=True)
class PrepOptions:
    superpatch_size: int = 40
    use_filter: bool = False
    use_monthly_average: bool = False
    filter: FilterConfig = FilterConfig()


class PatchDataset:
    """Indexable view over a manifest; samples are prepared once and cached."""

    def __init__(self, manifest: DatasetManifest, prep: PrepOptions = PrepOptions(), with_sat: bool = True,
                 with_metadata: bool = False, centroids: SuperPatchIndex | None = None,
                 metadata: dict[str, PatchMetadata] | None = None, cache: bool = True):
        self.manifest = manifest
        self.prep = prep
        self.with_sat = with_sat
        self.with_metadata = with_metadata
        root = Path(manifest.root)
        if with_sat and centroids is None:
            centroids = load_centroids(root / CENTROIDS_FILE)
        if with_metadata and metadata is None:
            metadata = load_metadata(root / METADATA_FILE)
        self.centroids = centroids
        self.metadata = metadata
        self.cache = cache
        self._samples: dict[int, Sample] = {}
        self._series: dict = {}
        if with_sat:
            missing = [e.patch_id for e in manifest.patch_index if e.patch_id not in centroids]
            if missing:
                raise KeyError(f"no centroid for patches {missing[:5]}{'...' if len(missing) > 5 else ''}")

    def __len__(self) -> int:
        return len(self.manifest.patch_index)

    def _area_series(self, area_id):
        if area_id not in self._series:
            self._series[area_id] = filter_nodata(read_sentinel(self.manifest.sen_dirs[area_id], area_id))
        return self._series[area_id]

    def load(self, i: int) -> Sample:
        if i in self._samples:
            return self._samples[i]
        e = self.manifest.patch_index[i]
        patch = read_aerial(e.aerial_path)
        label = None
        if e.label_path is not None:
            label = remap_labels(read_label(e.label_path)).pixels.astype(np.int64)
        sat = dates = centroid = None
        if self.with_sat:
            series = self._area_series(e.area_id)
            cr, cc = self.centroids[e.patch_id]
            sp = crop_superpatch(series, (cr, cc), self.prep.superpatch_size)
            frames, dates = prepare_series(
                sp.as_series(), self.prep.filter, self.prep.use_filter, self.prep.use_monthly_average
            )
            sat = normalize_sat(frames)
            centroid = (cr - sp.origin[0], cc - sp.origin[1])
        mtd = None
        if self.with_metadata:
            mtd = encode_metadata(self.metadata.get(e.patch_id)).astype(np.float32)
        s = Sample(e.patch_id, normalize_aerial(patch.pixels), label, sat, dates, centroid, mtd)
        if self.cache:
            self._samples[i] = s
        return s

    def __getitem__(self, i: int) -> Sample:
        return self.load(i)


def collate(samples: list[Sample], with_sat: bool = True) -> Batch:
    aerial = torch.from_numpy(np.stack([s.aerial for s in samples]))
    label = None
    if all(s.label is not None for s in samples):
        label = torch.from_numpy(np.stack([s.label for s in samples]))
    sat = positions = pad_mask = centroids = None
    if with_sat and all(s.sat is not None for s in samples):
        t_max = max(s.sat.shape[0] for s in samples)
        b = len(samples)
        sat = torch.zeros((b, t_max, *samples[0].sat.shape[1:]), dtype=torch.float32)
        positions = torch.zeros((b, t_max), dtype=torch.float32)
        pad_mask = torch.ones((b, t_max), dtype=torch.bool)
        for k, s in enumerate(samples):
            t = s.sat.shape[0]
            sat[k, :t] = torch.from_numpy(s.sat)
            positions[k, :t] = torch.from_numpy(s.dates.astype(np.float32))
            pad_mask[k, :t] = False
        if not pad_mask.any():
            pad_mask = None
        centroids = [s.centroid for s in samples]
    metadata = None
    if all(s.metadata is not None for s in samples):
        metadata = torch.from_numpy(np.stack([s.metadata for s in samples]))
    return Batch([s.patch_id for s in samples], aerial, label, sat, positions, pad_mask, centroids, metadata)


def label_mask(sample: Sample) -> LabelMask:
    return LabelMask(sample.label.astype(np.uint8), canonical=True)
