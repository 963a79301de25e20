"""Sentinel-2 time-series conditioning: nodata removal, cloud/snow filtering
and monthly compositing."""

from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass

import numpy as np

from .data_model import SentinelSeries

log = logging.getLogger(__name__)


class EmptySeriesError(ValueError):
    """Raised when filtering leaves no acquisition date."""


@dataclass(frozen=True)
class FilterConfig:
    prob_threshold: int = 50
    coverage_threshold: float = 0.60

    def __post_init__(self):
        if not 0 <= self.prob_threshold <= 100:
            raise ValueError(f"prob_threshold must lie in [0, 100], got {self.prob_threshold}")
        if not 0.0 <= self.coverage_threshold <= 1.0:
            raise ValueError(f"coverage_threshold must lie in [0, 1], got {self.coverage_threshold}")


@dataclass(frozen=True, eq=False)
class CompositeSeries:
    data: np.ndarray  # (M, 10, S, S) float64
    months: tuple[tuple[int, int], ...]
    counts: tuple[int, ...]

    @property
    def day_of_year(self) -> np.ndarray:
        """Day of year of the 15th of each composite month."""
        return np.array([dt.date(y, m, 15).timetuple().tm_yday for y, m in self.months], dtype=np.int64)


def nodata_dates(series: SentinelSeries) -> np.ndarray:
    """Boolean per date: True when some pixel is zero on every band."""
    if series.n_dates == 0:
        return np.zeros(0, bool)
    return (series.data == 0).all(axis=1).any(axis=(1, 2))


def filter_nodata(series: SentinelSeries) -> SentinelSeries:
    keep = ~nodata_dates(series)
    if not keep.any():
        raise EmptySeriesError(f"{series.area_id}: every date contains nodata pixels")
    if keep.all():
        return series
    return series.select(keep)


def cloud_fraction(mask_frame: np.ndarray, prob_threshold: int = 50) -> float:
    """Fraction of pixels where max(snow, cloud) is strictly above the threshold."""
    merged = mask_frame.max(axis=0)
    return float((merged > prob_threshold).mean())


def cloud_fractions(series: SentinelSeries, prob_threshold: int = 50) -> np.ndarray:
    if series.n_dates == 0:
        return np.zeros(0)
    merged = series.masks.max(axis=1)
    return (merged > prob_threshold).mean(axis=(1, 2))


def clear_dates(series: SentinelSeries, config: FilterConfig) -> np.ndarray:
    return cloud_fractions(series, config.prob_threshold) < config.coverage_threshold


def filter_cloud_snow(series: SentinelSeries, config: FilterConfig = FilterConfig()) -> SentinelSeries:
    keep = clear_dates(series, config)
    if not keep.any():
        raise EmptySeriesError(f"{series.area_id}: every date is cloudy or snowy")
    if keep.all():
        return series
    return series.select(keep)


def least_cloudy(series: SentinelSeries, config: FilterConfig = FilterConfig()) -> SentinelSeries:
    """Single-date series holding the date with the lowest cloud/snow fraction."""
    frac = cloud_fractions(series, config.prob_threshold)
    return series.select([int(np.argmin(frac))])


def monthly_average(series: SentinelSeries, config: FilterConfig = FilterConfig()) -> CompositeSeries:
    """Per-(year, month) mean of the clear dates, months in chronological order."""
    clear = clear_dates(series, config)
    groups: dict[tuple[int, int], list[int]] = {}
    for i, rec in enumerate(series.products):
        if clear[i]:
            groups.setdefault((rec.date.year, rec.date.month), []).append(i)
    if not groups:
        raise EmptySeriesError(f"{series.area_id}: no month has a clear acquisition")
    months = tuple(sorted(groups))
    frames = []
    for key in months:
        # sorting the indices by date makes the float summation order independent of input order
        idx = sorted(groups[key], key=lambda i: (series.products[i].date, series.products[i].time, i))
        frames.append(series.data[idx].astype(np.float64).mean(axis=0))
    return CompositeSeries(np.stack(frames), months, tuple(len(groups[k]) for k in months))


def prepare_series(
    series: SentinelSeries,
    config: FilterConfig = FilterConfig(),
    use_filter: bool = False,
    use_monthly_average: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Run the enabled strategies and return (frames as float64, day-of-year).

    When filtering would remove every date, the least-cloudy date is kept
    instead; likewise a monthly composite with no clear month falls back to
    that date.
    """
    if use_filter:
        try:
            series = filter_cloud_snow(series, config)
        except EmptySeriesError:
            log.warning("%s: all dates filtered out; falling back to the least cloudy date", series.area_id)
            series = least_cloudy(series, config)
    if use_monthly_average:
        try:
            comp = monthly_average(series, config)
            return comp.data, comp.day_of_year
        except EmptySeriesError:
            log.warning("%s: no clear month; falling back to the least cloudy date", series.area_id)
            series = least_cloudy(series, config)
    return series.data.astype(np.float64), series.day_of_year
