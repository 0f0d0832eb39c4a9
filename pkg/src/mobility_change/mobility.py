"""Rolling dwell-time measure and its year-over-year change.

The measure is a centered moving average: with the default radius of 3, the
output at index ``k`` averages raw days ``k .. k+6`` and is labelled with the
middle day ``k + 3`` (0-based). A 365-day year gives 359 values.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_matrix, check_int
from .exceptions import DataError, GapError

DEFAULT_RADIUS = 3


@dataclass
class TsppSeries:
    region_id: str
    year: int
    values: np.ndarray
    start_day_of_year: int  # 1-based calendar day of values[0]


@dataclass
class DeltaSeries:
    region_id: str
    values: np.ndarray


def rolling_mean(values, radius=DEFAULT_RADIUS):
    """Centered moving average, trimmed so every window is full.

    Works along the last axis. Each window is averaged as deviations from
    its center value, so a constant stretch maps to exactly that constant.
    """
    radius = check_int(radius, name="radius", low=0)
    x = np.asarray(values, dtype=np.float64)
    width = 2 * radius + 1
    if x.shape[-1] < width:
        raise DataError(f"series of length {x.shape[-1]} is shorter than the {width}-day window")
    if radius == 0:
        return x.copy()
    windows = np.lib.stride_tricks.sliding_window_view(x, width, axis=-1)
    center = windows[..., radius]
    return center + (windows - center[..., None]).sum(axis=-1) / width


def tspp(series, radius=DEFAULT_RADIUS):
    """Time spent at public places: the rolling mean of one region-year."""
    if not series.is_complete:
        start, stop = series.gaps()[0]
        raise GapError(series.region_id, start, stop)
    return TsppSeries(
        series.region_id, series.year, rolling_mean(series.values, radius), radius + 1
    )


def delta_tspp(target, reference):
    """Elementwise ``target - reference`` (e.g. 2020 minus 2019)."""
    if target.region_id != reference.region_id:
        raise DataError(f"region mismatch: {target.region_id!r} vs {reference.region_id!r}")
    if target.values.shape != reference.values.shape:
        raise DataError(
            f"length mismatch for region {target.region_id}: "
            f"{target.values.shape[0]} vs {reference.values.shape[0]}"
        )
    return DeltaSeries(target.region_id, target.values - reference.values)


def aggregate_delta(deltas, region_set=None, *, region_id="ALL"):
    """Unweighted mean change across the selected regions.

    ``region_set`` is an iterable of region ids; ``None`` selects all.
    """
    deltas = list(deltas)
    if region_set is not None:
        wanted = set(region_set)
        deltas = [d for d in deltas if d.region_id in wanted]
    if not deltas:
        raise DataError("aggregate_delta: empty region selection")
    lengths = {d.values.shape[0] for d in deltas}
    if len(lengths) != 1:
        raise DataError(f"aggregate_delta: series lengths differ: {sorted(lengths)}")
    stacked = np.vstack([d.values for d in sorted(deltas, key=lambda d: d.region_id)])
    # fsum per column keeps the mean independent of selection order
    means = np.array([math.fsum(col) for col in stacked.T]) / stacked.shape[0]
    return DeltaSeries(region_id, means)


def compute_deltas(series, target_year, reference_year, radius=DEFAULT_RADIUS):
    """``{region: {year: RegionSeries}}`` -> list of :class:`DeltaSeries`, sorted by region."""
    out = []
    for region in sorted(series):
        per_year = series[region]
        out.append(
            delta_tspp(tspp(per_year[target_year], radius), tspp(per_year[reference_year], radius))
        )
    return out


class TsppTransformer(TransformerMixin, BaseEstimator):
    """Rolling-window smoother over rows of a (regions x days) array.

    Stateless; ``fit`` only records the input width.
    """

    def __init__(self, radius=DEFAULT_RADIUS):
        self.radius = radius

    def fit(self, X, y=None):
        X = as_matrix(X)
        check_int(self.radius, name="radius", low=0)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = as_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise DataError(f"X has {X.shape[1]} columns, fitted on {self.n_features_in_}")
        return rolling_mean(X, self.radius)


# -- CSV ----------------------------------------------------------------------


def _value_columns(prefix, n):
    return [f"{prefix}_{i:04d}" for i in range(1, n + 1)]


def write_delta_csv(deltas, path):
    """One row per region: ``region_id, delta_0001 .. delta_NNNN``."""
    deltas = sorted(deltas, key=lambda d: d.region_id)
    width = deltas[0].values.shape[0] if deltas else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region_id", *_value_columns("delta", width)])
        for d in deltas:
            w.writerow([d.region_id, *(repr(float(v)) for v in d.values)])


def read_delta_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "region_id":
        raise DataError(f"{path}: not a delta CSV (missing region_id header)")
    return [DeltaSeries(r[0], np.array([float(v) for v in r[1:]])) for r in rows[1:]]


def write_tspp_csv(series, path):
    series = sorted(series, key=lambda s: (s.region_id, s.year))
    width = series[0].values.shape[0] if series else 0
    start = series[0].start_day_of_year if series else DEFAULT_RADIUS + 1
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region_id", "year", "start_day_of_year", *_value_columns("tspp", width)])
        for s in series:
            w.writerow([s.region_id, s.year, start, *(repr(float(v)) for v in s.values)])


def read_tspp_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["region_id", "year"]:
        raise DataError(f"{path}: not a TSPP CSV")
    return [
        TsppSeries(r[0], int(r[1]), np.array([float(v) for v in r[3:]]), int(r[2]))
        for r in rows[1:]
    ]
