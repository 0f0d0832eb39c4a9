"""Latent mobility components via truncated SVD of the change matrix.

The change matrix ``R`` is days x regions. Each region column is centered on
its own mean before factorization (optional), and ``R_c = U S V^T``. The top
``K`` columns of ``U S`` are the component day-series (in minutes); rows of
``V_K`` are the per-region loadings.
"""

import csv
import logging
import math
import warnings
from collections import Counter
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_matrix, check_int
from .exceptions import DataError, NumericError
from .mobility import DEFAULT_RADIUS

logger = logging.getLogger(__name__)

DEFAULT_COMPONENTS = 3
DEFAULT_OUTLIER_STD = 4.0


@dataclass
class DeltaMatrix:
    values: np.ndarray  # (m days, n regions)
    day_index: np.ndarray  # 1-based calendar day of each row
    region_index: list

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.day_index = np.asarray(self.day_index)
        self.region_index = list(self.region_index)
        m, n = self.values.shape
        if self.day_index.shape != (m,) or len(self.region_index) != n:
            raise DataError(
                f"index lengths ({self.day_index.shape[0]}, {len(self.region_index)}) "
                f"do not match matrix shape {self.values.shape}"
            )

    @property
    def shape(self):
        return self.values.shape

    def select(self, regions):
        pos = {r: j for j, r in enumerate(self.region_index)}
        cols = [pos[r] for r in regions]
        return DeltaMatrix(self.values[:, cols], self.day_index, list(regions))


@dataclass
class Decomposition:
    components: np.ndarray  # (m, K) = U_K S_K
    singular_values: np.ndarray  # (K,)
    loadings: np.ndarray  # (n, K) = V_K
    explained_variance_ratio: np.ndarray  # (K,)
    total_explained: float
    K: int
    region_index: list
    column_means: np.ndarray  # (n,), zeros when uncentered
    centered: bool

    def reconstruct(self):
        """Rank-K approximation of the original (uncentered) matrix."""
        return self.components @ self.loadings.T + self.column_means


def assemble_matrix(deltas, *, start_day=DEFAULT_RADIUS + 1):
    """Stack change series as columns, ordered by region id."""
    deltas = sorted(deltas, key=lambda d: d.region_id)
    if not deltas:
        raise DataError("assemble_matrix: no series given")
    ids = [d.region_id for d in deltas]
    dupes = sorted(r for r, c in Counter(ids).items() if c > 1)
    if dupes:
        raise DataError(f"duplicate region id(s): {', '.join(dupes)}")
    lengths = {d.values.shape[0] for d in deltas}
    if len(lengths) != 1:
        raise DataError(f"series lengths differ: {sorted(lengths)}")
    m = lengths.pop()
    values = np.column_stack([d.values for d in deltas])
    return DeltaMatrix(values, np.arange(start_day, start_day + m), ids)


def _orient(U, Vt):
    """Flip each factor pair so its loading column sums to >= 0.

    Near-zero sums fall back to making the first nonzero loading positive.
    """
    for k in range(Vt.shape[0]):
        row = Vt[k]
        total = row.sum()
        scale = np.abs(row).sum()
        if abs(total) <= 1e-12 * scale:
            nz = np.flatnonzero(np.abs(row) > 1e-12 * max(scale, 1e-300))
            flip = nz.size > 0 and row[nz[0]] < 0
        else:
            flip = total < 0
        if flip:
            U[:, k] *= -1
            Vt[k] *= -1
    return U, Vt


def _full_svd(values, center):
    R = as_matrix(values, name="matrix")
    means = R.mean(axis=0) if center else np.zeros(R.shape[1])
    Rc = R - means
    try:
        U, s, Vt = np.linalg.svd(Rc, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD failed: {exc}") from exc
    total = float(np.sum(s**2))
    # centering a constant column leaves rounding residue, not signal
    if s[0] <= max(R.shape) * np.finfo(float).eps * np.linalg.norm(R):
        raise DataError("matrix has zero variance; no components to extract")
    return U, s, Vt, means, total


def truncated_svd(matrix, K=DEFAULT_COMPONENTS, *, center=True):
    """Top-``K`` factors of the (column-centered) change matrix."""
    m, n = matrix.shape
    K = check_int(K, name="K", low=1, high=min(m, n))
    U, s, Vt, means, total = _full_svd(matrix.values, center)
    U, Vt = _orient(U[:, :K].copy(), Vt[:K].copy())
    ratio = s[:K] ** 2 / total
    return Decomposition(
        components=U * s[:K],
        singular_values=s[:K].copy(),
        loadings=Vt.T.copy(),
        explained_variance_ratio=ratio,
        total_explained=float(ratio.sum()),
        K=K,
        region_index=list(matrix.region_index),
        column_means=means,
        centered=center,
    )


def explained_variance_curve(matrix, K_max, *, center=True):
    """Cumulative explained-variance fraction for K = 1..K_max."""
    m, n = matrix.shape
    K_max = check_int(K_max, name="K_max", low=1, high=min(m, n))
    _, s, _, _, total = _full_svd(matrix.values, center)
    cum = np.cumsum(s**2) / total
    cum = np.minimum(np.maximum.accumulate(cum), 1.0)
    return [(k + 1, float(cum[k])) for k in range(K_max)]


def _loading_zscores(decomposition):
    L = decomposition.loadings
    s = decomposition.singular_values
    z = np.zeros_like(L)
    tol = max(L.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    for k in range(L.shape[1]):
        if s[k] <= tol:
            continue  # null-space direction, arbitrary
        col = L[:, k]
        sd = col.std()
        if sd <= 1e-12 * max(np.abs(col).max(), 1e-300):
            continue
        z[:, k] = (col - col.mean()) / sd
    return z


def remove_outliers(matrix, threshold=DEFAULT_OUTLIER_STD, *, n_components=DEFAULT_COMPONENTS, center=True):
    """One pass: fit, standardize loadings, drop regions with any ``|z| >= threshold``.

    Returns ``(kept_matrix, removed_region_ids)``; callers refit on the result.
    """
    if not threshold > 0:
        raise DataError(f"threshold must be positive, got {threshold}")
    K = min(n_components, *matrix.shape)
    dec = truncated_svd(matrix, K, center=center)
    z = _loading_zscores(dec)
    bad = np.any(np.abs(z) >= threshold, axis=1)
    removed = [r for r, b in zip(matrix.region_index, bad) if b]
    if bad.all():
        raise DataError("outlier removal would remove every region")
    if removed:
        logger.info("removed %d outlier region(s): %s", len(removed), ", ".join(removed))
    kept = [r for r, b in zip(matrix.region_index, bad) if not b]
    return DeltaMatrix(matrix.values[:, ~bad], matrix.day_index, kept), removed


def region_r_squared_array(matrix, decomposition):
    R = matrix.values
    resid = R - decomposition.reconstruct()
    dev = R - R.mean(axis=0)
    ss_res = np.sum(resid**2, axis=0)
    ss_tot = np.sum(dev**2, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = 1.0 - ss_res / ss_tot
    r2[ss_tot == 0] = np.nan
    return r2


def region_r_squared(matrix, decomposition):
    """Per-region coefficient of determination of the rank-K reconstruction.

    Negative values mean the region's own mean fits better. Regions with a
    constant series get NaN (undefined) and a warning.
    """
    if list(matrix.region_index) != list(decomposition.region_index):
        raise DataError("decomposition was not fitted on this matrix")
    r2 = region_r_squared_array(matrix, decomposition)
    flat = [r for r, v in zip(matrix.region_index, r2) if math.isnan(v)]
    if flat:
        warnings.warn(f"R^2 undefined for constant series: {', '.join(flat)}", stacklevel=2)
    return dict(zip(matrix.region_index, r2.tolist()))


def normalize_loadings(decomposition):
    """Min-max scale each loading column to [0, 1] across regions.

    A constant column has no spread to scale and maps to 0.5.
    """
    L = decomposition.loadings if isinstance(decomposition, Decomposition) else np.asarray(decomposition, dtype=float)
    lo, hi = L.min(axis=0), L.max(axis=0)
    span = hi - lo
    out = np.full_like(L, 0.5)
    ok = span > 0
    if not ok.all():
        warnings.warn(f"constant loading column(s) {np.flatnonzero(~ok).tolist()} mapped to 0.5", stacklevel=2)
    out[:, ok] = (L[:, ok] - lo[ok]) / span[ok]
    return out


def rgb_encode(normalized):
    """Map three [0, 1] weights to 8-bit channels, rounding half up."""
    v = np.asarray(normalized, dtype=np.float64)
    if v.shape != (3,):
        raise DataError(f"rgb_encode needs exactly 3 values, got shape {v.shape}")
    if not np.all((v >= 0) & (v <= 1)):
        raise DataError(f"rgb_encode inputs must lie in [0, 1], got {v.tolist()}")
    return tuple(math.floor(x * 255 + 0.5) for x in v)


def rgb_hex(rgb):
    return "#{:02X}{:02X}{:02X}".format(*rgb)


class DeltaSVD(TransformerMixin, BaseEstimator):
    """Truncated SVD over regions, sklearn style.

    ``X`` is (n_regions, n_days): one change series per row. Each row is
    centered on its own mean when ``center`` is set. After ``fit``:

    components_ : (K, n_days), archetypal day-series scaled by singular values
    loadings_ : (n_regions, K), per-region weights (rows of V_K)
    singular_values_, explained_variance_ratio_

    ``transform`` projects rows onto the component basis so that, for the
    training data, it reproduces ``loadings_``.
    """

    def __init__(self, n_components=DEFAULT_COMPONENTS, center=True):
        self.n_components = n_components
        self.center = center

    def fit(self, X, y=None):
        X = as_matrix(X)
        matrix = DeltaMatrix(X.T, np.arange(1, X.shape[1] + 1), range(X.shape[0]))
        dec = truncated_svd(matrix, self.n_components, center=self.center)
        self.decomposition_ = dec
        self.components_ = dec.components.T
        self.singular_values_ = dec.singular_values
        self.explained_variance_ratio_ = dec.explained_variance_ratio
        self.loadings_ = dec.loadings
        self.n_features_in_ = X.shape[1]
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X).loadings_.copy()

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = as_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise DataError(f"expected {self.n_features_in_} days per row, got {X.shape[1]}")
        if self.center:
            X = X - X.mean(axis=1, keepdims=True)
        s = self.singular_values_
        inv = np.divide(1.0, s**2, out=np.zeros_like(s), where=s > 0)
        return X @ self.components_.T * inv

    def inverse_transform(self, L):
        """Centered reconstruction; per-row means are not recoverable."""
        check_is_fitted(self, "components_")
        return np.asarray(L, dtype=float) @ self.components_


# -- export -------------------------------------------------------------------


def _f(v):
    return repr(float(v))


def write_components_csv(matrix, dec, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["day_of_year", *(f"pc{k + 1}" for k in range(dec.K))])
        for day, row in zip(matrix.day_index, dec.components):
            w.writerow([int(day), *map(_f, row)])


def write_loadings_csv(dec, path, normalized=None):
    if normalized is None:
        normalized = normalize_loadings(dec)
    K = dec.K
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region_id", *(f"pc{k + 1}" for k in range(K)), *(f"pc{k + 1}_norm" for k in range(K))])
        for region, raw, norm in zip(dec.region_index, dec.loadings, normalized):
            w.writerow([region, *map(_f, raw), *map(_f, norm)])


def read_loadings_csv(path):
    """Returns ``(region_ids, raw (n, K), normalized (n, K))``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    if header[0] != "region_id":
        raise DataError(f"{path}: not a loadings CSV")
    K = sum(1 for h in header[1:] if not h.endswith("_norm"))
    ids = [r[0] for r in rows[1:]]
    data = np.array([[float(v) for v in r[1:]] for r in rows[1:]]).reshape(len(ids), 2 * K)
    return ids, data[:, :K], data[:, K:]


def write_r_squared_csv(r2, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region_id", "r_squared"])
        for region in sorted(r2):
            v = r2[region]
            w.writerow([region, "NA" if math.isnan(v) else _f(v)])


def write_colors_csv(region_ids, normalized, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region_id", "rgb"])
        for region, row in zip(region_ids, normalized):
            w.writerow([region, rgb_hex(rgb_encode(np.clip(row[:3], 0.0, 1.0)))])


def write_curve_csv(curve, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["K", "cumulative_explained"])
        for k, frac in curve:
            w.writerow([k, _f(frac)])
