"""Global and local Moran's I."""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .._validation import as_vector, check_choice, check_int
from ..exceptions import ConstantFieldError, DataError

DEFAULT_PERMUTATIONS = 999
DEFAULT_ALPHA = 0.05
INFERENCE_MODES = ("normality", "randomization", "permutation")
QUADRANTS = ("HH", "LH", "LL", "HL")


@dataclass
class MoranResult:
    I: float
    expected_I: float
    variance: float
    z_score: float
    p_value: float
    inference: str
    permutations: int | None = None
    simulated: np.ndarray | None = field(default=None, repr=False)

    def as_dict(self):
        return {
            "I": self.I,
            "expected_I": self.expected_I,
            "variance": self.variance,
            "z_score": self.z_score,
            "p_value": self.p_value,
            "inference": self.inference,
            "permutations": self.permutations,
        }


@dataclass
class LisaResult:
    ids: list
    local_I: np.ndarray
    pseudo_p: np.ndarray
    quadrant: np.ndarray  # "HH" / "LH" / "LL" / "HL"
    significant: np.ndarray
    lag: np.ndarray
    boundary: np.ndarray  # z_i == 0: quadrant is a convention, never significant
    permutations: int
    alpha: float

    def rows(self):
        for k, r in enumerate(self.ids):
            yield r, float(self.local_I[k]), float(self.pseudo_p[k]), str(self.quadrant[k]), bool(self.significant[k])


def _prepare(values, w, min_n):
    y = as_vector(values, name="values")
    if y.shape[0] != w.n:
        raise DataError(f"values length {y.shape[0]} does not match {w.n} regions")
    if y.shape[0] < min_n:
        raise DataError(f"Moran's I inference needs n >= {min_n}, got {y.shape[0]}")
    z = y - y.mean()
    ss = float(np.dot(z, z))
    if ss == 0.0 or np.ptp(y) == 0.0:
        raise ConstantFieldError()
    return z, ss


def moran_statistic(values, w):
    """Bare global statistic ``(n / S0) * z'Wz / z'z``; defined for n >= 2."""
    z, ss = _prepare(values, w, 2)
    W = w.to_sparse()
    s0 = W.sum()
    if s0 == 0:
        raise DataError("weights have no edges")
    return float(z.shape[0] / s0 * (z @ (W @ z)) / ss)


def _weight_moments(W):
    s0 = W.sum()
    sym = W + W.T
    s1 = 0.5 * sym.multiply(sym).sum()
    rows = np.asarray(W.sum(axis=1)).ravel()
    cols = np.asarray(W.sum(axis=0)).ravel()
    s2 = float(np.sum((rows + cols) ** 2))
    return float(s0), float(s1), s2


def global_moran(values, w, inference="randomization", permutations=0, seed=None):
    """Global Moran's I with an analytic or permutation null.

    ``inference`` selects how ``variance`` (and hence ``z_score`` and the
    two-sided ``p_value``) is obtained. In permutation mode the values are
    shuffled over all regions ``permutations`` times; the variance is that
    of the simulated statistics and the p-value counts replicates at least
    as far from E[I] as the observed one, ``(count + 1) / (P + 1)``.
    Analytic modes also run permutations if asked, storing them in
    ``simulated``.
    """
    check_choice(inference, set(INFERENCE_MODES), name="inference")
    permutations = check_int(permutations, name="permutations", low=0)
    if inference == "permutation" and permutations < 1:
        raise DataError("permutation inference needs permutations >= 1")
    z, ss = _prepare(values, w, 3)
    n = z.shape[0]
    W = w.to_sparse()
    s0, s1, s2 = _weight_moments(W)
    if s0 == 0:
        raise DataError("weights have no edges")
    I = float(n / s0 * (z @ (W @ z)) / ss)
    EI = -1.0 / (n - 1)

    sims = None
    if permutations:
        rng = np.random.default_rng(seed)
        Z = rng.permuted(np.broadcast_to(z, (permutations, n)), axis=1)
        sims = n / s0 * np.einsum("pi,pi->p", Z, (W @ Z.T).T) / ss

    if inference == "normality":
        var = (n * n * s1 - n * s2 + 3 * s0 * s0) / ((n * n - 1) * s0 * s0) - EI * EI
    elif inference == "randomization":
        if n < 4:
            raise DataError("randomization variance needs n >= 4")
        kurt = (np.sum(z**4) / n) / (ss / n) ** 2
        a = n * ((n * n - 3 * n + 3) * s1 - n * s2 + 3 * s0 * s0)
        b = kurt * ((n * n - n) * s1 - 2 * n * s2 + 6 * s0 * s0)
        var = (a - b) / ((n - 1) * (n - 2) * (n - 3) * s0 * s0) - EI * EI
    else:
        var = float(np.var(sims, ddof=1)) if permutations > 1 else float("nan")

    var = float(var)
    zscore = (I - EI) / np.sqrt(var) if var > 0 else float("nan")
    if inference == "permutation":
        extreme = np.sum(np.abs(sims - EI) >= abs(I - EI))
        p = (extreme + 1.0) / (permutations + 1.0)
    else:
        p = 2.0 * stats.norm.sf(abs(zscore)) if np.isfinite(zscore) else float("nan")
    return MoranResult(I, EI, var, float(zscore), float(p), inference, permutations or None, sims)


def _ordered_sample(rng, permutations, pool, k):
    """``permutations`` rows of ``k`` distinct indices from ``range(pool)``, in random order."""
    if k == 0:
        return np.empty((permutations, 0), dtype=np.int64)
    keys = rng.random((permutations, pool))
    if k < pool:
        idx = np.argpartition(keys, k - 1, axis=1)[:, :k]
    else:
        idx = np.broadcast_to(np.arange(pool), (permutations, pool)).copy()
    order = np.argsort(np.take_along_axis(keys, idx, axis=1), axis=1)
    return np.take_along_axis(idx, order, axis=1)


def local_moran(values, w, permutations=DEFAULT_PERMUTATIONS, seed=None, alpha=DEFAULT_ALPHA):
    """Anselin's local Moran statistics with conditional-permutation pseudo p-values.

    ``I_i = z_i * sum_j w_ij z_j / m2`` with ``m2 = sum(z^2) / n``. For each
    region its own value stays fixed while the other n - 1 values are drawn
    into its neighbor slots; the pseudo p-value is two-sided,
    ``(count(|I*| >= |I_i|) + 1) / (P + 1)``. One draw of neighbor slots is
    shared by all regions, so results depend only on ``seed``.
    """
    permutations = check_int(permutations, name="permutations", low=1)
    if not 0 < alpha < 1:
        raise DataError(f"alpha must lie in (0, 1), got {alpha}")
    z, ss = _prepare(values, w, 3)
    n = z.shape[0]
    m2 = ss / n
    lag = w.lag(z)
    local = z * lag / m2

    max_k = max((len(v) for v in w.neighbors.values()), default=0)
    rng = np.random.default_rng(seed)
    slots = _ordered_sample(rng, permutations, n - 1, max_k)
    pseudo_p = np.empty(n)
    for i, r in enumerate(w.ids):
        k = len(w.neighbors[r])
        if k == 0:
            sim = np.zeros(permutations)
        else:
            draw = slots[:, :k]
            draw = draw + (draw >= i)
            sim = z[i] * (z[draw] @ np.asarray(w.weights[r])) / m2
        pseudo_p[i] = (np.sum(np.abs(sim) >= abs(local[i])) + 1.0) / (permutations + 1.0)

    high_z = z > 0
    high_lag = lag > 0
    quadrant = np.where(high_z, np.where(high_lag, "HH", "HL"), np.where(high_lag, "LH", "LL"))
    boundary = z == 0
    significant = (pseudo_p <= alpha) & ~boundary
    return LisaResult(list(w.ids), local, pseudo_p, quadrant, significant, lag, boundary, permutations, alpha)


def write_lisa_csv(results, path):
    """``results`` maps a component label to a :class:`LisaResult`."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["region_id", "component", "local_I", "pseudo_p", "quadrant", "significant"])
        for label, res in results.items():
            for r, li, p, q, sig in res.rows():
                out.writerow([r, label, repr(li), repr(p), q, int(sig)])
