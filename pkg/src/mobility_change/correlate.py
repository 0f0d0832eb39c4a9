"""Pearson correlation of component loadings against regional covariates."""

import csv
import logging
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import betainc

from .exceptions import DataError

logger = logging.getLogger(__name__)

MISSING = {"", "na", "nan", "null", "none"}


class PearsonResult(NamedTuple):
    r: float
    p: float
    n: int


@dataclass
class CorrelationResult:
    covariate: str
    component: int  # 0-based
    r: float
    p_value: float
    n_used: int


@dataclass
class CovariateTable:
    region_ids: list
    names: list
    values: np.ndarray  # (n_regions, n_covariates), NaN marks missing

    def column(self, name):
        return self.values[:, self.names.index(name)]


def t_two_sided_p(r, n):
    """Two-sided p-value of ``r`` under H0: rho = 0 with n - 2 degrees of freedom.

    ``P(|T| >= t)`` for ``t = r sqrt((n-2)/(1-r^2))`` equals the regularized
    incomplete beta ``I_{1-r^2}((n-2)/2, 1/2)``.
    """
    df = n - 2
    if abs(r) >= 1.0:
        return 0.0
    x = (1.0 - r) * (1.0 + r)
    return float(betainc(df / 2.0, 0.5, x))


def pearson(x, y):
    """Pearson's r with a two-sided t-test p-value.

    NaN pairs are deleted pairwise. Needs at least 3 complete pairs and
    non-constant inputs.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise DataError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")
    keep = ~(np.isnan(x) | np.isnan(y))
    x, y = x[keep], y[keep]
    n = int(x.shape[0])
    if n < 3:
        raise DataError(f"need at least 3 complete pairs, got {n}")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise DataError("undefined correlation: constant input")
    xc = x - x.mean()
    yc = y - y.mean()
    r = float(np.dot(xc, yc) / math.sqrt(float(np.dot(xc, xc)) * float(np.dot(yc, yc))))
    r = min(1.0, max(-1.0, r))
    return PearsonResult(r, t_two_sided_p(r, n), n)


def correlate_all(loadings, covariates, region_ids):
    """Correlate every loading column with every covariate.

    ``loadings`` is (n, K) aligned with ``region_ids``; rows are matched to
    the covariate table by id. Results are grouped by component and sorted
    by ``|r|`` descending within each.
    """
    L = np.asarray(loadings, dtype=np.float64)
    if L.ndim == 1:
        L = L[:, None]
    if L.shape[0] != len(region_ids):
        raise DataError("loadings rows do not match region_ids")
    pos = {r: k for k, r in enumerate(covariates.region_ids)}
    shared = [r for r in region_ids if r in pos]
    rows_l = [k for k, r in enumerate(region_ids) if r in pos]
    rows_c = [pos[r] for r in shared]
    if len(shared) < len(region_ids):
        logger.info("correlate: %d region(s) have no covariate row", len(region_ids) - len(shared))
    L = L[rows_l]
    C = covariates.values[rows_c]
    results = []
    for k in range(L.shape[1]):
        block = []
        for c, name in enumerate(covariates.names):
            try:
                r, p, n = pearson(L[:, k], C[:, c])
            except DataError as exc:
                warnings.warn(f"covariate {name!r} skipped for component {k + 1}: {exc}", stacklevel=2)
                continue
            block.append(CorrelationResult(name, k, r, p, n))
        block.sort(key=lambda res: -abs(res.r))
        results.extend(block)
    return results


def read_covariates_csv(path, id_column="region_id"):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or id_column not in header:
            raise DataError(f"{path}: missing {id_column!r} column")
        idc = header.index(id_column)
        names = [h for k, h in enumerate(header) if k != idc]
        ids, rows = [], []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            vals = []
            for k, cell in enumerate(row):
                if k == idc:
                    continue
                cell = cell.strip()
                if cell.lower() in MISSING:
                    vals.append(np.nan)
                else:
                    try:
                        vals.append(float(cell))
                    except ValueError:
                        raise DataError(f"{path}:{line}: non-numeric covariate {cell!r}") from None
            ids.append(row[idc].strip())
            rows.append(vals)
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate region ids")
    values = np.array(rows, dtype=np.float64).reshape(len(ids), len(names))
    return CovariateTable(ids, names, values)


def write_correlation_table(results, path, n_components):
    """One row per covariate: r and p for each component, ordered by |r| on the first."""
    table = {}
    for res in results:
        table.setdefault(res.covariate, {})[res.component] = res
    first = {name: abs(cells[0].r) if 0 in cells else -1.0 for name, cells in table.items()}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["covariate"]
        for k in range(n_components):
            header += [f"pc{k + 1}_r", f"pc{k + 1}_p", f"pc{k + 1}_n"]
        w.writerow(header)
        for name in sorted(table, key=lambda nm: (-first[nm], nm)):
            row = [name]
            for k in range(n_components):
                cell = table[name].get(k)
                row += [repr(cell.r), f"{cell.p_value:.3e}", cell.n_used] if cell else ["NA", "NA", 0]
            w.writerow(row)
