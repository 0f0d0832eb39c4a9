"""Seeded synthetic region-day panels with planted structure.

Regions sit on a square grid of unit cells. The reference year is a
per-region baseline (level, seasonal wave, weekly cycle) plus noise; the
target year adds a per-region mixture of archetypal change curves. Mixing
weights come from a latent Gaussian field that can be smoothed over grid
neighbors, which plants positive spatial autocorrelation.
"""

import calendar
import csv
import datetime as dt
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from ._validation import check_choice, check_int
from .correlate import CovariateTable
from .exceptions import DataError
from .ingest import DAYS_PER_YEAR, LEAP_DAY_INDEX, RegionSeries
from .mobility import DEFAULT_RADIUS, rolling_mean
from .spatial.geojson import feature_collection, write_geojson
from .spatial.weights import RegionGeometry

ARCHETYPES = ("long_drop", "no_drop", "short_drop")
WEEKLY_SHAPE = np.array([0.2, 0.3, 0.3, 0.4, 0.6, 0.2, -2.0])  # Mon..Sun, sums to 0
GRID_ORIGIN = (-100.0, 35.0)
CELL_SIZE = 0.5


def archetype_curve(kind, n_days=DAYS_PER_YEAR, drop_day=75, recovery_day=165):
    """Piecewise-linear unit-depth change template over ``n_days`` days.

    long_drop: falls to -1 around ``drop_day`` and only partly recovers.
    short_drop: falls at ``drop_day`` and returns to 0 by ``recovery_day``.
    no_drop: flat through spring, then rises to +1 after ``recovery_day``.
    """
    t = np.arange(n_days, dtype=np.float64)
    end = n_days - 1
    if kind == "long_drop":
        knots = [(0, 0), (drop_day, 0), (drop_day + 10, -1), (end, -0.6)]
    elif kind == "short_drop":
        knots = [(0, 0), (drop_day, 0), (drop_day + 10, -1), (drop_day + 40, -0.8), (recovery_day, 0), (end, 0)]
    elif kind == "no_drop":
        knots = [(0, 0), (recovery_day - 15, 0), (recovery_day + 30, 1), (end, 1)]
    else:
        raise DataError(f"unknown archetype {kind!r}; choose from {ARCHETYPES}")
    xs, ys = zip(*knots)
    return np.interp(t, xs, ys)


@dataclass
class SynthConfig:
    n_regions: int = 300
    n_days: int = DAYS_PER_YEAR
    archetypes: tuple = ARCHETYPES
    amplitudes: tuple = (30.0, 18.0, 10.0)  # RMS minutes per archetype
    drop_day: int = 75
    recovery_day: int = 165
    orthogonalize: bool = True
    mixing: str = "softmax"  # or "corners"
    temperature: float = 0.3
    smoothing_passes: int = 2
    noise_sigma: float = 0.05
    noise_relative: bool = True  # sigma as a fraction of the mixture RMS
    baseline_mean: float = 150.0
    baseline_spread: float = 20.0
    seasonal_amplitude: float = 8.0
    weekly_amplitude: float = 6.0
    subregions_per_region: int = 2
    subregion_spread: float = 4.0
    covariate_noise: float = 0.5
    target_year: int = 2020
    reference_year: int = 2019
    seed: int = 0

    def __post_init__(self):
        self.archetypes = tuple(self.archetypes)
        self.amplitudes = tuple(float(a) for a in self.amplitudes)
        check_int(self.n_regions, name="n_regions", low=1)
        check_int(self.n_days, name="n_days", low=2 * DEFAULT_RADIUS + 1, high=DAYS_PER_YEAR)
        check_int(self.subregions_per_region, name="subregions_per_region", low=1)
        check_int(self.smoothing_passes, name="smoothing_passes", low=0)
        check_choice(self.mixing, {"softmax", "corners"}, name="mixing")
        if not self.archetypes:
            raise DataError("need at least one archetype")
        if len(self.amplitudes) < len(self.archetypes):
            raise DataError("one amplitude per archetype required")
        if self.noise_sigma < 0:
            raise DataError("noise_sigma must be >= 0")
        if self.temperature <= 0:
            raise DataError("temperature must be positive")
        for kind in self.archetypes:
            check_choice(kind, set(ARCHETYPES), name="archetype")

    @classmethod
    def from_dict(cls, data):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise DataError(f"unknown synth option(s): {', '.join(sorted(unknown))}")
        return cls(**data)


@dataclass
class SynthTruth:
    region_ids: list
    archetypes: np.ndarray  # (n_days, K) planted daily change curves
    delta_archetypes: np.ndarray  # (n_days - 6, K) the same after the rolling window
    weights: np.ndarray  # (n, K), rows on the simplex
    labels: np.ndarray  # argmax of weights
    grid_shape: tuple
    cells: np.ndarray  # (n, 2) grid (row, col) of each region
    geometries: list
    covariates: CovariateTable
    covariate_targets: dict = field(default_factory=dict)  # covariate -> component
    noise_sigma: float = 0.0

    def planted_delta(self):
        """Noise-free change series the pipeline should recover, (n, m)."""
        return self.weights @ self.delta_archetypes.T


@dataclass
class SynthPanel:
    config: SynthConfig
    series: dict  # year -> region -> RegionSeries (region means, 365 days)
    subregions: dict  # year -> (n, S, n_days) subregion values
    subregion_ids: list  # per region, list of subregion codes


def _grid_neighbors(rows, cols):
    """Queen neighbor index lists on a rows x cols grid."""
    out = []
    for r in range(rows):
        for c in range(cols):
            nb = []
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    if (dr or dc) and 0 <= r + dr < rows and 0 <= c + dc < cols:
                        nb.append((r + dr) * cols + (c + dc))
            out.append(nb)
    return out


def _smooth(field, neighbors, passes):
    for _ in range(passes):
        field = np.array([(field[i] + field[nb].sum(axis=0)) / (1 + len(nb)) for i, nb in enumerate(neighbors)])
    return field


def _archetype_matrix(cfg):
    K = len(cfg.archetypes)
    A = np.column_stack(
        [archetype_curve(kind, cfg.n_days, cfg.drop_day, cfg.recovery_day) for kind in cfg.archetypes]
    )
    if cfg.orthogonalize:
        A = A - A.mean(axis=0)
        Q, R = np.linalg.qr(A)
        Q = Q * np.sign(np.diag(R))  # keep each curve's orientation
        A = Q
    rms = np.sqrt(np.mean(A**2, axis=0))
    if np.any(rms == 0):
        raise DataError("degenerate archetype set (zero curve after orthogonalization)")
    return A / rms * np.asarray(cfg.amplitudes[:K])


def _cell_square(row, col):
    x0 = GRID_ORIGIN[0] + col * CELL_SIZE
    y0 = GRID_ORIGIN[1] + row * CELL_SIZE
    x1, y1 = x0 + CELL_SIZE, y0 + CELL_SIZE
    return [[(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)]]


def region_code(k):
    return f"{10001 + k:05d}"


def generate(config=None):
    """Build a panel and its ground truth from ``config`` (deterministic in ``config.seed``)."""
    cfg = config or SynthConfig()
    rng = np.random.default_rng(cfg.seed)
    n, K, D, S = cfg.n_regions, len(cfg.archetypes), cfg.n_days, cfg.subregions_per_region

    side = math.ceil(math.sqrt(n))
    rows = math.ceil(n / side)
    cells = np.array([divmod(k, side) for k in range(n)])
    neighbors = _grid_neighbors(rows, side)

    # mixing weights from a smoothed latent field over the full grid
    latent = rng.standard_normal((rows * side, K))
    latent = _smooth(latent, neighbors, cfg.smoothing_passes)
    latent = latent[:n]
    if K == 1:
        weights = np.ones((n, 1))
    else:
        sd = latent.std(axis=0)
        latent = (latent - latent.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
        if cfg.mixing == "corners":
            weights = np.eye(K)[latent.argmax(axis=1)]
        else:
            logits = latent / cfg.temperature
            logits -= logits.max(axis=1, keepdims=True)
            weights = np.exp(logits)
            weights /= weights.sum(axis=1, keepdims=True)
    labels = weights.argmax(axis=1)

    A = _archetype_matrix(cfg)
    signal = weights @ A.T  # (n, D)
    sigma = cfg.noise_sigma * (math.sqrt(float(np.mean(signal**2))) if cfg.noise_relative else 1.0)

    day = np.arange(D)
    level = cfg.baseline_mean + cfg.baseline_spread * rng.uniform(-1, 1, size=n)
    season = cfg.seasonal_amplitude * np.sin(2 * np.pi * day / DAYS_PER_YEAR)
    phase = rng.uniform(0.5, 1.5, size=n)
    offsets = np.linspace(-cfg.subregion_spread, cfg.subregion_spread, S) if S > 1 else np.zeros(1)

    def year_values(year, with_signal):
        weekday0 = dt.date(year, 1, 1).weekday()
        weekly = cfg.weekly_amplitude * WEEKLY_SHAPE[(day + weekday0) % 7]
        base = level[:, None] + phase[:, None] * season[None, :] + weekly[None, :]
        if with_signal:
            base = base + signal
        sub = base[:, None, :] + offsets[None, :, None]
        if sigma > 0:
            sub = sub + sigma * rng.standard_normal(sub.shape)
        return sub

    subregions = {
        cfg.reference_year: year_values(cfg.reference_year, False),
        cfg.target_year: year_values(cfg.target_year, True),
    }
    for year, vals in subregions.items():
        if vals.min() < 0:
            raise DataError(f"synthetic values for {year} go negative; raise baseline_mean")

    ids = [region_code(k) for k in range(n)]
    sub_ids = [[f"{rid}{j + 1:06d}1" for j in range(S)] for rid in ids]
    series = {
        year: {
            rid: RegionSeries(rid, year, vals[k].mean(axis=0), np.ones(D, dtype=bool))
            for k, rid in enumerate(ids)
        }
        for year, vals in subregions.items()
    }

    cov_names, cov_cols, targets = [], [], {}
    for k in range(K):
        w = weights[:, k]
        spread = w.std() if w.std() > 0 else 1.0
        cov_names.append(f"cov_pc{k + 1}")
        cov_cols.append(w + cfg.covariate_noise * spread * rng.standard_normal(n))
        targets[f"cov_pc{k + 1}"] = k
    cov_names.append("noise")
    cov_cols.append(rng.standard_normal(n))
    covariates = CovariateTable(ids, cov_names, np.column_stack(cov_cols))

    geoms = [RegionGeometry(rid, [_cell_square(*cells[k])]) for k, rid in enumerate(ids)]
    truth = SynthTruth(
        region_ids=ids,
        archetypes=A,
        delta_archetypes=rolling_mean(A.T, DEFAULT_RADIUS).T,
        weights=weights,
        labels=labels,
        grid_shape=(rows, side),
        cells=cells,
        geometries=geoms,
        covariates=covariates,
        covariate_targets=targets,
        noise_sigma=sigma,
    )
    return SynthPanel(cfg, series, subregions, sub_ids), truth


def _calendar_days(year, n_days):
    """Calendar dates covering ``n_days`` normalized days (one extra in leap years)."""
    start = dt.date(year, 1, 1)
    return [start + dt.timedelta(days=d) for d in range(n_days + (1 if calendar.isleap(year) else 0))]


def write_panel_csv(panel, year, path):
    """Subregion rows ``date,subregion_id,value`` for one year.

    In leap years Feb 29 is written as the mean of Feb 28 and Mar 1.
    """
    vals = panel.subregions[year]
    n_days = vals.shape[2]
    leap = calendar.isleap(year)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "subregion_id", "value"])
        for date in _calendar_days(year, n_days):
            doy = date.timetuple().tm_yday - 1
            if leap and doy == LEAP_DAY_INDEX:
                col = 0.5 * (vals[:, :, doy - 1] + vals[:, :, doy])
            else:
                col = vals[:, :, doy - 1 if leap and doy > LEAP_DAY_INDEX else doy]
            iso = date.isoformat()
            for k, subs in enumerate(panel.subregion_ids):
                for j, sid in enumerate(subs):
                    w.writerow([iso, sid, repr(float(col[k, j]))])


def write_covariates_csv(table, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region_id", *table.names])
        for rid, row in zip(table.region_ids, table.values):
            w.writerow([rid, *("NA" if math.isnan(v) else repr(float(v)) for v in row)])


def write_fixture(config, out_dir):
    """Write panels, grid GeoJSON, covariates and truth into ``out_dir``.

    Returns a dict of the written paths keyed by role.
    """
    panel, truth = generate(config)
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "panel_reference": os.path.join(out_dir, f"panel_{config.reference_year}.csv"),
        "panel_target": os.path.join(out_dir, f"panel_{config.target_year}.csv"),
        "geometry": os.path.join(out_dir, "regions.geojson"),
        "covariates": os.path.join(out_dir, "covariates.csv"),
        "truth": os.path.join(out_dir, "truth.json"),
    }
    write_panel_csv(panel, config.reference_year, paths["panel_reference"])
    write_panel_csv(panel, config.target_year, paths["panel_target"])
    write_geojson(feature_collection(truth.geometries), paths["geometry"])
    write_covariates_csv(truth.covariates, paths["covariates"])
    with open(paths["truth"], "w", encoding="utf-8") as fh:
        json.dump(
            {
                "config": asdict(config),
                "region_ids": truth.region_ids,
                "labels": truth.labels.tolist(),
                "weights": truth.weights.tolist(),
                "covariate_targets": truth.covariate_targets,
                "noise_sigma": truth.noise_sigma,
            },
            fh,
            sort_keys=True,
            indent=1,
        )
        fh.write("\n")
    return paths
