"""File-based pipeline steps shared by the CLI subcommands.

Every step reads its upstream artifacts from the output directory, writes
its own artifacts there, and records a manifest under ``manifests/`` with
the parameters used and SHA-256 hashes of everything it read and wrote.
Paths in manifests are relative to the output directory so that identical
runs in different directories produce identical manifests.
"""

import hashlib
import json
import logging
import os
import platform
import sys
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import cluster, correlate, decompose, ingest, mobility, synth
from .exceptions import DataError
from .spatial import geojson, moran, weights

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

from . import __version__ as PACKAGE_VERSION

DEFAULTS = {
    "seed": 0,
    "K": decompose.DEFAULT_COMPONENTS,
    "k": cluster.DEFAULT_CLUSTERS,
    "window_radius": mobility.DEFAULT_RADIUS,
    "outlier_std": decompose.DEFAULT_OUTLIER_STD,
    "permutations": moran.DEFAULT_PERMUTATIONS,
    "alpha": moran.DEFAULT_ALPHA,
    "standardization": "row",
    "inference": "randomization",
    "out_dir": "out",
    "target_year": 2020,
    "reference_year": 2019,
    "max_gap": 3,
    "n_init": 10,
    "max_iter": 300,
    "id_property": "region_id",
    "snap": weights.DEFAULT_SNAP,
    "linkage": None,
    "metric": "euclidean",
}

STEPS = ("ingest", "tspp", "delta", "decompose", "cluster", "weights", "moran", "lisa", "correlate", "export")

# artifact -> producing subcommand
PRODUCERS = {
    "series_index.csv": "ingest",
    "series_matrix.csv": "ingest",
    "tspp.csv": "tspp",
    "delta.csv": "delta",
    "loadings.csv": "decompose",
    "r_squared.csv": "decompose",
    "colors.csv": "decompose",
    "clusters.csv": "cluster",
    "weights.gal": "weights",
    "inputs/regions.geojson": "synth",
    "inputs/covariates.csv": "synth",
}


class UsageError(Exception):
    """Invalid parameter or configuration (exit code 1)."""


class MissingArtifactError(DataError):
    def __init__(self, artifact, producer):
        super().__init__(f"missing upstream artifact {artifact!r}; run the '{producer}' subcommand first")


@dataclass
class RunConfig:
    params: dict
    inputs: dict = field(default_factory=dict)  # role -> absolute path
    synth: dict = field(default_factory=dict)

    @property
    def out_dir(self):
        return self.params["out_dir"]

    def path(self, name):
        return os.path.join(self.out_dir, name)


def load_config(path=None, overrides=None, *, fixture=False):
    """Merge defaults, an optional TOML file and explicit overrides.

    Top-level keys are parameters; ``[inputs]`` names input files and
    ``[synth]`` holds generator options. Relative paths resolve against the
    config file's directory. ``fixture`` loads the bundled synthetic
    configuration first.
    """
    params = dict(DEFAULTS)
    inputs, synth_opts = {}, {}
    sources = []
    if fixture:
        text = resources.files("mobility_change").joinpath("data/fixture.toml").read_text(encoding="utf-8")
        sources.append((tomllib.loads(text), None))
    if path is not None:
        try:
            with open(path, "rb") as fh:
                sources.append((tomllib.load(fh), os.path.dirname(os.path.abspath(path))))
        except FileNotFoundError:
            raise UsageError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise UsageError(f"cannot parse config {path}: {exc}") from None
    for doc, base in sources:
        for key, value in doc.items():
            if key == "inputs":
                for role, p in value.items():
                    inputs[role] = p if base is None or os.path.isabs(p) else os.path.join(base, p)
            elif key == "synth":
                synth_opts.update(value)
            elif key in params:
                params[key] = value
            else:
                raise UsageError(f"unknown config key {key!r}")
        if base is not None and "out_dir" in doc and not os.path.isabs(doc["out_dir"]):
            params["out_dir"] = os.path.join(base, doc["out_dir"])
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in ("panel_target", "panel_reference", "geometry", "covariates"):
            inputs[key] = value
        else:
            params[key] = value
    validate_params(params)
    return RunConfig(params, inputs, synth_opts)


def validate_params(p):
    def bad(msg):
        raise UsageError(msg)

    for key in ("K", "k", "permutations", "n_init", "max_iter"):
        if not isinstance(p[key], int) or isinstance(p[key], bool) or p[key] < 1:
            bad(f"{key} must be a positive integer, got {p[key]!r}")
    if not isinstance(p["window_radius"], int) or p["window_radius"] < 0:
        bad(f"window_radius must be a non-negative integer, got {p['window_radius']!r}")
    if not isinstance(p["seed"], int) or p["seed"] < 0:
        bad(f"seed must be a non-negative integer, got {p['seed']!r}")
    if not (isinstance(p["outlier_std"], (int, float)) and p["outlier_std"] > 0):
        bad(f"outlier_std must be positive, got {p['outlier_std']!r}")
    if not (isinstance(p["alpha"], (int, float)) and 0 < p["alpha"] < 1):
        bad(f"alpha must lie in (0, 1), got {p['alpha']!r}")
    if p["standardization"] not in weights.STANDARDIZATIONS:
        bad(f"standardization must be one of {weights.STANDARDIZATIONS}")
    if p["inference"] not in ("normality", "randomization"):
        bad("inference must be 'normality' or 'randomization'")
    if p["linkage"] is not None and p["linkage"] not in cluster.LINKAGES:
        bad(f"linkage must be one of {cluster.LINKAGES}")
    if p["metric"] not in cluster.METRICS:
        bad(f"metric must be one of {sorted(cluster.METRICS)}")
    if p["target_year"] == p["reference_year"]:
        bad("target_year and reference_year must differ")


def derived_seed(master, label):
    """Stable per-step seed drawn from the master seed."""
    key = int.from_bytes(hashlib.sha256(label.encode()).digest()[:4], "little")
    return int(np.random.SeedSequence(master, spawn_key=(key,)).generate_state(1)[0])


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions():
    import scipy
    import sklearn

    return {
        "mobility_change": PACKAGE_VERSION,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "scikit-learn": sklearn.__version__,
        "python": ".".join(platform.python_version_tuple()[:2]),
    }


def _rel(cfg, path):
    rel = os.path.relpath(path, cfg.out_dir)
    return os.path.basename(path) if rel.startswith("..") else rel.replace(os.sep, "/")


def _write_json(doc, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1, allow_nan=True)
        fh.write("\n")


def _manifest(cfg, step, read, written, params):
    return {
        "subcommand": step,
        "seed": cfg.params["seed"],
        "parameters": {k: cfg.params[k] for k in params},
        "inputs": {_rel(cfg, p): sha256(p) for p in read},
        "outputs": {_rel(cfg, p): sha256(p) for p in written},
        "versions": _versions(),
    }


def _need(cfg, name):
    path = cfg.path(name)
    if not os.path.exists(path):
        raise MissingArtifactError(name, PRODUCERS.get(name, "synth" if name.startswith("inputs/") else "pipeline"))
    return path


def _fallback(cfg, role):
    if role == "geometry":
        return "inputs/regions.geojson"
    if role == "covariates":
        return "inputs/covariates.csv"
    year = cfg.params["target_year" if role == "panel_target" else "reference_year"]
    return f"inputs/panel_{year}.csv"


def _input(cfg, role):
    """Configured input path, falling back to the synth output."""
    if role in cfg.inputs:
        path = cfg.inputs[role]
        if not os.path.exists(path):
            raise DataError(f"input file for {role} not found: {path}")
        return path
    return _need(cfg, _fallback(cfg, role))


def _has_input(cfg, role):
    return role in cfg.inputs or os.path.exists(cfg.path(_fallback(cfg, role)))


# -- steps --------------------------------------------------------------------


def step_synth(cfg):
    opts = dict(cfg.synth)
    opts.setdefault("seed", derived_seed(cfg.params["seed"], "synth"))
    opts.setdefault("target_year", cfg.params["target_year"])
    opts.setdefault("reference_year", cfg.params["reference_year"])
    try:
        sc = synth.SynthConfig.from_dict(opts)
    except (DataError, TypeError) as exc:
        raise UsageError(f"bad synth options: {exc}") from None
    paths = synth.write_fixture(sc, cfg.path("inputs"))
    return [], list(paths.values()), ["seed", "target_year", "reference_year"]


def step_ingest(cfg):
    p = cfg.params
    years = (p["target_year"], p["reference_year"])
    read = [_input(cfg, "panel_target"), _input(cfg, "panel_reference")]
    schema = ingest.PanelSchema(years=years)
    records, n_errors = [], 0
    for path in read:
        parsed = ingest.parse_panel(path, schema)
        records.extend(parsed.records)
        n_errors += len(parsed.errors)
        for err in parsed.errors[:20]:
            logger.warning("%s:%d: %s", os.path.basename(path), err.line, err.message)
    series, dropped = ingest.prepare_series(records, years, max_gap=p["max_gap"])
    if not series:
        raise DataError("no region survived ingest; see coverage.csv for reasons")
    report = ingest.coverage_report(records, dropped)
    out = [cfg.path("series_index.csv"), cfg.path("series_matrix.csv"), cfg.path("coverage.csv"), cfg.path("ingest_report.json")]
    ingest.write_series_bundle([s for per in series.values() for s in per.values()], out[0], out[1])
    ingest.write_coverage_csv(report, out[2])
    _write_json(
        {
            "records": len(records),
            "row_errors": n_errors,
            "regions_seen": report.total,
            "regions_kept": len(report.kept),
            "regions_dropped": report.dropped,
        },
        out[3],
    )
    return read, out, ["target_year", "reference_year", "max_gap"]


def _load_series(cfg):
    idx, mat = _need(cfg, "series_index.csv"), _need(cfg, "series_matrix.csv")
    return [idx, mat], ingest.read_series_bundle(idx, mat)


def step_tspp(cfg):
    read, series = _load_series(cfg)
    r = cfg.params["window_radius"]
    out = cfg.path("tspp.csv")
    mobility.write_tspp_csv([mobility.tspp(s, r) for s in series], out)
    return read, [out], ["window_radius"]


def step_delta(cfg):
    p = cfg.params
    src = _need(cfg, "tspp.csv")
    table = {}
    for s in mobility.read_tspp_csv(src):
        table.setdefault(s.region_id, {})[s.year] = s
    deltas = []
    for region in sorted(table):
        per = table[region]
        if p["target_year"] not in per or p["reference_year"] not in per:
            logger.warning("region %s lacks one of the compared years; skipped", region)
            continue
        deltas.append(mobility.delta_tspp(per[p["target_year"]], per[p["reference_year"]]))
    out = cfg.path("delta.csv")
    mobility.write_delta_csv(deltas, out)
    return [src], [out], ["target_year", "reference_year"]


def step_decompose(cfg):
    p = cfg.params
    src = _need(cfg, "delta.csv")
    deltas = mobility.read_delta_csv(src)
    matrix = decompose.assemble_matrix(deltas, start_day=p["window_radius"] + 1)
    K = p["K"]
    if K > min(matrix.shape):
        raise UsageError(f"K={K} exceeds matrix rank bound {min(matrix.shape)}")
    kept, removed = decompose.remove_outliers(matrix, p["outlier_std"], n_components=K)
    dec = decompose.truncated_svd(kept, K)
    normalized = decompose.normalize_loadings(dec)
    r2 = decompose.region_r_squared(kept, dec)
    curve = decompose.explained_variance_curve(kept, min(kept.shape))
    out = {n: cfg.path(n) for n in ("components.csv", "loadings.csv", "r_squared.csv", "colors.csv", "explained_variance.csv", "decomposition.json")}
    decompose.write_components_csv(kept, dec, out["components.csv"])
    decompose.write_loadings_csv(dec, out["loadings.csv"], normalized)
    decompose.write_r_squared_csv(r2, out["r_squared.csv"])
    if K >= 3:
        decompose.write_colors_csv(dec.region_index, normalized, out["colors.csv"])
    else:
        del out["colors.csv"]
        if os.path.exists(cfg.path("colors.csv")):
            os.remove(cfg.path("colors.csv"))
    decompose.write_curve_csv(curve, out["explained_variance.csv"])
    _write_json(
        {
            "K": K,
            "n_days": kept.shape[0],
            "n_regions": kept.shape[1],
            "singular_values": dec.singular_values.tolist(),
            "explained_variance_ratio": dec.explained_variance_ratio.tolist(),
            "total_explained": dec.total_explained,
            "outliers_removed": removed,
            "outlier_std": p["outlier_std"],
            "centered": dec.centered,
        },
        out["decomposition.json"],
    )
    return [src], list(out.values()), ["K", "outlier_std", "window_radius"]


def _load_loadings(cfg):
    src = _need(cfg, "loadings.csv")
    ids, raw, norm = decompose.read_loadings_csv(src)
    return src, ids, raw, norm


def step_cluster(cfg):
    p = cfg.params
    src, ids, _, norm = _load_loadings(cfg)
    if p["k"] > len(ids):
        raise UsageError(f"k={p['k']} exceeds the number of regions ({len(ids)})")
    res = cluster.kmeans(norm, p["k"], derived_seed(p["seed"], "cluster"), p["max_iter"], p["n_init"], region_index=ids)
    out = [cfg.path("clusters.csv"), cfg.path("centroids.csv")]
    cluster.write_assignment_csv(res, out[0])
    cluster.write_centroids_csv(res, out[1])
    params = ["k", "n_init", "max_iter", "seed"]
    if p["linkage"]:
        dend = cluster.hierarchical(norm, p["metric"], p["linkage"])
        labels = cluster.cut_dendrogram(dend, p["k"])
        flat = cluster.ClusterAssignment(labels, np.zeros((p["k"], norm.shape[1])), 0.0, 0, None, ids)
        out += [cfg.path("hierarchical_clusters.csv"), cfg.path("dendrogram.nwk")]
        cluster.write_assignment_csv(flat, out[2])
        with open(out[3], "w", encoding="utf-8") as fh:
            fh.write(cluster.to_newick(dend, ids) + "\n")
        params += ["linkage", "metric"]
    return [src], out, params


def step_weights(cfg):
    p = cfg.params
    src = _input(cfg, "geometry")
    geoms = geojson.read_geometries(src, p["id_property"])
    w = weights.queen_weights(geoms, p["snap"])
    out = cfg.path("weights.gal")
    weights.write_gal(w, out)
    return [src], [out], ["id_property", "snap"]


def _spatial_inputs(cfg):
    p = cfg.params
    src, ids, raw, _ = _load_loadings(cfg)
    gal = _need(cfg, "weights.gal")
    w = weights.read_gal(gal)
    known = set(w.ids)
    missing = [r for r in ids if r not in known]
    if missing:
        logger.warning("%d region(s) have no geometry and are left out: %s", len(missing), ", ".join(missing[:10]))
    keep = [k for k, r in enumerate(ids) if r in known]
    sub = w.subset([ids[k] for k in keep])
    sub, values = weights.drop_islands(sub, raw[keep])
    sub = weights.standardize(sub, p["standardization"])
    return [src, gal], sub, values


def step_moran(cfg):
    p = cfg.params
    read, w, values = _spatial_inputs(cfg)
    results = {}
    for k in range(values.shape[1]):
        res = moran.global_moran(values[:, k], w, p["inference"])
        results[f"pc{k + 1}"] = res.as_dict()
    out = cfg.path("moran.json")
    _write_json({"n_regions": w.n, "standardization": p["standardization"], "components": results}, out)
    return read, [out], ["standardization", "inference"]


def step_lisa(cfg):
    p = cfg.params
    read, w, values = _spatial_inputs(cfg)
    results = {}
    for k in range(values.shape[1]):
        seed = derived_seed(p["seed"], f"lisa/pc{k + 1}")
        results[f"pc{k + 1}"] = moran.local_moran(values[:, k], w, p["permutations"], seed, p["alpha"])
    out = cfg.path("lisa.csv")
    moran.write_lisa_csv(results, out)
    return read, [out], ["standardization", "permutations", "alpha", "seed"]


def step_correlate(cfg):
    src, ids, raw, _ = _load_loadings(cfg)
    cov_path = _input(cfg, "covariates")
    table = correlate.read_covariates_csv(cov_path)
    results = correlate.correlate_all(raw, table, ids)
    out = cfg.path("correlations.csv")
    correlate.write_correlation_table(results, out, raw.shape[1])
    return [src, cov_path], [out], []


def step_export(cfg):
    p = cfg.params
    src, ids, _, norm = _load_loadings(cfg)
    geo = _input(cfg, "geometry")
    read = [src, geo]
    props = {r: {f"pc{k + 1}": float(norm[j, k]) for k in range(norm.shape[1])} for j, r in enumerate(ids)}
    r2_path = _need(cfg, "r_squared.csv")
    read.append(r2_path)
    with open(r2_path, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            rid, val = line.strip().split(",")
            if rid in props:
                props[rid]["r_squared"] = None if val == "NA" else float(val)
    colors = cfg.path("colors.csv")
    if os.path.exists(colors):
        read.append(colors)
        with open(colors, encoding="utf-8") as fh:
            next(fh)
            for line in fh:
                rid, hexcode = line.strip().split(",")
                if rid in props:
                    props[rid]["rgb"] = hexcode
    clusters = cfg.path("clusters.csv")
    if os.path.exists(clusters):
        read.append(clusters)
        with open(clusters, encoding="utf-8") as fh:
            next(fh)
            for line in fh:
                rid, label = line.strip().split(",")
                if rid in props:
                    props[rid]["cluster"] = int(label)
    doc = geojson.join_properties(geo, props, p["id_property"])
    out = cfg.path("regions_joined.geojson")
    geojson.write_geojson(doc, out)
    return read, [out], ["id_property"]


STEP_FUNCS = {
    "synth": step_synth,
    "ingest": step_ingest,
    "tspp": step_tspp,
    "delta": step_delta,
    "decompose": step_decompose,
    "cluster": step_cluster,
    "weights": step_weights,
    "moran": step_moran,
    "lisa": step_lisa,
    "correlate": step_correlate,
    "export": step_export,
}


def run_step(name, cfg):
    """Run one step and write ``manifests/<name>.json``; returns the manifest."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    logger.info("running %s", name)
    read, written, params = STEP_FUNCS[name](cfg)
    manifest = _manifest(cfg, name, read, written, params)
    os.makedirs(cfg.path("manifests"), exist_ok=True)
    _write_json(manifest, cfg.path(os.path.join("manifests", f"{name}.json")))
    return manifest


def run_pipeline(cfg, *, with_synth=False):
    """Chain every step; spatial and covariate steps are skipped without inputs."""
    steps = (["synth"] if with_synth else []) + list(STEPS)
    manifests = []
    for name in steps:
        if name in ("weights", "moran", "lisa", "export") and not _has_input(cfg, "geometry"):
            logger.warning("no geometry input; skipping %s", name)
            continue
        if name == "correlate" and not _has_input(cfg, "covariates"):
            logger.warning("no covariates input; skipping correlate")
            continue
        manifests.append(run_step(name, cfg))
    outputs = {}
    for m in manifests:
        outputs.update(m["outputs"])
    doc = {
        "steps": [m["subcommand"] for m in manifests],
        "seed": cfg.params["seed"],
        "parameters": {k: v for k, v in sorted(cfg.params.items()) if k != "out_dir"},
        "synth": cfg.synth,
        "outputs": outputs,
        "versions": _versions(),
    }
    _write_json(doc, cfg.path("manifest.json"))
    return doc
