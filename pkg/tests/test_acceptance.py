"""Acceptance criteria, one test each.

Every test prints a single ``[ACC n] PASS|FAIL ...`` line to the terminal
(outside pytest's capture) and then asserts. Run with ``pytest -v
tests/test_acceptance.py`` or ``python3 tests/test_acceptance.py``.
"""

import hashlib
import json
import os
import sys
import time

import numpy as np
import pytest
from conftest import grid_geometries
from scipy.optimize import linear_sum_assignment
from scipy.sparse.csgraph import connected_components, minimum_spanning_tree
from scipy.spatial.distance import pdist, squareform
from sklearn.metrics import adjusted_rand_score

from mobility_change import pipeline
from mobility_change.cli import run
from mobility_change.cluster import cut_dendrogram, hierarchical, kmeans
from mobility_change.correlate import pearson, t_two_sided_p
from mobility_change.decompose import (
    DeltaMatrix,
    _loading_zscores,
    assemble_matrix,
    read_loadings_csv,
    remove_outliers,
    truncated_svd,
)
from mobility_change.ingest import RegionSeries
from mobility_change.mobility import compute_deltas, read_delta_csv, rolling_mean, tspp
from mobility_change.spatial import (
    global_moran,
    local_moran,
    moran_statistic,
    queen_weights,
    read_gal,
    rook_weights,
    standardize,
)
from mobility_change.synth import SynthConfig, generate


def report(request, n, ok, detail):
    line = f"[ACC {n:>2}] {'PASS' if ok else 'FAIL'}  {detail}"
    capman = request.config.pluginmanager.getplugin("capturemanager") if request is not None else None
    if capman is not None:
        with capman.global_and_fixture_disabled():
            print("\n" + line, flush=True)
    else:
        print(line, flush=True)
    assert ok, line


def _deltas_from_panel(panel):
    ids = sorted(panel.series[panel.config.target_year])
    by_region = {r: {y: panel.series[y][r] for y in panel.series} for r in ids}
    return compute_deltas(by_region, panel.config.target_year, panel.config.reference_year)


# 1 ---------------------------------------------------------------------------

# Targets reported for the proprietary nationwide panel; they cannot be
# recomputed here and are kept only so the artifact fields can be compared.
DOCUMENTATION_TARGETS = {
    "explained_variance_K3": 0.59,
}


def test_acc01_documentation_targets(request, tmp_path):
    assert run(["pipeline", "--fixture", "--out-dir", str(tmp_path)]) == 0
    dec = json.loads((tmp_path / "decomposition.json").read_text())
    moran = json.loads((tmp_path / "moran.json").read_text())
    fields_ok = 0.0 <= dec["total_explained"] <= 1.0 and all("I" in v for v in moran["components"].values())
    header = (tmp_path / "correlations.csv").read_text().splitlines()[0]
    fields_ok &= header.startswith("covariate,pc1_r,pc1_p")
    report(
        request,
        1,
        fields_ok,
        f"reference values (explained variance {DOCUMENTATION_TARGETS['explained_variance_K3']}, global Moran's I "
        "table, covariate r table) need the "
        "proprietary panel and are documentation targets only; checked that the pipeline emits the "
        f"corresponding fields (fixture total explained = {dec['total_explained']:.3f})",
    )


# 2 ---------------------------------------------------------------------------


def test_acc02_synthetic_recovery(request):
    t0 = time.perf_counter()
    panel, truth = generate(SynthConfig(n_regions=300, n_days=365, noise_sigma=0.05, seed=2024))
    matrix = assemble_matrix(_deltas_from_panel(panel))
    dec = truncated_svd(matrix, 3)
    elapsed = time.perf_counter() - t0

    planted = truth.delta_archetypes - truth.delta_archetypes.mean(axis=0)
    comps = dec.components
    cos = np.abs(
        (comps / np.linalg.norm(comps, axis=0)).T @ (planted / np.linalg.norm(planted, axis=0))
    )  # (component, archetype)
    rows, cols = linear_sum_assignment(-cos)
    matched = cos[rows, cols]
    ok = dec.total_explained >= 0.90 and matched.min() >= 0.90 and elapsed < 10.0
    report(
        request,
        2,
        ok,
        f"total explained {dec.total_explained:.4f} (>= 0.90), matched |cos| "
        f"{np.round(matched, 4).tolist()} (>= 0.90), runtime {elapsed:.2f}s (< 10s)",
    )


# 3 ---------------------------------------------------------------------------


def test_acc03_noiseless_identity(request, tmp_path):
    opts = {"n_regions": 36, "archetypes": ["long_drop"], "amplitudes": [25.0], "noise_sigma": 0.0, "seed": 5}
    cfg = pipeline.RunConfig(dict(pipeline.DEFAULTS, out_dir=str(tmp_path), K=1), {}, dict(opts))
    for step in ("synth", "ingest", "tspp", "delta"):
        pipeline.run_step(step, cfg)
    _, truth = generate(SynthConfig.from_dict(dict(opts)))
    deltas = {d.region_id: d.values for d in read_delta_csv(tmp_path / "delta.csv")}
    got = np.vstack([deltas[r] for r in truth.region_ids])
    err = float(np.abs(got - truth.planted_delta()).max())
    dec = truncated_svd(assemble_matrix(read_delta_csv(tmp_path / "delta.csv")), 1)
    ok = err <= 1e-10 and dec.total_explained >= 0.999
    report(request, 3, ok, f"max |delta - planted| = {err:.2e} (<= 1e-10), K=1 explains {dec.total_explained:.6f} (>= 0.999)")


# 4 ---------------------------------------------------------------------------


def _moran_oracle(y, W):
    n = len(y)
    mean = sum(y) / n
    z = [v - mean for v in y]
    num = 0.0
    s0 = 0.0
    for i in range(n):
        for j in range(n):
            num += W[i][j] * z[i] * z[j]
            s0 += W[i][j]
    return n / s0 * num / sum(v * v for v in z)


def test_acc04_moran_oracle(request):
    geoms = grid_geometries(10, 10)
    wq = queen_weights(geoms)
    rng = np.random.default_rng(404)
    worst = 0.0
    for mode in ("binary", "row"):
        w = standardize(wq, mode)
        dense = w.to_dense().tolist()
        for _ in range(25):
            y = rng.normal(size=100)
            worst = max(worst, abs(global_moran(y, w).I - _moran_oracle(y.tolist(), dense)))
    rook = rook_weights(grid_geometries(2, 2))
    checker = moran_statistic([1.0, 0.0, 0.0, 1.0], rook)
    ok = worst <= 1e-12 and checker == -1.0
    report(request, 4, ok, f"max |I - oracle| over 50 fields = {worst:.2e} (<= 1e-12), 2x2 rook checkerboard I = {checker}")


# 5 ---------------------------------------------------------------------------


def _lisa_fixtures(tmp_path):
    rng = np.random.default_rng(505)
    grid = standardize(queen_weights(grid_geometries(10, 10)), "row")
    for _ in range(25):
        yield "grid10", grid, rng.normal(size=100)
    assert run(["pipeline", "--fixture", "--out-dir", str(tmp_path)]) == 0
    ids, raw, _ = read_loadings_csv(tmp_path / "loadings.csv")
    w = read_gal(tmp_path / "weights.gal").subset(ids)
    w = standardize(w, "row")
    for k in range(raw.shape[1]):
        yield f"fixture/pc{k + 1}", w, raw[:, k]


def test_acc05_lisa_decomposition(request, tmp_path):
    worst, reproducible, count = 0.0, True, 0
    for _, w, y in _lisa_fixtures(tmp_path):
        a = local_moran(y, w, permutations=199, seed=11)
        b = local_moran(y, w, permutations=199, seed=11)
        worst = max(worst, abs(a.local_I.mean() - global_moran(y, w).I))
        reproducible &= np.array_equal(a.pseudo_p, b.pseudo_p)
        count += 1
    ok = worst <= 1e-10 and reproducible
    report(request, 5, ok, f"{count} fields: max |mean(local I) - I| = {worst:.2e} (<= 1e-10), pseudo p reproducible: {reproducible}")


# 6 ---------------------------------------------------------------------------


def _r_extended(x, y):
    import mpmath

    with mpmath.workdps(60):
        xs = [mpmath.mpf(float(v)) for v in x]
        ys = [mpmath.mpf(float(v)) for v in y]
        n = len(xs)
        mx, my = mpmath.fsum(xs) / n, mpmath.fsum(ys) / n
        sxy = mpmath.fsum((a - mx) * (b - my) for a, b in zip(xs, ys))
        sxx = mpmath.fsum((a - mx) ** 2 for a in xs)
        syy = mpmath.fsum((b - my) ** 2 for b in ys)
        return float(sxy / mpmath.sqrt(sxx * syy))


def test_acc06_pearson_oracle(request):
    rng = np.random.default_rng(606)
    worst = 0.0
    for _ in range(100):
        x = rng.normal(size=50)
        y = rng.uniform(-1, 1) * x + rng.normal(size=50)
        worst = max(worst, abs(pearson(x, y).r - _r_extended(x, y)))
    grid = np.linspace(0, 0.999, 400)
    ps = np.array([t_two_sided_p(r, 50) for r in grid])
    monotone = bool(np.all(np.diff(ps) <= 0))
    x = rng.normal(size=50)
    line = pearson(x, 2 * x + 1).r
    ok = worst <= 1e-12 and monotone and line == 1.0
    report(request, 6, ok, f"max |r - oracle| = {worst:.2e} (<= 1e-12), p monotone in |r|: {monotone}, y=2x+1 r = {line}")


# 7 ---------------------------------------------------------------------------


def test_acc07_clustering(request, tmp_path):
    rng = np.random.default_rng(707)
    fixtures = [rng.normal(size=(60, 3)) for _ in range(10)]
    centers = np.array([[0.0, 0.0], [10.0, 0.0], [5.0, 8.66]])
    truth = np.repeat(np.arange(3), 30)
    blobs = np.vstack([c + rng.normal(0, 1.0, (30, 2)) for c in centers])
    fixtures.append(blobs)
    assert run(["pipeline", "--fixture", "--out-dir", str(tmp_path)]) == 0
    fixtures.append(read_loadings_csv(tmp_path / "loadings.csv")[2])

    monotone = True
    for X in fixtures:
        for k in (2, 3, 5):
            for seed in range(3):
                h = np.array(kmeans(X, k, seed=seed, n_init=1).inertia_history)
                monotone &= bool(np.all(np.diff(h) <= 0))
    ari = adjusted_rand_score(truth, kmeans(blobs, 3, seed=0).labels)

    mst_ok = True
    for s in range(20):
        P = np.random.default_rng(7000 + s).normal(size=(15, 2))
        D = squareform(pdist(P))
        mst = minimum_spanning_tree(D).toarray()
        d = hierarchical(P, "euclidean", "single")
        mst_ok &= bool(np.allclose(np.sort(d.merges[:, 2]), np.sort(mst[mst > 0]), rtol=0, atol=1e-12))
        weights_sorted = np.sort(mst[mst > 0])
        for k in range(2, 15):
            cut = mst.copy()
            cut[cut >= weights_sorted[-(k - 1)]] = 0
            ref = connected_components(cut, directed=False)[1]
            mst_ok &= adjusted_rand_score(ref, cut_dendrogram(d, k)) == 1.0
    ok = monotone and ari == 1.0 and mst_ok
    report(request, 7, ok, f"inertia non-increasing on {len(fixtures)} fixtures: {monotone}, 3-blob ARI = {ari}, single linkage == MST on 20 x 15 points: {mst_ok}")


# 8 ---------------------------------------------------------------------------


def test_acc08_tspp_window(request):
    rng = np.random.default_rng(808)
    worst, lengths = 0.0, set()
    for _ in range(20):
        x = rng.normal(60, 25, 365)
        out = tspp(RegionSeries("A", 2019, x, np.ones(365, bool))).values
        brute = np.array([sum(x[i - 3 : i + 4]) / 7 for i in range(3, 362)])
        worst = max(worst, float(np.abs(out - brute).max()))
        lengths.add(out.shape[0])
    constant = all(np.all(rolling_mean(np.full(365, c)) == c) for c in (0.0, 1.0 / 3.0, 123.456, 1e9 + 0.1, -7.7))
    ok = worst <= 1e-12 and lengths == {359} and constant
    report(request, 8, ok, f"max |tspp - brute| = {worst:.2e} (<= 1e-12), lengths {sorted(lengths)}, constant invariance exact: {constant}")


# 9 ---------------------------------------------------------------------------


def test_acc09_outlier_pass(request):
    rng = np.random.default_rng(909)
    m, n = 359, 200
    _, truth = generate(SynthConfig(n_regions=9, seed=1))
    C = truth.delta_archetypes - truth.delta_archetypes.mean(axis=0)  # (m, 3)
    L = np.clip(rng.normal(size=(n, 3)), -2.5, 2.5)
    L -= L.mean(axis=0)
    target = 57
    L[target, 0] = 0.0
    sd = L[np.arange(n) != target, 0].std()
    L[target, 0] = 10.0 * sd
    R = C @ L.T + 0.01 * rng.normal(size=(m, n))
    ids = [f"R{j:03d}" for j in range(n)]
    matrix = DeltaMatrix(R, np.arange(4, 4 + m), ids)
    z = np.abs(_loading_zscores(truncated_svd(matrix, 3))[target]).max()
    _, removed = remove_outliers(matrix, 4.0)
    ok = removed == [ids[target]]
    report(request, 9, ok, f"planted region at 10 sd (fitted |z| = {z:.2f}); removed {removed} at threshold 4.0")


# 10 --------------------------------------------------------------------------


def _tree_hashes(root):
    out = {}
    for dirpath, _, names in os.walk(root):
        for name in names:
            path = os.path.join(dirpath, name)
            with open(path, "rb") as fh:
                out[os.path.relpath(path, root)] = hashlib.sha256(fh.read()).hexdigest()
    return out


def test_acc10_determinism(request, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["pipeline", "--fixture", "--out-dir", str(a)]) == 0
    assert run(["pipeline", "--fixture", "--out-dir", str(b)]) == 0
    ha, hb = _tree_hashes(a), _tree_hashes(b)
    manifests = [k for k in ha if k.startswith("manifest")]
    ok = ha == hb and "manifest.json" in ha
    report(request, 10, ok, f"{len(ha)} files ({len(manifests)} of them manifests) byte-identical across two runs: {ha == hb}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
