import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.base import clone

from mobility_change.decompose import (
    Decomposition,
    DeltaMatrix,
    DeltaSVD,
    assemble_matrix,
    explained_variance_curve,
    normalize_loadings,
    read_loadings_csv,
    region_r_squared,
    region_r_squared_array,
    remove_outliers,
    rgb_encode,
    rgb_hex,
    truncated_svd,
    write_colors_csv,
    write_loadings_csv,
)
from mobility_change.exceptions import DataError
from mobility_change.mobility import DeltaSeries


def _matrix(values):
    values = np.asarray(values, float)
    return DeltaMatrix(values, np.arange(4, 4 + values.shape[0]), [f"R{j:03d}" for j in range(values.shape[1])])


def test_rank_one_frozen():
    # columns already centered; R = u v^T with u = (1, -1), v = (1, 2, 3)
    dec = truncated_svd(_matrix([[1, 2, 3], [-1, -2, -3]]), 1)
    assert dec.singular_values[0] == pytest.approx(math.sqrt(28), abs=1e-12)
    np.testing.assert_allclose(dec.loadings[:, 0], np.array([1, 2, 3]) / math.sqrt(14), atol=1e-12)
    np.testing.assert_allclose(dec.components[:, 0], [math.sqrt(14), -math.sqrt(14)], atol=1e-12)
    assert dec.total_explained == pytest.approx(1.0, abs=1e-15)


def test_curve_matches_gram_eigenvalues(rng):
    R = rng.normal(size=(60, 12)) @ np.diag(np.linspace(5, 0.2, 12))
    Rc = R - R.mean(axis=0)
    ev = np.sort(np.linalg.eigvalsh(Rc.T @ Rc))[::-1]
    expected = np.cumsum(ev) / ev.sum()
    got = np.array([v for _, v in explained_variance_curve(_matrix(R), 12)])
    np.testing.assert_allclose(got, expected, atol=1e-12)
    assert np.all(np.diff(got) >= 0) and got[-1] == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (15, 6), elements=st.floats(-100, 100).map(lambda v: round(v, 3))))
def test_sign_rule_and_reconstruction(R):
    m = _matrix(R)
    if np.all(np.ptp(R, axis=0) == 0):
        with pytest.raises(DataError):
            truncated_svd(m, 1)
        return
    dec = truncated_svd(m, 6)
    sums = dec.loadings.sum(axis=0)
    scale = np.abs(dec.loadings).sum(axis=0)
    assert np.all(sums >= -1e-12 * scale)
    np.testing.assert_allclose(dec.reconstruct(), R, atol=1e-8 * max(1.0, np.abs(R).max()))
    assert np.all(np.diff(dec.singular_values) <= 1e-9)


def test_uncentered_reconstruction(rng):
    R = rng.normal(3, 1, size=(20, 5))
    dec = truncated_svd(_matrix(R), 5, center=False)
    np.testing.assert_allclose(dec.reconstruct(), R, atol=1e-10)
    assert not dec.column_means.any()


def test_k_bounds():
    with pytest.raises(ValueError):
        truncated_svd(_matrix(np.eye(3)), 4)


def test_assemble_matrix_sorted_and_checked():
    m = assemble_matrix([DeltaSeries("B", np.ones(5)), DeltaSeries("A", np.zeros(5))])
    assert m.region_index == ["A", "B"] and m.day_index.tolist() == [4, 5, 6, 7, 8]
    with pytest.raises(DataError):
        assemble_matrix([DeltaSeries("A", np.ones(5)), DeltaSeries("A", np.ones(5))])
    with pytest.raises(DataError):
        assemble_matrix([DeltaSeries("A", np.ones(5)), DeltaSeries("B", np.ones(4))])


def test_outlier_pass_keeps_clean_data(rng):
    R = rng.normal(size=(80, 3)) @ np.clip(rng.normal(size=(3, 100)), -2, 2)
    kept, removed = remove_outliers(_matrix(R))
    assert removed == [] and kept.shape == (80, 100)


def test_r_squared_constant_region_is_nan(rng):
    R = rng.normal(size=(30, 4))
    R[:, 2] = 7.0
    m = _matrix(R)
    dec = truncated_svd(m, 4)
    with pytest.warns(UserWarning):
        r2 = region_r_squared(m, dec)
    assert math.isnan(r2["R002"])
    assert all(v == pytest.approx(1.0) for k, v in r2.items() if k != "R002")


def test_normalize_and_rgb():
    L = np.array([[1.0, 2.0], [3.0, 2.0], [2.0, 2.0]])
    with pytest.warns(UserWarning):
        N = normalize_loadings(L)
    assert N[:, 0].tolist() == [0.0, 1.0, 0.5] and N[:, 1].tolist() == [0.5, 0.5, 0.5]
    assert rgb_encode([0.0, 0.5, 1.0]) == (0, 128, 255)
    assert rgb_hex((0, 128, 255)) == "#0080FF"
    with pytest.raises(DataError):
        rgb_encode([0.2, 1.2, 0.0])


def test_estimator(rng):
    X = rng.normal(size=(40, 30))
    est = DeltaSVD(n_components=3)
    L = est.fit_transform(X)
    np.testing.assert_allclose(est.transform(X), L, atol=1e-10)
    assert est.components_.shape == (3, 30)
    assert clone(est).get_params() == {"n_components": 3, "center": True}
    rec = est.inverse_transform(L)
    full = DeltaSVD(n_components=30).fit(X)
    np.testing.assert_allclose(full.inverse_transform(full.loadings_), X - X.mean(axis=1, keepdims=True), atol=1e-10)
    assert rec.shape == X.shape


def test_loadings_csv(tmp_path, rng):
    m = _matrix(rng.normal(size=(50, 7)))
    dec = truncated_svd(m, 3)
    write_loadings_csv(dec, tmp_path / "l.csv")
    ids, raw, norm = read_loadings_csv(tmp_path / "l.csv")
    assert ids == m.region_index and raw.shape == norm.shape == (7, 3)
    np.testing.assert_array_equal(raw, dec.loadings)
    write_colors_csv(ids, norm, tmp_path / "c.csv")
    rows = (tmp_path / "c.csv").read_text().splitlines()
    assert len(rows) == 8 and all(len(r.split(",")[1]) == 7 for r in rows[1:])


def test_diagonal_uncentered():
    dec = truncated_svd(_matrix(np.diag([3.0, 2.0, 1.0])), 2, center=False)
    np.testing.assert_allclose(dec.singular_values, [3.0, 2.0], atol=1e-15)
    assert dec.total_explained == pytest.approx(13 / 14, abs=1e-15)


def test_rank_one_ratio(rng):
    R = np.outer(rng.normal(size=40), rng.normal(size=9))
    dec = truncated_svd(_matrix(R), 1, center=False)
    assert abs(dec.explained_variance_ratio[0] - 1.0) <= 1e-12


def test_curve_trivia(rng):
    R = rng.normal(size=(30, 2)) @ rng.normal(size=(2, 8))
    curve = [v for _, v in explained_variance_curve(_matrix(R), 8)]
    assert curve[1] == pytest.approx(1.0, abs=1e-12) and all(v == pytest.approx(1.0, abs=1e-12) for v in curve[2:])
    dec = truncated_svd(_matrix(R), 1)
    assert explained_variance_curve(_matrix(R), 1) == [(1, pytest.approx(dec.explained_variance_ratio[0], abs=1e-15))]


def test_eckart_young_and_frobenius(rng):
    R = rng.normal(size=(50, 20))
    m = _matrix(R)
    errors = [np.linalg.norm(R - truncated_svd(m, K).reconstruct()) for K in range(1, 11)]
    assert all(b <= a + 1e-12 for a, b in zip(errors, errors[1:]))
    full = truncated_svd(m, 20)
    Rc = R - R.mean(axis=0)
    assert np.sum(full.singular_values**2) == pytest.approx(np.linalg.norm(Rc) ** 2, rel=1e-8)
    assert np.all(np.diff(full.explained_variance_ratio) <= 0)


def test_archetype_sign_flip_invariance(rng):
    # centered orthogonal curves, as the generator plants them
    G = rng.normal(size=(80, 3))
    A = np.linalg.qr(G - G.mean(axis=0))[0] * [30, 18, 10]
    W = rng.dirichlet(np.ones(3), size=60)
    a = truncated_svd(_matrix(A @ W.T), 3)
    A[:, 1] *= -1
    b = truncated_svd(_matrix(A @ W.T), 3)
    np.testing.assert_allclose(np.abs(a.loadings), np.abs(b.loadings), atol=1e-10)
    np.testing.assert_allclose(a.explained_variance_ratio, b.explained_variance_ratio, atol=1e-12)
    assert np.all(b.loadings.sum(axis=0) >= 0)


def test_outlier_trivia(rng):
    same = np.tile(rng.normal(size=(40, 1)), (1, 12))
    kept, removed = remove_outliers(_matrix(same))
    assert removed == [] and kept.shape == (40, 12)
    R = rng.normal(size=(40, 30))
    R[:, 3] *= 50
    assert remove_outliers(_matrix(R), float("inf"))[1] == []


def test_r_squared_trivia_and_oracle(rng):
    R = rng.normal(size=(25, 6))
    m = _matrix(R)
    assert all(v == pytest.approx(1.0, abs=1e-12) for v in region_r_squared(m, truncated_svd(m, 6)).values())
    dec = truncated_svd(m, 2)
    got = region_r_squared(m, dec)
    rec = dec.reconstruct()
    for j, r in enumerate(m.region_index):
        ss_res = sum((R[i, j] - rec[i, j]) ** 2 for i in range(25))
        mean = sum(R[:, j]) / 25
        ss_tot = sum((R[i, j] - mean) ** 2 for i in range(25))
        assert got[r] == pytest.approx(1 - ss_res / ss_tot, abs=1e-12)
    # a reconstruction equal to the column mean gives zero
    flat = Decomposition(np.zeros((25, 1)), np.ones(1), np.zeros((6, 1)), np.ones(1), 1.0, 1, m.region_index, R.mean(axis=0), True)
    np.testing.assert_allclose(region_r_squared_array(m, flat), 0.0, atol=1e-15)


def test_normalize_trivia(rng):
    assert normalize_loadings(np.array([[2.0], [4.0]]))[:, 0].tolist() == [0.0, 1.0]
    L = rng.normal(size=(50, 3))
    N = normalize_loadings(L)
    assert np.all(N.min(axis=0) == 0) and np.all(N.max(axis=0) == 1)
    for k in range(3):
        assert np.array_equal(np.argsort(L[:, k]), np.argsort(N[:, k]))


def test_rgb_trivia_and_monotone():
    assert rgb_encode([1, 0, 0]) == (255, 0, 0)
    assert rgb_encode([0, 0, 0]) == (0, 0, 0)
    assert rgb_encode([0.5, 0.5, 0.5]) == (128, 128, 128)
    grid = np.linspace(0, 1, 1001)
    channel = [rgb_encode([v, 0, 0])[0] for v in grid]
    assert all(b >= a for a, b in zip(channel, channel[1:]))


def test_assemble_trivia(rng):
    a, b = rng.normal(size=359), rng.normal(size=359)
    m = assemble_matrix([DeltaSeries("Z", b), DeltaSeries("A", a)])
    assert m.shape == (359, 2) and np.array_equal(m.values[:, 0], a)
    single = assemble_matrix([DeltaSeries("A", a)])
    assert np.array_equal(single.values[:, 0], a)
    block = rng.normal(size=(100, 359))
    big = assemble_matrix([DeltaSeries(f"R{k:03d}", block[k]) for k in range(100)])
    for _ in range(20):
        i, j = rng.integers(359), rng.integers(100)
        assert big.values[i, j] == block[j, i]
