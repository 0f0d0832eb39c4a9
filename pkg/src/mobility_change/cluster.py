"""Clustering of regions in normalized loading space.

k-means (Lloyd iterations, k-means++ seeding) is the primary method;
agglomerative hierarchical clustering is kept for comparison.
"""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist, squareform
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_matrix, check_choice, check_int
from .exceptions import DataError

logger = logging.getLogger(__name__)

DEFAULT_CLUSTERS = 3
METRICS = {"euclidean": "euclidean", "manhattan": "cityblock", "cosine": "cosine"}
LINKAGES = ("single", "complete", "average", "ward")


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    iterations_run: int
    seed: int | None
    region_index: list | None = None
    inertia_history: list = field(default_factory=list)

    def as_dict(self):
        ids = self.region_index if self.region_index is not None else range(len(self.labels))
        return dict(zip(ids, self.labels.tolist()))


@dataclass
class Dendrogram:
    """Merge list in scipy's linkage layout.

    Row ``t`` merges clusters ``a`` and ``b`` at ``distance`` into cluster
    ``n + t`` of ``size`` points; ids below ``n`` are single points.
    """

    merges: np.ndarray  # (n - 1, 4)
    linkage: str
    metric: str

    @property
    def n(self):
        return self.merges.shape[0] + 1


def _sq_dists(X, C):
    # explicit differences: the expanded |x|^2 - 2xc + |c|^2 form loses the
    # exact zero that k == n relies on
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def _kmeanspp(X, k, rng):
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    closest = _sq_dists(X, centers[:1])[:, 0]
    for c in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[c] = X[idx]
        closest = np.minimum(closest, _sq_dists(X, centers[c : c + 1])[:, 0])
    return centers


def _lloyd(X, centers, max_iter):
    k = centers.shape[0]
    labels = None
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        d = _sq_dists(X, centers)
        new_labels = d.argmin(axis=1)
        history.append(float(d[np.arange(X.shape[0]), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        dist_own = d[np.arange(X.shape[0]), labels]
        for c in range(k):
            members = labels == c
            if members.any():
                centers[c] = X[members].mean(axis=0)
            else:
                # reseed an empty cluster at the point worst served by its centroid
                far = int(np.argmax(dist_own))
                centers[c] = X[far]
                dist_own[far] = 0.0
                logger.debug("k-means: reseeded empty cluster %d at point %d", c, far)
    d = _sq_dists(X, centers)
    labels = d.argmin(axis=1)
    inertia = float(d[np.arange(X.shape[0]), labels].sum())
    if inertia < history[-1]:
        history.append(inertia)
    return labels, centers, inertia, it, history


def kmeans(points, k=DEFAULT_CLUSTERS, seed=0, max_iter=300, n_init=10, init="k-means++", region_index=None):
    """Best-of-``n_init`` Lloyd k-means.

    Restart ``i`` draws from the ``i``-th child of ``SeedSequence(seed)``, so a
    given seed always yields the same assignment. ``inertia_history`` holds
    the within-cluster sum of squares after every assignment step of the
    winning restart; it never increases.
    """
    X = as_matrix(points, name="points")
    n = X.shape[0]
    k = check_int(k, name="k", low=1, high=n)
    max_iter = check_int(max_iter, name="max_iter", low=1)
    n_init = check_int(n_init, name="n_init", low=1)
    check_choice(init, {"k-means++", "random"}, name="init")
    best = None
    for child in np.random.SeedSequence(seed).spawn(n_init):
        rng = np.random.default_rng(child)
        if init == "k-means++":
            centers = _kmeanspp(X, k, rng)
        else:
            centers = X[rng.choice(n, size=k, replace=False)].copy()
        result = _lloyd(X, centers, max_iter)
        if best is None or result[2] < best[2]:
            best = result
    labels, centers, inertia, iters, history = best
    return ClusterAssignment(labels, centers, inertia, iters, seed, region_index, history)


class KMeans(ClusterMixin, BaseEstimator):
    """sklearn-compatible wrapper around :func:`kmeans`."""

    def __init__(self, n_clusters=DEFAULT_CLUSTERS, init="k-means++", n_init=10, max_iter=300, random_state=0):
        self.n_clusters = n_clusters
        self.init = init
        self.n_init = n_init
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y=None):
        res = kmeans(X, self.n_clusters, self.random_state, self.max_iter, self.n_init, self.init)
        self.labels_ = res.labels
        self.cluster_centers_ = res.centroids
        self.inertia_ = res.inertia
        self.n_iter_ = res.iterations_run
        self.inertia_history_ = res.inertia_history
        self.n_features_in_ = res.centroids.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = as_matrix(X)
        return _sq_dists(X, self.cluster_centers_).argmin(axis=1)


def hierarchical(points, metric="euclidean", linkage="complete"):
    """Agglomerative clustering via Lance-Williams updates.

    Ties go to the lowest ``(i, j)`` slot pair. Ward's method requires the
    euclidean metric and reports merge heights on scipy's scale.
    """
    X = as_matrix(points, name="points", min_rows=2)
    check_choice(metric, set(METRICS), name="metric")
    check_choice(linkage, set(LINKAGES), name="linkage")
    if linkage == "ward" and metric != "euclidean":
        raise DataError("ward linkage requires the euclidean metric")
    n = X.shape[0]
    D = squareform(pdist(X, METRICS[metric]))
    if linkage == "ward":
        D = D**2  # update in squared space, report sqrt
    np.fill_diagonal(D, np.inf)
    size = np.ones(n)
    cluster_id = np.arange(n)
    active = np.ones(n, dtype=bool)
    merges = np.empty((n - 1, 4))
    for t in range(n - 1):
        # D is symmetric, so the first row-major minimum is the lowest (i, j) pair with i < j
        i, j = divmod(int(np.argmin(D)), n)
        dij = D[i, j]
        a, b = sorted((cluster_id[i], cluster_id[j]))
        merges[t] = (a, b, np.sqrt(dij) if linkage == "ward" else dij, size[i] + size[j])
        ni, nj = size[i], size[j]
        di, dj = D[i], D[j]
        if linkage == "single":
            new = np.minimum(di, dj)
        elif linkage == "complete":
            new = np.maximum(di, dj)
        elif linkage == "average":
            new = (ni * di + nj * dj) / (ni + nj)
        else:
            nk = size
            new = ((ni + nk) * di + (nj + nk) * dj - nk * dij) / (ni + nj + nk)
        new[~active] = np.inf
        new[i] = np.inf
        D[i, :] = new
        D[:, i] = new
        D[j, :] = np.inf
        D[:, j] = np.inf
        active[j] = False
        size[i] = ni + nj
        cluster_id[i] = n + t
    return Dendrogram(merges, linkage, metric)


def cut_dendrogram(dendrogram, k):
    """Flat labels after undoing the last ``k - 1`` merges.

    Labels are numbered by each cluster's smallest point index.
    """
    n = dendrogram.n
    k = check_int(k, name="k", low=1, high=n)
    parent = list(range(2 * n - 1))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for t in range(n - k):
        a, b = int(dendrogram.merges[t, 0]), int(dendrogram.merges[t, 1])
        parent[find(a)] = n + t
        parent[find(b)] = n + t
    roots = [find(p) for p in range(n)]
    order = {}
    for r in roots:
        order.setdefault(r, len(order))
    return np.array([order[r] for r in roots])


class AgglomerativeClustering(ClusterMixin, BaseEstimator):
    def __init__(self, n_clusters=DEFAULT_CLUSTERS, metric="euclidean", linkage="complete"):
        self.n_clusters = n_clusters
        self.metric = metric
        self.linkage = linkage

    def fit(self, X, y=None):
        self.dendrogram_ = hierarchical(X, self.metric, self.linkage)
        self.labels_ = cut_dendrogram(self.dendrogram_, self.n_clusters)
        self.n_features_in_ = np.asarray(X).shape[1]
        return self


def to_newick(dendrogram, labels=None):
    """Newick string with branch lengths measured from merge heights."""
    n = dendrogram.n
    labels = [str(x) for x in (labels if labels is not None else range(n))]
    text = {i: labels[i] for i in range(n)}
    height = dict.fromkeys(range(n), 0.0)
    for t, (a, b, dist, _) in enumerate(dendrogram.merges):
        a, b = int(a), int(b)
        text[n + t] = f"({text.pop(a)}:{dist - height[a]:.6g},{text.pop(b)}:{dist - height[b]:.6g})"
        height[n + t] = float(dist)
    return text[2 * n - 2] + ";"


def write_assignment_csv(assignment, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region_id", "cluster_label"])
        for region, label in assignment.as_dict().items():
            w.writerow([region, label])


def write_centroids_csv(assignment, path):
    K = assignment.centroids.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cluster_label", *(f"pc{k + 1}" for k in range(K)), "size"])
        for c, row in enumerate(assignment.centroids):
            w.writerow([c, *(repr(float(v)) for v in row), int(np.sum(assignment.labels == c))])
