"""Contiguity spatial weights."""

import logging
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from ..exceptions import DataError

logger = logging.getLogger(__name__)

DEFAULT_SNAP = 1e-7
STANDARDIZATIONS = ("binary", "row")


@dataclass
class RegionGeometry:
    """Polygons for one region.

    ``polygons`` is a list of polygons; each polygon is a list of rings
    (exterior first, then holes); each ring a sequence of ``(x, y)`` pairs.
    """

    region_id: str
    polygons: list

    def __post_init__(self):
        for polygon in self.polygons:
            for ring in polygon:
                if len(ring) < 4:
                    raise DataError(f"region {self.region_id}: ring has {len(ring)} vertices, need >= 4")
                if tuple(ring[0]) != tuple(ring[-1]):
                    raise DataError(f"region {self.region_id}: ring is not closed")

    def vertices(self):
        for polygon in self.polygons:
            for ring in polygon:
                yield from ring


class SpatialWeights:
    """Neighbor lists with per-edge weights over an ordered id list.

    ``neighbors[i]`` is sorted in ``ids`` order; ``weights[i]`` aligns with it.
    """

    def __init__(self, ids, neighbors, weights=None, standardization="binary"):
        self.ids = list(ids)
        if len(set(self.ids)) != len(self.ids):
            raise DataError("weights ids must be distinct")
        pos = {r: k for k, r in enumerate(self.ids)}
        self.neighbors = {}
        for r in self.ids:
            nbrs = set(neighbors.get(r, ()))
            if not nbrs <= pos.keys():
                raise DataError(f"region {r} has neighbors outside the id list: {sorted(nbrs - pos.keys())}")
            nbrs = sorted(nbrs, key=pos.__getitem__)
            if r in nbrs:
                raise DataError(f"region {r} lists itself as a neighbor")
            self.neighbors[r] = nbrs
        if weights is None:
            weights = {r: [1.0] * len(self.neighbors[r]) for r in self.ids}
        self.weights = {r: [float(x) for x in weights[r]] for r in self.ids}
        self.standardization = standardization

    @classmethod
    def from_neighbors(cls, neighbors, ids=None):
        """Binary weights from a neighbor mapping, symmetrized."""
        sym = defaultdict(set)
        for r, nbrs in neighbors.items():
            sym[r]
            for s in nbrs:
                sym[r].add(s)
                sym[s].add(r)
        return cls(list(ids) if ids is not None else sorted(sym), sym)

    @property
    def n(self):
        return len(self.ids)

    @property
    def islands(self):
        return [r for r in self.ids if not self.neighbors[r]]

    @property
    def cardinalities(self):
        return {r: len(self.neighbors[r]) for r in self.ids}

    def is_symmetric(self):
        return all(r in self.neighbors[s] for r in self.ids for s in self.neighbors[r])

    def to_sparse(self):
        pos = {r: k for k, r in enumerate(self.ids)}
        rows, cols, vals = [], [], []
        for r in self.ids:
            for s, w in zip(self.neighbors[r], self.weights[r]):
                rows.append(pos[r])
                cols.append(pos[s])
                vals.append(w)
        return sparse.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))

    def to_dense(self):
        return self.to_sparse().toarray()

    def lag(self, values):
        """Weighted sum of neighbor values for every region."""
        return self.to_sparse() @ np.asarray(values, dtype=np.float64)

    @property
    def s0(self):
        return float(sum(sum(w) for w in self.weights.values()))

    def subset(self, ids):
        """Restrict to ``ids`` (kept in the given order), dropping edges to others.

        Weights are reset to binary; standardize again afterwards.
        """
        keep = set(ids)
        missing = keep - set(self.ids)
        if missing:
            raise DataError(f"ids not in weights: {', '.join(sorted(missing)[:5])}")
        nbrs = {r: [s for s in self.neighbors[r] if s in keep] for r in ids}
        return SpatialWeights(ids, nbrs)

    def __eq__(self, other):
        return (
            isinstance(other, SpatialWeights)
            and self.ids == other.ids
            and self.neighbors == other.neighbors
            and self.weights == other.weights
        )

    def __repr__(self):
        return f"SpatialWeights(n={self.n}, standardization={self.standardization!r}, islands={len(self.islands)})"


def queen_weights(geometries, snap=DEFAULT_SNAP):
    """Regions are neighbors when they share at least one (snapped) vertex."""
    ids = [g.region_id for g in geometries]
    if len(set(ids)) != len(ids):
        raise DataError("region ids must be distinct")
    owners = defaultdict(set)
    for g in geometries:
        for x, y in g.vertices():
            owners[(round(x / snap), round(y / snap))].add(g.region_id)
    neighbors = defaultdict(set)
    for regions in owners.values():
        if len(regions) > 1:
            for r in regions:
                neighbors[r].update(regions - {r})
    w = SpatialWeights(ids, neighbors)
    if w.islands:
        logger.info("queen weights: %d island(s): %s", len(w.islands), ", ".join(w.islands[:10]))
    return w


def rook_weights(geometries, snap=DEFAULT_SNAP):
    """Regions are neighbors when they share a ring edge (same two snapped vertices)."""
    ids = [g.region_id for g in geometries]
    if len(set(ids)) != len(ids):
        raise DataError("region ids must be distinct")
    owners = defaultdict(set)
    for g in geometries:
        for polygon in g.polygons:
            for ring in polygon:
                pts = [(round(x / snap), round(y / snap)) for x, y in ring]
                for a, b in zip(pts, pts[1:]):
                    if a != b:
                        owners[(min(a, b), max(a, b))].add(g.region_id)
    neighbors = defaultdict(set)
    for regions in owners.values():
        for r in regions:
            neighbors[r].update(regions - {r})
    return SpatialWeights(ids, neighbors)


def standardize(w, mode="row"):
    """Return a copy with binary or row-standardized weights.

    Row mode divides each row by its sum; islands keep an empty row.
    """
    if mode not in STANDARDIZATIONS:
        raise DataError(f"standardization must be one of {STANDARDIZATIONS}, got {mode!r}")
    if mode == "binary":
        weights = {r: [1.0] * len(w.neighbors[r]) for r in w.ids}
    else:
        weights = {}
        for r in w.ids:
            k = len(w.neighbors[r])
            weights[r] = [1.0 / k] * k if k else []
    return SpatialWeights(w.ids, w.neighbors, weights, mode)


def drop_islands(w, values):
    """Remove neighborless regions from weights and values until none remain.

    ``values`` is aligned with ``w.ids`` along its first axis.
    """
    values = np.asarray(values)
    if values.shape[0] != w.n:
        raise DataError(f"values length {values.shape[0]} does not match {w.n} regions")
    mode = w.standardization
    keep = np.ones(w.n, dtype=bool)
    current = w
    while current.islands:
        gone = set(current.islands)
        logger.info("dropping %d island(s): %s", len(gone), ", ".join(sorted(gone)))
        keep &= np.array([r not in gone for r in w.ids])
        if not keep.any():
            raise DataError("every region is an island; nothing left to analyse")
        current = w.subset([r for r, k in zip(w.ids, keep) if k])
    if current is not w:
        current = standardize(current, mode)
    return current, values[keep]


# -- adjacency text format ------------------------------------------------------
#
#   <n>
#   <id> <k>
#   <neighbor ids, space separated>
#   ...


def write_gal(w, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{w.n}\n")
        for r in w.ids:
            fh.write(f"{r} {len(w.neighbors[r])}\n")
            fh.write(" ".join(w.neighbors[r]) + "\n")


def read_gal(path):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataError(f"{path}: empty adjacency file")
    header = lines[0].split()
    n = int(header[-1])
    ids, nbrs = [], {}
    cursor = 1
    for _ in range(n):
        try:
            rid, k = lines[cursor].split()
        except (IndexError, ValueError):
            raise DataError(f"{path}: malformed record at line {cursor + 1}") from None
        listed = lines[cursor + 1].split() if cursor + 1 < len(lines) else []
        if len(listed) != int(k):
            raise DataError(f"{path}: region {rid} declares {k} neighbors, lists {len(listed)}")
        ids.append(rid)
        nbrs[rid] = listed
        cursor += 2
    return SpatialWeights(ids, nbrs)
