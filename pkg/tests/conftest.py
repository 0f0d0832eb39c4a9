import numpy as np
import pytest

from mobility_change.spatial import RegionGeometry


def square(row, col, size=1.0):
    x0, y0 = col * size, row * size
    return [[(x0, y0), (x0 + size, y0), (x0 + size, y0 + size), (x0, y0 + size), (x0, y0)]]


def grid_geometries(rows, cols):
    return [RegionGeometry(f"r{r:02d}c{c:02d}", [square(r, c)]) for r in range(rows) for c in range(cols)]


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def grid10():
    return grid_geometries(10, 10)
