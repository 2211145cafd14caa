import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qlspatial.lattice import Lattice, distance, site_coords


@pytest.mark.parametrize(
    "m, n, k, expected",
    [(4, 4, 1, (1, 1)), (4, 4, 5, (1, 2)), (4, 4, 4, (4, 1)), (3, 2, 6, (3, 2))],
)
def test_site_coords_columnwise(m, n, k, expected):
    assert site_coords(Lattice(m, n), k) == expected


@pytest.mark.parametrize("k", [0, 17, -1])
def test_site_coords_out_of_range(k):
    with pytest.raises(IndexError):
        Lattice(4, 4).site_coords(k)


def test_invalid_lattice():
    with pytest.raises(ValueError):
        Lattice(0, 3)
    with pytest.raises(ValueError):
        Lattice(2, 2, spacing=0)


def test_distance_examples():
    lat = Lattice(4, 4)
    assert distance(lat, 1, 2, 1) == 1.0
    diag = lat.site_index(2, 2)
    assert distance(lat, 1, diag, 2) == pytest.approx(math.sqrt(2), abs=1e-12)
    assert distance(lat, 1, diag, 1) == 2.0
    assert Lattice(4, 4, spacing=2.5).distance(1, 2, 1) == 2.5


def test_distance_invalid_index():
    with pytest.raises(IndexError):
        Lattice(2, 2).distance(1, 5)


def test_distance_matrix_matches_pairwise():
    lat = Lattice(3, 4)
    for p in (1, 2, 3):
        D = lat.distance_matrix(p)
        for i in range(1, lat.size + 1):
            for j in range(1, lat.size + 1):
                assert D[i - 1, j - 1] == pytest.approx(lat.distance(i, j, p), abs=1e-12)


lattices = st.builds(Lattice, st.integers(1, 8), st.integers(1, 8))


@given(lattices, st.data())
def test_l1_dominates_l2(lat, data):
    i = data.draw(st.integers(1, lat.size))
    j = data.draw(st.integers(1, lat.size))
    d1, d2 = lat.distance(i, j, 1), lat.distance(i, j, 2)
    assert d1 >= d2 - 1e-12
    (r1, c1), (r2, c2) = lat.site_coords(i), lat.site_coords(j)
    assert (abs(d1 - d2) < 1e-12) == (r1 == r2 or c1 == c2)


@given(lattices, st.data(), st.sampled_from([1, 2]))
def test_metric_axioms(lat, data, p):
    i, j, k = (data.draw(st.integers(1, lat.size)) for _ in range(3))
    dij = lat.distance(i, j, p)
    assert dij == lat.distance(j, i, p)
    assert dij >= 0 and (dij == 0) == (i == j)
    assert dij <= lat.distance(i, k, p) + lat.distance(k, j, p) + 1e-12


@given(lattices)
def test_index_roundtrip(lat):
    ks = [lat.site_index(*lat.site_coords(k)) for k in range(1, lat.size + 1)]
    assert ks == list(range(1, lat.size + 1))
    assert np.array_equal(lat.coords[0], [1, 1])
