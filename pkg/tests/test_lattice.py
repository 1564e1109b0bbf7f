import warnings

import numpy as np
import pytest

from rwpot.errors import ClippedBoundary, EmptySet, MarginViolation
from rwpot.lattice import (NN, STAR, LatticePath, SiteSet, Window, boundary, components, diameter,
                           has_hole, isoperimetric_check, neighbors, star_neighbors)

from helpers import grow_star_set
from oracles import bfs_components, flood_fill_holes


def test_neighbors_order_and_count():
    assert neighbors((0, 0)) == [(-1, 0), (0, -1), (0, 1), (1, 0)]
    n3 = neighbors((1, 1, 1))
    assert len(n3) == 6 and all(sum(abs(a - 1) for a in y) == 1 for y in n3)
    assert (1, 1, 1) not in n3


def test_star_neighbors():
    assert len(star_neighbors((0, 0))) == 8
    assert len(star_neighbors((0, 0, 0))) == 26
    assert set(neighbors((2, 3))) <= set(star_neighbors((2, 3)))


def test_window_indexing_roundtrip():
    W = Window((-2, 1), (3, 4))
    assert W.size == 6 * 4
    for k, x in enumerate(W.sites()):
        assert W.site(W.index(x)) == x
        assert W.flat_index(x) == k
    assert Window.from_json(W.to_json()) == W


def test_boundary_singleton_and_squares():
    W = Window.box((0, 0), 4)
    A = SiteSet.from_sites(W, [(0, 0)])
    assert boundary(A, "inner") == A
    assert set(boundary(A, "outer").sites()) == set(neighbors((0, 0)))
    sq2 = SiteSet.from_sites(W, [(0, 0), (0, 1), (1, 0), (1, 1)])
    assert boundary(sq2, "inner") == sq2
    sq3 = SiteSet.from_sites(W, [(a, b) for a in range(-1, 2) for b in range(-1, 2)])
    assert len(boundary(sq3, "star_outer")) == 16
    assert len(boundary(sq3, "outer")) == 12
    assert len(boundary(sq3, "star_inner")) == 8


def test_boundary_inner_outer_relations():
    rng = np.random.default_rng(1)
    W = Window.box((0, 0), 8)
    for _ in range(20):
        A = grow_star_set(rng, W, 30)
        for kind in ("inner", "star_inner"):
            assert boundary(A, kind).issubset(A)
        for kind in ("outer", "star_outer"):
            assert boundary(A, kind).isdisjoint(A)
        # A minus its inner boundary has no neighbour outside A
        core = A.difference(boundary(A, "inner"))
        for z in core.sites():
            assert all(y in A for y in neighbors(z))


def test_outer_boundary_clipping_warns():
    W = Window.box((0, 0), 2)
    A = SiteSet.from_sites(W, [(2, 0)])
    with pytest.warns(ClippedBoundary):
        out = boundary(A, "outer")
    assert set(out.sites()) == {(1, 0), (2, -1), (2, 1)}


def test_components_diagonal_pair_and_empty():
    W = Window.box((0, 0), 3)
    A = SiteSet.from_sites(W, [(0, 0), (1, 1)])
    assert len(components(A, NN)) == 2
    assert len(components(A, STAR)) == 1
    assert components(SiteSet.empty(W), NN) == []


def test_components_match_bfs_oracle():
    rng = np.random.default_rng(2)
    W = Window((0, 0), (19, 19))
    for p in (0.3, 0.45, 0.6):
        for _ in range(5):
            mask = rng.random(W.shape) < p
            A = SiteSet(W, mask)
            for star in (False, True):
                got = components(A, STAR if star else NN)
                ref = bfs_components(set(A.sites()), star)
                assert len(got) == len(ref)
                assert [set(c.sites()) for c in got] == sorted(ref, key=min)


def test_geometry_of_hole_free_star_sets():
    rng = np.random.default_rng(3)
    W = Window.box((0, 0), 9)
    for k in range(200):
        A = grow_star_set(rng, W, int(rng.integers(1, 40)))
        assert not has_hole(A)[0]
        assert len(components(boundary(A, "inner"), STAR)) == 1
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            assert len(components(boundary(A, "star_outer"), NN)) == 1


def test_has_hole_ring_and_solid():
    W = Window.box((0, 0), 3)
    ring = SiteSet.from_sites(W, [(a, b) for a in range(-1, 2) for b in range(-1, 2) if (a, b) != (0, 0)])
    flag, holes = has_hole(ring)
    assert flag and [set(h.sites()) for h in holes] == [{(0, 0)}]
    solid = ring.union(SiteSet.from_sites(W, [(0, 0)]))
    assert not has_hole(solid)[0]
    with pytest.raises(MarginViolation):
        has_hole(SiteSet.from_sites(W, [(3, 0)]))


def test_has_hole_matches_flood_fill():
    rng = np.random.default_rng(4)
    W = Window.box((0, 0), 7)
    for _ in range(60):
        ctr = W.coords()
        r2 = ctr[0] ** 2 + ctr[1] ** 2
        rin, rout = sorted(rng.uniform(0.5, 6.0, size=2))
        mask = (r2 >= rin ** 2) & (r2 <= rout ** 2) & (rng.random(W.shape) < 0.9)
        mask &= ~W.edge_mask()
        A = SiteSet(W, mask)
        flag, holes = has_hole(A)
        ref = flood_fill_holes(set(A.sites()), W.lo, W.hi)
        got = set().union(*[set(h.sites()) for h in holes]) if holes else set()
        assert got == ref and flag == bool(ref)


def test_isoperimetric_ratio():
    W = Window.box((0, 0), 6)
    assert isoperimetric_check(SiteSet.from_sites(W, [(0, 0)])) == 1.0
    for n in range(2, 7):
        sq = SiteSet.from_sites(W, [(a, b) for a in range(-3, -3 + n) for b in range(-3, -3 + n)])
        r = isoperimetric_check(sq)
        assert r == pytest.approx((4 * n - 4) ** 2 / n ** 2)
        assert r >= 4
    with pytest.raises(EmptySet):
        isoperimetric_check(SiteSet.empty(W))


def test_isoperimetric_cube_oracle():
    # constant calibrated as the minimum ratio over cubes of side 1..8, measured with the
    # function itself; every tested set must sit above it
    W = Window.box((0, 0), 9)
    cubes = [isoperimetric_check(SiteSet.from_sites(W, [(a, b) for a in range(k) for b in range(k)]))
             for k in range(1, 9)]
    floor = min(cubes)
    rng = np.random.default_rng(5)
    for _ in range(200):
        A = grow_star_set(rng, W, int(rng.integers(1, 50)))
        for comp in components(A, NN):
            assert isoperimetric_check(comp) >= floor - 1e-12


def test_path_validation_and_flags():
    p = LatticePath(((0, 0), (1, 0), (1, 1)))
    assert p.length == 2 and len(p) == 2 and p.is_simple()
    with pytest.raises(Exception):
        LatticePath(((0, 0), (1, 1)))
    assert LatticePath(((0, 0), (1, 1)), STAR).length == 1
    assert p.reversed().sites == ((1, 1), (1, 0), (0, 0))


def test_diameters():
    W = Window.box((0, 0), 5)
    A = SiteSet.from_sites(W, [(0, 0), (3, 1), (1, 4)])
    assert diameter(A, "linf") == 4
    assert diameter(A, "l1") == 5


def test_siteset_serialization_roundtrip():
    rng = np.random.default_rng(6)
    W = Window((-3, -2), (4, 5))
    A = SiteSet(W, rng.random(W.shape) < 0.4)
    assert SiteSet.from_rle(A.to_rle()) == A
    assert A.to_csv().count("\n") == len(A) + 1
