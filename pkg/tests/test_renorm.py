import math

import numpy as np
import pytest

from rwpot.disorder import DistributionSpec, PotentialField, sample_field
from rwpot.errors import NoSpanningCluster, UnboundedComponent, ValidationError, WindowTooSmall
from rwpot.lattice import LatticePath, Window
from rwpot.renorm import (big_box, box, build_macro_map, classify_box, classify_boxes, closure_size_histogram,
                          component_sets, delta_sets, escape_check, macro_index, micro_window_for, observ_checks)

N = 4


def field_on(mw, fill):
    W = micro_window_for(mw, N)
    return W, np.full(W.shape, fill, dtype=float)


def test_boxes_partition_the_lattice():
    for x in Window.box((0, 0), 20).sites():
        i = macro_index(x, N)
        assert box(i, N).contains(x)
    assert big_box((1, -1), N) == Window.box((9, -9), 6)


def test_all_healthy_box_is_good():
    W, base = field_on(Window.box((0, 0), 0), 0.5)
    rep = classify_box(PotentialField.from_array(W, base), 1.0, N, (0, 0))
    assert rep.good and len(rep.crossing) == 13 ** 2


def test_all_infinite_box_is_bad():
    W, base = field_on(Window.box((0, 0), 0), math.inf)
    assert not classify_box(PotentialField.from_array(W, base), 1.0, N, (0, 0)).good


def test_planted_livable_blob_makes_box_bad():
    W, base = field_on(Window.box((0, 0), 0), 0.5)
    base[W.slices_of(Window.box((0, 0), 2))] = math.inf
    base[W.slices_of(Window.box((0, 0), 1))] = 2.0
    rep = classify_box(PotentialField.from_array(W, base), 1.0, N, (0, 0))
    assert not rep.good and "diameter" in rep.reason
    # a single isolated livable site has diameter 0 <= N/4
    base[W.slices_of(Window.box((0, 0), 1))] = math.inf
    base[W.index((0, 0))] = 2.0
    assert classify_box(PotentialField.from_array(W, base), 1.0, N, (0, 0)).good


def test_window_and_parameter_errors():
    W, base = field_on(Window.box((0, 0), 0), 0.5)
    V = PotentialField.from_array(W, base)
    with pytest.raises(WindowTooSmall):
        classify_box(V, 1.0, N, (1, 0))
    with pytest.raises(ValidationError):
        classify_boxes(V, 1.0, 3)


def test_cluster_proxy_all_good_and_all_bad():
    mw = Window.box((0, 0), 2)
    W, base = field_on(mw, 0.5)
    macro = build_macro_map(PotentialField.from_array(W, base), 1.0, N, mw)
    assert macro.c_inf.all() and macro.multiplicity == 1
    C, Cbar = component_sets(macro, (1, 1))
    assert not C and set(Cbar.sites()) == {(1, 1)}
    dprime, dg = delta_sets(macro, (1, 1))
    assert dg == macro.cc((1, 1)).reframe(W)
    W, base = field_on(mw, math.inf)
    with pytest.raises(NoSpanningCluster):
        build_macro_map(PotentialField.from_array(W, base), 1.0, N, mw)


def plant_blob(W, base, centre):
    # an enclosed livable 3x3 blob: the box is bad, its neighbours' enlarged boxes never see it
    base[W.slices_of(Window.box(centre, 2))] = math.inf
    base[W.slices_of(Window.box(centre, 1))] = 2.0


def test_single_bad_box_island():
    mw = Window.box((0, 0), 2)
    W, base = field_on(mw, 0.5)
    plant_blob(W, base, (0, 0))
    macro = build_macro_map(PotentialField.from_array(W, base), 1.0, N, mw)
    assert not macro.is_good((0, 0))
    C, Cbar = component_sets(macro, (0, 0))
    assert set(C.sites()) == {(0, 0)}
    assert set(Cbar.sites()) == set(Window.box((0, 0), 1).sites())
    dprime, dg = delta_sets(macro, (0, 0))
    assert len(dprime) == Window.box((0, 0), 9 + 6).size
    assert not (dg.mask & ~np.isfinite(base)).any()
    assert all(macro.is_good(j) for j in mw.sites() if j != (0, 0))
    # a straight path from the box edge leaving Delta' meets Delta^g
    path = LatticePath(tuple((k, 0) for k in range(3, 17)))
    assert escape_check(macro, path, (3, 0))
    assert closure_size_histogram(macro)[9] == 1


def test_unbounded_island_is_flagged():
    mw = Window.box((0, 0), 2)
    W, base = field_on(mw, 0.5)
    plant_blob(W, base, (18, 0))
    macro = build_macro_map(PotentialField.from_array(W, base), 1.0, N, mw)
    with pytest.raises(UnboundedComponent):
        component_sets(macro, (2, 0))


def test_observ_facts_on_sampled_fields():
    mw = Window.box((0, 0), 4)
    rng = np.random.default_rng(0)
    tested = {}
    for k in range(6):
        V = sample_field(DistributionSpec.uniform(0.0, 1.0, p_inf=0.2), micro_window_for(mw, N), k)
        try:
            macro = build_macro_map(V, 1.0, N, mw)
        except NoSpanningCluster:
            continue
        rep = observ_checks(macro, V, rng, samples=30)
        assert all(v == 0 for v in rep["violations"].values()), rep
        for key, v in rep["tested"].items():
            tested[key] = tested.get(key, 0) + v
    assert all(tested.get(k, 0) > 0 for k in "12345"), tested


def test_deterministic():
    mw = Window.box((0, 0), 3)
    V = sample_field(DistributionSpec.uniform(0.0, 1.0, p_inf=0.1), micro_window_for(mw, N), 4)
    a = build_macro_map(V, 1.0, N, mw)
    b = build_macro_map(V, 1.0, N, mw)
    assert a.fingerprint() == b.fingerprint()
    assert a.label_grid_csv() == b.label_grid_csv()
    assert a.summary() == b.summary()
