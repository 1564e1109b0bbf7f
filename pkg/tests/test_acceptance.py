"""Acceptance suite: one recorded PASS/FAIL line per criterion.

Statistical criteria use the fixed seed ACC_SEED; tolerances are pinned
below and are not tuned to the outcome.
"""
import math
import os
import warnings

import numpy as np

from rwpot.approx import ApproximantBundle, disjoint_paths
from rwpot.cli import SUBCOMMANDS, run
from rwpot.costsolve import fpp_distance, solve_cost_field, travel_cost
from rwpot.disorder import DistributionSpec, sample_field, z_field
from rwpot.errors import NoSpanningCluster, UnboundedComponent
from rwpot.estimate import (RaySchedule, default_fan, estimate_alpha, fan_estimate, ldp_panel, mean_stderr,
                            norm_diagnostics, rate_function)
from rwpot.lattice import NN, STAR, SiteSet, Window, boundary, components, has_hole, isoperimetric_check
from rwpot.renorm import build_macro_map, micro_window_for, observ_checks

from conftest import record
from helpers import grow_star_set
from oracles import brute_fpp, flood_fill_holes, path_sum_e

ACC_SEED = 20261016
TOL3 = 3e-12          # 3 * solver tolerance
MONO_TOL = 1e-10      # floating slack for exact per-replica monotonicity
LOG4 = math.log(4)


def field_dict(V):
    return {x: V[x] for x in V.window.sites()}


def l1(x):
    return sum(abs(c) for c in x)


# -- 1 --------------------------------------------------------------------------
def test_c01_oracle_equivalence():
    rng = np.random.default_rng(ACC_SEED)
    W = Window((0, 0), (4, 4))
    sites = list(W.sites())
    bound = math.exp(-30) + 1e-12
    worst = 0.0
    for k in range(50):
        V = sample_field(DistributionSpec.uniform(0.5, 2.0), W, ACC_SEED, k)
        x, y = (sites[i] for i in rng.choice(len(sites), 2, replace=False))
        e = solve_cost_field(V, SiteSet.from_sites(W, [y])).e_at(x)
        worst = max(worst, abs(e - path_sum_e(field_dict(V), x, {y}, 60)))
    ok = worst <= bound
    record(1, ok, f"50 instances on 5x5, max |e - path sum (L=60)| = {worst:.3e} <= {bound:.3e}")
    assert ok


# -- 2 --------------------------------------------------------------------------
def test_c02_fpp_exact():
    rng = np.random.default_rng(ACC_SEED + 2)
    W = Window((0, 0), (3, 3))
    mismatches = 0
    for k in range(25):
        V = sample_field(DistributionSpec.exponential(1.0, p_inf=0.15), W, ACC_SEED + 2, k)
        fd = field_dict(V)
        x = tuple(int(c) for c in rng.integers(0, 4, 2))
        d = fpp_distance(V, x)
        mismatches += sum(d[W.index(y)] != brute_fpp(fd, x, y) for y in W.sites())
    record(2, mismatches == 0, f"25 fields on 4x4, all 16 targets each, {mismatches} mismatches")
    assert mismatches == 0


# -- 3 --------------------------------------------------------------------------
def test_c03_zero_temperature():
    rng = np.random.default_rng(ACC_SEED + 3)
    W = Window.box((0, 0), 4)
    betas = (1, 2, 4, 8, 16)
    max_rise, max_gap, below = -math.inf, 0.0, 0
    for k in range(30):
        V = sample_field(DistributionSpec.uniform(0.5, 2.0), W, ACC_SEED + 3, k)
        while True:
            y = tuple(int(c) for c in rng.integers(-4, 5, 2))
            if 0 < l1(y) <= 4:
                break
        f = fpp_distance(V, (0, 0))[W.index(y)]
        vals = [travel_cost(V.scaled(b), (0, 0), y) / b for b in betas]
        max_rise = max(max_rise, max(b - a for a, b in zip(vals, vals[1:])))
        below += sum(v < f - 1e-9 for v in vals)
        max_gap = max(max_gap, vals[-1] - f)
    ok = max_rise <= 1e-9 and max_gap <= 0.5 and below == 0
    record(3, ok, f"30 instances on 9x9: max increase in beta {max_rise:.2e}, max gap at beta=16 "
                  f"{max_gap:.3f} <= 0.5, {below} values below fpp")
    assert ok


# -- 4 --------------------------------------------------------------------------
def _straight(x):
    pts = [(0, 0)]
    for axis in range(2):
        while pts[-1][axis] != x[axis]:
            q = list(pts[-1])
            q[axis] += 1 if x[axis] > q[axis] else -1
            pts.append(tuple(q))
    return pts


def test_c04_sandwich_and_subadditivity():
    rng = np.random.default_rng(ACC_SEED + 4)
    counts = {k: [0, 0] for k in ("triangleineq", "approxam1", "approxam2", "triangle_a", "triangle_a_m",
                                  "p_triangle", "path_bound")}

    def check(name, ok):
        counts[name][0] += 1
        counts[name][1] += not ok

    # relocated cost on infinity-free fields
    W = Window.box((0, 0), 10)
    for k in range(110):
        V = sample_field(DistributionSpec.uniform(0.2, 1.5), W, ACC_SEED + 4, k)
        z = z_field(V)
        B = ApproximantBundle(V)
        x, y, w = (tuple(int(c) for c in rng.integers(-4, 5, 2)) for _ in range(3))
        if x == y:
            continue
        am, a = B.a_m(x, y), B.a(x, y)
        check("approxam1", am <= a + z[W.index(x)] + 2 * LOG4 + B.u_m(y) + TOL3)
        check("approxam2", a <= am + V[x] + z[W.index(y)] + 2 * LOG4 + TOL3)
        check("triangle_a", B.a(x, w) <= B.a(x, y) + B.a(y, w) + TOL3)
        check("triangle_a_m", B.a_m(x, w) <= B.a_m(x, y) + B.a_m(y, w) + TOL3)

    # renormalized costs
    spec = DistributionSpec.uniform(0.0, 1.0, p_inf=0.22)
    mw = Window.box((0, 0), 3)
    k = 0
    while min(counts[n][0] for n in ("triangleineq", "p_triangle", "path_bound")) < 100 and k < 400:
        V = sample_field(spec, micro_window_for(mw, 4), ACC_SEED + 40, k)
        k += 1
        try:
            macro = build_macro_map(V, 1.0, 4, mw)
        except NoSpanningCluster:
            continue
        B = ApproximantBundle(V, macro)
        sites = [s for s in Window.box((0, 0), 9).sites() if math.isfinite(V[s])]
        for _ in range(4):
            x, y, w = (sites[int(i)] for i in rng.integers(len(sites), size=3))
            try:
                h, a = B.hat_a(x, y), B.a(x, y)
                check("triangleineq", h <= a + TOL3 and a <= h + B.u(x) + B.u(y) + TOL3)
                check("p_triangle", B.hat_a(x, w) <= h + B.v(y) + B.hat_a(y, w) + TOL3)
            except UnboundedComponent:
                pass
        x = (int(rng.integers(-9, 10)), int(rng.integers(-9, 10)))
        try:
            check("path_bound", B.hat_a((0, 0), x) <= sum(B.v(p) for p in _straight(x)) + TOL3)
        except UnboundedComponent:
            pass
    ok = all(n >= 100 and bad == 0 for n, bad in counts.values())
    record(4, ok, ", ".join(f"{k} {bad}/{n}" for k, (n, bad) in counts.items()) + " (violations/instances)")
    assert ok


# -- 5 --------------------------------------------------------------------------
def test_c05_disjoint_paths():
    rng = np.random.default_rng(ACC_SEED + 5)
    bad, total = 0, 0
    for d in (2, 3, 4):
        for _ in range(500):
            x = tuple(int(c) for c in rng.integers(-8, 9, d))
            if not any(x):
                x = (1,) + x[1:]
            fam = disjoint_paths(x)
            total += 1
            ok = fam.check() == [] and len(fam.paths) == 2 * d
            ok &= max(p.length for p in fam.paths) <= l1(x) + 8
            bad += not ok
    record(5, bad == 0, f"{total} families in d=2,3,4: {bad} violations")
    assert bad == 0


# -- 6 --------------------------------------------------------------------------
def test_c06_discrete_geometry():
    rng = np.random.default_rng(ACC_SEED + 6)
    W = Window.box((0, 0), 9)
    floor = min(isoperimetric_check(SiteSet.from_sites(W, [(a, b) for a in range(k) for b in range(k)]))
                for k in range(1, 9))
    geom_bad = iso_bad = hole_bad = 0
    for _ in range(200):
        A = grow_star_set(rng, W, int(rng.integers(1, 60)))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            geom_bad += has_hole(A)[0]
            geom_bad += len(components(boundary(A, "inner"), STAR)) != 1
            geom_bad += len(components(boundary(A, "star_outer"), NN)) != 1
        iso_bad += sum(isoperimetric_check(c) < floor - 1e-12 for c in components(A, NN))
        # punch random holes and compare with the flood fill
        mask = A.mask & (rng.random(W.shape) < 0.85)
        B = SiteSet(W, mask)
        flag, holes = has_hole(B)
        got = set().union(*[set(h.sites()) for h in holes]) if holes else set()
        ref = flood_fill_holes(set(B.sites()), W.lo, W.hi)
        hole_bad += got != ref or flag != bool(ref)
    ok = geom_bad == iso_bad == hole_bad == 0
    record(6, ok, f"200 sets: boundary-connectivity {geom_bad}, has_hole vs flood fill {hole_bad}, "
                  f"isoperimetric floor {floor:g} {iso_bad} violations")
    assert ok


# -- 7 --------------------------------------------------------------------------
def test_c07_renormalization():
    spec = DistributionSpec.uniform(0.0, 1.0, p_inf=0.05)
    mw = Window.box((0, 0), 3)
    rng = np.random.default_rng(ACC_SEED + 7)
    violations = {str(k): 0 for k in range(1, 6)}
    tested = {str(k): 0 for k in range(1, 6)}
    fractions = {}
    det_bad = 0
    for N, count in ((4, 34), (6, 33), (10, 33)):
        fr = []
        for r in range(count):
            V = sample_field(spec, micro_window_for(mw, N), ACC_SEED + 7, 1000 * N + r)
            try:
                macro = build_macro_map(V, 1.0, N, mw)
            except NoSpanningCluster:
                fr.append(0.0)
                continue
            det_bad += macro.fingerprint() != build_macro_map(V, 1.0, N, mw).fingerprint()
            fr.append(macro.good_fraction)
            rep = observ_checks(macro, V, rng, samples=10)
            for k in violations:
                violations[k] += rep["violations"][k]
                tested[k] += rep["tested"][k]
        fractions[N] = mean_stderr(fr)
    Ns = sorted(fractions)
    trend = all(fractions[b][0] >= fractions[a][0] - 2 * math.hypot(fractions[a][1], fractions[b][1])
                for a, b in zip(Ns, Ns[1:]))
    ok = trend and det_bad == 0 and all(v == 0 for v in violations.values())
    fr_txt = ", ".join(f"N={N}: {m:.3f}+-{s:.3f}" for N, (m, s) in fractions.items())
    record(7, ok, f"100 maps, observ violations {violations} over tested {tested}, nondeterministic {det_bad}, "
                  f"good fraction {fr_txt}")
    assert ok


# -- 8 --------------------------------------------------------------------------
def test_c08_norm_lower_bound():
    spec = DistributionSpec.exponential(1.0)
    est = estimate_alpha(spec, RaySchedule((1, 0), (5, 10, 20, 40), 50, 10), seed=ACC_SEED + 8, workers=4)
    m, s = est.alpha((1, 0))
    bound = -math.log(spec.laplace())
    ok = m >= bound - 2 * s
    record(8, ok, f"alpha(e1) at n=40 = {m:.4f} +- {s:.4f} >= -log E exp(-V) = {bound:.4f} (2 stderr)")
    assert ok


# -- 9 --------------------------------------------------------------------------
def test_c09_lambda_structure():
    lams = (0.0, 0.25, 0.5, 1.0, 2.0, 4.0)
    est = estimate_alpha(DistributionSpec.uniform(0.0, 1.0), RaySchedule((1, 0), (10, 20), 30, 10), lams,
                         seed=ACC_SEED + 9, workers=4)
    table = np.array([est.values((1, 0), l, 20) for l in lams])
    min_step = float(np.diff(table, axis=0).min())
    slopes = np.diff(table, axis=0) / np.diff(lams)[:, None]
    second = np.diff(slopes, axis=0)
    conc = [mean_stderr(row) for row in second]
    conc_ok = all(m <= 2 * s + MONO_TOL for m, s in conc)
    I0 = rate_function(DistributionSpec.uniform(0.0, 1.0), (0.0, 0.0), list(lams), (4,), 2).I
    div = rate_function(DistributionSpec.uniform(0.0, 1.0), (0.75, 0.5), list(lams), (4,), 2).divergent
    ok = min_step >= -MONO_TOL and conc_ok and I0 == 0.0 and math.copysign(1.0, I0) > 0 and div
    record(9, ok, f"min per-replica increment {min_step:.3e}, max mean second slope difference "
                  f"{max(m for m, _ in conc):.3e}, I(0) = {I0}, divergence flag {div}")
    assert ok


# -- 10 -------------------------------------------------------------------------
def test_c10_partition_function():
    spec = DistributionSpec(atoms=((0.0, 0.5),), continuous=({"kind": "uniform", "a": 0.0, "b": 1.0,
                                                              "weight": 0.5},))
    out = ldp_panel(spec, (0.0, 0.0), 1.0, (10, 20, 40), 30, seed=ACC_SEED + 10, workers=4)
    rows = out["rows"]
    z = [(r["logZ_rate_mean"], r["logZ_rate_stderr"]) for r in rows]
    trend = all(b[0] <= a[0] + 2 * math.hypot(a[1], b[1]) for a, b in zip(z, z[1:]))
    ok = trend and all(m >= 0 for m, _ in z)
    record(10, ok, "-(1/n) log Z over n=10,20,40 (each step non-increasing within 2 joint stderr): "
           + ", ".join(f"{m:.4f}+-{s:.4f}" for m, s in z))
    assert ok


# -- 11 -------------------------------------------------------------------------
def test_c11_ldp_panel():
    spec = DistributionSpec.uniform(0.0, 1.0)
    ns = (10, 20, 40)
    origin = ldp_panel(spec, (0.0, 0.0), 1.0, ns, 10, seed=ACC_SEED + 11, workers=4)
    max_rate0 = float(np.abs(origin["per_replica"][:, :, 1]).max())
    far = ldp_panel(spec, (1.5, 0.0), 0.25, ns, 10, seed=ACC_SEED + 11, workers=4)
    max_p_far = float(far["per_replica"][:, :, 0].max())
    mid = ldp_panel(spec, (0.5, 0.0), 0.25, ns, 30, seed=ACC_SEED + 11, workers=4)
    rates = [(r["rate_mean"], r["rate_stderr"]) for r in mid["rows"]]
    trend = all(b[0] <= a[0] + 2 * math.hypot(a[1], b[1]) for a, b in zip(rates, rates[1:]))
    ok = max_rate0 <= 1e-9 and max_p_far == 0.0 and trend
    record(11, ok, f"rate at x=0 (r=1) max {max_rate0:.1e}, max probability at |x|_1 > 1 + r {max_p_far}, "
                   "rates at (0.5,0): " + ", ".join(f"{m:.4f}+-{s:.4f}" for m, s in rates))
    assert ok


# -- 12 -------------------------------------------------------------------------
def test_c12_norm_diagnostics():
    spec = DistributionSpec.uniform(0.0, 1.0)
    seed = ACC_SEED + 12
    est = fan_estimate(spec, default_fan(2), (5, 10, 20), 30, seed=seed, workers=4)
    homo = fan_estimate(spec, [(2, 0), (0, 2), (2, 2), (-2, 0)], (5, 10), 30, seed=seed, workers=4)
    rows = norm_diagnostics(est, homogeneity=homo)
    kinds = {}
    for r in rows:
        n_ok = kinds.setdefault(r["check"], [0, 0])
        n_ok[0] += 1
        n_ok[1] += r["ok"]
    failed = [(r["check"], r["x"], r["y"], round(r["value"], 4), round(r["band"], 4)) for r in rows if not r["ok"]]
    ok = not failed and set(kinds) == {"symmetry", "triangle", "homogeneity"}
    record(12, ok, ", ".join(f"{k} {p}/{n}" for k, (n, p) in kinds.items()) + " passed"
           + (f"; failures {failed}" if failed else ""))
    assert ok


# -- 13 -------------------------------------------------------------------------
def _snapshot(path):
    out = {}
    for name in sorted(os.listdir(path)):
        with open(os.path.join(path, name), "rb") as fh:
            out[name] = fh.read()
    return out


def test_c13_cli_determinism(tmp_path, capsys):
    differing = []
    codes = []
    for name in SUBCOMMANDS:
        snaps = []
        for tag, workers in (("a", "1"), ("b", "1"), ("c", "2")):
            out = tmp_path / f"{name}_{tag}"
            codes.append(run([name, "--out", str(out), "--workers", workers]))
            snaps.append(_snapshot(out))
        if not (snaps[0] == snaps[1] == snaps[2]):
            differing.append(name)
    capsys.readouterr()
    ok = not differing and all(c == 0 for c in codes)
    record(13, ok, f"{len(SUBCOMMANDS)} subcommands x (2 runs at 1 worker + 1 run at 2 workers): "
                   f"differing {differing}, nonzero exits {sum(c != 0 for c in codes)}")
    assert ok
