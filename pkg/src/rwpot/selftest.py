"""Fast invariant battery behind ``rwpot selftest``.

Each check is deterministic given the config seed.  Results carry a short
detail string but no timings, so reports are byte-stable.
"""
from __future__ import annotations

import math

import numpy as np

from .approx import ApproximantBundle, disjoint_paths
from .config import ExperimentConfig
from .costsolve import balance_defect, fpp_distance, solve_cost_field, travel_cost
from .disorder import DistributionSpec, dump_field, load_field, sample_field
from .errors import UnboundedComponent
from .estimate import RaySchedule, estimate_alpha
from .lattice import SiteSet, Window, has_hole
from .renorm import build_macro_map, micro_window_for, observ_checks


def _check(name, ok, detail=""):
    return {"check": name, "ok": bool(ok), "detail": str(detail)}


def _solvers(cfg):
    V = sample_field(DistributionSpec.uniform(0.5, 2.0), Window.box((0,) * cfg.d, 4), cfg.seed)
    tgt = SiteSet.from_sites(V.window, [(2,) + (0,) * (cfg.d - 1)])
    ref = solve_cost_field(V, tgt, method="direct")
    gaps = [float(np.max(np.abs(solve_cost_field(V, tgt, 1e-13, method=m).e - ref.e)))
            for m in ("gauss-seidel", "jacobi")]
    return [_check("solver_methods_agree", max(gaps) <= 1e-10, f"max gap {max(gaps):.2e}"),
            _check("balance_defect", balance_defect(V, ref) <= 1e-10, f"{balance_defect(V, ref):.2e}")]


def _triangle_and_fpp(cfg, rng):
    W = Window.box((0,) * cfg.d, 4)
    V = sample_field(cfg.spec, W, cfg.seed, 1)
    live = [x for x in W.sites() if math.isfinite(V[x])]
    bad_tri = bad_fpp = 0
    for _ in range(10):
        x, y, z = (live[int(rng.integers(len(live)))] for _ in range(3))
        axz, axy, ayz = (travel_cost(V, p, q) for p, q in ((x, z), (x, y), (y, z)))
        bad_tri += axz > axy + ayz + 1e-9
        f = fpp_distance(V, x)[W.index(z)]
        bad_fpp += axz < f - 1e-9
    return [_check("triangle_inequality", bad_tri == 0, f"{bad_tri} violations"),
            _check("cost_above_fpp", bad_fpp == 0, f"{bad_fpp} violations")]


def _paths(rng):
    bad = 0
    for d in (2, 3, 4):
        for _ in range(30):
            x = tuple(int(c) for c in rng.integers(-6, 7, size=d))
            fam = disjoint_paths(x)
            bad += bool(fam.check())
    return [_check("disjoint_paths", bad == 0, f"{bad} bad families")]


def _renorm(cfg, rng):
    out = []
    if cfg.M is None or cfg.N is None:
        return out
    mw = Window.box((0,) * cfg.d, 2)
    V = sample_field(cfg.spec, micro_window_for(mw, cfg.N), cfg.seed, 2)
    m1 = build_macro_map(V, cfg.M, cfg.N, mw)
    m2 = build_macro_map(V, cfg.M, cfg.N, mw)
    out.append(_check("renorm_deterministic", m1.fingerprint() == m2.fingerprint()))
    rep = observ_checks(m1, V, rng, samples=10)
    nviol = sum(rep["violations"].values())
    out.append(_check("island_geometry", nviol == 0, f"violations {rep['violations']}"))
    B = ApproximantBundle(V, m1)
    sites = list(Window.box((0,) * cfg.d, cfg.N).sites())
    bad = 0
    for _ in range(5):
        x, y = (sites[int(rng.integers(len(sites)))] for _ in range(2))
        try:
            h, a, u = B.hat_a(x, y), B.a(x, y), B.u(x) + B.u(y)
        except UnboundedComponent:
            continue
        bad += not (h <= a + 3e-12 and a <= h + u + 3e-12)
    out.append(_check("hat_a_sandwich", bad == 0, f"{bad} violations"))
    return out


def _estimators(cfg):
    sched = RaySchedule((1,) + (0,) * (cfg.d - 1), (2, 4), 3, 4)
    spec = DistributionSpec.uniform(0.0, 1.0)
    e1 = estimate_alpha(spec, sched, (0.0, 0.5, 1.0), seed=cfg.seed)
    e2 = estimate_alpha(spec, sched, (0.0, 0.5, 1.0), seed=cfg.seed)
    same = [r["value"] for r in e1.records] == [r["value"] for r in e2.records]
    mono = True
    for r in range(3):
        for n in (2, 4):
            vals = [next(q["value"] for q in e1.records if q["replica"] == r and q["n"] == n and q["lambda"] == lam)
                    for lam in (0.0, 0.5, 1.0)]
            mono &= vals[0] <= vals[1] <= vals[2]
    c = estimate_alpha(DistributionSpec.atom(0.3), sched, seed=cfg.seed)
    const = np.ptp(c.values(sched.direction, 0.0, 4)) == 0
    return [_check("estimator_deterministic", same), _check("lambda_monotone", mono),
            _check("constant_field_zero_spread", const)]


def _fields(cfg):
    W = Window.box((0,) * cfg.d, 5)
    V = sample_field(cfg.spec, W, cfg.seed, 3)
    sub = Window.box((1,) * cfg.d, 2)
    same = np.array_equal(V.restrict(sub).values, sample_field(cfg.spec, sub, cfg.seed, 3).values)
    back = load_field(dump_field(V))
    rt = np.array_equal(back.values, V.values)
    mask = ~W.edge_mask()
    mask[W.slices_of(Window.box((0,) * cfg.d, 1))] = False
    hole = has_hole(SiteSet(W, mask))[0]
    return [_check("subwindow_resampling", same), _check("field_roundtrip", rt),
            _check("hole_detection", hole)]


def run_selftest(cfg: ExperimentConfig) -> list:
    rng = np.random.default_rng(cfg.seed)
    results = []
    results += _solvers(cfg)
    results += _triangle_and_fpp(cfg, rng)
    results += _paths(rng)
    results += _renorm(cfg, rng)
    results += _estimators(cfg)
    results += _fields(cfg)
    return results
