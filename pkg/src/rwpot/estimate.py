"""Monte Carlo estimators over disorder replicas.

Every replica is a field sampled from ``(seed, replica)``; all lambda values
of a sweep reuse the same fields, only shifted.  Replicas can be spread over
worker processes, and results are always reduced in replica order, so
reports do not depend on the number of workers.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .approx import ApproximantBundle
from .costsolve import (DEFAULT_TOL, endpoint_measure, hyperplane_cost, ldp_probability,
                        solve_cost_field, time_windowed_field)
from .disorder import INF, DistributionSpec, PotentialField, sample_field
from .errors import DegenerateNorm, UnboundedComponent, ValidationError, WindowTooSmall
from .lattice import SiteSet, Window
from .renorm import build_macro_map, macro_index, micro_window_for

COST_KINDS = ("a", "a_m", "hat_a")


def run_replicas(fn, tasks: list, workers: int = 1) -> list:
    """Apply ``fn`` to each task, in order; ``workers > 1`` uses processes."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def mean_stderr(values) -> tuple:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return math.nan, math.nan
    if not np.all(np.isfinite(v)):
        return float(np.mean(v)), INF
    if v.size == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def default_fan(d: int) -> list:
    """16 primitive directions in d = 2 (by angle); axes and diagonals otherwise."""
    if d == 2:
        vecs = [(a, b) for a in range(-2, 3) for b in range(-2, 3)
                if (a, b) != (0, 0) and math.gcd(a, b) == 1]
        return sorted(vecs, key=lambda v: math.atan2(v[1], v[0]) % (2 * math.pi))
    out = []
    for axis in range(d):
        for s in (1, -1):
            v = [0] * d
            v[axis] = s
            out.append(tuple(v))
    import itertools

    out.extend(itertools.product((1, -1), repeat=d))
    return out


@dataclass(frozen=True)
class RaySchedule:
    direction: tuple
    ns: tuple
    replicas: int
    margin: int = 10

    def __post_init__(self):
        object.__setattr__(self, "direction", tuple(int(c) for c in self.direction))
        object.__setattr__(self, "ns", tuple(int(n) for n in self.ns))
        if not any(self.direction):
            raise ValidationError("direction must be nonzero")
        if not self.ns or any(n <= 0 for n in self.ns) or list(self.ns) != sorted(set(self.ns)):
            raise ValidationError("ns must be a strictly increasing list of positive integers")
        if self.replicas < 1 or self.margin < 1:
            raise ValidationError("need at least one replica and a positive margin")

    def window(self, scale: int = 1) -> Window:
        far = [self.ns[-1] * c for c in self.direction]
        m = self.margin * scale
        return Window(tuple(min(0, f) - m for f in far), tuple(max(0, f) + m for f in far))


@dataclass
class NormEstimate:
    """Per-(direction, lambda, n) statistics of cost(0, n x) / n."""

    kind: str
    records: list = field(default_factory=list)

    def values(self, direction, lam, n) -> np.ndarray:
        direction = tuple(direction)
        return np.array([r["value"] for r in self.records
                         if r["direction"] == direction and r["lambda"] == lam and r["n"] == n])

    def totals(self, direction, lam, n) -> np.ndarray:
        return self.values(direction, lam, n) * n

    def directions(self) -> list:
        return sorted({r["direction"] for r in self.records})

    def lambdas(self) -> list:
        return sorted({r["lambda"] for r in self.records})

    def ns(self) -> list:
        return sorted({r["n"] for r in self.records})

    def stat(self, direction, lam, n) -> tuple:
        return mean_stderr(self.values(direction, lam, n))

    def alpha(self, direction, lam=0.0) -> tuple:
        """Largest-n mean and its standard error."""
        return self.stat(direction, lam, self.ns()[-1])

    def subadditivity_diagnostic(self, direction, lam=0.0) -> list:
        """E cost(0, 2n x) <= 2 E cost(0, n x) + 2 stderr for each n with 2n scheduled."""
        ns = self.ns()
        out = []
        for n in ns:
            if 2 * n in ns:
                m1, s1 = mean_stderr(self.totals(direction, lam, n))
                m2, s2 = mean_stderr(self.totals(direction, lam, 2 * n))
                band = 2 * math.hypot(2 * s1, s2)
                out.append({"n": n, "lhs": m2, "rhs": 2 * m1, "band": band, "ok": m2 <= 2 * m1 + band})
        return out

    def summary_rows(self) -> list:
        rows = []
        for direction in self.directions():
            for lam in self.lambdas():
                for n in self.ns():
                    vals = self.values(direction, lam, n)
                    if vals.size == 0:
                        continue
                    m, s = mean_stderr(vals)
                    rows.append({"direction": direction, "lambda": lam, "n": n, "mean": m,
                                 "stderr": s, "replicas": int(vals.size)})
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["direction", "lambda", "n", "replica", "value"])
        for r in self.records:
            w.writerow([" ".join(map(str, r["direction"])), repr(r["lambda"]), r["n"],
                        r["replica"], repr(r["value"])])
        return buf.getvalue()


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else repr(float(v))


# -- replica workers (module level so that they pickle) ---------------------
@dataclass(frozen=True)
class _RayTask:
    spec: DistributionSpec
    schedule: RaySchedule
    lambdas: tuple
    kind: str
    seed: int
    replica: int
    M: float | None
    N: int | None
    tol: float


def _padded_window(task: _RayTask, scale: int) -> tuple:
    W = task.schedule.window(scale)
    if task.kind != "hat_a":
        return W, None
    # boxes meeting W, plus two layers so that islands near the ray can close
    mw = Window(macro_index(W.lo, task.N), macro_index(W.hi, task.N)).expand(2)
    return micro_window_for(mw, task.N), mw


def _ray_replica(task: _RayTask) -> list:
    for scale in (1, 2):
        W, mw = _padded_window(task, scale)
        base = sample_field(task.spec, W, task.seed, task.replica)
        macro = build_macro_map(base, task.M, task.N, mw) if task.kind == "hat_a" else None
        out = []
        try:
            for lam in task.lambdas:
                B = ApproximantBundle(base.shifted(lam), macro, task.tol)
                zero = (0,) * base.d
                for n in task.schedule.ns:
                    y = tuple(n * c for c in task.schedule.direction)
                    if task.kind == "a":
                        c = B.a(zero, y)
                    elif task.kind == "a_m":
                        c = B.a_m(zero, y)
                    else:
                        c = B.hat_a(zero, y)
                    out.append({"direction": task.schedule.direction, "lambda": float(lam), "n": n,
                                "replica": task.replica, "value": c / n})
            return out
        except UnboundedComponent:
            if scale == 2:
                raise
    raise AssertionError("unreachable")


def estimate_alpha(spec: DistributionSpec, schedule: RaySchedule, lambdas=(0.0,), kind: str = "a",
                   seed: int = 0, M: float | None = None, N: int | None = None,
                   tol: float = DEFAULT_TOL, workers: int = 1, first_replica: int = 0) -> NormEstimate:
    """Per replica and n, the cost from 0 to n x divided by n.

    ``kind`` selects a, a_m or hat_a.  hat_a needs ``M`` and ``N``; an
    island reaching the macro window edge triggers one retry on a window
    with doubled margin.
    """
    if kind not in COST_KINDS:
        raise ValidationError(f"unknown cost kind {kind!r}")
    if kind == "hat_a" and (M is None or N is None):
        raise ValidationError("hat_a needs M and N")
    lambdas = tuple(float(l) for l in lambdas)
    if any(l < 0 for l in lambdas):
        raise ValidationError("lambda must be nonnegative")
    tasks = [_RayTask(spec, schedule, lambdas, kind, seed, first_replica + r, M, N, tol)
             for r in range(schedule.replicas)]
    est = NormEstimate(kind)
    for recs in run_replicas(_ray_replica, tasks, workers):
        est.records.extend(recs)
    return est


# -- norms, duals and the rate function ------------------------------------
@dataclass
class FanNorm:
    """A norm known on a fan of directions, extended by positive homogeneity.

    In d = 2 the extension is the gauge of the polygon with vertices
    y_k / alpha(y_k).
    """

    fan: list
    alphas: list
    stderrs: list | None = None

    def __post_init__(self):
        self.fan = [tuple(int(c) for c in y) for y in self.fan]
        self.alphas = [float(a) for a in self.alphas]
        if self.stderrs is None:
            self.stderrs = [0.0] * len(self.fan)
        if self.d == 2:
            order = sorted(range(len(self.fan)), key=lambda k: math.atan2(self.fan[k][1], self.fan[k][0]) % (2 * math.pi))
            self.fan = [self.fan[k] for k in order]
            self.alphas = [self.alphas[k] for k in order]
            self.stderrs = [self.stderrs[k] for k in order]

    @property
    def d(self) -> int:
        return len(self.fan[0])

    def vertices(self) -> np.ndarray:
        return np.array([np.array(y) / a for y, a in zip(self.fan, self.alphas)])

    def __call__(self, p) -> float:
        p = np.asarray(p, dtype=np.float64)
        if not np.any(p):
            return 0.0
        if self.d != 2:
            raise ValidationError("fan interpolation is implemented for d = 2 only")
        ang = math.atan2(p[1], p[0]) % (2 * math.pi)
        angs = [math.atan2(y[1], y[0]) % (2 * math.pi) for y in self.fan]
        k = len(angs) - 1
        for j in range(len(angs)):
            if angs[j] <= ang:
                k = j
        y1, y2 = np.array(self.fan[k]), np.array(self.fan[(k + 1) % len(self.fan)])
        c = np.linalg.solve(np.column_stack([y1, y2]), p)
        return float(c[0] * self.alphas[k] + c[1] * self.alphas[(k + 1) % len(self.fan)])

    def gauge_grid(self, P: np.ndarray) -> np.ndarray:
        """Vectorized evaluation on points of shape (..., 2)."""
        flat = P.reshape(-1, 2)
        out = np.zeros(len(flat))
        angs = np.array([math.atan2(y[1], y[0]) % (2 * math.pi) for y in self.fan])
        pa = np.arctan2(flat[:, 1], flat[:, 0]) % (2 * math.pi)
        k = np.searchsorted(angs, pa, side="right") - 1
        k[k < 0] = len(angs) - 1
        for j in range(len(angs)):
            sel = k == j
            if not sel.any():
                continue
            y1, y2 = np.array(self.fan[j]), np.array(self.fan[(j + 1) % len(angs)])
            c = np.linalg.solve(np.column_stack([y1, y2]), flat[sel].T)
            out[sel] = c[0] * self.alphas[j] + c[1] * self.alphas[(j + 1) % len(angs)]
        return out.reshape(P.shape[:-1])


def dual_norm(norm: FanNorm, x) -> float:
    """sup over the fan of x . y / alpha(y)."""
    for a, s in zip(norm.alphas, norm.stderrs):
        if a <= 2 * s or a <= 0:
            raise DegenerateNorm("a fan value is not positive within its uncertainty")
    x = np.asarray(x, dtype=np.float64)
    return float(max(np.dot(x, y) / a for y, a in zip(norm.fan, norm.alphas)))


def fan_norm_from_estimate(est: NormEstimate, lam: float = 0.0) -> FanNorm:
    fan = est.directions()
    stats = [est.alpha(y, lam) for y in fan]
    return FanNorm(fan, [m for m, _ in stats], [s for _, s in stats])


def primitive(x) -> tuple:
    """Write a rational vector as s * u, u a primitive integer vector, s > 0 rational."""
    fr = [Fraction(c).limit_denominator(10 ** 6) for c in x]
    den = math.lcm(*[f.denominator for f in fr])
    ints = [int(f * den) for f in fr]
    g = math.gcd(*ints)
    u = tuple(i // g for i in ints)
    return Fraction(g, den), u


@dataclass
class RateCurve:
    x: tuple
    lambdas: list
    alphas: list
    stderrs: list
    I: float
    argmax: float
    divergent: bool = False
    per_replica: np.ndarray | None = field(default=None, repr=False)
    refined: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lambda", "alpha", "stderr", "alpha_minus_lambda"])
        for lam, a, s in zip(self.lambdas, self.alphas, self.stderrs):
            w.writerow([repr(lam), _fmt(a), _fmt(s), _fmt(a - lam)])
        return buf.getvalue()


def rate_function(spec: DistributionSpec, x, lambdas, schedule_ns, replicas: int, seed: int = 0,
                  margin: int = 10, kind: str = "a", M=None, N=None, refine: int = 20,
                  tol: float = DEFAULT_TOL, workers: int = 1) -> RateCurve:
    """I(x) = max over the lambda grid of alpha_lambda(x) - lambda, refined by ternary search.

    alpha_lambda(x) is taken as s * (mean cost(0, n u) / n) at the largest n,
    where x = s u with u a primitive lattice vector.
    """
    lambdas = [float(l) for l in lambdas]
    if not lambdas or lambdas != sorted(lambdas) or lambdas[0] < 0:
        raise ValidationError("lambda grid must be sorted and nonnegative")
    x = tuple(float(c) for c in x)
    d = len(x)
    l1 = sum(abs(c) for c in x)
    if l1 > 1 + 1e-12:
        return RateCurve(x, lambdas, [INF] * len(lambdas), [0.0] * len(lambdas), INF, math.nan, True)
    if l1 == 0:
        alphas = [0.0] * len(lambdas)
        vals = [-l for l in lambdas]
        k = int(np.argmax(vals))
        return RateCurve(x, lambdas, alphas, [0.0] * len(lambdas), vals[k] + 0.0, lambdas[k])
    s, u = primitive(x)
    sched = RaySchedule(u, tuple(schedule_ns), replicas, margin)
    nmax = sched.ns[-1]

    def curve(lams):
        est = estimate_alpha(spec, sched, lams, kind, seed, M, N, tol, workers)
        per = np.array([[v for v in est.values(u, l, nmax)] for l in lams]) * float(s)
        return est, per

    _, per = curve(lambdas)
    means = per.mean(axis=1)
    ses = per.std(axis=1, ddof=1) / math.sqrt(per.shape[1]) if per.shape[1] > 1 else np.zeros(len(lambdas))
    g = means - np.array(lambdas)
    k = int(np.argmax(g))
    best, best_l = float(g[k]), lambdas[k]
    refined = []
    if refine and len(lambdas) > 1:
        lo = lambdas[max(k - 1, 0)]
        hi = lambdas[min(k + 1, len(lambdas) - 1)]
        cache = {}

        def gval(lam):
            if lam not in cache:
                _, p = curve([lam])
                cache[lam] = float(p.mean()) - lam
                refined.append((lam, cache[lam] + lam))
            return cache[lam]

        for _ in range(refine):
            if hi - lo < 1e-3:
                break
            m1, m2 = lo + (hi - lo) / 3, hi - (hi - lo) / 3
            if gval(m1) < gval(m2):
                lo = m1
            else:
                hi = m2
        for lam, val in cache.items():
            if val > best:
                best, best_l = val, lam
    return RateCurve(x, lambdas, means.tolist(), ses.tolist(), best, best_l, False, per, refined)


# -- shapes ------------------------------------------------------------------
@dataclass
class ShapeRaster:
    t: float
    resolution: int
    enlargement: float
    lattice_set: SiteSet
    extent: tuple
    cell_area: float
    shape_grid: np.ndarray = field(repr=False)
    enlarged_grid: np.ndarray = field(repr=False)
    K_grid: np.ndarray = field(repr=False)

    @property
    def shape_area(self) -> float:
        return float(self.shape_grid.sum()) * self.cell_area

    @property
    def enlarged_area(self) -> float:
        return float(self.enlarged_grid.sum()) * self.cell_area

    @property
    def K_area(self) -> float:
        return float(self.K_grid.sum()) * self.cell_area

    @property
    def symdiff_area(self) -> float:
        return float((self.shape_grid ^ self.K_grid).sum()) * self.cell_area

    @property
    def enlarged_symdiff_area(self) -> float:
        return float((self.enlarged_grid ^ self.K_grid).sum()) * self.cell_area

    def summary(self) -> dict:
        return {"t": self.t, "resolution": self.resolution, "enlargement": self.enlargement,
                "shape_area": self.shape_area, "enlarged_area": self.enlarged_area,
                "K_area": self.K_area, "symdiff_area": self.symdiff_area,
                "enlarged_symdiff_area": self.enlarged_symdiff_area,
                "lattice_points": len(self.lattice_set)}


def shape_raster(V: PotentialField, t: float, norm: FanNorm | None = None, resolution: int = 2,
                 enlargement: float | None = None, center=None, tol: float = DEFAULT_TOL) -> ShapeRaster:
    """Raster of t^-1 A_t (unit-cube filled and e-enlarged) against K.

    A_t is built from a(x, 0) for all x out of one solve with target {0}.
    """
    if V.d != 2:
        raise ValidationError("shape rasters are implemented for d = 2")
    if t <= 0 and t != 0:
        raise ValidationError("t must be nonnegative")
    center = tuple(center) if center is not None else (0, 0)
    e = math.sqrt(t) if enlargement is None else float(enlargement)
    cf = solve_cost_field(V, SiteSet.from_sites(V.window, [center]), tol)
    A = SiteSet(V.window, cf.a <= t)
    if A.touches_edge():
        raise WindowTooSmall(f"A_t reaches the window edge at t={t}")
    pts = A.array().astype(np.float64) - np.array(center)
    scale = max(t, 1.0)
    lo_u = np.array(V.window.lo, dtype=float) - np.array(center) - e
    hi_u = np.array(V.window.hi, dtype=float) - np.array(center) + 1 + e
    if norm is not None:
        rad = float(np.abs(norm.vertices()).max()) * scale
        lo_u = np.minimum(lo_u, -rad - 1)
        hi_u = np.maximum(hi_u, rad + 1)
    h = 1.0 / resolution
    nx = [int(math.ceil((b - a) / h)) for a, b in zip(lo_u, hi_u)]
    axes = [a + h * (np.arange(n) + 0.5) for a, n in zip(lo_u, nx)]
    U = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    cells = np.floor(U).astype(np.int64) + np.array(center)
    shape_grid = np.zeros(U.shape[:-1], dtype=bool)
    inside = np.all((cells >= np.array(V.window.lo)) & (cells <= np.array(V.window.hi)), axis=-1)
    idx = tuple((cells[..., k] - V.window.lo[k])[inside] for k in range(2))
    shape_grid[inside] = A.mask[idx]
    tree = cKDTree(pts)
    dist, _ = tree.query(U.reshape(-1, 2), distance_upper_bound=e + 1e-9)
    enlarged = (dist <= e).reshape(U.shape[:-1])
    if norm is not None:
        K_grid = norm.gauge_grid(U / scale) <= 1.0
    else:
        K_grid = np.zeros_like(shape_grid)
    return ShapeRaster(float(t), resolution, e, A, (tuple(lo_u / scale), tuple(hi_u / scale)),
                       (h / scale) ** 2, shape_grid, enlarged, K_grid)


# -- hyperplanes, time windows, large deviations -----------------------------
@dataclass(frozen=True)
class _PlaneTask:
    spec: DistributionSpec
    direction: tuple
    ts: tuple
    seed: int
    replica: int
    margin: int
    tol: float


def plane_window(direction, t: float, d: int, margin: int) -> Window:
    x = np.asarray(direction, dtype=float)
    R = int(math.ceil(1.5 * t / np.abs(x).sum())) + margin
    return Window.box((0,) * d, R)


def _plane_replica(task: _PlaneTask) -> list:
    d = len(task.direction)
    W = plane_window(task.direction, max(task.ts), d, task.margin)
    V = sample_field(task.spec, W, task.seed, task.replica)
    out = []
    for t in task.ts:
        Wt = plane_window(task.direction, t, d, task.margin)
        out.append(hyperplane_cost(V.restrict(Wt), task.direction, t, task.tol))
    return out


def hyperplane_convergence(spec: DistributionSpec, x, ts, replicas: int, seed: int = 0, margin: int = 10,
                           norm: FanNorm | None = None, tol: float = DEFAULT_TOL, workers: int = 1) -> dict:
    """Mean a*(x, t) / t per t, next to 1 / alpha*(x) when a fan norm is given."""
    tasks = [_PlaneTask(spec, tuple(x), tuple(float(t) for t in ts), seed, r, margin, tol)
             for r in range(replicas)]
    per = np.array(run_replicas(_plane_replica, tasks, workers))
    rows = []
    for k, t in enumerate(ts):
        vals = per[:, k] / t if t > 0 else per[:, k]
        m, s = mean_stderr(vals)
        rows.append({"t": float(t), "mean": m, "stderr": s})
    ref = 1.0 / dual_norm(norm, x) if norm is not None else None
    return {"x": list(x), "rows": rows, "reference": ref, "per_replica": per}


@dataclass(frozen=True)
class _LdpTask:
    spec: DistributionSpec
    x: tuple
    r: float
    ns: tuple
    seed: int
    replica: int


def _ldp_replica(task: _LdpTask) -> list:
    d = len(task.x)
    W = Window.box((0,) * d, max(task.ns))
    V = sample_field(task.spec, W, task.seed, task.replica)
    out = []
    for n in task.ns:
        Vn = V.restrict(Window.box((0,) * d, n))
        p, rate = ldp_probability(Vn, n, task.x, task.r)
        Z = endpoint_measure(Vn, n).partition_function
        out.append((p, rate, -math.log(Z) / n if Z > 0 else INF))
    return out


def ldp_panel(spec: DistributionSpec, x, r: float, ns, replicas: int, seed: int = 0, workers: int = 1) -> dict:
    """Per n: empirical rate of S_n in n D(x, r) and -(1/n) log Z_{n,V}."""
    tasks = [_LdpTask(spec, tuple(float(c) for c in x), float(r), tuple(ns), seed, k) for k in range(replicas)]
    per = np.array(run_replicas(_ldp_replica, tasks, workers))
    rows = []
    for k, n in enumerate(ns):
        pm, ps = mean_stderr(per[:, k, 0])
        rm, rs = mean_stderr(per[:, k, 1])
        zm, zs = mean_stderr(per[:, k, 2])
        rows.append({"n": int(n), "prob_mean": pm, "prob_stderr": ps, "rate_mean": rm, "rate_stderr": rs,
                     "logZ_rate_mean": zm, "logZ_rate_stderr": zs})
    return {"x": list(x), "r": r, "rows": rows, "per_replica": per}


@dataclass(frozen=True)
class _VelTask:
    spec: DistributionSpec
    direction: tuple
    lam: float
    windows: tuple
    ns: tuple
    seed: int
    replica: int


def _vel_replica(task: _VelTask) -> list:
    d = len(task.direction)
    out = []
    for n in task.ns:
        s2max = max(int(math.ceil(n * s2)) for _, s2 in task.windows)
        W = Window.box((0,) * d, s2max)
        V = sample_field(task.spec, W, task.seed, task.replica).shifted(task.lam)
        y = tuple(n * c for c in task.direction)
        if not W.contains(y):
            raise WindowTooSmall("time window too short to contain the target")
        tgt = SiteSet.from_sites(W, [y])
        row = []
        for s1, s2 in task.windows:
            a = time_windowed_field(V, tgt, int(math.floor(n * s1)), int(math.ceil(n * s2)))
            row.append(float(a[W.index((0,) * d)]) / n)
        out.append(row)
    return out


def velocity_profile(spec: DistributionSpec, x, lam: float, windows, ns, replicas: int, seed: int = 0,
                     h: float = 0.25, margin: int = 10, tol: float = DEFAULT_TOL, workers: int = 1) -> dict:
    """Time-windowed costs along x against finite-difference derivatives of alpha_lambda(x).

    ``windows`` are (s1, s2) pairs in inverse-speed units: the walk must hit
    n x at a time in [n s1, n s2].
    """
    if lam <= 0:
        raise ValidationError("lambda must be positive")
    x = tuple(int(c) for c in x)
    ns = tuple(int(n) for n in ns)
    lams = sorted({max(lam - h, 0.0), max(lam - h / 2, 0.0), lam, lam + h / 2, lam + h})
    sched = RaySchedule(x, ns, replicas, margin)
    est = estimate_alpha(spec, sched, lams, "a", seed, tol=tol, workers=workers)
    nmax = ns[-1]
    al = {l: est.stat(x, l, nmax)[0] for l in lams}
    lm = max(lam - h, 0.0)
    d_plus = (al[lam + h] - al[lam]) / h
    d_minus = (al[lam] - al[lm]) / (lam - lm)
    d_plus_half = (al[lam + h / 2] - al[lam]) / (h / 2)
    d_minus_half = (al[lam] - al[max(lam - h / 2, 0.0)]) / (lam - max(lam - h / 2, 0.0))
    sym, sym_half = (d_plus + d_minus) / 2, (d_plus_half + d_minus_half) / 2
    lo, hi = min(d_plus, d_minus), max(d_plus, d_minus)
    if abs(sym - sym_half) <= 0.1 * max(abs(sym), 1e-12):
        lo = hi = sym_half
    tasks = [_VelTask(spec, x, float(lam), tuple(tuple(w) for w in windows), ns, seed, r)
             for r in range(replicas)]
    per = np.array(run_replicas(_vel_replica, tasks, workers))
    rows = []
    for a, n in enumerate(ns):
        base = est.stat(x, lam, n)[0]
        for b, (s1, s2) in enumerate(windows):
            m, s = mean_stderr(per[:, a, b])
            rows.append({"n": n, "s1": s1, "s2": s2, "mean": m, "stderr": s, "excess": m - base,
                         "hits_derivative": bool(s1 <= hi and s2 >= lo)})
    return {"x": list(x), "lambda": lam, "alpha": al[lam], "derivative_interval": (lo, hi),
            "one_sided": {"plus": d_plus, "minus": d_minus, "plus_half": d_plus_half,
                          "minus_half": d_minus_half}, "rows": rows, "per_replica": per}


# -- norm diagnostics ----------------------------------------------------------
def fan_estimate(spec: DistributionSpec, fan, ns, replicas: int, seed: int = 0, lambdas=(0.0,),
                 kind: str = "a", margin: int = 10, M=None, N=None, tol: float = DEFAULT_TOL,
                 workers: int = 1) -> NormEstimate:
    """estimate_alpha over a fan of directions, with one record set."""
    est = NormEstimate(kind)
    for y in fan:
        part = estimate_alpha(spec, RaySchedule(tuple(y), tuple(ns), replicas, margin), lambdas, kind,
                              seed, M, N, tol, workers)
        est.records.extend(part.records)
    return est


def _joint(a: np.ndarray, b: np.ndarray) -> tuple:
    ma, sa = mean_stderr(a)
    mb, sb = mean_stderr(b)
    return ma - mb, math.hypot(sa, sb)


def norm_diagnostics(est: NormEstimate, lam: float = 0.0, homogeneity: NormEstimate | None = None) -> list:
    """Symmetry, triangle and homogeneity checks with 2 stderr bands.

    Symmetry and homogeneity compare two means against the joint stderr
    sqrt(s1^2 + s2^2).  The triangle check is formed per replica, since
    replicas share fields across directions.
    """
    n = est.ns()[-1]
    fan = est.directions()
    vals = {y: est.values(y, lam, n) for y in fan}
    out = []
    for y in fan:
        neg = tuple(-c for c in y)
        if neg in vals and y < neg:
            m, s = _joint(vals[y], vals[neg])
            out.append({"check": "symmetry", "x": y, "y": neg, "value": m, "band": 2 * s,
                        "ok": abs(m) <= 2 * s})
    for i, x in enumerate(fan):
        for y in fan[i:]:
            xy = tuple(a + b for a, b in zip(x, y))
            if xy in vals:
                # per-replica alpha(x) + alpha(y) - alpha(x + y)
                m, s = mean_stderr(vals[x] + vals[y] - vals[xy])
                out.append({"check": "triangle", "x": x, "y": y, "value": m, "band": 2 * s,
                            "ok": m >= -2 * s})
    if homogeneity is not None:
        for q_dir in homogeneity.directions():
            g = math.gcd(*q_dir)
            base = tuple(c // g for c in q_dir)
            for nn in homogeneity.ns():
                if g * nn in est.ns() and base in vals:
                    a = homogeneity.values(q_dir, lam, nn) / g
                    b = est.values(base, lam, g * nn)
                    m, s = _joint(a, b)
                    out.append({"check": "homogeneity", "x": base, "y": q_dir, "value": m,
                                "band": 2 * s, "ok": abs(m) <= 2 * s + 1e-9})
    return out
