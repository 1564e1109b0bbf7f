"""Exact finite-window solvers for weighted hitting expectations.

The walk is the simple random walk on a window, killed when it steps out.
For a target set T the function

    e(x) = E_x[ exp(-sum_{n < H_T} V(S_n)) ; H_T < inf ]

is the minimal nonnegative solution of

    e = 1 on T,   e(x) = exp(-V(x)) / (2d) * sum_{z ~ x, z in window} e(z).

On a finite window the killed walk leaves with positive probability from
every site, so the system has a unique bounded solution and the minimal
solution coincides with it.
"""
from __future__ import annotations

import csv
import heapq
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .disorder import INF, PotentialField
from .errors import MaxIterExceeded, ValidationError, WindowTooSmall
from .lattice import NN, SiteSet, Window, label, nn_offsets, structure

DEFAULT_TOL = 1e-12
METHODS = ("direct", "gauss-seidel", "jacobi")


@dataclass(frozen=True, eq=False)
class CostField:
    window: Window
    target: SiteSet
    e: np.ndarray = field(repr=False)
    a: np.ndarray = field(repr=False)
    residual: float
    iterations: int
    method: str = "direct"

    def at(self, x) -> float:
        return float(self.a[self.window.index(x)])

    def e_at(self, x) -> float:
        return float(self.e[self.window.index(x)])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{k}" for k in range(self.window.d)] + ["e", "a"])
        for x in self.window.sites():
            i = self.window.index(x)
            a = self.a[i]
            w.writerow(list(x) + [repr(float(self.e[i])), "inf" if math.isinf(a) else repr(float(a))])
        return buf.getvalue()


@dataclass(frozen=True, eq=False)
class TimeProfile:
    """Weighted walk measure over time.

    ``total_mass[k]`` is the weight still alive at time k (after the
    absorption at time k, if any), ``absorbed[k]`` the weight absorbed at
    the target at time k and ``final`` the measure at the horizon.
    """

    window: Window
    horizon: int
    final: np.ndarray = field(repr=False)
    total_mass: np.ndarray = field(repr=False)
    absorbed: np.ndarray = field(repr=False)
    history: np.ndarray | None = field(default=None, repr=False)

    @property
    def partition_function(self) -> float:
        return float(self.final.sum())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "absorbed", "total_mass"])
        for k in range(self.horizon + 1):
            w.writerow([k, repr(float(self.absorbed[k])), repr(float(self.total_mass[k]))])
        return buf.getvalue()


def _neg_log(e: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return -np.log(e)


def _target_mask(V: PotentialField, target: SiteSet) -> np.ndarray:
    if target.window == V.window:
        return target.mask
    try:
        return target.reframe(V.window).mask
    except ValueError as exc:
        raise WindowTooSmall("target set is not inside the field window") from exc


def _active_sites(V: PotentialField, tmask: np.ndarray) -> np.ndarray:
    """Non-target sites from which the target can be hit with positive weight."""
    live = np.isfinite(V.values) & ~tmask
    labels, n = label(live, NN)
    if n == 0:
        return np.zeros_like(tmask)
    from scipy import ndimage

    touch = ndimage.binary_dilation(tmask, structure=structure(tmask.ndim, NN))
    hit = np.unique(labels[touch & live])
    hit = hit[hit > 0]
    return np.isin(labels, hit)


def _neighbor_table(shape: tuple) -> np.ndarray:
    """Flat indices of the 2d neighbours of every site, -1 off the window."""
    d = len(shape)
    n = int(np.prod(shape))
    grids = np.indices(shape).reshape(d, n)
    table = np.full((n, 2 * d), -1, dtype=np.int64)
    for k, off in enumerate(nn_offsets(d)):
        nb = grids + np.asarray(off)[:, None]
        ok = np.all((nb >= 0) & (nb < np.asarray(shape)[:, None]), axis=0)
        table[ok, k] = np.ravel_multi_index(tuple(nb[:, ok]), shape)
    return table


def _apply(f: np.ndarray, w: np.ndarray, tmask: np.ndarray, table: np.ndarray) -> np.ndarray:
    """One Jacobi application of the balance map (flat arrays)."""
    g = np.where(table >= 0, f[np.maximum(table, 0)], 0.0).sum(axis=1)
    out = w * g / table.shape[1]
    out[tmask] = 1.0
    return out


@numba.njit(cache=True)
def _gauss_seidel(f, w, tmask, table, tol, max_iter):
    n, k = table.shape
    it = 0
    inc = np.inf
    while it < max_iter:
        it += 1
        inc = 0.0
        forward = it % 2 == 1
        for s in range(n):
            x = s if forward else n - 1 - s
            if tmask[x] or w[x] == 0.0:
                continue
            acc = 0.0
            for j in range(k):
                z = table[x, j]
                if z >= 0:
                    acc += f[z]
            new = w[x] * acc / k
            if new - f[x] > inc:
                inc = new - f[x]
            f[x] = new
        if inc <= tol:
            break
    return it, inc


def _direct(w: np.ndarray, tmask: np.ndarray, active: np.ndarray, table: np.ndarray) -> np.ndarray:
    idx = np.flatnonzero(active)
    f = tmask.astype(np.float64)
    if idx.size == 0:
        return f
    pos = np.full(active.size, -1, dtype=np.int64)
    pos[idx] = np.arange(idx.size)
    k = table.shape[1]
    nb = table[idx]
    rows, cols, vals = [np.arange(idx.size)], [np.arange(idx.size)], [np.ones(idx.size)]
    rhs = np.zeros(idx.size)
    coef = w[idx] / k
    for j in range(k):
        z = nb[:, j]
        valid = z >= 0
        zz = np.maximum(z, 0)
        in_t = valid & tmask[zz]
        rhs += np.where(in_t, coef, 0.0)
        link = valid & active[zz]
        rows.append(np.flatnonzero(link))
        cols.append(pos[zz[link]])
        vals.append(-coef[link])
    A = sparse.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(idx.size, idx.size))
    sol = splinalg.spsolve(A, rhs)
    f[idx] = np.clip(sol, 0.0, 1.0)
    return f


def solve_cost_field(V: PotentialField, target: SiteSet, tol: float = DEFAULT_TOL,
                     max_iter: int = 1_000_000, method: str = "direct") -> CostField:
    """e- and a-fields for hitting ``target`` from every site of the window.

    ``method`` is ``"direct"`` (sparse LU on the sites that can reach the
    target), ``"gauss-seidel"`` (monotone sweeps from the target indicator,
    alternating orientation) or ``"jacobi"``.  The iterative methods stop
    once the sup-norm increment is at most ``tol``; they raise
    :class:`MaxIterExceeded` otherwise, with the lower-bound iterate
    attached.
    """
    if tol <= 0:
        raise ValidationError("tol must be positive")
    if method not in METHODS:
        raise ValidationError(f"unknown method {method!r}")
    tmask = _target_mask(V, target)
    shape = V.window.shape
    w = V.weights().ravel()
    tflat = tmask.ravel().copy()
    table = _neighbor_table(shape)
    active = _active_sites(V, tmask).ravel()
    iterations = 0
    if method == "direct":
        f = _direct(w, tflat, active, table)
        iterations = 1
    else:
        f = tflat.astype(np.float64)
        wa = np.where(active, w, 0.0)
        if method == "gauss-seidel":
            iterations, inc = _gauss_seidel(f, wa, tflat, table, tol, max_iter)
        else:
            inc = np.inf
            while iterations < max_iter:
                iterations += 1
                g = _apply(f, wa, tflat, table)
                inc = float(np.max(g - f))
                f = g
                if inc <= tol:
                    break
        if inc > tol:
            res = _finish(V, target, f, tflat, w, table, iterations, method)
            raise MaxIterExceeded(f"no convergence after {iterations} iterations (increment {inc:.3g})", res)
    return _finish(V, target, f, tflat, w, table, iterations, method)


def _finish(V, target, f, tflat, w, table, iterations, method) -> CostField:
    shape = V.window.shape
    residual = float(np.max(np.abs(_apply(f, w, tflat, table) - f), initial=0.0))
    e = f.reshape(shape)
    e.setflags(write=False)
    a = _neg_log(e)
    a.setflags(write=False)
    tset = target if target.window == V.window else SiteSet(V.window, tflat.reshape(shape))
    return CostField(V.window, tset, e, a, residual, int(iterations), method)


def balance_defect(V: PotentialField, cf: CostField) -> float:
    """Sup-norm defect of the balance equation at non-target sites."""
    table = _neighbor_table(V.window.shape)
    t = cf.target.mask.ravel()
    f = cf.e.ravel()
    return float(np.max(np.abs(_apply(f, V.weights().ravel(), t, table) - f), initial=0.0))


def travel_cost(V: PotentialField, x, y, tol: float = DEFAULT_TOL, method: str = "direct") -> float:
    """a(x, y) = -log e(x, y) on the window of ``V``."""
    x, y = tuple(x), tuple(y)
    if not (V.window.contains(x) and V.window.contains(y)):
        raise WindowTooSmall(f"{x} or {y} outside {V.window}")
    if x == y:
        return 0.0
    cf = solve_cost_field(V, SiteSet.from_sites(V.window, [y]), tol, method=method)
    return cf.at(x)


def halfspace(window: Window, direction: Sequence[float], t: float) -> SiteSet:
    proj = sum(np.asarray(c, dtype=np.float64) * float(u) for c, u in zip(window.coords(), direction))
    proj = np.broadcast_to(proj, window.shape)
    return SiteSet(window, proj >= t - 1e-12)


def hyperplane_cost(V: PotentialField, direction: Sequence[float], t: float, tol: float = DEFAULT_TOL,
                    origin=None, margin: int = 1, method: str = "direct") -> float:
    """a*(x, t): cost of reaching the half-space {z : z . x >= t} from the origin."""
    x = np.asarray(direction, dtype=np.float64)
    if not np.any(x):
        raise ValidationError("direction must be nonzero")
    o = tuple(origin) if origin is not None else (0,) * V.d
    if not V.window.contains(o):
        raise WindowTooSmall("origin outside the window")
    if t <= float(np.dot(x, o)):
        return 0.0
    corners = np.array(np.meshgrid(*[(a, b) for a, b in zip(V.window.lo, V.window.hi)])).reshape(V.d, -1)
    reach = float((x @ corners).max())
    if reach < t + margin * float(np.abs(x).max()):
        raise WindowTooSmall(f"window reaches only {reach:.3g} in direction {x.tolist()}, need {t} + margin")
    target = halfspace(V.window, x, t)
    return solve_cost_field(V, target, tol, method=method).at(o)


def _step(mu: np.ndarray, wts: np.ndarray) -> np.ndarray:
    """mu'(z) = 1/(2d) sum_{w ~ z} exp(-V(w)) mu(w); mass leaving the window is lost."""
    nu = mu * wts
    d = mu.ndim
    out = np.zeros_like(mu)
    for off in nn_offsets(d):
        src = tuple(slice(max(0, -o), n - max(0, o)) for o, n in zip(off, mu.shape))
        dst = tuple(slice(max(0, o), n - max(0, -o)) for o, n in zip(off, mu.shape))
        out[dst] += nu[src]
    return out / (2 * d)


def _check_ball(V: PotentialField, center, radius: int) -> None:
    if not V.window.contains_window(Window.box(center, radius)):
        raise WindowTooSmall(f"window {V.window.lo}..{V.window.hi} does not contain B({tuple(center)}, {radius})")


def endpoint_measure(V: PotentialField, n: int, start=None, keep_history: bool = False) -> TimeProfile:
    """Exact law of S_n under the weight exp(-sum_{k<n} V(S_k)).

    ``final[z]`` is E_start[exp(-sum_{k<n} V(S_k)); S_n = z]; its sum is the
    partition function Z_{n,V}.
    """
    if n < 0:
        raise ValidationError("n must be nonnegative")
    start = tuple(start) if start is not None else (0,) * V.d
    _check_ball(V, start, n)
    wts = V.weights()
    mu = np.zeros(V.window.shape)
    mu[V.window.index(start)] = 1.0
    total = np.empty(n + 1)
    total[0] = 1.0
    hist = [mu] if keep_history else None
    for k in range(n):
        mu = _step(mu, wts)
        total[k + 1] = mu.sum()
        if keep_history:
            hist.append(mu)
    return TimeProfile(V.window, n, mu, total, np.zeros(n + 1),
                       np.stack(hist) if keep_history else None)


def partition_function(V: PotentialField, n: int, start=None) -> float:
    return endpoint_measure(V, n, start).partition_function


def ldp_probability(V: PotentialField, n: int, center: Sequence[float], radius: float, start=None) -> tuple:
    """P_{n,V}[S_n in n D(center, radius)] and -(1/n) log of it.

    D is the closed l1 ball.  The rate is +inf when the probability is 0.
    """
    if n <= 0:
        raise ValidationError("n must be positive")
    prof = endpoint_measure(V, n, start)
    Z = prof.partition_function
    if Z == 0.0:
        return 0.0, INF
    start = np.asarray(start if start is not None else (0,) * V.d, dtype=np.float64)
    c = np.asarray(center, dtype=np.float64)
    dist = sum(np.abs(g - s - n * ci) for g, s, ci in zip(V.window.coords(), start, c))
    inside = np.broadcast_to(dist, V.window.shape) <= n * radius + 1e-9
    p = float(prof.final[inside].sum() / Z)
    p = min(p, 1.0)
    rate = INF if p == 0.0 else -math.log(p) / n
    return p, rate


def time_profile(V: PotentialField, start, target: SiteSet, s2: int, require_ball: bool = True) -> TimeProfile:
    """Forward time stepping with absorption at ``target``.

    At time k the mass on the target is recorded in ``absorbed[k]`` and
    removed before the next weighted step, so the absorbing site never
    collects its potential.
    """
    if s2 < 0:
        raise ValidationError("s2 must be nonnegative")
    start = tuple(start)
    if require_ball:
        _check_ball(V, start, s2)
    elif not V.window.contains(start):
        raise WindowTooSmall("start outside the window")
    tmask = _target_mask(V, target)
    wts = V.weights()
    mu = np.zeros(V.window.shape)
    mu[V.window.index(start)] = 1.0
    absorbed = np.zeros(s2 + 1)
    total = np.zeros(s2 + 1)
    for k in range(s2 + 1):
        absorbed[k] = mu[tmask].sum()
        mu[tmask] = 0.0
        total[k] = mu.sum()
        if k < s2:
            mu = _step(mu, wts)
    return TimeProfile(V.window, s2, mu, total, absorbed)


def time_windowed_cost(V: PotentialField, start, target: SiteSet, s1: int, s2: int) -> float:
    """-log E_start[exp(-sum_{n < tau} V(S_n)) ; s1 <= tau <= s2], tau the hitting time of ``target``."""
    if not 0 <= s1 <= s2:
        raise ValidationError("need 0 <= s1 <= s2")
    prof = time_profile(V, start, target, s2)
    tot = float(prof.absorbed[s1:s2 + 1].sum())
    return INF if tot == 0.0 else -math.log(tot)


def time_windowed_field(V: PotentialField, target: SiteSet, s1: int, s2: int) -> np.ndarray:
    """Time-windowed costs from every start at once (backward recursion).

    Entry z equals ``time_windowed_cost(V, z, target, s1, s2)`` for starts
    whose s2-ball fits in the window; elsewhere the walk is killed on exit.
    """
    if not 0 <= s1 <= s2:
        raise ValidationError("need 0 <= s1 <= s2")
    tmask = _target_mask(V, target)
    wts = V.weights()
    d = V.d
    h = np.zeros(V.window.shape)
    for k in range(s2, -1, -1):
        g = np.zeros_like(h)
        for off in nn_offsets(d):
            src = tuple(slice(max(0, o), n - max(0, -o)) for o, n in zip(off, h.shape))
            dst = tuple(slice(max(0, -o), n - max(0, o)) for o, n in zip(off, h.shape))
            g[dst] += h[src]
        h = wts * g / (2 * d)
        h[tmask] = 1.0 if k >= s1 else 0.0
    return _neg_log(h)


def fpp_distance(V: PotentialField, x, targets: SiteSet | None = None):
    """Site first-passage distances from ``x``.

    A path pays V at every site except its last one.  Returns the whole
    distance array, or a dict keyed by site when ``targets`` is given.
    """
    w = V.window
    x = tuple(x)
    vals = V.values
    dist = np.full(w.shape, INF)
    dist[w.index(x)] = 0.0
    done = np.zeros(w.shape, dtype=bool)
    heap = [(0.0, x)]
    offs = nn_offsets(w.d)
    while heap:
        dz, z = heapq.heappop(heap)
        iz = w.index(z)
        if done[iz]:
            continue
        done[iz] = True
        vz = vals[iz]
        if math.isinf(vz):
            continue
        nd = dz + vz
        for off in offs:
            y = tuple(a + b for a, b in zip(z, off))
            if not w.contains(y):
                continue
            iy = w.index(y)
            if nd < dist[iy]:
                dist[iy] = nd
                heapq.heappush(heap, (nd, y))
    if targets is None:
        return dist
    return {y: float(dist[w.index(y)]) for y in targets.sites()}
