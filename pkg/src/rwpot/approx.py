"""Approximations of the travel cost.

Two layers live here:

* the relocated cost ``a_m(x, y) = a(m(x), m(y))`` with the 2d disjoint
  paths construction and the correction term ``u_m``;
* the renormalized costs ``tilde_a`` / ``hat_a`` built on the sets
  ``Delta^g`` of :mod:`rwpot.renorm`, with the corrections ``u`` and ``v``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .costsolve import DEFAULT_TOL, solve_cost_field, travel_cost
from .disorder import INF, PotentialField, bfs, min_neighbor, trace
from .errors import EmptyTargetSet, WindowTooSmall
from .lattice import LatticePath, SiteSet, neighbors
from .renorm import MacroMap, delta_g


@dataclass(frozen=True)
class DisjointPathFamily:
    origin: tuple
    destination: tuple
    paths: tuple

    def check(self) -> list:
        """Problems with the family (empty list when valid)."""
        problems = []
        d = len(self.origin)
        if self.origin == self.destination:
            return [] if not self.paths else ["nonempty family for x = y"]
        if len(self.paths) != 2 * d:
            problems.append(f"{len(self.paths)} paths instead of {2 * d}")
        bound = sum(abs(a - b) for a, b in zip(self.origin, self.destination)) + 8
        seen = {}
        for k, p in enumerate(self.paths):
            if p.start != self.origin or p.end != self.destination:
                problems.append(f"path {k} has wrong endpoints")
            if p.length > bound:
                problems.append(f"path {k} has length {p.length} > {bound}")
            for z in p.interior():
                if z in (self.origin, self.destination):
                    problems.append(f"path {k} revisits an endpoint")
                if z in seen and seen[z] != k:
                    problems.append(f"paths {seen[z]} and {k} share {z}")
                seen.setdefault(z, k)
        return problems


def _line(a: tuple, b: tuple) -> list:
    """Straight travel from a to b, one coordinate after the other; excludes a."""
    cur = list(a)
    out = []
    for axis in range(len(a)):
        step = 1 if b[axis] > cur[axis] else -1
        while cur[axis] != b[axis]:
            cur[axis] += step
            out.append(tuple(cur))
    return out


def _route(*waypoints) -> tuple:
    pts = [tuple(waypoints[0])]
    for w in waypoints[1:]:
        pts.extend(_line(pts[-1], tuple(w)))
    return tuple(pts)


def _base_2d(m: int, n: int) -> list:
    """Four paths from (0,0) to (m,n), m, n >= 0 not both 0, inside y >= -1."""
    if n == 0:
        return [
            _route((0, 0), (m, 0)),
            _route((0, 0), (0, 1), (m, 1), (m, 0)),
            _route((0, 0), (0, -1), (m, -1), (m, 0)),
            _route((0, 0), (-1, 0), (-1, 2), (m + 1, 2), (m + 1, 0), (m, 0)),
        ]
    if m == 0:
        # mirror image of the (n, 0) case through the diagonal, kept in y >= -1
        return [
            _route((0, 0), (0, n)),
            _route((0, 0), (1, 0), (1, n), (0, n)),
            _route((0, 0), (-1, 0), (-1, n), (0, n)),
            _route((0, 0), (0, -1), (2, -1), (2, n + 1), (0, n + 1), (0, n)),
        ]
    # boundaries of [0, m+1] x [-1, n] and [-1, m] x [0, n+1]
    return [
        _route((0, 0), (0, n), (m, n)),
        _route((0, 0), (0, -1), (m + 1, -1), (m + 1, n), (m, n)),
        _route((0, 0), (m, 0), (m, n)),
        _route((0, 0), (-1, 0), (-1, n + 1), (m, n + 1), (m, n)),
    ]


def _lift(paths: list, x: tuple) -> list:
    """Paths in dimension d+1 from paths to (x_1..x_d) in dimension d."""
    d = len(x) - 1
    xt, h = x[:d], x[d]
    zero = (0,) * (d + 1)
    emb = [tuple(p + (0,) for p in path) for path in paths]
    xt0 = xt + (0,)
    if h == 0:
        return emb + [
            _route(zero, (0,) * d + (1,), xt + (1,), xt0),
            _route(zero, (0,) * d + (-1,), xt + (-1,), xt0),
        ]
    out = []
    for path in emb:
        pruned = path[:-1]
        w = pruned[-1]
        out.append(pruned + tuple(_line(w, w[:d] + (h,))) + (x,))
    if sum(abs(c) for c in xt) != 1:
        out.append(_route(zero, (0,) * d + (-1,), xt + (-1,), x))
        out.append(_route(zero, (0,) * d + (h + 1,), xt + (h + 1,), x))
    else:
        low = (0,) * (d - 1) + (-2, -1)
        out.append(_route(zero, xt0, x))
        out.append(_route(zero, (0,) * d + (-1,), low, low[:d] + (h + 1,), xt + (h + 1,), x))
    return out


@lru_cache(maxsize=65536)
def _family_nonneg(x: tuple) -> tuple:
    d = len(x)
    if d == 2:
        return tuple(_base_2d(*x))
    return tuple(_lift(list(_family_nonneg(x[:-1])), x))


def disjoint_paths(x) -> DisjointPathFamily:
    """2d paths from 0 to x, interior-disjoint, each of length <= |x|_1 + 8.

    Coordinates are first made nonnegative by reflection.  In d >= 3, when
    the first two coordinates vanish, the first nonzero coordinate is swapped
    into position 1 so that the two-dimensional base case is nondegenerate.
    """
    x = tuple(int(c) for c in x)
    d = len(x)
    if d < 2:
        raise ValueError("dimension must be at least 2")
    zero = (0,) * d
    if x == zero:
        return DisjointPathFamily(zero, zero, ())
    signs = tuple(-1 if c < 0 else 1 for c in x)
    y = tuple(abs(c) for c in x)
    perm = list(range(d))
    if d >= 3 and y[0] == 0 and y[1] == 0:
        k = next(j for j in range(d) if y[j])
        perm[0], perm[k] = perm[k], perm[0]
    y = tuple(y[p] for p in perm)
    raw = _family_nonneg(y)
    inv = [0] * d
    for a, p in enumerate(perm):
        inv[p] = a
    paths = []
    for path in raw:
        pts = tuple(tuple(signs[k] * z[inv[k]] for k in range(d)) for z in path)
        paths.append(LatticePath(pts))
    return DisjointPathFamily(zero, x, tuple(paths))


def family_between(x, y) -> tuple:
    """gamma^i_{x,y}: the family for y - x translated by x."""
    fam = disjoint_paths(tuple(b - a for a, b in zip(x, y)))
    return tuple(p.translate(x) for p in fam.paths)


def _interior_cost(V: PotentialField, path: LatticePath, log2d: float) -> float:
    tot = 0.0
    for z in path.interior():
        if not V.window.contains(z):
            raise WindowTooSmall(f"path site {z} outside the field window")
        tot += V[z] + log2d
    return tot


def min_path_cost(V: PotentialField, paths, log2d: float | None = None) -> float:
    """min over paths of the interior sum of V + log 2d (0 for an empty family)."""
    if not paths:
        return 0.0
    if log2d is None:
        log2d = math.log(2 * V.d)
    return min(_interior_cost(V, p, log2d) for p in paths)


def u_m_value(V: PotentialField, y) -> float:
    """Sum over ordered neighbour pairs (y', y'') of the cheapest gamma^i_{y',y''} interior."""
    y = tuple(y)
    log2d = math.log(2 * V.d)
    nbrs = neighbors(y)
    tot = 0.0
    for y1 in nbrs:
        for y2 in nbrs:
            tot += min_path_cost(V, family_between(y1, y2), log2d)
    return tot


def a_m_cost(V: PotentialField, x, y, tol: float = DEFAULT_TOL) -> float:
    """a(m(x), m(y))."""
    x, y = tuple(x), tuple(y)
    if x == y:
        return 0.0
    return travel_cost(V, min_neighbor(V, x), min_neighbor(V, y), tol)


def _target_field(V: PotentialField, target: SiteSet, tol: float):
    if not target:
        raise EmptyTargetSet("empty target set")
    return solve_cost_field(V, target, tol)


def tilde_a(V: PotentialField, start, y, macro: MacroMap, tol: float = DEFAULT_TOL) -> float:
    """Cost of reaching Delta^g(y) from ``start``."""
    return _target_field(V, delta_g(macro, y), tol).at(tuple(start))


def hat_a(V: PotentialField, x, y, macro: MacroMap, tol: float = DEFAULT_TOL) -> float:
    """min over x' in Delta^g(x) of tilde_a(x', y), from a single solve."""
    cf = _target_field(V, delta_g(macro, y), tol)
    dx = delta_g(macro, x)
    return float(cf.a[dx.mask].min())


def u_path(V: PotentialField, x, macro: MacroMap):
    """Shortest livable path from x to Delta^g(x), or None."""
    x = tuple(x)
    dg = delta_g(macro, x)
    W = V.window
    _, parent, hit = bfs(np.isfinite(V.values), W, x, stop=lambda z: z in dg)
    if hit is None:
        return None
    return trace(parent, x, hit)


def u_value(V: PotentialField, x, macro: MacroMap) -> float:
    """Sum of V + log 2d over the shortest livable path to Delta^g(x) and Delta^g(x) itself."""
    path = u_path(V, x, macro)
    if path is None:
        return INF
    dg = delta_g(macro, x)
    pts = dg.union(SiteSet.from_sites(V.window, path.sites))
    log2d = math.log(2 * V.d)
    return float(np.sum(V.values[pts.mask] + log2d))


def v_value(V: PotentialField, x, macro: MacroMap) -> float:
    """Sum over z in Delta^g(x) of V(z) + log 2d."""
    dg = delta_g(macro, x)
    if not dg:
        raise EmptyTargetSet("Delta^g(x) is empty")
    return float(np.sum(V.values[dg.mask] + math.log(2 * V.d)))


@dataclass
class ApproximantBundle:
    """Memoized approximants for one field and one macro map."""

    V: PotentialField
    macro: MacroMap | None = None
    tol: float = DEFAULT_TOL
    _fields: dict = field(default_factory=dict, repr=False)
    _scalars: dict = field(default_factory=dict, repr=False)

    def _key(self):
        mk = self.macro.fingerprint() if self.macro is not None else None
        return (self.V.window, self.V.base.tobytes(), self.V.lambda_shift, self.V.beta, mk)

    def _ensure(self):
        key = self._key()
        if self._scalars.get("__key__") != key:
            self._fields.clear()
            self._scalars.clear()
            self._scalars["__key__"] = key

    def field_to(self, target_key, target: SiteSet):
        self._ensure()
        if target_key not in self._fields:
            self._fields[target_key] = _target_field(self.V, target, self.tol)
        return self._fields[target_key]

    def a(self, x, y) -> float:
        x, y = tuple(x), tuple(y)
        if x == y:
            return 0.0
        return self.field_to(("pt", y), SiteSet.from_sites(self.V.window, [y])).at(x)

    def a_m(self, x, y) -> float:
        x, y = tuple(x), tuple(y)
        if x == y:
            return 0.0
        return self.a(min_neighbor(self.V, x), min_neighbor(self.V, y))

    def _dg(self, x):
        i = self.macro.index_of(x)
        return i, delta_g(self.macro, x)

    def tilde_a(self, start, y) -> float:
        j, dg = self._dg(y)
        return self.field_to(("dg", j), dg).at(tuple(start))

    def hat_a(self, x, y) -> float:
        j, dgy = self._dg(y)
        cf = self.field_to(("dg", j), dgy)
        _, dgx = self._dg(x)
        return float(cf.a[dgx.mask].min())

    def _scalar(self, name, fn, x):
        self._ensure()
        key = (name, tuple(x))
        if key not in self._scalars:
            self._scalars[key] = fn(self.V, tuple(x), self.macro) if self.macro is not None else fn(self.V, tuple(x))
        return self._scalars[key]

    def u(self, x) -> float:
        return self._scalar("u", u_value, x)

    def v(self, x) -> float:
        return self._scalar("v", v_value, x)

    def u_m(self, y) -> float:
        self._ensure()
        key = ("u_m", tuple(y))
        if key not in self._scalars:
            self._scalars[key] = u_m_value(self.V, y)
        return self._scalars[key]
