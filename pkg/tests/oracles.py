"""Slow, independent reference implementations used by the tests.

Nothing here imports the solvers under test; fields are plain dicts or
numpy arrays indexed by site tuples.
"""
from __future__ import annotations

import itertools
import math
from collections import deque


def box_sites(lo, hi):
    return list(itertools.product(*[range(a, b + 1) for a, b in zip(lo, hi)]))


def nbrs(x):
    out = []
    for k in range(len(x)):
        for s in (-1, 1):
            y = list(x)
            y[k] += s
            out.append(tuple(y))
    return out


def star_nbrs(x):
    return [tuple(a + b for a, b in zip(x, off)) for off in itertools.product((-1, 0, 1), repeat=len(x))
            if any(off)]


def path_sum_e(V: dict, x, targets: set, L: int) -> float:
    """Sum over walks from x of length <= L that stop at their first target visit.

    Weight of a walk z_0 .. z_l is prod_{k<l} exp(-V(z_k)) / (2d); walks
    stepping outside ``V``'s keys are dropped.
    """
    d = len(x)
    # g[z] = total weight of walks from z of length <= k ending at first target hit
    g = {z: (1.0 if z in targets else 0.0) for z in V}
    for _ in range(L):
        new = {}
        for z in V:
            if z in targets:
                new[z] = 1.0
                continue
            w = math.exp(-V[z]) / (2 * d) if math.isfinite(V[z]) else 0.0
            new[z] = w * sum(g[y] for y in nbrs(z) if y in g)
        g = new
    return g[x]


def walk_enumeration_e(V: dict, x, targets: set, L: int) -> float:
    """Explicit walk-by-walk enumeration, only for tiny L (checks path_sum_e)."""
    d = len(x)
    total = 0.0

    def rec(z, weight, depth):
        nonlocal total
        if z in targets:
            total += weight
            return
        if depth == L:
            return
        if not math.isfinite(V[z]):
            return
        w = weight * math.exp(-V[z]) / (2 * d)
        for y in nbrs(z):
            if y in V:
                rec(y, w, depth + 1)

    rec(x, 1.0, 0)
    return total


def brute_fpp(V: dict, x, y) -> float:
    """min over simple paths x -> y of the sum of V over all sites but the last."""
    if x == y:
        return 0.0
    best = math.inf

    def rec(z, acc, seen):
        nonlocal best
        if z == y:
            best = min(best, acc)
            return
        if not math.isfinite(V[z]):
            return
        acc2 = acc + V[z]
        if acc2 >= best:
            return
        for w in nbrs(z):
            if w in V and w not in seen:
                seen.add(w)
                rec(w, acc2, seen)
                seen.remove(w)

    rec(x, 0.0, {x})
    return best


def bfs_components(members: set, star: bool = False) -> list:
    """Connected components as sets, by plain BFS."""
    left = set(members)
    comps = []
    step = star_nbrs if star else nbrs
    while left:
        s = min(left)
        comp = {s}
        q = deque([s])
        left.discard(s)
        while q:
            z = q.popleft()
            for w in step(z):
                if w in left:
                    left.discard(w)
                    comp.add(w)
                    q.append(w)
        comps.append(comp)
    return comps


def flood_fill_holes(members: set, lo, hi) -> set:
    """Complement sites not reachable from the window edge through the complement."""
    sites = box_sites(lo, hi)
    comp = {z for z in sites if z not in members}
    edge = {z for z in comp if any(c in (a, b) for c, a, b in zip(z, lo, hi))}
    seen = set(edge)
    q = deque(edge)
    while q:
        z = q.popleft()
        for w in nbrs(z):
            if w in comp and w not in seen:
                seen.add(w)
                q.append(w)
    return comp - seen


def endpoint_distribution(V: dict, n: int, d: int) -> dict:
    """Weighted endpoint measure of all 2d^n walks, by explicit enumeration."""
    out = {}
    for steps in itertools.product(range(2 * d), repeat=n):
        z = (0,) * d
        w = 1.0
        for s in steps:
            w *= math.exp(-V.get(z, 0.0)) / (2 * d)
            k, sgn = divmod(s, 2)
            z = tuple(c + (2 * sgn - 1 if i == k else 0) for i, c in enumerate(z))
        out[z] = out.get(z, 0.0) + w
    return out
