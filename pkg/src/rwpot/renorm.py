"""Coarse-graining of a potential field into good and bad macroscopic boxes.

Box ``i`` is ``B_i = B((2N+1) i, N)``; its enlargement ``B'_i`` has radius
``3N/2``.  Box ``i`` is good when ``B'_i`` holds a healthy cluster touching
all 2d faces (the crossing cluster ``CC_i``) and every livable cluster of
``B'_i`` minus ``CC_i`` has L-infinity diameter at most ``N/4``.

The infinite cluster of good boxes is approximated by the largest good
nn-component touching the edge of the macro window.  Islands around bad
boxes that reach the macro edge cannot be closed off inside the window;
queries about them raise :class:`UnboundedComponent`.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .disorder import PotentialField
from .errors import (EmptyTargetSet, NoSpanningCluster, PreconditionViolated,
                     UnboundedComponent, ValidationError, WindowTooSmall)
from .lattice import NN, STAR, LatticePath, SiteSet, Window, boundary, label


def macro_index(x, N: int) -> tuple:
    """i(x): the index of the box B_i containing x."""
    L = 2 * N + 1
    return tuple((int(c) + N) // L for c in x)


def box(i, N: int) -> Window:
    return Window.box(tuple((2 * N + 1) * int(c) for c in i), N)


def big_box(i, N: int) -> Window:
    return Window.box(tuple((2 * N + 1) * int(c) for c in i), 3 * N // 2)


def macro_window_for(window: Window, N: int) -> Window:
    """Indices i whose enlarged box B'_i fits in ``window``."""
    L, h = 2 * N + 1, 3 * N // 2
    lo = tuple(math.ceil((a + h) / L) for a in window.lo)
    hi = tuple(math.floor((b - h) / L) for b in window.hi)
    if any(a > b for a, b in zip(lo, hi)):
        raise WindowTooSmall(f"window {window.lo}..{window.hi} holds no enlarged box for N={N}")
    return Window(lo, hi)


def micro_window_for(macro_window: Window, N: int) -> Window:
    """Smallest micro window covering B'_i for every i of ``macro_window``."""
    L, h = 2 * N + 1, 3 * N // 2
    return Window(tuple(L * a - h for a in macro_window.lo), tuple(L * b + h for b in macro_window.hi))


@dataclass
class BoxReport:
    good: bool
    crossing: SiteSet | None
    reason: str = ""


def classify_box(V: PotentialField, M: float, N: int, i) -> BoxReport:
    """Good/bad decision and crossing cluster for a single box."""
    win = big_box(i, N)
    if not V.window.contains_window(win):
        raise WindowTooSmall(f"B'_{tuple(i)} is not inside the field window")
    vals = V.values[V.window.slices_of(win)]
    d = V.d
    healthy = vals <= M
    labels, n = label(healthy, NN)
    if n == 0:
        return BoxReport(False, None, "no healthy site")
    crossing = None
    for axis in range(d):
        for side in (0, -1):
            sl = [slice(None)] * d
            sl[axis] = side
            here = set(np.unique(labels[tuple(sl)]).tolist()) - {0}
            crossing = here if crossing is None else crossing & here
    if not crossing:
        return BoxReport(False, None, "no crossing cluster")
    sizes = ndimage.sum_labels(np.ones_like(labels), labels, index=sorted(crossing))
    # largest crossing cluster; ties go to the smallest label (lexicographic first)
    best = sorted(crossing)[int(np.argmax(sizes))]
    cc = labels == best
    rest = np.isfinite(vals) & ~cc
    rlab, rn = label(rest, NN)
    for sl in ndimage.find_objects(rlab):
        if sl is None:
            continue
        diam = max(s.stop - s.start - 1 for s in sl)
        if diam > N / 4:
            return BoxReport(False, SiteSet(win, cc), f"livable cluster of diameter {diam}")
    return BoxReport(True, SiteSet(win, cc))


@dataclass
class MacroMap:
    """Renormalized picture of a field: labels, crossing clusters, islands."""

    N: int
    M: float
    micro_window: Window
    macro_window: Window
    good: np.ndarray = field(repr=False)
    crossing: dict = field(repr=False)
    c_inf: np.ndarray | None = field(default=None, repr=False)
    multiplicity: int = 0
    _star_labels: np.ndarray | None = field(default=None, repr=False)
    _unbounded: frozenset = field(default=frozenset(), repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def good_fraction(self) -> float:
        return float(self.good.mean())

    def is_good(self, i) -> bool:
        return bool(self.good[self.macro_window.index(i)])

    def in_cluster(self, i) -> bool:
        return bool(self.c_inf[self.macro_window.index(i)])

    def cc(self, i) -> SiteSet:
        return self.crossing[tuple(i)]

    def index_of(self, x) -> tuple:
        return macro_index(x, self.N)

    def fingerprint(self) -> tuple:
        return (self.N, self.M, self.micro_window, self.good.tobytes(), self.c_inf.tobytes())

    def label_grid_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = self.macro_window.d
        w.writerow([f"i{k}" for k in range(d)] + ["good", "in_cluster"])
        for i in self.macro_window.sites():
            idx = self.macro_window.index(i)
            w.writerow(list(i) + [int(self.good[idx]), int(self.c_inf[idx])])
        return buf.getvalue()

    def summary(self) -> dict:
        hist = closure_size_histogram(self)
        return {
            "N": self.N,
            "M": self.M,
            "macro_window": self.macro_window.to_json(),
            "good_fraction": self.good_fraction,
            "multiplicity": self.multiplicity,
            "unbounded_fraction": unbounded_fraction(self),
            "closure_size_histogram": {str(k): v for k, v in sorted(hist.items())},
        }


def classify_boxes(V: PotentialField, M: float, N: int, macro_window: Window | None = None) -> MacroMap:
    """Labels and crossing clusters for every box of the macro window."""
    if N < 2 or N % 2:
        raise ValidationError("N must be an even integer >= 2")
    mw = macro_window or macro_window_for(V.window, N)
    if not V.window.contains_window(micro_window_for(mw, N)):
        raise WindowTooSmall("field window does not cover the macro window")
    good = np.zeros(mw.shape, dtype=bool)
    crossing = {}
    for i in mw.sites():
        rep = classify_box(V, M, N, i)
        good[mw.index(i)] = rep.good
        if rep.good:
            crossing[i] = rep.crossing
    return MacroMap(N, float(M), V.window, mw, good, crossing)


def macro_infinite_cluster(macro: MacroMap) -> MacroMap:
    """Attach the finite-volume proxy of the infinite good cluster.

    The proxy is the largest good nn-component touching the macro window
    edge; ``multiplicity`` counts how many such components there were.
    """
    labels, n = label(macro.good, NN)
    edge = macro.macro_window.edge_mask()
    touching = sorted(set(np.unique(labels[edge]).tolist()) - {0})
    if not touching:
        raise NoSpanningCluster("no good component reaches the macro window edge")
    sizes = ndimage.sum_labels(np.ones_like(labels), labels, index=touching)
    best = touching[int(np.argmax(sizes))]
    c_inf = labels == best
    macro.c_inf = c_inf
    macro.multiplicity = len(touching)
    star_labels, _ = label(~c_inf, STAR)
    macro._star_labels = star_labels
    macro._unbounded = frozenset(set(np.unique(star_labels[edge]).tolist()) - {0})
    macro._cache.clear()
    return macro


def build_macro_map(V: PotentialField, M: float, N: int, macro_window: Window | None = None) -> MacroMap:
    return macro_infinite_cluster(classify_boxes(V, M, N, macro_window))


def component_sets(macro: MacroMap, i) -> tuple:
    """(C_i, closure of C_i) as macro-index SiteSets.

    For i in the good cluster, C_i is empty and the closure is {i}.
    """
    i = tuple(int(c) for c in i)
    key = ("C", i)
    if key in macro._cache:
        return macro._cache[key]
    mw = macro.macro_window
    if not mw.contains(i):
        raise WindowTooSmall(f"macro index {i} outside {mw}")
    if macro.c_inf is None:
        raise ValidationError("infinite-cluster proxy not computed")
    if macro.c_inf[mw.index(i)]:
        out = (SiteSet.empty(mw), SiteSet.from_sites(mw, [i]))
    else:
        lab = macro._star_labels[mw.index(i)]
        if lab in macro._unbounded:
            raise UnboundedComponent(f"island of macro site {i} reaches the macro window edge")
        C = SiteSet(mw, macro._star_labels == lab)
        out = (C, C.union(boundary(C, "star_outer")))
    macro._cache[key] = out
    return out


def island_boundary(macro: MacroMap, i) -> SiteSet:
    """*-outer boundary of C_i, or {i} when i is in the good cluster."""
    C, Cbar = component_sets(macro, i)
    if not C:
        return Cbar
    return Cbar.difference(C)


def delta_sets(macro: MacroMap, i) -> tuple:
    """(Delta'_i, Delta^g_i) as micro SiteSets over the field window."""
    i = tuple(int(c) for c in i)
    key = ("D", i)
    if key in macro._cache:
        return macro._cache[key]
    _, Cbar = component_sets(macro, i)
    W = macro.micro_window
    dprime = np.zeros(W.shape, dtype=bool)
    for j in Cbar.sites():
        dprime[W.slices_of(big_box(j, macro.N))] = True
    dg = np.zeros(W.shape, dtype=bool)
    for j in island_boundary(macro, i).sites():
        if j not in macro.crossing:
            raise EmptyTargetSet(f"boundary box {j} has no crossing cluster")
        cc = macro.crossing[j]
        dg[W.slices_of(cc.window)] |= cc.mask
    if not dg.any():
        raise EmptyTargetSet(f"Delta^g_{i} is empty")
    out = (SiteSet(W, dprime), SiteSet(W, dg))
    macro._cache[key] = out
    return out


def delta_g(macro: MacroMap, x) -> SiteSet:
    """Delta^g(x) for a micro site x."""
    return delta_sets(macro, macro_index(x, macro.N))[1]


def delta_prime(macro: MacroMap, x) -> SiteSet:
    return delta_sets(macro, macro_index(x, macro.N))[0]


def escape_check(macro: MacroMap, path: LatticePath, x, values: np.ndarray | None = None) -> bool:
    """Whether a livable path from x leaving Delta'(x) meets Delta^g(x)."""
    x = tuple(x)
    if path.start != x:
        raise PreconditionViolated("path does not start at x")
    dprime, dg = delta_sets(macro, macro_index(x, macro.N))
    if path.end in dprime:
        raise PreconditionViolated("path ends inside Delta'(x)")
    if values is not None:
        W = macro.micro_window
        if not all(W.contains(z) and np.isfinite(values[W.index(z)]) for z in path.sites):
            raise PreconditionViolated("path visits a non-livable site")
    return any(z in dg for z in path.sites)


def closure_size_histogram(macro: MacroMap) -> dict:
    """Counts of |closure of C_i| over macro sites whose island is bounded."""
    hist: dict = {}
    for i in macro.macro_window.sites():
        try:
            _, Cbar = component_sets(macro, i)
        except UnboundedComponent:
            continue
        n = len(Cbar)
        hist[n] = hist.get(n, 0) + 1
    return hist


def unbounded_fraction(macro: MacroMap) -> float:
    lab = macro._star_labels
    bad = np.isin(lab, list(macro._unbounded)) & (lab > 0)
    return float(bad.mean())


def dumps_summary(macro: MacroMap) -> str:
    return json.dumps(macro.summary(), sort_keys=True, indent=2)


def observ_checks(macro: MacroMap, V: PotentialField, rng: np.random.Generator, samples: int = 20,
                  walk_steps: int = 4000) -> dict:
    """Violation counts of the five geometric facts about islands and Delta sets.

    (1) C_i, C_j intersecting implies equal; (2) neighbouring good boxes have
    intersecting crossing clusters; (3) neighbouring sites have equal or
    neighbouring box indices; (4) livable paths leaving Delta'(x) meet
    Delta^g(x), tested on random livable walks; (5) Delta^g(x) is connected.
    """
    mw, W, N = macro.macro_window, macro.micro_window, macro.N
    counts = {k: 0 for k in ("1", "2", "3", "4", "5")}
    tested = {k: 0 for k in counts}
    idx = list(mw.sites())
    comps = {}
    for i in idx:
        try:
            comps[i] = component_sets(macro, i)[0]
        except UnboundedComponent:
            continue
    for i in comps:
        for j in comps:
            if comps[i] and comps[j] and not comps[i].isdisjoint(comps[j]):
                tested["1"] += 1
                counts["1"] += comps[i] != comps[j]
    for i in idx:
        if not macro.is_good(i):
            continue
        for k in range(mw.d):
            j = tuple(c + (1 if a == k else 0) for a, c in enumerate(i))
            if mw.contains(j) and macro.is_good(j):
                tested["2"] += 1
                a, b = macro.cc(i), macro.cc(j)
                both = a.reframe(W).intersection(b.reframe(W))
                counts["2"] += not both
    offs = [tuple(1 if a == k else 0 for a in range(W.d)) for k in range(W.d)]
    inner = [x for x in W.sites()]
    for _ in range(samples):
        x = inner[int(rng.integers(len(inner)))]
        for o in offs:
            y = tuple(a + b for a, b in zip(x, o))
            if W.contains(y):
                tested["3"] += 1
                d = sum(abs(a - b) for a, b in zip(macro_index(x, N), macro_index(y, N)))
                counts["3"] += d > 1
    vals = V.values
    for i in comps:
        try:
            dprime, dg = delta_sets(macro, i)
        except (UnboundedComponent, EmptyTargetSet):
            continue
        tested["5"] += 1
        counts["5"] += label(dg.mask, NN)[1] != 1
    for _ in range(samples):
        i = idx[int(rng.integers(len(idx)))]
        if i not in comps:
            continue
        dprime, dg = delta_sets(macro, i)
        b = box(i, N)
        x = tuple(int(rng.integers(lo, hi + 1)) for lo, hi in zip(b.lo, b.hi))
        if not np.isfinite(vals[W.index(x)]):
            continue
        path = [x]
        for _ in range(walk_steps):
            z = path[-1]
            nbrs = [tuple(a + s * b for a, b in zip(z, o)) for o in offs for s in (1, -1)]
            nbrs = [y for y in nbrs if W.contains(y) and np.isfinite(vals[W.index(y)])]
            if not nbrs:
                break
            path.append(nbrs[int(rng.integers(len(nbrs)))])
            if path[-1] not in dprime:
                tested["4"] += 1
                counts["4"] += not escape_check(macro, LatticePath(tuple(path)), x, vals)
                break
    return {"violations": counts, "tested": tested}
