"""Geometry of Z^d restricted to rectangular windows.

Sites are plain tuples of ints.  A :class:`Window` is an inclusive box of
sites and a :class:`SiteSet` is a boolean mask over a window.  Array axes
follow coordinate order, so C-order (row-major) traversal of a mask visits
sites in lexicographic order.
"""
from __future__ import annotations

import csv
import io
import itertools
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy import ndimage

from .errors import ClippedBoundary, EmptySet, MarginViolation

Site = tuple

NN = "nn"
STAR = "star"
BOUNDARY_KINDS = ("outer", "inner", "star_outer", "star_inner")


@lru_cache(maxsize=None)
def nn_offsets(d: int) -> tuple:
    """The 2d unit offsets, sorted lexicographically."""
    offs = []
    for axis in range(d):
        for sign in (-1, 1):
            v = [0] * d
            v[axis] = sign
            offs.append(tuple(v))
    return tuple(sorted(offs))


@lru_cache(maxsize=None)
def star_offsets(d: int) -> tuple:
    return tuple(v for v in itertools.product((-1, 0, 1), repeat=d) if any(v))


def neighbors(x: Sequence[int]) -> list:
    x = tuple(int(c) for c in x)
    return [tuple(a + b for a, b in zip(x, off)) for off in nn_offsets(len(x))]


def star_neighbors(x: Sequence[int]) -> list:
    x = tuple(int(c) for c in x)
    return [tuple(a + b for a, b in zip(x, off)) for off in star_offsets(len(x))]


def l1(x: Sequence[int]) -> int:
    return int(sum(abs(int(c)) for c in x))


def structure(d: int, adjacency: str) -> np.ndarray:
    if adjacency == NN:
        return ndimage.generate_binary_structure(d, 1)
    if adjacency == STAR:
        return ndimage.generate_binary_structure(d, d)
    raise ValueError(f"unknown adjacency {adjacency!r}")


@dataclass(frozen=True)
class Window:
    """Inclusive box ``lo <= x <= hi`` (componentwise)."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(int(c) for c in self.lo)
        hi = tuple(int(c) for c in self.hi)
        if len(lo) != len(hi):
            raise ValueError("lo and hi must have the same dimension")
        if len(lo) < 1:
            raise ValueError("window dimension must be positive")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"empty window lo={lo} hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def box(cls, center: Sequence[int], radius: int) -> "Window":
        """The box B(center, radius) = center + {-radius..radius}^d."""
        c = tuple(int(v) for v in center)
        return cls(tuple(v - radius for v in c), tuple(v + radius for v in c))

    @classmethod
    def bounding(cls, sites: Iterable[Sequence[int]], margin: int = 0) -> "Window":
        arr = np.asarray(list(sites), dtype=np.int64)
        if arr.size == 0:
            raise EmptySet("no sites to bound")
        return cls(tuple(arr.min(axis=0) - margin), tuple(arr.max(axis=0) + margin))

    @property
    def d(self) -> int:
        return len(self.lo)

    @property
    def shape(self) -> tuple:
        return tuple(b - a + 1 for a, b in zip(self.lo, self.hi))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    def contains(self, x: Sequence[int]) -> bool:
        return all(a <= int(c) <= b for a, c, b in zip(self.lo, x, self.hi))

    def contains_window(self, other: "Window") -> bool:
        return self.contains(other.lo) and self.contains(other.hi)

    def index(self, x: Sequence[int]) -> tuple:
        return tuple(int(c) - a for c, a in zip(x, self.lo))

    def site(self, idx: Sequence[int]) -> Site:
        return tuple(int(i) + a for i, a in zip(idx, self.lo))

    def flat_index(self, x: Sequence[int]) -> int:
        return int(np.ravel_multi_index(self.index(x), self.shape))

    def on_edge(self, x: Sequence[int]) -> bool:
        return any(int(c) in (a, b) for a, c, b in zip(self.lo, x, self.hi))

    def sites(self) -> Iterator[Site]:
        return itertools.product(*(range(a, b + 1) for a, b in zip(self.lo, self.hi)))

    def coords(self) -> list:
        """Open-mesh coordinate arrays, one per axis."""
        return list(np.ogrid[tuple(slice(a, b + 1) for a, b in zip(self.lo, self.hi))])

    def expand(self, margin: int) -> "Window":
        return Window(tuple(a - margin for a in self.lo), tuple(b + margin for b in self.hi))

    def intersect(self, other: "Window") -> "Window | None":
        lo = tuple(max(a, b) for a, b in zip(self.lo, other.lo))
        hi = tuple(min(a, b) for a, b in zip(self.hi, other.hi))
        if any(a > b for a, b in zip(lo, hi)):
            return None
        return Window(lo, hi)

    def slices_of(self, sub: "Window") -> tuple:
        """Array slices selecting ``sub`` inside arrays shaped like ``self``."""
        if not self.contains_window(sub):
            raise ValueError(f"{sub} is not inside {self}")
        return tuple(slice(s - a, t - a + 1) for a, s, t in zip(self.lo, sub.lo, sub.hi))

    def edge_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        for axis in range(self.d):
            idx = [slice(None)] * self.d
            idx[axis] = 0
            m[tuple(idx)] = True
            idx[axis] = -1
            m[tuple(idx)] = True
        return m

    def to_json(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi)}

    @classmethod
    def from_json(cls, obj: dict) -> "Window":
        return cls(tuple(obj["lo"]), tuple(obj["hi"]))


@dataclass(frozen=True, eq=False)
class SiteSet:
    """Membership bitmap over a window."""

    window: Window
    mask: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.shape != self.window.shape:
            raise ValueError(f"mask shape {m.shape} != window shape {self.window.shape}")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    @classmethod
    def empty(cls, window: Window) -> "SiteSet":
        return cls(window, np.zeros(window.shape, dtype=bool))

    @classmethod
    def full(cls, window: Window) -> "SiteSet":
        return cls(window, np.ones(window.shape, dtype=bool))

    @classmethod
    def from_sites(cls, window: Window, sites: Iterable[Sequence[int]]) -> "SiteSet":
        m = np.zeros(window.shape, dtype=bool)
        for x in sites:
            if not window.contains(x):
                raise ValueError(f"site {tuple(x)} outside {window}")
            m[window.index(x)] = True
        return cls(window, m)

    def __len__(self) -> int:
        return int(self.mask.sum())

    def __bool__(self) -> bool:
        return bool(self.mask.any())

    def __contains__(self, x) -> bool:
        return self.window.contains(x) and bool(self.mask[self.window.index(x)])

    def __eq__(self, other) -> bool:
        if not isinstance(other, SiteSet):
            return NotImplemented
        return self.window == other.window and np.array_equal(self.mask, other.mask)

    def __hash__(self):
        return hash((self.window, self.mask.tobytes()))

    def sites(self) -> list:
        """Members in lexicographic order."""
        lo = np.asarray(self.window.lo)
        return [tuple(int(c) for c in row) for row in np.argwhere(self.mask) + lo]

    def array(self) -> np.ndarray:
        """Members as an (n, d) int array, lexicographic order."""
        return np.argwhere(self.mask) + np.asarray(self.window.lo)

    def min_site(self) -> Site | None:
        idx = np.flatnonzero(self.mask)
        if idx.size == 0:
            return None
        return self.window.site(np.unravel_index(idx[0], self.window.shape))

    def _coerce(self, other: "SiteSet") -> np.ndarray:
        if other.window == self.window:
            return other.mask
        return other.reframe(self.window, strict=False).mask

    def union(self, other: "SiteSet") -> "SiteSet":
        return SiteSet(self.window, self.mask | self._coerce(other))

    def intersection(self, other: "SiteSet") -> "SiteSet":
        return SiteSet(self.window, self.mask & self._coerce(other))

    def difference(self, other: "SiteSet") -> "SiteSet":
        return SiteSet(self.window, self.mask & ~self._coerce(other))

    def issubset(self, other: "SiteSet") -> bool:
        return all(x in other for x in self.sites())

    def isdisjoint(self, other: "SiteSet") -> bool:
        return not self.intersection(other)

    def touches_edge(self) -> bool:
        return bool((self.mask & self.window.edge_mask()).any())

    def reframe(self, window: Window, strict: bool = True) -> "SiteSet":
        """The same set seen over another window.

        With ``strict`` a member falling outside the new window is an error;
        otherwise it is dropped.
        """
        out = np.zeros(window.shape, dtype=bool)
        common = self.window.intersect(window)
        if common is not None:
            out[window.slices_of(common)] = self.mask[self.window.slices_of(common)]
        if strict and int(out.sum()) != len(self):
            raise ValueError("set does not fit in the target window")
        return SiteSet(window, out)

    def translate(self, v: Sequence[int]) -> "SiteSet":
        w = Window(tuple(a + int(b) for a, b in zip(self.window.lo, v)),
                   tuple(a + int(b) for a, b in zip(self.window.hi, v)))
        return SiteSet(w, self.mask)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{k}" for k in range(self.window.d)])
        w.writerows(self.sites())
        return buf.getvalue()

    def to_rle(self) -> dict:
        """Run-length encoding of the row-major bitmap, starting with a 0-run."""
        flat = self.mask.ravel()
        runs = []
        cur, n = False, 0
        for b in flat:
            if bool(b) == cur:
                n += 1
            else:
                runs.append(n)
                cur, n = bool(b), 1
        runs.append(n)
        return {"window": self.window.to_json(), "rle": runs}

    @classmethod
    def from_rle(cls, obj: dict) -> "SiteSet":
        window = Window.from_json(obj["window"])
        flat = np.zeros(window.size, dtype=bool)
        pos, val = 0, False
        for n in obj["rle"]:
            flat[pos:pos + n] = val
            pos += n
            val = not val
        return cls(window, flat.reshape(window.shape))


@dataclass(frozen=True)
class LatticePath:
    """Ordered sites, consecutive ones adjacent under ``kind``."""

    sites: tuple
    kind: str = NN

    def __post_init__(self):
        pts = tuple(tuple(int(c) for c in x) for x in self.sites)
        if not pts:
            raise ValueError("a path needs at least one site")
        object.__setattr__(self, "sites", pts)
        for a, b in zip(pts, pts[1:]):
            diff = [abs(p - q) for p, q in zip(a, b)]
            if self.kind == NN:
                ok = sum(diff) == 1
            elif self.kind == STAR:
                ok = max(diff) == 1
            else:
                raise ValueError(f"unknown adjacency {self.kind!r}")
            if not ok:
                raise ValueError(f"{a} and {b} are not {self.kind}-adjacent")

    def __len__(self) -> int:
        return len(self.sites) - 1

    @property
    def length(self) -> int:
        return len(self.sites) - 1

    @property
    def start(self) -> Site:
        return self.sites[0]

    @property
    def end(self) -> Site:
        return self.sites[-1]

    def interior(self) -> tuple:
        return self.sites[1:-1]

    def is_simple(self) -> bool:
        return len(set(self.sites)) == len(self.sites)

    def translate(self, v: Sequence[int]) -> "LatticePath":
        return LatticePath(tuple(tuple(a + int(b) for a, b in zip(x, v)) for x in self.sites), self.kind)

    def reversed(self) -> "LatticePath":
        return LatticePath(self.sites[::-1], self.kind)

    def within(self, window: Window) -> bool:
        return all(window.contains(x) for x in self.sites)

    def flags(self, values: np.ndarray, window: Window, M: float) -> dict:
        """Validity flags against a potential array over ``window``."""
        v = np.array([values[window.index(x)] for x in self.sites])
        return {
            "simple": self.is_simple(),
            "livable": bool(np.all(np.isfinite(v))),
            "healthy": bool(np.all(v <= M)),
        }


def _pad(mask: np.ndarray, value: bool = False) -> np.ndarray:
    return np.pad(mask, 1, mode="constant", constant_values=value)


def boundary(A: SiteSet, kind: str) -> SiteSet:
    """Outer, inner, star-outer or star-inner boundary of ``A``.

    Sites outside the window count as complement.  Outer boundaries are
    clipped to the window, with a :class:`ClippedBoundary` warning when
    something was cut.
    """
    if kind not in BOUNDARY_KINDS:
        raise ValueError(f"unknown boundary kind {kind!r}")
    d = A.window.d
    st = structure(d, STAR if kind.startswith("star") else NN)
    padded = _pad(A.mask)
    inner = slice(1, -1)
    core = (inner,) * d
    if kind.endswith("outer"):
        grown = ndimage.binary_dilation(padded, structure=st) & ~padded
        ring = grown.copy()
        ring[core] = False
        if ring.any():
            warnings.warn(f"{kind} boundary clipped by the window edge", ClippedBoundary, stacklevel=2)
        return SiteSet(A.window, grown[core])
    comp_grown = ndimage.binary_dilation(~padded, structure=st)
    return SiteSet(A.window, (padded & comp_grown)[core])


def label(mask: np.ndarray, adjacency: str = NN) -> tuple:
    """Connected-component labels of a boolean array (0 = background)."""
    mask = np.asarray(mask, dtype=bool)
    return ndimage.label(mask, structure=structure(mask.ndim, adjacency))


def components(A: SiteSet, adjacency: str = NN) -> list:
    """Maximal connected pieces of ``A``, ordered by smallest member."""
    labels, n = label(A.mask, adjacency)
    if n == 0:
        return []
    flat = labels.ravel()
    nz = np.flatnonzero(flat)
    # first occurrence in C order is the lexicographically smallest member
    _, first = np.unique(flat[nz], return_index=True)
    order = np.argsort(nz[first])
    return [SiteSet(A.window, labels == (k + 1)) for k in order]


def has_hole(A: SiteSet) -> tuple:
    """Whether the complement of ``A`` has a component away from the edge.

    Returns ``(flag, holes)``.  Finite complement components are those not
    touching the window edge, so ``A`` itself must stay off the edge.
    """
    if A.touches_edge():
        raise MarginViolation("set touches the window edge; holes are undefined")
    comp = SiteSet(A.window, ~A.mask)
    holes = [c for c in components(comp, NN) if not c.touches_edge()]
    return bool(holes), holes


def isoperimetric_check(A: SiteSet) -> float:
    n = len(A)
    if n == 0:
        raise EmptySet("isoperimetric ratio of the empty set")
    d = A.window.d
    b = len(boundary(A, "inner"))
    return b ** (d / (d - 1)) / n


def diameter(A: SiteSet, metric: str = "linf") -> int:
    pts = A.array()
    if len(pts) == 0:
        return 0
    if metric == "linf":
        return int((pts.max(axis=0) - pts.min(axis=0)).max())
    if metric == "l1":
        d = pts.shape[1]
        best = 0
        for signs in itertools.product((1, -1), repeat=d - 1):
            proj = pts @ np.array((1,) + signs)
            best = max(best, int(proj.max() - proj.min()))
        return best
    raise ValueError(f"unknown metric {metric!r}")
