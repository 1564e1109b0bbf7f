"""I.i.d. potential fields on a window.

Values live in [0, +inf]; +inf is stored as IEEE infinity and never as a
large finite number.  Sampling is counter based: the value at a site is a
pure function of ``(seed, replica, site coordinates)``, so any sub-window
of a field can be regenerated on its own and replicas can be produced on
any worker in any order.
"""
from __future__ import annotations

import csv
import io
import json
import math
import struct
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import InvalidSpec, NotFound, ValidationError
from .lattice import LatticePath, SiteSet, Window, nn_offsets

INF = math.inf

_CONT_KINDS = {"uniform": ("a", "b"), "exponential": ("rate",), "constant": ("c",)}


@dataclass(frozen=True)
class DistributionSpec:
    """Law of V(0): atoms, weighted continuous parts and a mass at +inf.

    ``atoms`` is a tuple of ``(value, prob)``; ``continuous`` a tuple of
    dicts such as ``{"kind": "exponential", "rate": 1.0, "weight": 0.5}``.
    """

    atoms: tuple = ()
    continuous: tuple = ()
    p_inf: float = 0.0

    def __post_init__(self):
        atoms = []
        p_inf = float(self.p_inf)
        for value, prob in self.atoms:
            value, prob = float(value), float(prob)
            if math.isinf(value) and value > 0:
                p_inf += prob
            else:
                atoms.append((value, prob))
        object.__setattr__(self, "atoms", tuple(atoms))
        object.__setattr__(self, "continuous", tuple(dict(c) for c in self.continuous))
        object.__setattr__(self, "p_inf", p_inf)
        self.validate()

    def validate(self) -> None:
        total = self.p_inf
        if not 0.0 <= self.p_inf < 1.0:
            raise InvalidSpec(f"p_inf must lie in [0, 1), got {self.p_inf}")
        for value, prob in self.atoms:
            if not (value >= 0.0) or prob < 0.0:
                raise InvalidSpec(f"bad atom ({value}, {prob})")
            total += prob
        for part in self.continuous:
            kind = part.get("kind")
            if kind not in _CONT_KINDS:
                raise InvalidSpec(f"unknown continuous kind {kind!r}")
            missing = [k for k in _CONT_KINDS[kind] + ("weight",) if k not in part]
            if missing:
                raise InvalidSpec(f"{kind} part is missing {missing}")
            if part["weight"] < 0:
                raise InvalidSpec("negative weight")
            if kind == "uniform" and not (0 <= part["a"] <= part["b"] < INF):
                raise InvalidSpec("uniform(a, b) needs 0 <= a <= b < inf")
            if kind == "exponential" and not part["rate"] > 0:
                raise InvalidSpec("exponential rate must be positive")
            if kind == "constant" and not (0 <= part["c"] < INF):
                raise InvalidSpec("constant must be finite and nonnegative")
            total += part["weight"]
        if abs(total - 1.0) > 1e-12:
            raise InvalidSpec(f"probabilities sum to {total!r}, not 1")

    @classmethod
    def atom(cls, value: float) -> "DistributionSpec":
        return cls(atoms=((value, 1.0),))

    @classmethod
    def exponential(cls, rate: float = 1.0, p_inf: float = 0.0, p_zero: float = 0.0) -> "DistributionSpec":
        atoms = ((0.0, p_zero),) if p_zero else ()
        return cls(atoms=atoms, continuous=({"kind": "exponential", "rate": rate,
                                             "weight": 1.0 - p_inf - p_zero},), p_inf=p_inf)

    @classmethod
    def uniform(cls, a: float, b: float, p_inf: float = 0.0) -> "DistributionSpec":
        return cls(continuous=({"kind": "uniform", "a": a, "b": b, "weight": 1.0 - p_inf},), p_inf=p_inf)

    # -- moments -----------------------------------------------------------
    def _parts(self):
        for value, prob in self.atoms:
            yield prob, ("constant", value)
        for part in self.continuous:
            yield part["weight"], part

    def laplace(self, s: float = 1.0) -> float:
        """E[exp(-s V)], with exp(-inf) = 0."""
        out = 0.0
        for w, part in self._parts():
            if isinstance(part, tuple):
                out += w * math.exp(-s * part[1])
            elif part["kind"] == "constant":
                out += w * math.exp(-s * part["c"])
            elif part["kind"] == "exponential":
                out += w * part["rate"] / (part["rate"] + s)
            else:
                a, b = part["a"], part["b"]
                if b == a or s == 0:
                    out += w * math.exp(-s * a)
                else:
                    out += w * (math.exp(-s * a) - math.exp(-s * b)) / (s * (b - a))
        return out

    def finite_moments(self) -> tuple:
        """Mean and variance of V(0) given V(0) < inf."""
        m1 = m2 = 0.0
        for w, part in self._parts():
            if isinstance(part, tuple) or part["kind"] == "constant":
                c = part[1] if isinstance(part, tuple) else part["c"]
                e1, e2 = c, c * c
            elif part["kind"] == "exponential":
                r = part["rate"]
                e1, e2 = 1 / r, 2 / r ** 2
            else:
                a, b = part["a"], part["b"]
                e1, e2 = (a + b) / 2, (a * a + a * b + b * b) / 3
            m1 += w * e1
            m2 += w * e2
        q = 1.0 - self.p_inf
        mean = m1 / q
        return mean, m2 / q - mean ** 2

    def cdf(self, M: float) -> float:
        """P[V(0) <= M]."""
        out = 0.0
        for w, part in self._parts():
            if isinstance(part, tuple) or part["kind"] == "constant":
                c = part[1] if isinstance(part, tuple) else part["c"]
                out += w * (c <= M)
            elif part["kind"] == "exponential":
                out += w * (1 - math.exp(-part["rate"] * M)) if M >= 0 else 0.0
            else:
                a, b = part["a"], part["b"]
                if b == a:
                    out += w * (a <= M)
                else:
                    out += w * min(1.0, max(0.0, (M - a) / (b - a)))
        return out

    def quantile(self, u_pick: np.ndarray, u_val: np.ndarray) -> np.ndarray:
        """Map two independent uniform arrays to samples."""
        out = np.full(u_pick.shape, INF)
        lo = 0.0
        unset = np.ones(u_pick.shape, dtype=bool)
        for w, part in self._parts():
            hi = lo + w
            sel = unset & (u_pick >= lo) & (u_pick < hi)
            if isinstance(part, tuple):
                out[sel] = part[1]
            elif part["kind"] == "constant":
                out[sel] = part["c"]
            elif part["kind"] == "exponential":
                out[sel] = -np.log1p(-u_val[sel]) / part["rate"]
            else:
                out[sel] = part["a"] + (part["b"] - part["a"]) * u_val[sel]
            unset &= ~sel
            lo = hi
        return out

    # -- json --------------------------------------------------------------
    def to_json(self) -> dict:
        return {
            "atoms": [{"value": v, "prob": p} for v, p in self.atoms],
            "continuous": [dict(c) for c in self.continuous],
            "p_inf": self.p_inf,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DistributionSpec":
        try:
            atoms = []
            for a in obj.get("atoms", []):
                if isinstance(a, dict):
                    atoms.append((float(a["value"]), float(a["prob"])))
                else:
                    atoms.append((float(a[0]), float(a[1])))
            return cls(atoms=tuple(atoms), continuous=tuple(obj.get("continuous", [])),
                       p_inf=float(obj.get("p_inf", 0.0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidSpec(f"malformed distribution spec: {exc}") from exc


# -- counter-based hashing ------------------------------------------------
_M64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _mix(z: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer on uint64 arrays."""
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(0xBF58476D1CE4E5B9)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def site_uniforms(seed: int, replica: int, window: Window, stream: int) -> np.ndarray:
    """Uniforms in [0, 1) keyed by (seed, replica, site, stream)."""
    with np.errstate(over="ignore"):
        h = _mix(np.uint64(seed & _M64) + _GOLDEN)
        h = _mix(h ^ np.uint64(replica & _M64))
        h = np.broadcast_to(h, window.shape).copy()
        for axis, c in enumerate(window.coords()):
            key = c.astype(np.int64).astype(np.uint64) + np.uint64(axis + 1) * _GOLDEN
            h = _mix(h ^ key)
        h = _mix(h ^ (np.uint64(stream + 1) * np.uint64(0xD1B54A32D192ED03)))
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


@dataclass(frozen=True, eq=False)
class PotentialField:
    """Potential values over a window, immutable.

    ``base`` holds the sampled values; ``values`` adds ``lambda_shift`` to
    finite entries and multiplies by ``beta``.
    """

    window: Window
    base: np.ndarray = field(repr=False)
    seed: int = 0
    replica: int = 0
    lambda_shift: float = 0.0
    beta: float = 1.0

    def __post_init__(self):
        b = np.asarray(self.base, dtype=np.float64)
        if b.shape != self.window.shape:
            raise ValueError(f"values shape {b.shape} != window shape {self.window.shape}")
        if np.isnan(b).any() or (b < 0).any():
            raise ValueError("potential values must lie in [0, +inf]")
        if self.lambda_shift < 0 or self.beta < 0:
            raise ValueError("lambda shift and beta must be nonnegative")
        b = b.copy()
        b.setflags(write=False)
        object.__setattr__(self, "base", b)
        if self.beta == 0.0:
            v = np.where(np.isinf(b), INF, 0.0)
        else:
            v = b * self.beta
        v = v + self.lambda_shift
        v.setflags(write=False)
        object.__setattr__(self, "_values", v)

    @classmethod
    def from_array(cls, window: Window, values, **kw) -> "PotentialField":
        return cls(window, np.asarray(values, dtype=np.float64), **kw)

    @classmethod
    def constant(cls, window: Window, c: float) -> "PotentialField":
        return cls(window, np.full(window.shape, float(c)))

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def d(self) -> int:
        return self.window.d

    def __getitem__(self, x) -> float:
        return float(self._values[self.window.index(x)])

    def shifted(self, lam: float) -> "PotentialField":
        """View with potential ``lam + V`` (relative to the unshifted base)."""
        return PotentialField(self.window, self.base, self.seed, self.replica, float(lam), self.beta)

    def scaled(self, beta: float) -> "PotentialField":
        return PotentialField(self.window, self.base, self.seed, self.replica, self.lambda_shift, float(beta))

    def restrict(self, window: Window) -> "PotentialField":
        return PotentialField(window, self.base[self.window.slices_of(window)], self.seed,
                              self.replica, self.lambda_shift, self.beta)

    def weights(self) -> np.ndarray:
        """exp(-V) per site, with exp(-inf) = 0."""
        return np.exp(-self._values)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{k}" for k in range(self.d)] + ["V"])
        for x in self.window.sites():
            v = self[x]
            w.writerow(list(x) + ["inf" if math.isinf(v) else repr(v)])
        return buf.getvalue()

    def dumps(self) -> bytes:
        return dump_field(self)


def sample_field(spec: DistributionSpec, window: Window, seed: int, replica: int = 0) -> PotentialField:
    u_pick = site_uniforms(seed, replica, window, 0)
    u_val = site_uniforms(seed, replica, window, 1)
    return PotentialField(window, spec.quantile(u_pick, u_val), seed=seed, replica=replica)


# -- binary dump ----------------------------------------------------------
_MAGIC = b"RWPF"
_VERSION = 1


def dump_field(V: PotentialField) -> bytes:
    d = V.d
    head = struct.pack("<4sII", _MAGIC, _VERSION, d)
    head += struct.pack(f"<{d}q{d}q", *V.window.lo, *V.window.hi)
    head += struct.pack("<Qqdd", V.seed & _M64, V.replica, V.lambda_shift, V.beta)
    return head + np.ascontiguousarray(V.base, dtype="<f8").tobytes()


def load_field(data: bytes) -> PotentialField:
    magic, version, d = struct.unpack_from("<4sII", data, 0)
    if magic != _MAGIC or version != _VERSION:
        raise ValidationError("not a potential field dump")
    off = 12
    coords = struct.unpack_from(f"<{d}q{d}q", data, off)
    off += 16 * d
    seed, replica, lam, beta = struct.unpack_from("<Qqdd", data, off)
    off += 32
    window = Window(coords[:d], coords[d:])
    vals = np.frombuffer(data, dtype="<f8", count=window.size, offset=off).reshape(window.shape)
    return PotentialField(window, vals, seed=seed, replica=replica, lambda_shift=lam, beta=beta)


# -- derived fields ---------------------------------------------------------
def _neighbor_stack(values: np.ndarray, fill: float) -> np.ndarray:
    """Array of shape (2d, *shape): values at x + offset, ``fill`` off-window."""
    d = values.ndim
    out = np.full((2 * d,) + values.shape, fill)
    padded = np.pad(values, 1, mode="constant", constant_values=fill)
    for k, off in enumerate(nn_offsets(d)):
        sl = tuple(slice(1 + o, 1 + o + n) for o, n in zip(off, values.shape))
        out[k] = padded[sl]
    return out


def z_field(V: PotentialField) -> np.ndarray:
    """Z(x) = min of V over the 2d neighbours; NaN on the window edge."""
    z = _neighbor_stack(V.values, INF).min(axis=0)
    z[V.window.edge_mask()] = np.nan
    return z


def min_neighbor(V: PotentialField, x: Sequence[int]) -> tuple:
    """The neighbour realizing Z(x); ties go to the first offset in lexicographic order."""
    x = tuple(int(c) for c in x)
    if not V.window.contains(x) or V.window.on_edge(x):
        raise ValidationError(f"{x} is not an interior site of {V.window}")
    best, best_v = None, None
    for off in nn_offsets(len(x)):
        y = tuple(a + b for a, b in zip(x, off))
        v = V[y]
        if best is None or v < best_v:
            best, best_v = y, v
    return best


@dataclass(frozen=True)
class SiteMask:
    sites: SiteSet
    kind: str
    M: float | None = None


def masks(V: PotentialField, M: float) -> tuple:
    """(livable, healthy) masks: V < inf and V <= M."""
    if M < 0:
        raise ValidationError("M must be nonnegative")
    vals = V.values
    liv = SiteMask(SiteSet(V.window, np.isfinite(vals)), "livable", None)
    hea = SiteMask(SiteSet(V.window, vals <= M), "healthy", float(M))
    return liv, hea


def bfs(allowed: np.ndarray, window: Window, start: Sequence[int], stop=None):
    """Breadth-first search over ``allowed`` sites with lexicographic tie-break.

    ``stop(site)`` ends the search early.  Returns ``(dist, parent, hit)``
    where ``dist`` is -1 for unreached sites and ``hit`` the stopping site.
    """
    d = window.d
    dist = np.full(window.shape, -1, dtype=np.int64)
    parent = {}
    start = tuple(int(c) for c in start)
    dist[window.index(start)] = 0
    if stop is not None and stop(start):
        return dist, parent, start
    queue = deque([start])
    offs = nn_offsets(d)
    while queue:
        x = queue.popleft()
        dx = dist[window.index(x)]
        for off in offs:
            y = tuple(a + b for a, b in zip(x, off))
            if not window.contains(y):
                continue
            iy = window.index(y)
            if dist[iy] >= 0 or not allowed[iy]:
                continue
            dist[iy] = dx + 1
            parent[y] = x
            if stop is not None and stop(y):
                return dist, parent, y
            queue.append(y)
    return dist, parent, None


def trace(parent: dict, start, end) -> LatticePath:
    pts = [tuple(end)]
    while pts[-1] != tuple(start):
        pts.append(parent[pts[-1]])
    return LatticePath(tuple(reversed(pts)))


def clearing_mask(V: PotentialField, eps: float, R: int) -> np.ndarray:
    """Sites x with B(x, R) inside the window and V <= eps on it."""
    ok = V.values <= eps
    good = ndimage.minimum_filter(ok.astype(np.uint8), size=2 * R + 1, mode="constant", cval=0) > 0
    return good


def find_clearing(V: PotentialField, start, eps: float, R: int, healthy_only: bool = False,
                  M: float | None = None) -> tuple:
    """Nearest (eps, R)-clearing reachable from ``start`` by a livable path.

    With ``healthy_only`` the path uses healthy sites (V <= M) only.
    """
    if eps < 0 or R < 0:
        raise ValidationError("eps and R must be nonnegative")
    if healthy_only and M is None:
        raise ValidationError("healthy_only needs M")
    clear = clearing_mask(V, eps, R)
    allowed = V.values <= M if healthy_only else np.isfinite(V.values)
    w = V.window
    _, parent, hit = bfs(allowed, w, start, stop=lambda y: bool(clear[w.index(y)]))
    if hit is None:
        raise NotFound(f"no ({eps}, {R})-clearing reachable from {tuple(start)}")
    return hit, trace(parent, tuple(start), hit)


def spec_to_json_str(spec: DistributionSpec) -> str:
    return json.dumps(spec.to_json(), sort_keys=True)
