"""Experiment configuration shared by all command-line subcommands."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources

from .costsolve import METHODS
from .disorder import DistributionSpec
from .errors import InvalidSpec, ValidationError
from .estimate import COST_KINDS, default_fan

# d = 2 site percolation threshold; external knowledge, used only for a warning
DEFAULT_PC = {2: 0.5927, 3: 0.3116}


@dataclass
class ExperimentConfig:
    d: int = 2
    spec: DistributionSpec = field(default_factory=lambda: DistributionSpec.uniform(0.0, 1.0))
    M: float | None = None
    N: int | None = None
    window: int = 10
    target: list | None = None
    directions: list | None = None
    fan: list | None = None
    ns: list = field(default_factory=lambda: [5, 10, 20])
    replicas: int = 10
    margin: int = 10
    lambdas: list = field(default_factory=lambda: [0.0])
    kind: str = "a"
    betas: list = field(default_factory=lambda: [1.0, 2.0, 4.0, 8.0, 16.0])
    x: list | None = None
    r: float = 0.25
    ts: list = field(default_factory=lambda: [5.0, 10.0, 20.0])
    resolution: int = 2
    enlargement: float | None = None
    velocity_lambda: float = 1.0
    windows: list = field(default_factory=lambda: [[1.0, 1.5], [1.5, 2.5]])
    h: float = 0.25
    refine: int = 10
    tol: float = 1e-12
    method: str = "direct"
    max_iter: int = 1_000_000
    pc: float | None = None
    seed: int = 0

    # -- validation -----------------------------------------------------------
    def validate(self) -> "ExperimentConfig":
        d = self.d
        if not isinstance(d, int) or d < 1:
            raise ValidationError("d must be a positive integer")
        if self.N is not None and (self.N < 2 or self.N % 2):
            raise ValidationError("N must be an even integer >= 2")
        if self.M is not None and not self.M >= 0:
            raise ValidationError("M must be nonnegative")
        if self.window < 1 or self.margin < 1 or self.replicas < 1:
            raise ValidationError("window, margin and replicas must be positive")
        for name in ("ns", "lambdas", "betas", "ts"):
            g = getattr(self, name)
            if not g or list(g) != sorted(g):
                raise ValidationError(f"{name} must be a nonempty sorted list")
        if len(set(self.ns)) != len(self.ns) or self.ns[0] <= 0:
            raise ValidationError("ns must be strictly increasing positive integers")
        if self.lambdas[0] < 0:
            raise ValidationError("lambdas must be nonnegative")
        if self.betas[0] <= 0:
            raise ValidationError("betas must be positive")
        if self.kind not in COST_KINDS:
            raise ValidationError(f"kind must be one of {COST_KINDS}")
        if self.kind == "hat_a" and (self.M is None or self.N is None):
            raise ValidationError("kind hat_a needs M and N")
        for name in ("target", "x"):
            v = getattr(self, name)
            if v is not None and len(v) != d:
                raise ValidationError(f"{name} must have {d} coordinates")
        for name in ("directions", "fan"):
            v = getattr(self, name)
            if v is not None:
                if not v or any(len(y) != d or not any(y) for y in v):
                    raise ValidationError(f"{name} must hold nonzero {d}-vectors")
        if self.method not in METHODS:
            raise ValidationError(f"method must be one of {METHODS}")
        if self.max_iter < 1:
            raise ValidationError("max_iter must be positive")
        if self.r < 0 or self.resolution < 1 or self.h <= 0 or self.tol <= 0:
            raise ValidationError("r, resolution, h and tol must be positive")
        for w in self.windows:
            if len(w) != 2 or not 0 <= w[0] <= w[1]:
                raise ValidationError("velocity windows must be pairs 0 <= s1 <= s2")
        if not 0 <= self.seed < 2 ** 64:
            raise ValidationError("seed must be an unsigned 64-bit integer")
        return self

    # -- resolved defaults -----------------------------------------------------
    @property
    def origin(self) -> tuple:
        return (0,) * self.d

    def resolved_target(self) -> tuple:
        if self.target is not None:
            return tuple(int(c) for c in self.target)
        return (self.window // 2,) + (0,) * (self.d - 1)

    def resolved_directions(self) -> list:
        if self.directions is not None:
            return [tuple(int(c) for c in y) for y in self.directions]
        return [(1,) + (0,) * (self.d - 1)]

    def resolved_fan(self) -> list:
        if self.fan is not None:
            return [tuple(int(c) for c in y) for y in self.fan]
        return default_fan(self.d)

    def resolved_x(self) -> tuple:
        if self.x is not None:
            return tuple(float(c) for c in self.x)
        return (0.5,) + (0.0,) * (self.d - 1)

    # -- serialization -----------------------------------------------------------
    def to_json(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.to_json() if isinstance(v, DistributionSpec) else v
        return out

    def canonical(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(obj)
        if "spec" in kw:
            if not isinstance(kw["spec"], dict):
                raise InvalidSpec("spec must be an object")
            kw["spec"] = DistributionSpec.from_json(kw["spec"])
        try:
            return cls(**kw).validate()
        except TypeError as exc:
            raise ValidationError(str(exc)) from None

    def livable_warning(self) -> str | None:
        pc = self.pc if self.pc is not None else DEFAULT_PC.get(self.d)
        p = 1.0 - self.spec.p_inf
        if pc is not None and p <= pc:
            return f"livable fraction {p:.4g} is at or below the site threshold {pc}"
        return None


def tiny_config() -> ExperimentConfig:
    text = resources.files("rwpot").joinpath("data/tiny.json").read_text()
    return ExperimentConfig.from_json(json.loads(text))


def load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return tiny_config()
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from None
    if not isinstance(obj, dict):
        raise ValidationError("config must be a JSON object")
    return ExperimentConfig.from_json(obj)

