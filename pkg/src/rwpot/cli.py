"""Command-line front end: ``rwpot <subcommand> [flags]``.

Every subcommand writes long-format CSV tables plus a ``<name>.json``
summary into ``--out``.  CSV files start with a ``#`` line carrying the
config hash and seed; JSON summaries carry the full config.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import warnings

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_config
from .costsolve import fpp_distance, solve_cost_field, travel_cost
from .disorder import dump_field, masks, sample_field
from .errors import MaxIterExceeded, RwpotError, ValidationError, WindowTooSmall
from .estimate import (RaySchedule, fan_estimate, fan_norm_from_estimate, dual_norm,
                       hyperplane_convergence, ldp_panel, plane_window, rate_function, shape_raster,
                       velocity_profile)
from .lattice import SiteSet, Window
from .renorm import build_macro_map, dumps_summary

SUBCOMMANDS = ("sample", "cost", "fpp", "renorm", "alpha", "dual", "rate", "shape", "hyperplane",
               "ldp", "velocity", "selftest")
DEFAULT_MAX_CELLS = 10_000_000


def jsonable(obj):
    """Recursively replace non-finite floats by strings and tuples by lists."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def num(v) -> str:
    v = float(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def table(header: list, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([num(v) if isinstance(v, (float, np.floating)) else str(v) for v in r])
    return buf.getvalue()


def vec(v) -> str:
    return " ".join(str(c) for c in v)


class Run:
    """Collects the artifacts of one subcommand run."""

    def __init__(self, name: str, cfg: ExperimentConfig, workers: int):
        self.name, self.cfg, self.workers = name, cfg, workers
        self.files: dict = {}
        self.summary: dict = {}

    def csv(self, fname: str, text: str) -> None:
        head = f"# rwpot {self.name} config_hash={self.cfg.hash()} seed={self.cfg.seed}\n"
        self.files[fname] = head + text

    def blob(self, fname: str, data: bytes) -> None:
        self.files[fname] = data

    def finish(self) -> dict:
        doc = {"subcommand": self.name, "version": __version__, "config_hash": self.cfg.hash(),
               "seed": self.cfg.seed, "config": self.cfg.to_json(), "result": self.summary}
        self.files[f"{self.name}.json"] = json.dumps(jsonable(doc), sort_keys=True, indent=2) + "\n"
        return self.files


# -- memory guard -------------------------------------------------------------
def _ray_cells(cfg, directions) -> int:
    best = 0
    for y in directions:
        W = RaySchedule(y, cfg.ns, cfg.replicas, cfg.margin).window(2 if cfg.kind == "hat_a" else 1)
        best = max(best, W.size)
    return best


def cells_needed(name: str, cfg: ExperimentConfig) -> int:
    d = cfg.d
    box = (2 * cfg.window + 1) ** d
    if name in ("alpha",):
        return _ray_cells(cfg, cfg.resolved_directions())
    if name in ("dual",):
        return _ray_cells(cfg, cfg.resolved_fan())
    if name == "rate":
        return _ray_cells(cfg, [tuple(1 if c else 0 for c in cfg.resolved_x())] if any(cfg.resolved_x()) else [])
    if name == "shape":
        return max(box * cfg.resolution ** d, _ray_cells(cfg, cfg.resolved_fan()))
    if name == "hyperplane":
        return plane_window(cfg.resolved_x(), cfg.ts[-1], d, cfg.margin).size
    if name == "ldp":
        return (2 * cfg.ns[-1] + 1) ** d
    if name == "velocity":
        s2 = max(w[1] for w in cfg.windows)
        return (2 * int(math.ceil(cfg.ns[-1] * s2)) + 1) ** d
    return box


# -- subcommands ---------------------------------------------------------------
def field_window(cfg) -> Window:
    return Window.box(cfg.origin, cfg.window)


def cmd_sample(run: Run) -> None:
    cfg = run.cfg
    V = sample_field(cfg.spec, field_window(cfg), cfg.seed)
    run.blob("field.rwpf", dump_field(V))
    run.csv("field.csv", V.to_csv())
    livable = np.isfinite(V.values)
    run.summary = {"window": V.window.to_json(), "livable_fraction": float(livable.mean()),
                   "livable_probability": 1.0 - cfg.spec.p_inf}
    if cfg.M is not None:
        sm = masks(V, cfg.M)
        run.summary["healthy_fraction"] = float(sm[1].sites.mask.mean())
        run.summary["healthy_probability"] = cfg.spec.cdf(cfg.M)
    warn = cfg.livable_warning()
    if warn:
        run.summary["warning"] = warn


def cmd_cost(run: Run) -> None:
    cfg = run.cfg
    W = field_window(cfg)
    y = cfg.resolved_target()
    if not W.contains(y):
        raise WindowTooSmall(f"target {y} lies outside the window of half-width {cfg.window}")
    V = sample_field(cfg.spec, W, cfg.seed)
    cf = solve_cost_field(V, SiteSet.from_sites(W, [y]), cfg.tol, cfg.max_iter, cfg.method)
    run.csv("cost.csv", cf.to_csv())
    run.summary = {"target": y, "a_origin": cf.at(cfg.origin), "residual": cf.residual,
                   "iterations": cf.iterations, "method": cf.method}


def cmd_fpp(run: Run) -> None:
    cfg = run.cfg
    W = field_window(cfg)
    y = cfg.resolved_target()
    if not W.contains(y):
        raise WindowTooSmall(f"target {y} lies outside the window of half-width {cfg.window}")
    V = sample_field(cfg.spec, W, cfg.seed)
    dist = fpp_distance(V, cfg.origin)
    rows = [list(x) + [float(dist[W.index(x)])] for x in W.sites()]
    run.csv("fpp.csv", table([f"x{k}" for k in range(cfg.d)] + ["distance"], rows))
    f = float(dist[W.index(y)])
    zrows = []
    for beta in cfg.betas:
        a = travel_cost(V.scaled(beta), cfg.origin, y, cfg.tol, cfg.method) / beta
        zrows.append([beta, a, f, a - f])
    run.csv("zero_temperature.csv", table(["beta", "a_over_beta", "fpp", "gap"], zrows))
    run.summary = {"target": y, "fpp": f, "zero_temperature": [
        {"beta": r[0], "a_over_beta": r[1], "gap": r[3]} for r in zrows]}


def cmd_renorm(run: Run) -> None:
    cfg = run.cfg
    if cfg.M is None or cfg.N is None:
        raise ValidationError("renorm needs M and N")
    V = sample_field(cfg.spec, field_window(cfg), cfg.seed)
    macro = build_macro_map(V, cfg.M, cfg.N)
    run.csv("renorm.csv", macro.label_grid_csv())
    run.summary = json.loads(dumps_summary(macro))
    run.summary["healthy_probability"] = cfg.spec.cdf(cfg.M)


def _estimate_rows(est) -> list:
    return [[vec(r["direction"]), r["lambda"], r["n"], r["replica"], float(r["value"])] for r in est.records]


EST_HEADER = ["direction", "lambda", "n", "replica", "value"]


def _summary_rows(est) -> list:
    return [{**r, "direction": list(r["direction"])} for r in est.summary_rows()]


def cmd_alpha(run: Run) -> None:
    cfg = run.cfg
    est = fan_estimate(cfg.spec, cfg.resolved_directions(), cfg.ns, cfg.replicas, cfg.seed, cfg.lambdas,
                       cfg.kind, cfg.margin, cfg.M, cfg.N, cfg.tol, run.workers)
    run.csv("alpha.csv", table(EST_HEADER, _estimate_rows(est)))
    run.summary = {"kind": cfg.kind, "stats": _summary_rows(est), "subadditivity": [
        {"direction": list(y), "lambda": lam, "checks": est.subadditivity_diagnostic(y, lam)}
        for y in est.directions() for lam in est.lambdas()]}


def _fan_norm(run: Run):
    cfg = run.cfg
    est = fan_estimate(cfg.spec, cfg.resolved_fan(), cfg.ns, cfg.replicas, cfg.seed, (0.0,), cfg.kind,
                       cfg.margin, cfg.M, cfg.N, cfg.tol, run.workers)
    return est, fan_norm_from_estimate(est)


def cmd_dual(run: Run) -> None:
    cfg = run.cfg
    est, norm = _fan_norm(run)
    run.csv("alpha.csv", table(EST_HEADER, _estimate_rows(est)))
    x = cfg.resolved_x()
    value = dual_norm(norm, x)
    run.csv("fan.csv", table(["direction", "alpha", "stderr"],
                             [[vec(y), a, s] for y, a, s in zip(norm.fan, norm.alphas, norm.stderrs)]))
    run.summary = {"x": x, "dual": value, "fan": [list(y) for y in norm.fan]}


def cmd_rate(run: Run) -> None:
    cfg = run.cfg
    rc = rate_function(cfg.spec, cfg.resolved_x(), cfg.lambdas, cfg.ns, cfg.replicas, cfg.seed, cfg.margin,
                       cfg.kind, cfg.M, cfg.N, cfg.refine, cfg.tol, run.workers)
    run.csv("rate.csv", rc.to_csv())
    run.summary = {"x": rc.x, "I": rc.I, "argmax_lambda": rc.argmax, "divergent": rc.divergent,
                   "refined": [list(p) for p in rc.refined]}


def cmd_shape(run: Run) -> None:
    cfg = run.cfg
    if cfg.d != 2:
        raise ValidationError("shape is implemented for d = 2")
    _, norm = _fan_norm(run)
    V = sample_field(cfg.spec, field_window(cfg), cfg.seed)
    rows, summaries = [], []
    for t in cfg.ts:
        sr = shape_raster(V, t, norm, cfg.resolution, cfg.enlargement, tol=cfg.tol)
        s = sr.summary()
        summaries.append(s)
        rows.append([t, s["shape_area"], s["enlarged_area"], s["K_area"], s["symdiff_area"],
                     s["enlarged_symdiff_area"], s["lattice_points"]])
        pts = [list(x) for x in sr.lattice_set.sites()]
        run.csv(f"shape_t{t:g}.csv", table(["x0", "x1"], pts))
    run.csv("shape.csv", table(["t", "shape_area", "enlarged_area", "K_area", "symdiff_area",
                                "enlarged_symdiff_area", "lattice_points"], rows))
    run.summary = {"rasters": summaries, "K_vertices": norm.vertices().tolist()}


def cmd_hyperplane(run: Run) -> None:
    cfg = run.cfg
    _, norm = _fan_norm(run) if cfg.d == 2 else (None, None)
    x = cfg.resolved_x()
    res = hyperplane_convergence(cfg.spec, x, cfg.ts, cfg.replicas, cfg.seed, cfg.margin, norm, cfg.tol,
                                 run.workers)
    per = res["per_replica"]
    rows = [[vec(x), t, r, float(per[r, k])] for k, t in enumerate(cfg.ts) for r in range(per.shape[0])]
    run.csv("hyperplane.csv", table(["x", "t", "replica", "cost"], rows))
    run.summary = {"x": x, "rows": res["rows"], "reference": res["reference"]}


def cmd_ldp(run: Run) -> None:
    cfg = run.cfg
    x = cfg.resolved_x()
    res = ldp_panel(cfg.spec, x, cfg.r, cfg.ns, cfg.replicas, cfg.seed, run.workers)
    per = res["per_replica"]
    rows = []
    for k, n in enumerate(cfg.ns):
        for r in range(per.shape[0]):
            rows.append([vec(x), n, r, float(per[r, k, 0]), float(per[r, k, 1]), float(per[r, k, 2])])
    run.csv("ldp.csv", table(["x", "n", "replica", "probability", "rate", "logZ_rate"], rows))
    run.summary = {"x": x, "r": cfg.r, "rows": res["rows"]}


def cmd_velocity(run: Run) -> None:
    cfg = run.cfg
    x = cfg.resolved_directions()[0]
    res = velocity_profile(cfg.spec, x, cfg.velocity_lambda, cfg.windows, cfg.ns, cfg.replicas, cfg.seed,
                           cfg.h, cfg.margin, cfg.tol, run.workers)
    per = res["per_replica"]
    rows = []
    for a, n in enumerate(cfg.ns):
        for b, (s1, s2) in enumerate(cfg.windows):
            for r in range(per.shape[0]):
                rows.append([vec(x), n, float(s1), float(s2), r, float(per[r, a, b])])
    run.csv("velocity.csv", table(["direction", "n", "s1", "s2", "replica", "value"], rows))
    run.summary = {k: res[k] for k in ("x", "lambda", "alpha", "derivative_interval", "one_sided", "rows")}


def cmd_selftest(run: Run) -> None:
    from .selftest import run_selftest

    results = run_selftest(run.cfg)
    run.csv("selftest.csv", table(["check", "ok", "detail"],
                                  [[r["check"], int(r["ok"]), r["detail"]] for r in results]))
    run.summary = {"passed": all(r["ok"] for r in results), "checks": results}


COMMANDS = {name: globals()[f"cmd_{name}"] for name in SUBCOMMANDS}


# -- entry point -----------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rwpot", description="Random walk in an i.i.d. random potential on Z^d.")
    p.add_argument("--version", action="version", version=f"rwpot {__version__}")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", help="JSON experiment config (default: bundled tiny config)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", default="rwpot-out", help="output directory")
    p.add_argument("--max-cells", type=int, default=DEFAULT_MAX_CELLS)
    p.add_argument("--describe", action="store_true", help="print the resolved config and exit")
    return p


def _error(exc: BaseException, code: int) -> int:
    doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)
    return code


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
            cfg.validate()
        if args.workers < 1:
            raise ValidationError("--workers must be positive")
        if args.describe:
            print(json.dumps(jsonable({"config_hash": cfg.hash(), "config": cfg.to_json()}),
                             sort_keys=True, indent=2))
            return 0
        need = cells_needed(args.subcommand, cfg)
        if need > args.max_cells:
            raise ValidationError(f"experiment needs about {need} cells, above --max-cells {args.max_cells}")
        r = Run(args.subcommand, cfg, args.workers)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            COMMANDS[args.subcommand](r)
        files = r.finish()
    except ValidationError as exc:
        return _error(exc, 2)
    except MaxIterExceeded as exc:
        return _error(exc, 3)
    except RwpotError as exc:
        return _error(exc, 1)
    os.makedirs(args.out, exist_ok=True)
    for fname, content in files.items():
        mode = "wb" if isinstance(content, bytes) else "w"
        with open(os.path.join(args.out, fname), mode) as fh:
            fh.write(content)
    print(json.dumps(jsonable({"subcommand": args.subcommand, "out": args.out, "files": sorted(files)}),
                     sort_keys=True))
    if args.subcommand == "selftest" and not r.summary["passed"]:
        return 1
    return 0


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
