"""Command-line pipelines: each subcommand writes its outputs plus ``manifest.json``.

Settings are resolved flag > config file > built-in model defaults.  The
manifest records the fully resolved configuration, so passing it back with
``--config manifest.json`` repeats the run.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import os
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .cost import McConfig, eps_gap_study, estimate_J_streaming
from .dynkin import consistency_check, saddle_tests, solve_game
from .grid import Grid2D, interp_bilinear, write_fields_csv
from .hjb import DEFAULT_EPS_SCHEDULE, DEFAULT_ETA_SCHEDULE, solve, vi_residual
from .model import default_box, read_config, spec_from_sections, spec_to_config, validate_assumptions
from .oracle1d import cross_validate
from .region import extract_region, fit_free_boundaries
from .sde import audit_paths, simulate_paths
from .suite import BENCH_COLUMNS, BENCHMARKS, get, run_bench

SUBCOMMANDS = ("validate", "solve", "region", "simulate", "cost", "eps-study", "dynkin", "oracle-check", "bench")
DEFAULT_N = 129
DEFAULT_PATHS = 1000
DEFAULT_DT = 1e-3
BENCH_N = 65
BENCH_PATHS = 2000


class CliError(ValueError):
    pass


# --------------------------------------------------------------------------
# parsing helpers
# --------------------------------------------------------------------------


def parse_grid(text: str) -> tuple:
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise CliError(f"--grid expects n1xn2, got {text!r}") from None


def parse_box(text: str) -> tuple:
    try:
        (a, b), (c, d) = (part.split(":") for part in text.split(","))
        return float(a), float(b), float(c), float(d)
    except ValueError:
        raise CliError(f"--box expects x1min:x1max,x2min:x2max, got {text!r}") from None


def parse_floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise CliError(f"expected comma-separated numbers, got {text!r}") from None


def parse_points(text: str) -> list:
    pts = [parse_floats(p) for p in text.split(";") if p.strip()]
    if any(len(p) != 2 for p in pts):
        raise CliError(f"--points expects x1,x2;x1,x2;..., got {text!r}")
    return pts


def _fmt_floats(vals) -> str:
    return ",".join(repr(float(v)) for v in vals)


def _fmt_box(box) -> str:
    return f"{box[0]!r}:{box[1]!r},{box[2]!r}:{box[3]!r}"


def load_config(path) -> configparser.ConfigParser:
    """INI file, or a ``manifest.json`` written by an earlier run."""
    if path is None:
        return configparser.ConfigParser(interpolation=None)
    if str(path).endswith(".json"):
        with open(path) as fh:
            data = json.load(fh)
        cfg = configparser.ConfigParser(interpolation=None)
        cfg.read_dict(data["config"])
        return cfg
    return read_config(path)


# --------------------------------------------------------------------------
# resolved settings
# --------------------------------------------------------------------------


class Settings:
    """Everything a pipeline needs, with its provenance folded into one config."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        cfg = load_config(args.config)
        if "model" in cfg:
            name = cfg["model"].get("name")
            cfg.remove_section("model")
            args.model = args.model or name
        bench = get(args.model) if args.model else None
        self.bench = bench
        if any(s in cfg for s in ("dynamics", "cost", "discount")):
            self.spec = spec_from_sections(cfg)
        elif bench is not None:
            self.spec = bench.spec
        else:
            self.spec = None
        gsec = cfg["grid"] if "grid" in cfg else {}
        ssec = cfg["solver"] if "solver" in cfg else {}
        msec = cfg["simulation"] if "simulation" in cfg else {}

        if args.grid:
            self.n1, self.n2 = parse_grid(args.grid)
        else:
            self.n1 = int(gsec.get("n1", DEFAULT_N))
            self.n2 = int(gsec.get("n2", self.n1))
        if args.box:
            self.box = parse_box(args.box)
        elif "box" in gsec:
            self.box = parse_box(gsec["box"])
        elif bench is not None:
            self.box = tuple(bench.box)
        elif self.spec is not None:
            self.box = default_box(self.spec)
        else:
            self.box = None
        self.eps_schedule = parse_floats(args.eps_schedule or ssec.get("eps_schedule", "")) or DEFAULT_EPS_SCHEDULE
        self.eta_schedule = parse_floats(args.eta_schedule or ssec.get("eta_schedule", "")) or DEFAULT_ETA_SCHEDULE
        self.paths = int(args.paths if args.paths is not None else msec.get("paths", DEFAULT_PATHS))
        self.dt = float(args.dt if args.dt is not None else msec.get("dt", DEFAULT_DT))
        horizon = args.horizon if args.horizon is not None else msec.get("horizon")
        self.horizon = float(horizon) if horizon is not None else None
        self.seed = int(args.seed if args.seed is not None else msec.get("seed", 0))
        self.stride = int(args.stride if args.stride is not None else msec.get("stride", 1))
        eps = args.eps if args.eps is not None else msec.get("eps")
        self.eps = float(eps) if eps is not None else float(self.eps_schedule[-1])
        if args.x0:
            self.x0 = parse_floats(args.x0)
        elif "x0" in msec:
            self.x0 = parse_floats(msec["x0"])
        elif bench is not None:
            self.x0 = tuple(bench.x0)
        elif self.box is not None:
            self.x0 = (0.5 * (self.box[0] + self.box[1]), 0.5 * (self.box[2] + self.box[3]))
        else:
            self.x0 = None

    def need_spec(self):
        if self.spec is None:
            raise CliError("no problem given; pass a config file or --model")
        return self.spec

    @property
    def grid(self) -> Grid2D:
        self.need_spec()
        return Grid2D(*self.box, self.n1, self.n2)

    def T(self, rate: float) -> float:
        return self.horizon if self.horizon is not None else 12.0 / rate

    def to_config(self) -> dict:
        out = {}
        if self.spec is not None:
            cfg = spec_to_config(self.spec)
            out = {s: dict(cfg[s]) for s in cfg.sections()}
            out["grid"] = {"n1": str(self.n1), "n2": str(self.n2), "box": _fmt_box(self.box)}
        else:
            out["grid"] = {"n1": str(self.n1), "n2": str(self.n2)}
        out["solver"] = {"eps_schedule": _fmt_floats(self.eps_schedule), "eta_schedule": _fmt_floats(self.eta_schedule)}
        sim = {"paths": str(self.paths), "dt": repr(self.dt), "seed": str(self.seed), "stride": str(self.stride),
               "eps": repr(self.eps)}
        if self.horizon is not None:
            sim["horizon"] = repr(self.horizon)
        if self.x0 is not None:
            sim["x0"] = _fmt_floats(self.x0)
        out["simulation"] = sim
        return out


class Run:
    """Output directory, timers, and the manifest for one subcommand."""

    def __init__(self, name: str, settings: Settings, out: Path):
        self.name, self.settings, self.out = name, settings, out
        self.out.mkdir(parents=True, exist_ok=True)
        self.walls = {}
        self.files = []
        self.extra = {}
        self._t0 = time.perf_counter()

    def timed(self, label: str, fn, *a, **kw):
        t = time.perf_counter()
        try:
            return fn(*a, **kw)
        finally:
            self.walls[label] = round(time.perf_counter() - t, 6)

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def write_json(self, name: str, data) -> None:
        with open(self.path(name), "w") as fh:
            json.dump(_jsonable(data), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, name: str, header, rows) -> None:
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_cell(v) for v in r])

    def manifest(self) -> dict:
        s = self.settings
        self.walls["total"] = round(time.perf_counter() - self._t0, 6)
        return {
            "tool": "reflectctl",
            "version": __version__,
            "subcommand": self.name,
            "backend": kernels.active_name(),
            "spec_hash": s.spec.spec_hash() if s.spec is not None else None,
            "model": s.args.model,
            "grid": s.grid.to_dict() if s.spec is not None else {"n1": s.n1, "n2": s.n2},
            "eps_schedule": list(s.eps_schedule),
            "eta_schedule": list(s.eta_schedule),
            "seeds": {"seed": s.seed},
            "config": s.to_config(),
            "outputs": sorted(self.files),
            "wall_times": self.walls,
            **self.extra,
        }


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if np.isfinite(f) else None
    return obj


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def _solve(run: Run):
    s = run.settings
    return run.timed("solve", solve, s.need_spec(), s.grid, s.eps_schedule, s.eta_schedule)


def cmd_validate(run: Run) -> int:
    s = run.settings
    report = validate_assumptions(s.need_spec(), s.box)
    verdict = "FAIL" if report.hard_fail or not report.sign_conditions_ok else "PASS"
    run.write_json("validation.json", {"verdict": verdict, **report.to_dict()})
    return 0 if verdict == "PASS" else 1


def cmd_solve(run: Run) -> int:
    vf = _solve(run)
    write_fields_csv(run.path("value.csv"), vf.grid, vf.columns())
    res = vi_residual(vf.spec, vf)
    write_fields_csv(run.path("residual.csv"), vf.grid, {"residual": res["field"]})
    run.write_json("solve.json", {
        "eps_schedule": list(run.settings.eps_schedule),
        "eta_schedule": list(vf.eta_schedule) if vf.eta_schedule else None,
        "iterations": vf.iterations,
        "residual_sup_interior": res["sup_interior"],
        "sup_abs_Vx1": float(np.max(np.abs(vf.Vx1.values))),
        "tol_grad": vf.tol_grad,
        "limit": vf.limit,
        "history": [{k: v for k, v in h.items() if k != "seconds"} for h in vf.history],
    })
    return 0


def cmd_region(run: Run) -> int:
    s = run.settings
    vf = _solve(run)
    region = run.timed("region", extract_region, vf, s.eps)
    run.write_csv("region.csv", ("x2", "l", "r"), zip(region.x2, region.l, region.r))
    if vf.spec.degenerate:
        fb = fit_free_boundaries(vf)
        run.write_csv("freeboundary.csv", ("x1", "g1", "g2"), zip(fb.x1, fb.g1, fb.g2))
        run.extra["free_boundary"] = {"violation_g1": fb.violation_g1, "violation_g2": fb.violation_g2,
                                      "overlap_columns": fb.overlap_columns}
    return 0


def cmd_simulate(run: Run) -> int:
    s = run.settings
    spec = s.need_spec()
    vf = _solve(run)
    region = extract_region(vf, s.eps)
    T = s.T(spec.rho)
    paths = run.timed("simulate", simulate_paths, spec, region, s.x0, T, s.dt, s.seed, s.paths, s.stride)
    with open(run.path("paths.csv"), "w", newline="") as fh:
        fh.write("path_id,t,x1,x2,v,xi\n")
        for p in paths:
            block = np.column_stack([np.full(p.times.size, p.path_id), p.times, p.X, p.v, p.xi])
            np.savetxt(fh, block, delimiter=",", fmt=["%d", "%.17g", "%.17g", "%.17g", "%.17g", "%.17g"])
    if s.stride == 1:
        audit = run.timed("audit", audit_paths, paths, region, vf)
        run.write_json("audit.json", audit.to_dict())
    return 0


def _eps_rows(run: Run, rows) -> None:
    run.write_csv("eps_gap.csv", ("eps", "J", "stderr", "gap", "V0"),
                  ((r["eps"], r["J"], r["stderr"], r["gap"], r["V0"]) for r in rows))


def cmd_cost(run: Run) -> int:
    s = run.settings
    spec = s.need_spec()
    vf = _solve(run)
    region = extract_region(vf, s.eps)
    T = s.T(spec.rho)
    est = run.timed("cost", estimate_J_streaming, spec, region, s.x0, s.paths, T, s.dt, s.seed)
    V0 = interp_bilinear(vf.V, s.x0)
    _eps_rows(run, [{"eps": s.eps, "J": est["mean"], "stderr": est["stderr"], "gap": est["mean"] - V0, "V0": V0}])
    run.extra["tail_bound"] = est["tail_bound"]
    return 0


def cmd_eps_study(run: Run) -> int:
    s = run.settings
    spec = s.need_spec()
    vf = _solve(run)
    family = [extract_region(vf, e) for e in s.eps_schedule]
    mc = McConfig(n_paths=s.paths, dt=s.dt, horizon=s.horizon, seed=s.seed)
    table = run.timed("eps_study", eps_gap_study, spec, vf, family, s.x0, mc)
    _eps_rows(run, sorted(table.rows, key=lambda r: -r["eps"]))
    run.write_json("eps_checks.json", {"checks": table.checks(), "final_relative_gap": table.final_relative_gap()})
    return 0


def cmd_dynkin(run: Run) -> int:
    s = run.settings
    spec = s.need_spec()
    vf = _solve(run)
    game = run.timed("game", solve_game, spec, vf)
    g = game.columns()
    write_fields_csv(run.path("game.csv"), game.grid, g)
    points = parse_points(s.args.points) if s.args.points else [s.x0]
    T = s.T(spec.rho_hat)
    tests = []
    for k, x in enumerate(points):
        r = run.timed(f"saddle_{k}", saddle_tests, spec, game, x, s.paths, T, s.dt, s.seed + k)
        tests.append({"x": list(x), **r})
    run.write_json("saddle.json", {"consistency": consistency_check(game, vf), "sweeps": game.sweeps,
                                   "points": tests})
    return 0


def cmd_oracle_check(run: Run) -> int:
    vf = _solve(run)
    report = run.timed("oracle", cross_validate, vf)
    run.write_json("oracle_report.json", report)
    return 0 if report["value_ok"] and report["boundary_ok"] else 1


def cmd_bench(run: Run) -> int:
    s = run.settings
    a = s.args
    n = s.n1 if (a.grid or a.config) else BENCH_N
    paths = s.paths if (a.paths is not None or a.config) else BENCH_PATHS
    s.n1 = s.n2 = n
    s.paths = paths
    mc = McConfig(n_paths=paths, dt=s.dt, horizon=s.horizon, seed=s.seed)
    models = a.models.split(",") if a.models else list(BENCHMARKS)
    rows = run.timed("bench", run_bench, n, s.eps_schedule, mc, models)
    run.write_csv("bench.csv", BENCH_COLUMNS, ([r[c] for c in BENCH_COLUMNS] for r in rows))
    run.write_json("bench.json", {"n": n, "paths": paths, "dt": s.dt, "seed": s.seed, "rows": rows})
    run.extra["models"] = models
    return 0


COMMANDS = {
    "validate": cmd_validate,
    "solve": cmd_solve,
    "region": cmd_region,
    "simulate": cmd_simulate,
    "cost": cmd_cost,
    "eps-study": cmd_eps_study,
    "dynkin": cmd_dynkin,
    "oracle-check": cmd_oracle_check,
    "bench": cmd_bench,
}


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="reflectctl", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        q = sub.add_parser(name)
        q.add_argument("config", nargs="?", help="INI config or a manifest.json from an earlier run")
        q.add_argument("--model", choices=sorted(BENCHMARKS) + ["asymmetric_costs", "degenerate", "monotone"],
                       help="built-in problem, used when the config has no problem sections")
        q.add_argument("--grid", help="n1xn2")
        q.add_argument("--box", help="x1min:x1max,x2min:x2max")
        q.add_argument("--eps-schedule", dest="eps_schedule")
        q.add_argument("--eta-schedule", dest="eta_schedule")
        q.add_argument("--paths", type=int)
        q.add_argument("--dt", type=float)
        q.add_argument("--horizon", type=float)
        q.add_argument("--seed", type=int)
        q.add_argument("--stride", type=int)
        q.add_argument("--eps", type=float, help="reflection level; defaults to the last penalty level")
        q.add_argument("--x0", help="x1,x2")
        q.add_argument("--out", default=".", help="output directory")
        if name == "dynkin":
            q.add_argument("--points", help="x1,x2;x1,x2;... saddle test points (default: x0)")
        if name == "bench":
            q.add_argument("--models", help="comma-separated subset of the suite")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    run = None
    try:
        settings = Settings(args)
        run = Run(args.command, settings, out)
        code = COMMANDS[args.command](run)
        with open(out / "manifest.json", "w") as fh:
            json.dump(_jsonable(run.manifest()), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return code
    except Exception as exc:  # every module error becomes a JSON record and exit code 2
        err = {"error": type(exc).__name__, "message": str(exc), "subcommand": args.command}
        if os.environ.get("REFLECT_TRACEBACK"):
            err["traceback"] = traceback.format_exc()
        text = json.dumps(err, sort_keys=True)
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(text + "\n")
        except OSError:
            pass
        print(text, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
