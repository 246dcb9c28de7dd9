"""Monte Carlo estimates of the discounted cost and the eps-optimality study."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .grid import Grid2D, interp_bilinear
from .hjb import ValueField
from .model import ProblemSpec
from .region import WaitingRegion
from .rng import STREAM_REFLECTED
from .sde import (
    MAX_REJECTED_FRACTION, PathSample, RegionLookupOutOfRange, StabilityViolation, check_time_step,
    project_initial, run_chunked,
)

TAIL_TARGET = 1e-3
TAIL_LIMIT = 1e-2


class HorizonTooShort(RuntimeError):
    pass


def grid_cost_sup(spec: ProblemSpec, grid: Grid2D) -> float:
    X1, X2 = grid.mesh()
    return float(np.max(np.abs(spec.h(X1, X2))))


def tail_fraction(rho: float, T: float, h_sup: float, mean: float) -> float:
    """Truncation bound ``e^{-rho T} sup h / rho`` relative to the estimate."""
    tail = math.exp(-rho * T) * h_sup / rho
    if tail == 0.0:
        return 0.0
    return tail / abs(mean) if mean != 0 else math.inf


def summarize(samples: np.ndarray, rho: float, T: float, h_sup: float, check: bool = True) -> dict:
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    mean = float(samples.mean())
    stderr = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    tail = tail_fraction(rho, T, h_sup, mean)
    if check and tail > TAIL_LIMIT:
        raise HorizonTooShort(f"tail bound {tail:.2e} exceeds {TAIL_LIMIT:.0%} of the estimate; raise the horizon")
    return {"mean": mean, "stderr": stderr, "tail_bound": tail, "n": n}


def path_cost(spec: ProblemSpec, path: PathSample) -> float:
    """Discounted cost of one recorded path.

    Running cost by trapezoid on the recorded states, variation increments
    charged at the discount of the left end of their interval, and the
    initial jump at full weight.
    """
    t = path.times
    disc = np.exp(-spec.rho * t)
    f = disc * spec.h(path.X[:, 0], path.X[:, 1])
    run = float(np.sum(0.5 * np.diff(t) * (f[1:] + f[:-1])))
    dp, dm = np.diff(path.xi_plus), np.diff(path.xi_minus)
    var = float(np.sum(disc[:-1] * (spec.kappa_plus * dp + spec.kappa_minus * dm)))
    var += spec.kappa_plus * path.xi_plus[0] + spec.kappa_minus * path.xi_minus[0]
    return run + var


def estimate_J(spec: ProblemSpec, paths: list, grid: Grid2D | None = None, check: bool = True) -> dict:
    if not paths:
        raise ValueError("no paths")
    T = float(paths[0].times[-1])
    if any(float(p.times[-1]) != T or p.dt != paths[0].dt for p in paths):
        raise ValueError("paths must share horizon and dt")
    if grid is not None:
        h_sup = grid_cost_sup(spec, grid)
    else:
        h_sup = max(float(np.max(np.abs(spec.h(p.X[:, 0], p.X[:, 1])))) for p in paths)
    return summarize(np.array([path_cost(spec, p) for p in paths]), spec.rho, T, h_sup, check)


def cost_samples(spec: ProblemSpec, regions: list, x0, n_paths: int, T: float, dt: float, seed: int,
                 backend: str | None = None, threads: int | None = None) -> np.ndarray:
    """Per-path costs for several regions under common noise; shape (K, n_paths)."""
    grid = regions[0].grid
    check_time_step(spec, regions[0], dt)
    n_steps = int(round(T / dt))
    k = kernels.get(backend)
    p = kernels.encode(spec)
    arrs = [r.arrays() for r in regions]
    Ls = np.ascontiguousarray([a[0] for a in arrs])
    Rs = np.ascontiguousarray([a[1] for a in arrs])
    starts, jump_cost = [], []
    for r in regions:
        y, jump = project_initial(r, x0)
        starts.append(y)
        jump_cost.append(spec.kappa_plus * max(jump, 0.0) + spec.kappa_minus * max(-jump, 0.0))
    x0s = np.ascontiguousarray(starts)

    def run(ids):
        out = k.cost_multi(p, Ls, Rs, grid.x2_min, grid.x2_max, grid.h2, x0s, ids, n_steps, dt, int(seed),
                           STREAM_REFLECTED)
        return ids, out

    parts = run_chunked(run, n_paths, lambda parts: parts, threads)
    total = np.empty((len(regions), n_paths))
    for ids, (rc, vc, rej, bad) in parts:
        if bad >= 0:
            raise RegionLookupOutOfRange(f"path {int(ids[bad])} left the grid in x2; enlarge the box")
        if np.any(rej > MAX_REJECTED_FRACTION * n_steps):
            raise StabilityViolation("more than 1% of steps rejected at the axes")
        idx = ids.astype(np.int64)
        total[:, idx] = rc + vc + np.asarray(jump_cost)[:, None]
    return total


def estimate_J_streaming(spec: ProblemSpec, region: WaitingRegion, x0, n_paths: int, T: float, dt: float, seed: int,
                         backend: str | None = None, check: bool = True) -> dict:
    samples = cost_samples(spec, [region], x0, n_paths, T, dt, seed, backend)[0]
    return summarize(samples, spec.rho, T, grid_cost_sup(spec, region.grid), check)


@dataclass
class McConfig:
    n_paths: int = 50_000
    dt: float = 1e-3
    horizon: float | None = None
    seed: int = 0
    backend: str | None = None

    def T(self, rho: float) -> float:
        return self.horizon if self.horizon is not None else 12.0 / rho


@dataclass
class EpsGapTable:
    rows: list
    V0: float

    def checks(self, k_lower: float = 3.0, k_mono: float = 2.0, k_bound: float = 3.0) -> dict:
        """Sign of the gap, monotone shrinkage as eps decreases, and ``J <= V/(1-eps)``."""
        rows = sorted(self.rows, key=lambda r: -r["eps"])
        nonneg = all(r["gap"] >= -k_lower * r["stderr"] for r in rows)
        mono = all(b["gap"] <= a["gap"] + k_mono * max(a["stderr"], b["stderr"]) for a, b in zip(rows, rows[1:]))
        bound = all(r["J"] <= self.V0 / (1 - r["eps"]) + k_bound * r["stderr"] for r in rows)
        return {"gap_nonnegative": nonneg, "gap_monotone": mono, "suboptimality_bound": bound}

    def final_relative_gap(self) -> float:
        last = min(self.rows, key=lambda r: r["eps"])
        return last["gap"] / self.V0


def eps_gap_study(spec: ProblemSpec, vf: ValueField, region_family: list, x0, mc_config: McConfig) -> EpsGapTable:
    """J under eps-reflection for each region, compared with V(x0); one noise draw shared by all regions."""
    widest = max(region_family, key=lambda r: r.eps)
    if not widest.contains(x0):
        raise ValueError("x0 must lie in the waiting region of the largest eps")
    T = mc_config.T(spec.rho)
    V0 = interp_bilinear(vf.V, x0)
    samples = cost_samples(spec, region_family, x0, mc_config.n_paths, T, mc_config.dt, mc_config.seed,
                           mc_config.backend)
    h_sup = grid_cost_sup(spec, vf.grid)
    rows = []
    for r, s in zip(region_family, samples):
        est = summarize(s, spec.rho, T, h_sup)
        rows.append({"eps": r.eps, "J": est["mean"], "stderr": est["stderr"], "gap": est["mean"] - V0, "V0": V0,
                     "tail_bound": est["tail_bound"]})
    return EpsGapTable(rows, V0)
