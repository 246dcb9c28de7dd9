"""Projected Euler simulation of the reflected optimal diffusion and its audit."""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .grid import interp_bilinear
from .hjb import ValueField
from .model import ProblemSpec
from .region import WaitingRegion
from .rng import STREAM_REFLECTED


class SimulationError(RuntimeError):
    pass


class StabilityViolation(SimulationError):
    pass


class RegionLookupOutOfRange(SimulationError):
    pass


MAX_REJECTED_FRACTION = 0.01
JUMP_CELLS = 2.0


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("REFLECT_THREADS", "1")))
    except ValueError:
        return 1


def run_chunked(fn, n_paths: int, merge, threads: int | None = None):
    """Split ``range(n_paths)`` into contiguous chunks, run ``fn(ids)`` on each, merge in order."""
    threads = threads or worker_count()
    ids = np.arange(n_paths, dtype=np.uint64)
    chunks = [c for c in np.array_split(ids, min(threads, max(n_paths, 1))) if c.size]
    if len(chunks) == 1:
        return merge([fn(chunks[0])])
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return merge(list(pool.map(fn, chunks)))


def check_time_step(spec: ProblemSpec, region: WaitingRegion, dt: float) -> None:
    """One diffusion step in x1 must stay within about a cell, so pushes resolve the boundary."""
    g = region.grid
    X1, X2 = g.mesh()
    s1, _ = spec.sigma(X1, X2)
    smax = float(np.max(np.abs(s1)))
    if smax > 0 and dt > g.h1**2 / (2 * smax**2) * (1 + 1e-12):
        raise ValueError(f"dt = {dt} exceeds h1^2 / (2 sigma_max^2) = {g.h1 ** 2 / (2 * smax ** 2):.3e}")


def resolved_time_step(spec: ProblemSpec, grid, sigmas: float = 4.0) -> float:
    """Largest dt for which a ``sigmas``-standard-deviation x1 step stays within one cell.

    The stability bound only keeps a typical step inside a cell; the audit asks
    every pre-push state to sit within a cell of the boundary, which needs the
    tails resolved as well.
    """
    X1, X2 = grid.mesh()
    s1, _ = spec.sigma(X1, X2)
    smax = float(np.max(np.abs(s1)))
    return grid.h1**2 / (sigmas * smax) ** 2 if smax > 0 else math.inf


def project_initial(region: WaitingRegion, x0) -> tuple:
    """Metric projection of x0's first coordinate onto the closed row interval."""
    x1, x2 = float(x0[0]), float(x0[1])
    lo, hi = region.interval(x2)
    y1 = min(max(x1, lo), hi)
    return np.array([y1, x2]), y1 - x1


@dataclass
class PathSample:
    dt: float
    times: np.ndarray
    X: np.ndarray
    v: np.ndarray
    xi: np.ndarray
    xi_plus: np.ndarray
    xi_minus: np.ndarray
    jumps: list
    seed: int
    path_id: int = 0
    pushes: np.ndarray = field(default_factory=lambda: np.empty((0, 6)))
    rejected_steps: int = 0
    n_steps: int = 0

    @property
    def initial_jump(self) -> float:
        return float(self.v[0])


def _jumps(pushes, dt, threshold, initial, x0):
    out = []
    if initial != 0.0:
        out.append({"t": 0.0, "from_x1": float(x0[0]), "to_x1": float(x0[0] + initial)})
    big = np.abs(pushes[:, 5]) > threshold
    for row in pushes[big]:
        out.append({"t": float(row[0] * dt), "from_x1": float(row[1]), "to_x1": float(row[1] + row[5]),
                    "x2": float(row[2])})
    return out


def simulate_paths(spec: ProblemSpec, region: WaitingRegion, x0, T: float, dt: float, seed: int, n_paths: int = 1,
                   stride: int = 1, backend: str | None = None, threads: int | None = None,
                   check_dt: bool = True) -> list:
    """Reflected paths ``0 .. n_paths-1``; each depends only on ``(seed, path index)``."""
    if check_dt:
        check_time_step(spec, region, dt)
    n_steps = int(round(T / dt))
    stride = max(1, int(stride))
    if n_steps % stride:
        raise ValueError("stride must divide the number of steps")
    k = kernels.get(backend)
    g = region.grid
    L, R = region.arrays()
    x0 = np.asarray(x0, dtype=float)
    y, jump = project_initial(region, x0)
    p = kernels.encode(spec)

    def run(ids):
        P = ids.size
        starts = np.ascontiguousarray(np.tile(y, (P, 1)))
        v0 = np.full(P, jump)
        rec, ev, rej, bad = k.simulate_record(p, L, R, g.x2_min, g.x2_max, g.h2, starts, v0, ids, n_steps, dt,
                                              stride, int(seed), STREAM_REFLECTED)
        if bad >= 0:
            raise RegionLookupOutOfRange(f"path {int(ids[bad])} left the grid in x2; enlarge the box")
        return ids, rec, ev, rej

    def merge(parts):
        return parts

    parts = run_chunked(run, n_paths, merge, threads)
    times = np.arange(0, n_steps + 1, stride) * dt
    out = []
    for ids, rec, ev, rej in parts:
        for local, pid in enumerate(ids):
            if rej[local] > MAX_REJECTED_FRACTION * n_steps:
                raise StabilityViolation(f"path {int(pid)}: {int(rej[local])} of {n_steps} steps rejected at the axes")
            mine = ev[ev[:, 0] == local][:, 1:] if ev.size else np.empty((0, 6))
            out.append(
                PathSample(
                    dt=dt,
                    times=times,
                    X=np.column_stack([rec[0, local], rec[1, local]]),
                    v=rec[2, local].copy(),
                    xi=rec[3, local].copy(),
                    xi_plus=rec[4, local].copy(),
                    xi_minus=rec[5, local].copy(),
                    jumps=_jumps(mine, dt, JUMP_CELLS * g.h1, jump, x0),
                    seed=int(seed),
                    path_id=int(pid),
                    pushes=mine,
                    rejected_steps=int(rej[local]),
                    n_steps=n_steps,
                )
            )
    return out


def simulate_reflected(spec: ProblemSpec, region: WaitingRegion, x0, T: float, dt: float, seed: int,
                       path_id: int = 0, stride: int = 1, backend: str | None = None) -> PathSample:
    paths = simulate_paths(spec, region, x0, T, dt, seed, n_paths=path_id + 1, stride=stride, backend=backend)
    return paths[path_id]


# --------------------------------------------------------------------------
# audit
# --------------------------------------------------------------------------

THRESHOLDS = {"containment": 1.0, "boundary_support": 0.98, "jump_endpoints": 1.0}


@dataclass
class AuditReport:
    containment: float
    boundary_support: float
    jump_endpoints: float
    n_states: int
    pushed_variation: float
    n_jumps: int

    @property
    def passes(self) -> dict:
        return {k: getattr(self, k) >= v for k, v in THRESHOLDS.items()}

    @property
    def ok(self) -> bool:
        return all(self.passes.values())

    def to_dict(self) -> dict:
        return {
            "containment": self.containment,
            "boundary_support": self.boundary_support,
            "jump_endpoints": self.jump_endpoints,
            "n_states": self.n_states,
            "pushed_variation": self.pushed_variation,
            "n_jumps": self.n_jumps,
            "passes": self.passes,
        }


def _segments_distance(pts: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Euclidean distance from each point to a polyline."""
    poly = poly[np.all(np.isfinite(poly), axis=1)]
    if pts.size == 0 or poly.shape[0] < 2:
        return np.full(len(pts), np.inf)
    a, b = poly[:-1], poly[1:]
    ab = b - a
    ll = np.maximum(np.sum(ab * ab, axis=1), 1e-300)
    ap = pts[:, None, :] - a[None, :, :]
    t = np.clip(np.sum(ap * ab[None], axis=2) / ll[None], 0.0, 1.0)
    near = a[None] + t[..., None] * ab[None]
    return np.min(np.linalg.norm(pts[:, None, :] - near, axis=2), axis=1)


def _clamped_gradient(vf: ValueField, x1: float, x2: float) -> float:
    g = vf.grid
    x1 = min(max(x1, g.x1_min), g.x1_max)
    x2 = min(max(x2, g.x2_min), g.x2_max)
    return interp_bilinear(vf.Vx1, (x1, x2))


def audit_counts(path: PathSample, region: WaitingRegion, vf: ValueField) -> dict:
    g = region.grid
    lo, hi = region.arrays()
    x1, x2 = path.X[:, 0], path.X[:, 1]
    inside = np.sum((x1 >= np.interp(x2, region.x2, lo) - 1e-9) & (x1 <= np.interp(x2, region.x2, hi) + 1e-9))
    push = path.pushes
    mag = np.abs(push[:, 5]) if push.size else np.empty(0)
    good = 0.0
    for row, m in zip(push, mag):
        # the pre-push state must sit within one cell of an endpoint of its row
        a, b = np.interp(row[2], region.x2, lo), np.interp(row[2], region.x2, hi)
        if min(abs(row[1] - a), abs(row[1] - b)) > g.h1:
            continue
        slope = _clamped_gradient(vf, row[1], row[2])
        if np.sign(row[5]) == -np.sign(slope) and slope != 0:
            good += m
    cell = float(np.hypot(g.h1, g.h2))
    later = [j for j in path.jumps if j["t"] > 0]
    ok_jumps = 0
    if later:
        polys = [region.left_boundary, region.right_boundary]
        for j in later:
            ends = np.array([[j["from_x1"], j["x2"]], [j["to_x1"], j["x2"]]])
            d = np.minimum(*[_segments_distance(ends, p) for p in polys])
            ok_jumps += bool(np.all(d <= cell))
    return {
        "inside": int(inside),
        "states": len(path.X),
        "good": float(good),
        "total": float(mag.sum()),
        "jumps": len(later),
        "ok_jumps": ok_jumps,
    }


def _report(c: dict) -> AuditReport:
    return AuditReport(
        containment=c["inside"] / max(c["states"], 1),
        boundary_support=min(1.0, c["good"] / c["total"]) if c["total"] > 0 else 1.0,
        jump_endpoints=c["ok_jumps"] / c["jumps"] if c["jumps"] else 1.0,
        n_states=c["states"],
        pushed_variation=c["total"],
        n_jumps=c["jumps"],
    )


def verify_skorokhod_conditions(path: PathSample, region: WaitingRegion, vf: ValueField) -> AuditReport:
    """Containment, boundary support of the variation, and jump endpoints for one path.

    The initial projection at t = 0 is checked separately (it starts from an
    arbitrary point, not from the boundary).
    """
    return _report(audit_counts(path, region, vf))


def audit_paths(paths: list, region: WaitingRegion, vf: ValueField) -> AuditReport:
    tot = {"inside": 0, "states": 0, "good": 0.0, "total": 0.0, "jumps": 0, "ok_jumps": 0}
    for p in paths:
        for k, v in audit_counts(p, region, vf).items():
            tot[k] += v
    return _report(tot)
