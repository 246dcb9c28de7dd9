"""Waiting region, its shrinkages, stopping sets and free-boundary curves."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid2D
from .hjb import ValueField
from .model import BOUNDED_VARIATION


class RegionError(ValueError):
    pass


class EmptyRow(RegionError):
    def __init__(self, x2: float):
        self.x2 = x2
        super().__init__(f"no waiting nodes in row x2 = {x2}")


class OverlappingRegions(RegionError):
    pass


class NotApplicable(RegionError):
    pass


class NotOnBoundary(RegionError):
    pass


@dataclass
class WaitingRegion:
    eps: float
    x2: np.ndarray
    l: np.ndarray
    r: np.ndarray
    grid: Grid2D
    left_at_edge: np.ndarray
    right_at_edge: np.ndarray
    degenerate_rows: np.ndarray
    split_runs: int = 0
    reflection_sign_left: int = 1
    reflection_sign_right: int = -1

    @property
    def rows(self) -> list:
        return [{"x2": float(a), "l": float(b), "r": float(c)} for a, b, c in zip(self.x2, self.l, self.r)]

    @property
    def left_boundary(self) -> np.ndarray:
        return np.column_stack([self.l, self.x2])

    @property
    def right_boundary(self) -> np.ndarray:
        return np.column_stack([self.r, self.x2])

    def interval(self, x2: float) -> tuple:
        """Row interval at an arbitrary x2, linear in x2 between grid rows."""
        g = self.grid
        if not g.x2_min <= x2 <= g.x2_max:
            raise RegionError(f"x2 = {x2} outside the grid rectangle")
        t = (x2 - g.x2_min) / g.h2
        j = min(int(t), g.n2 - 2)
        a = t - j
        return (1 - a) * self.l[j] + a * self.l[j + 1], (1 - a) * self.r[j] + a * self.r[j + 1]

    def contains(self, x) -> bool:
        lo, hi = self.interval(float(x[1]))
        return lo <= float(x[0]) <= hi

    def arrays(self):
        """Row bounds for the simulation kernels (finite values only)."""
        g = self.grid
        span = g.x1_max - g.x1_min
        l = np.where(np.isfinite(self.l), self.l, g.x1_min - 1e3 * span)
        r = np.where(np.isfinite(self.r), self.r, g.x1_max + 1e3 * span)
        return np.ascontiguousarray(l, dtype=float), np.ascontiguousarray(r, dtype=float)


LEVEL_FLOOR = 1e-9


def _scaled_gradient(vf: ValueField) -> np.ndarray:
    """``V_x1`` divided by the control cost of the side it points to."""
    spec = vf.spec
    g = vf.Vx1.values
    return np.where(g < 0, g / spec.kappa_plus, g / spec.kappa_minus)


def _crossing(x, f, i, j):
    f0, f1 = f[i], f[j]
    if f0 == f1:
        return x[i]
    return x[i] + (x[j] - x[i]) * f0 / (f0 - f1)


def extract_region(vf: ValueField, eps: float) -> WaitingRegion:
    """Per-row interval of ``{ s^2 < 1 - eps }`` with ``s`` the cost-scaled ``V_x1``."""
    if not 0 <= eps < 1:
        raise ValueError("eps must lie in [0, 1)")
    g = vf.grid
    x1 = g.x1
    s = _scaled_gradient(vf)
    monotone = vf.spec.control_mode != BOUNDED_VARIATION
    if monotone:
        # only the lower constraint exists: large positive slopes are admissible
        s = np.minimum(s, 0.0)
    # a floor on the level keeps eps = 0 clear of round-off at clamped nodes
    # while leaving the region monotone in eps
    F = s * s - (1.0 - max(eps, LEVEL_FLOOR))
    tol = 0.0
    n2 = g.n2
    L, R = np.full(n2, np.nan), np.full(n2, np.nan)
    le, re, deg = np.zeros(n2, bool), np.zeros(n2, bool), np.zeros(n2, bool)
    split = 0
    for j in range(n2):
        f = F[j]
        inside = np.flatnonzero(f < -tol)
        if inside.size == 0:
            if eps == 0:
                raise EmptyRow(float(g.x2[j]))
            deg[j] = True
            continue
        runs = np.split(inside, np.flatnonzero(np.diff(inside) > 1) + 1)
        if len(runs) > 1:
            split += 1
        run = max(runs, key=len)
        i0, i1 = run[0], run[-1]
        if i0 == 0:
            L[j], le[j] = x1[0], True
        else:
            L[j] = _crossing(x1, f, i0 - 1, i0)
        if monotone and i1 == g.n1 - 1:
            R[j], re[j] = np.inf, True
        elif i1 == g.n1 - 1:
            R[j], re[j] = x1[-1], True
        else:
            R[j] = _crossing(x1, f, i1, i1 + 1)
    if deg.any() and (~deg).any():
        # fill degenerate rows from neighbours so the interval lookup stays defined
        good = np.flatnonzero(~deg)
        L[deg] = np.interp(np.flatnonzero(deg), good, L[good])
        R[deg] = np.interp(np.flatnonzero(deg), good, R[good]) if not monotone else np.inf
    return WaitingRegion(float(eps), g.x2.copy(), L, R, g, le, re, deg, split)


def stop_band(vf: ValueField) -> float:
    return max(2 * vf.eps_final, 3 * vf.grid.h1 * float(np.max(np.abs(vf.Vx1x1.values))))


def extract_stop_regions(vf: ValueField) -> dict:
    spec = vf.spec
    delta = stop_band(vf)
    g = vf.Vx1.values
    I_minus = g <= -spec.kappa_plus + delta
    if spec.control_mode == BOUNDED_VARIATION:
        I_plus = g >= spec.kappa_minus - delta
    else:
        I_plus = np.zeros_like(I_minus)
    if np.any(I_minus & I_plus):
        raise OverlappingRegions("stopping masks intersect")
    return {"I_minus": I_minus, "I_plus": I_plus, "delta": delta}


def reflection_direction(region: WaitingRegion, point, tol: float | None = None) -> np.ndarray:
    x1, x2 = float(point[0]), float(point[1])
    lo, hi = region.interval(x2)
    tol = 1e-9 * (1 + abs(x1)) if tol is None else tol
    if abs(x1 - hi) <= tol:
        return np.array([float(region.reflection_sign_right), 0.0])
    if abs(x1 - lo) <= tol:
        return np.array([float(region.reflection_sign_left), 0.0])
    raise NotOnBoundary(f"({x1}, {x2}) is not on the waiting-region boundary")


@dataclass
class FreeBoundaries:
    x1: np.ndarray
    g1: np.ndarray
    g2: np.ndarray
    violation_g1: float
    violation_g2: float
    overlap_columns: int

    @property
    def violation_fraction(self) -> float:
        return max(self.violation_g1, self.violation_g2)


def _violations(x2_step, g):
    ok = np.isfinite(g[:-1]) & np.isfinite(g[1:])
    if not ok.any():
        return 0.0
    bad = (g[1:] - g[:-1] > x2_step) & ok
    return float(bad.sum() / ok.sum())


def fit_free_boundaries(vf: ValueField) -> FreeBoundaries:
    """Columnwise ``g1 = sup{x2 in I_-}`` and ``g2 = inf{x2 in I_+}``.

    Columns where a stopping set is missing or fills the whole column give NaN.
    """
    spec = vf.spec
    if not spec.degenerate:
        raise NotApplicable("free-boundary curves are defined for the degenerate-noise model")
    grid = vf.grid
    x2 = grid.x2
    delta = stop_band(vf)
    G = vf.Vx1.values
    lo_level, hi_level = -spec.kappa_plus + delta, spec.kappa_minus - delta
    if lo_level >= hi_level:
        raise RegionError(f"stop band {delta:.3g} spans the whole slope range; refine the grid")
    g1 = np.full(grid.n1, np.nan)
    g2 = np.full(grid.n1, np.nan)
    for i in range(grid.n1):
        c = G[:, i]
        m = np.flatnonzero(c <= lo_level)
        if m.size and m[0] == 0 and m.size < grid.n2:
            k = np.flatnonzero(np.diff(m) > 1)
            last = m[k[0]] if k.size else m[-1]
            if last < grid.n2 - 1:
                g1[i] = _crossing(x2, c - lo_level, last, last + 1)
        p = np.flatnonzero(c >= hi_level)
        if p.size and p[-1] == grid.n2 - 1 and p.size < grid.n2:
            k = np.flatnonzero(np.diff(p) > 1)
            first = p[k[-1] + 1] if k.size else p[0]
            if first > 0:
                g2[i] = _crossing(x2, c - hi_level, first - 1, first)
    both = np.isfinite(g1) & np.isfinite(g2)
    overlap = int(np.sum(g1[both] > g2[both]))
    return FreeBoundaries(grid.x1.copy(), g1, g2, _violations(grid.h2, g1), _violations(grid.h2, g2), overlap)
