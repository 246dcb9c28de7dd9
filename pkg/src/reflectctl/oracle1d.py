"""Dense one-dimensional reference solutions for separable problems.

When the second component does not feel the control (b12 = 0) and the cost
splits as h1(x1) + h2(x2), the value function is the sum of a 1D singular
control problem in x1 and a linear 1D problem in x2.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Grid2D, ScalarField
from .hjb import NonConvergence, ValueField, vi_residual
from .model import Affine, Constant, Curve1D, Linear, ProblemSpec, Separable
from .region import extract_region

MIN_DENSE = 4097
DENSITY = 16


class NotSeparable(ValueError):
    pass


@dataclass
class Controlled1D:
    x: np.ndarray
    V: np.ndarray
    left_bdry: float
    right_bdry: float
    iterations: int


def _sigma_1d(sigma_kind, x):
    s = sigma_kind.sigma
    if isinstance(sigma_kind, Linear):
        return s * x
    return np.full_like(x, s)


def _operator(x, b, a, rho):
    """Tridiagonal part of ``rho - b D - a D2`` at interior nodes (hybrid scheme)."""
    h = x[1] - x[0]
    central = np.abs(b) * h <= 2 * a
    up = np.where(central, a / h**2 + b / (2 * h), a / h**2 + np.maximum(b, 0) / h)
    dn = np.where(central, a / h**2 - b / (2 * h), a / h**2 + np.maximum(-b, 0) / h)
    return rho + up + dn, -up, -dn


def _boundary_points(x, dV, level):
    """Inverse interpolation of ``dV = -level`` from the left and ``dV = +level`` from the right."""
    inside = np.abs(dV) < level
    idx = np.flatnonzero(inside)
    if idx.size == 0:
        return float("nan"), float("nan")
    i0, i1 = idx[0], idx[-1]

    def cross(i, j, target):
        f0, f1 = dV[i] - target, dV[j] - target
        return x[i] + (x[j] - x[i]) * f0 / (f0 - f1) if f0 != f1 else x[i]

    left = cross(i0 - 1, i0, -level) if i0 > 0 else x[0]
    right = cross(i1, i1 + 1, level) if i1 < x.size - 1 else x[-1]
    return float(left), float(right)


TOUCH_FLOOR = 1e-8


def _touching_points(x, dV):
    """Where a scaled slope meets the cap of one tangentially.

    With smooth fit ``1 - |dV|`` vanishes quadratically at the boundary, so its
    square root is linear there and extrapolates cleanly from the first two
    nodes that stand above round-off.
    """
    gap = 1.0 - np.abs(dV)
    ok = np.flatnonzero(gap > TOUCH_FLOOR)
    if ok.size < 2:
        return float("nan"), float("nan")
    s = np.sqrt(np.maximum(gap, 0.0))

    def root(i, j):
        return x[i] - s[i] * (x[j] - x[i]) / (s[j] - s[i]) if s[j] != s[i] else x[i]

    left = root(ok[0], ok[0] + 1) if ok[0] > 0 else x[0]
    right = root(ok[-1], ok[-1] - 1) if ok[-1] < x.size - 1 else x[-1]
    return float(left), float(right)


def solve_1d_controlled(a1: float, b11: float, sigma_kind, rho: float, h1: Curve1D, kappa_plus: float = 1.0,
                        kappa_minus: float = 1.0, x: np.ndarray | None = None, box=(-3.0, 3.0),
                        n: int = MIN_DENSE, max_iter: int = 200) -> Controlled1D:
    """Policy iteration on ``max(rho V - L V - h1, -V' - kappa_plus, V' - kappa_minus) = 0``."""
    if x is None:
        x = np.linspace(box[0], box[1], n)
    x = np.asarray(x, dtype=float)
    if x.size < MIN_DENSE:
        raise ValueError(f"oracle grids need at least {MIN_DENSE} nodes")
    N, h = x.size, x[1] - x[0]
    b = a1 + b11 * x
    a = 0.5 * _sigma_1d(sigma_kind, x) ** 2
    diag, up, dn = _operator(x, b, a, rho)
    f = h1.value(x)
    interior = np.arange(1, N - 1)

    def assemble(policy):
        d = np.ones(N)
        u = np.zeros(N)
        lo = np.zeros(N)
        r = np.zeros(N)
        # boundary rows: V0 - V1 = kappa_plus h, V_{N-1} - V_{N-2} = kappa_minus h
        u[0] = -1.0
        r[0] = kappa_plus * h
        lo[N - 1] = -1.0
        r[N - 1] = kappa_minus * h
        pde = policy == 0
        k = interior[pde]
        d[k], u[k], lo[k], r[k] = diag[k], up[k], dn[k], f[k]
        k = interior[policy == 1]  # V_k - V_{k+1} = kappa_plus h
        u[k], r[k] = -1.0, kappa_plus * h
        k = interior[policy == 2]  # V_k - V_{k-1} = kappa_minus h
        lo[k], r[k] = -1.0, kappa_minus * h
        M = sp.diags([lo[1:], d, u[:-1]], [-1, 0, 1], format="csc")
        return M, r

    policy = np.zeros(N - 2, dtype=int)
    V = None
    for it in range(1, max_iter + 1):
        M, r = assemble(policy)
        V = spla.spsolve(M, r)
        lin = diag[1:-1] * V[1:-1] + up[1:-1] * V[2:] + dn[1:-1] * V[:-2] - f[1:-1]
        cand = np.stack([lin, (V[1:-1] - V[2:]) / h - kappa_plus, (V[1:-1] - V[:-2]) / h - kappa_minus])
        new = np.argmax(cand, axis=0)
        cur = cand[policy, np.arange(N - 2)]
        new = np.where(cand[new, np.arange(N - 2)] > cur + 1e-13 * (1 + np.abs(cur)), new, policy)
        if np.array_equal(new, policy):
            dV = np.gradient(V, h, edge_order=2)
            lb, rb = _touching_points(x, np.where(dV < 0, dV / kappa_plus, dV / kappa_minus))
            return Controlled1D(x, V, lb, rb, it)
        policy = new
    raise NonConvergence(float("nan"), max_iter)


def solve_1d_uncontrolled(a2: float, b22: float, sigma_kind, rho: float, h2: Curve1D, x: np.ndarray | None = None,
                          box=(-4.0, 4.0), n: int = MIN_DENSE) -> tuple:
    """Direct solve of ``rho V - b V' - a V'' = h2`` with zero third differences at both ends.

    Returns ``(x, V)``.  The end conditions make the scheme exact for
    quadratic solutions, which is what an affine drift with a quadratic
    cost produces.
    """
    if x is None:
        x = np.linspace(box[0], box[1], n)
    x = np.asarray(x, dtype=float)
    N = x.size
    b = a2 + b22 * x
    a = 0.5 * _sigma_1d(sigma_kind, x) ** 2
    diag, up, dn = _operator(x, b, a, rho)
    rows = [np.arange(1, N - 1)] * 3
    cols = [np.arange(1, N - 1), np.arange(2, N), np.arange(0, N - 2)]
    vals = [diag[1:-1], up[1:-1], dn[1:-1]]
    for k, sgn in ((0, 1), (N - 1, -1)):
        rows.append(np.full(4, k))
        cols.append(k + sgn * np.arange(4))
        vals.append(np.array([1.0, -3.0, 3.0, -1.0]))
    M = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))
    r = h2.value(x).astype(float)
    r[0] = r[-1] = 0.0
    V = spla.spsolve(M, r)
    if not np.all(np.isfinite(V)):
        raise np.linalg.LinAlgError("singular tridiagonal system")
    return x, V


def dense_axis(lo: float, hi: float, n_coarse: int, density: int = DENSITY) -> np.ndarray:
    """Dense axis whose every ``density``-th node is a coarse node; at least MIN_DENSE nodes."""
    while density * (n_coarse - 1) + 1 < MIN_DENSE:
        density *= 2
    return np.linspace(lo, hi, density * (n_coarse - 1) + 1), density


def _check_separable(spec: ProblemSpec):
    if not (isinstance(spec.drift2, Affine) and spec.drift2.b12 == 0 and isinstance(spec.cost, Separable)):
        raise NotSeparable("need affine drift with b12 = 0 and a Separable cost")
    if not isinstance(spec.sigma_kind, (Constant, Linear)):
        raise NotSeparable("oracle supports constant or linear volatility only")


@dataclass
class SeparableOracle:
    controlled: Controlled1D
    x2: np.ndarray
    V2: np.ndarray
    value_field: ValueField


def compose_separable(spec: ProblemSpec, grid: Grid2D, eps_final: float = 0.0) -> SeparableOracle:
    """Dense 1D solves on both axes, summed and sampled at the 2D nodes."""
    _check_separable(spec)
    x1, s1 = dense_axis(grid.x1_min, grid.x1_max, grid.n1)
    x2, s2 = dense_axis(grid.x2_min, grid.x2_max, grid.n2)
    c = solve_1d_controlled(spec.a1, spec.b11, spec.sigma_kind, spec.rho, spec.cost.h1, spec.kappa_plus,
                            spec.kappa_minus, x=x1)
    _, V2 = solve_1d_uncontrolled(spec.drift2.a2, spec.drift2.b22, spec.sigma_kind, spec.rho, spec.cost.h2, x=x2)
    dx1, dx2 = x1[1] - x1[0], x2[1] - x2[0]
    D1, D11 = np.gradient(c.V, dx1, edge_order=2), _second(c.V, dx1)
    D2, D22 = np.gradient(V2, dx2, edge_order=2), _second(V2, dx2)
    pick1, pick2 = slice(None, None, s1), slice(None, None, s2)
    ones1, ones2 = np.ones(grid.n1), np.ones(grid.n2)
    outer = np.add.outer
    V = ScalarField(grid, outer(V2[pick2], c.V[pick1]))
    vf = ValueField(
        spec,
        V,
        ScalarField(grid, np.outer(ones2, D1[pick1])),
        ScalarField(grid, np.outer(D2[pick2], ones1)),
        ScalarField(grid, np.outer(ones2, D11[pick1])),
        ScalarField(grid, np.outer(D22[pick2], ones1)),
        ScalarField(grid, np.zeros(grid.shape)),
        eps_final,
        float("nan"),
        c.iterations,
    )
    vf.residual_sup = vi_residual(spec, vf)["sup_interior"]
    return SeparableOracle(c, x2, V2, vf)


def _second(v, h):
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - 2 * v[1:-1] + v[:-2]) / h**2
    out[0] = (2 * v[0] - 5 * v[1] + 4 * v[2] - v[3]) / h**2
    out[-1] = (2 * v[-1] - 5 * v[-2] + 4 * v[-3] - v[-4]) / h**2
    return out


ORACLE_MARGIN = 3


def cross_validate(vf: ValueField, margin: int = ORACLE_MARGIN) -> dict:
    """Sup-norm gaps between a 2D solve and the composed 1D reference on the same grid.

    Boundary locations are compared on the level set the region extractor
    uses, ``|V_x1|^2 = 1 - eps``, so both sides see the same target.
    """
    spec, grid = vf.spec, vf.grid
    ref = compose_separable(spec, grid, vf.eps_final)
    m = grid.interior_mask(margin)
    gaps = {}
    for name in ("V", "Vx1", "Vx2", "Vx1x1"):
        a, b = getattr(vf, name).values, getattr(ref.value_field, name).values
        gaps[name] = float(np.max(np.abs(a - b)[m]))
    sup_V = float(np.max(np.abs(vf.V.values)))
    c = ref.controlled
    level = np.sqrt(1.0 - vf.eps_final)
    dV = np.gradient(c.V, c.x[1] - c.x[0], edge_order=2)
    scaled = np.where(dV < 0, dV / spec.kappa_plus, dV / spec.kappa_minus)
    left, right = _boundary_points(c.x, scaled, level)
    region = extract_region(vf, vf.eps_final)
    rows = slice(margin, grid.n2 - margin)
    gap_l = float(np.nanmax(np.abs(region.l[rows] - left)))
    gap_r = float(np.nanmax(np.abs(region.r[rows] - right)))
    return {
        "grid": grid.to_dict(),
        "eps_final": vf.eps_final,
        "sup_V": sup_V,
        "sup_gap": gaps,
        "rel_gap_V": gaps["V"] / sup_V,
        "oracle_left": left,
        "oracle_right": right,
        "boundary_gap_left": gap_l,
        "boundary_gap_right": gap_r,
        "boundary_gap_cells": max(gap_l, gap_r) / grid.h1,
        "value_ok": gaps["V"] <= 1e-3 * sup_V,
        "boundary_ok": max(gap_l, gap_r) <= 2 * grid.h1,
    }
