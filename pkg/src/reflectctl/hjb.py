"""Penalized HJB solves, the vanishing-penalty limit, and the value field.

The discrete operator is a five-point stencil: central differences for the
diffusion, central differences for the drift wherever that keeps the scheme
monotone and first-order upwinding elsewhere.  The gradient constraint enters
through one-sided slopes along x1::

    q_minus = (V[i] - V[i-1]) / h1      # large where V_x1 exceeds its cap
    q_plus  = (V[i] - V[i+1]) / h1      # large where -V_x1 exceeds its cap

Both are nondecreasing in the centre value and nonincreasing in the
neighbours, which keeps the penalized system monotone.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.ndimage import binary_dilation

from .grid import Grid2D, ScalarField, d1, d2, d11, d12, d22
from .model import BOUNDED_VARIATION, ProblemSpec

DEFAULT_EPS_SCHEDULE = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)
DEFAULT_ETA_SCHEDULE = (1e-1, 3e-2, 1e-2)
MAX_NEWTON = 500
MAX_HALVINGS = 8
FAILURES_BEFORE_CHORD = 3
CHORD_SWEEPS = 50
MAX_HOWARD = 200


class SolverError(RuntimeError):
    pass


class NonConvergence(SolverError):
    def __init__(self, residual: float, iterations: int, eps: float | None = None):
        self.residual, self.iterations, self.eps = residual, iterations, eps
        super().__init__(f"no convergence after {iterations} iterations (residual {residual:.3e}, eps {eps})")


class IllPosed(SolverError):
    pass


def beta(r):
    r = np.asarray(r, dtype=float)
    return np.where(r <= 0, 0.0, np.where(r < 1, r * r, 2 * r - 1))


def beta_prime(r):
    r = np.asarray(r, dtype=float)
    return np.where(r <= 0, 0.0, np.where(r < 1, 2 * r, 2.0))


# --------------------------------------------------------------------------
# linear part
# --------------------------------------------------------------------------


@dataclass
class Discretization:
    grid: Grid2D
    spec: ProblemSpec
    A: sp.csr_matrix
    rhs: np.ndarray
    pde: np.ndarray  # bool (n2, n1): rows carrying the PDE
    penalty_kind: str
    h_scale: float


def _coefficients(spec: ProblemSpec, grid: Grid2D, viscosity: float = 0.0):
    X1, X2 = grid.mesh()
    b1, b2 = spec.drift(X1, X2)
    s1, s2 = spec.sigma(X1, X2)
    a1 = 0.5 * s1**2 + 0.5 * viscosity**2
    a2 = 0.5 * s2**2
    return b1, b2, a1, a2


def _axis_weights(b, a, h):
    """Forward/backward neighbour weights for ``b*D + a*D2`` (hybrid scheme)."""
    central = np.abs(b) * h <= 2 * a
    fwd = np.where(central, a / h**2 + b / (2 * h), a / h**2 + np.maximum(b, 0) / h)
    bwd = np.where(central, a / h**2 - b / (2 * h), a / h**2 + np.maximum(-b, 0) / h)
    return fwd, bwd


def discretize(spec: ProblemSpec, grid: Grid2D, viscosity: float = 0.0) -> Discretization:
    n1, n2 = grid.n1, grid.n2
    N = n1 * n2
    idx = np.arange(N).reshape(n2, n1)
    b1, b2, a1, a2 = _coefficients(spec, grid, viscosity)
    e, w = _axis_weights(b1, a1, grid.h1)
    nth, sth = _axis_weights(b2, a2, grid.h2)
    hval = spec.h(*grid.mesh())

    rows, cols, vals = [], [], []
    rhs = np.zeros((n2, n1))

    def put(mask, offset, coef):
        k = idx[mask]
        rows.append(k)
        cols.append(k + offset)
        vals.append(np.broadcast_to(coef, mask.shape)[mask] if np.ndim(coef) else np.full(k.size, float(coef)))

    pde = np.zeros((n2, n1), dtype=bool)
    pde[1:-1, 1:-1] = True
    put(pde, 0, spec.rho + e + w + nth + sth)
    put(pde, 1, -e)
    put(pde, -1, -w)
    put(pde, n1, -nth)
    put(pde, -n1, -sth)
    rhs[pde] = hval[pde]

    left = np.zeros_like(pde)
    left[:, 0] = True
    put(left, 0, 1.0)
    put(left, 1, -1.0)
    rhs[left] = spec.kappa_plus * grid.h1

    right = np.zeros_like(pde)
    right[:, -1] = True
    if spec.control_mode == BOUNDED_VARIATION:
        put(right, 0, 1.0)
        put(right, -1, -1.0)
        rhs[right] = spec.kappa_minus * grid.h1
    else:
        for off, c in ((0, 1.0), (-1, -3.0), (-2, 3.0), (-3, -1.0)):
            put(right, off, c)

    bottom = np.zeros_like(pde)
    bottom[0, 1:-1] = True
    top = np.zeros_like(pde)
    top[-1, 1:-1] = True
    for mask, sgn in ((bottom, 1), (top, -1)):
        for m, c in enumerate((1.0, -3.0, 3.0, -1.0)):
            put(mask, sgn * m * n1, c)

    A = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)
    )
    if spec.control_mode != BOUNDED_VARIATION:
        kind = "monotone"
    elif spec.kappa_plus == spec.kappa_minus:
        kind = "squared"
    else:
        kind = "split"
    return Discretization(grid, spec, A, rhs.ravel(), pde, kind, 1.0 + float(np.max(np.abs(hval))))


# --------------------------------------------------------------------------
# penalty
# --------------------------------------------------------------------------


def _slopes(V: np.ndarray, h1: float):
    qm = (V[1:-1, 1:-1] - V[1:-1, :-2]) / h1
    qp = (V[1:-1, 1:-1] - V[1:-1, 2:]) / h1
    return qm, qp


def _penalty(disc: Discretization, V: np.ndarray, jacobian: bool):
    """Penalty values on PDE rows and, optionally, their sparse Jacobian."""
    g = disc.grid
    spec = disc.spec
    qm, qp = _slopes(V, g.h1)
    # derivative of the penalty w.r.t. (qm, qp)
    if disc.penalty_kind == "squared":
        k2 = spec.kappa_plus**2
        use_m = qm >= qp
        m = np.maximum(np.maximum(qm, qp), 0.0)
        r = m * m / k2 - 1.0
        P = beta(r)
        dm = beta_prime(r) * 2 * m / k2
        dqm = np.where(use_m, dm, 0.0)
        dqp = np.where(use_m, 0.0, dm)
    else:
        rp = qp - spec.kappa_plus
        P = beta(rp)
        dqp = beta_prime(rp)
        if disc.penalty_kind == "split":
            rm = qm - spec.kappa_minus
            P = P + beta(rm)
            dqm = beta_prime(rm)
        else:
            dqm = np.zeros_like(qm)
    full = np.zeros_like(V)
    full[1:-1, 1:-1] = P
    if not jacobian:
        return full.ravel(), None
    N = V.size
    k = np.arange(N).reshape(V.shape)[1:-1, 1:-1].ravel()
    dqm, dqp = dqm.ravel() / g.h1, dqp.ravel() / g.h1
    J = sp.csr_matrix(
        (
            np.concatenate([dqm + dqp, -dqm, -dqp]),
            (np.concatenate([k, k, k]), np.concatenate([k, k - 1, k + 1])),
        ),
        shape=(N, N),
    )
    return full.ravel(), J


def _residual(disc: Discretization, V: np.ndarray, eps: float) -> np.ndarray:
    P, _ = _penalty(disc, V.reshape(disc.grid.shape), False)
    return disc.A @ V - disc.rhs + P / eps


def _solve(M, r):
    x = spla.spsolve(M.tocsc(), r)
    if not np.all(np.isfinite(x)):
        raise IllPosed("linear solve produced non-finite values")
    return x


@dataclass
class PenalizedResult:
    V: np.ndarray
    iterations: int
    residual: float
    chord_sweeps: int = 0


def _newton(disc: Discretization, eps: float, V0: np.ndarray, max_iter: int = MAX_NEWTON) -> PenalizedResult:
    tol = 1e-9 * disc.h_scale
    V = V0.copy()
    F = _residual(disc, V, eps)
    res = float(np.max(np.abs(F)))
    failures = 0
    chord = 0
    it = 0
    while res > tol:
        if it >= max_iter:
            raise NonConvergence(res, it, eps)
        it += 1
        _, JP = _penalty(disc, V.reshape(disc.grid.shape), True)
        J = disc.A + JP / eps
        step = _solve(J, -F)
        t = 1.0
        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            Vn = V + t * step
            Fn = _residual(disc, Vn, eps)
            rn = float(np.max(np.abs(Fn)))
            if rn < res:
                accepted = True
                break
            t *= 0.5
        if accepted:
            V, F, res = Vn, Fn, rn
            failures = 0
            continue
        failures += 1
        if failures >= FAILURES_BEFORE_CHORD:
            # lagged-Jacobian sweeps with a single factorization
            lu = spla.splu(J.tocsc())
            for _ in range(CHORD_SWEEPS):
                V = V - lu.solve(F)
                F = _residual(disc, V, eps)
                chord += 1
                if float(np.max(np.abs(F))) <= tol:
                    break
            if not np.all(np.isfinite(V)):
                raise IllPosed("lagged sweeps diverged")
            res = float(np.max(np.abs(F)))
            failures = 0
    return PenalizedResult(V, it, res, chord)


def _initial_guess(disc: Discretization) -> np.ndarray:
    return _solve(disc.A, disc.rhs)


def solve_penalized(spec: ProblemSpec, grid: Grid2D, eps: float, warm_start: ScalarField | None = None,
                    viscosity: float = 0.0) -> ScalarField:
    if not eps > 0:
        raise ValueError("eps must be positive")
    disc = discretize(spec, grid, viscosity)
    V0 = warm_start.values.ravel() if warm_start is not None else _initial_guess(disc)
    return ScalarField(grid, _newton(disc, eps, V0).V.reshape(grid.shape))


# --------------------------------------------------------------------------
# vanishing-penalty limit
# --------------------------------------------------------------------------


def _howard(disc: Discretization, V0: np.ndarray):
    """Policy iteration for the discrete obstacle system at zero penalty.

    Each PDE row takes the largest of: the linear equation, ``q_minus - kappa_minus``
    and ``q_plus - kappa_plus`` (only the latter for monotone controls).

    The extrapolation rows on the x2 edges are not monotone, so the iteration
    can fall into a short cycle at a few nodes next to those edges.  A repeated
    policy pins the nodes that keep flipping to their constraint branch and
    finishes with one more solve; their count is returned.
    """
    g, spec = disc.grid, disc.spec
    N = g.n1 * g.n2
    k = np.arange(N).reshape(g.shape)[1:-1, 1:-1].ravel()
    A = disc.A.tocsr()
    V = V0.copy()
    policy = None
    upper = spec.control_mode == BOUNDED_VARIATION
    seen = set()
    pinned = np.zeros(k.size, dtype=bool)
    for it in range(1, MAX_HOWARD + 1):
        Vg = V.reshape(g.shape)
        qm, qp = _slopes(Vg, g.h1)
        lin = (A @ V - disc.rhs)[k]
        cand = np.stack(
            [lin, (qp.ravel() - spec.kappa_plus), (qm.ravel() - spec.kappa_minus) if upper else np.full(k.size, -np.inf)]
        )
        new = np.argmax(cand, axis=0)
        if policy is not None:
            # keep the current choice on ties to avoid cycling
            cur = cand[policy, np.arange(k.size)]
            new = np.where(cand[new, np.arange(k.size)] > cur + 1e-13 * (1 + np.abs(cur)), new, policy)
            new = np.where(pinned, policy, new)
            if np.array_equal(new, policy):
                return V, it - 1, policy, int(pinned.sum())
            if new.tobytes() in seen:
                flip = new != policy
                pinned |= flip
                new = np.where(flip, np.where(new != 0, new, policy), new)
        seen.add(new.tobytes())
        policy = new
        keep = np.ones(N, dtype=bool)
        keep[k[policy != 0]] = False
        D = sp.diags(keep.astype(float))
        lower_k = k[policy == 1]
        upper_k = k[policy == 2]
        O = sp.csr_matrix(
            (
                np.concatenate([np.ones(lower_k.size), -np.ones(lower_k.size), np.ones(upper_k.size), -np.ones(upper_k.size)]),
                (
                    np.concatenate([lower_k, lower_k, upper_k, upper_k]),
                    np.concatenate([lower_k, lower_k + 1, upper_k, upper_k - 1]),
                ),
            ),
            shape=(N, N),
        )
        M = D @ A + O
        r = np.where(keep, disc.rhs, 0.0)
        r[lower_k] = spec.kappa_plus * g.h1
        r[upper_k] = spec.kappa_minus * g.h1
        V = _solve(M, r)
    raise NonConvergence(float("nan"), MAX_HOWARD, 0.0)


# --------------------------------------------------------------------------
# value field
# --------------------------------------------------------------------------


@dataclass
class ValueField:
    spec: ProblemSpec
    V: ScalarField
    Vx1: ScalarField
    Vx2: ScalarField
    Vx1x1: ScalarField
    Vx2x2: ScalarField
    Vx1x2: ScalarField
    eps_final: float
    residual_sup: float
    iterations: int
    limit: bool = True
    V_penalized: ScalarField | None = None
    eta_schedule: tuple | None = None
    history: list = field(default_factory=list)

    @property
    def grid(self) -> Grid2D:
        return self.V.grid

    @property
    def tol_grad(self) -> float:
        return max(10 * self.eps_final, 5 * self.grid.h1)

    @classmethod
    def from_values(cls, spec, V: ScalarField, eps_final: float, iterations: int, **kw) -> "ValueField":
        vf = cls(spec, V, d1(V), d2(V), d11(V), d22(V), d12(V), eps_final, float("nan"), iterations, **kw)
        vf.residual_sup = vi_residual(spec, vf)["sup_interior"]
        return vf

    def columns(self) -> dict:
        return {
            "V": self.V,
            "Vx1": self.Vx1,
            "Vx2": self.Vx2,
            "Vx1x1": self.Vx1x1,
            "Vx2x2": self.Vx2x2,
            "Vx1x2": self.Vx1x2,
        }


def solve_hjb(spec: ProblemSpec, grid: Grid2D, eps_schedule=DEFAULT_EPS_SCHEDULE, limit: bool = True,
              viscosity: float = 0.0) -> ValueField:
    """Penalty continuation over ``eps_schedule`` followed by the zero-penalty limit.

    Each level warm-starts from the previous one.  With ``limit`` the last
    penalized field seeds a policy iteration on the discrete obstacle system,
    which removes the O(sqrt(eps)) slope excess the penalty leaves behind.
    """
    sched = [float(e) for e in eps_schedule]
    if not sched or any(e <= 0 for e in sched) or any(b >= a for a, b in zip(sched, sched[1:])):
        raise ValueError("eps_schedule must be positive and strictly decreasing")
    if spec.degenerate and viscosity == 0.0:
        raise ValueError("degenerate volatility needs solve_hjb_degenerate or a positive viscosity")
    disc = discretize(spec, grid, viscosity)
    V = _initial_guess(disc)
    history = []
    total = 0
    for eps in sched:
        t0 = time.perf_counter()
        try:
            out = _newton(disc, eps, V)
        except SolverError as exc:
            if isinstance(exc, NonConvergence):
                exc.eps = eps
            raise
        V = out.V
        total += out.iterations
        history.append(
            {"eps": eps, "iterations": out.iterations, "residual": out.residual, "chord_sweeps": out.chord_sweeps,
             "seconds": time.perf_counter() - t0}
        )
    Vpen = ScalarField(grid, V.reshape(grid.shape))
    if limit:
        t0 = time.perf_counter()
        V, its, _, pinned = _howard(disc, V)
        total += its
        history.append({"eps": 0.0, "iterations": its, "residual": 0.0, "pinned_nodes": pinned,
                        "seconds": time.perf_counter() - t0})
    return ValueField.from_values(
        spec, ScalarField(grid, V.reshape(grid.shape)), sched[-1], total, limit=limit, V_penalized=Vpen,
        history=history,
    )


def solve_hjb_degenerate(spec: ProblemSpec, grid: Grid2D, eps_schedule=DEFAULT_EPS_SCHEDULE,
                         eta_schedule=DEFAULT_ETA_SCHEDULE, limit: bool = True) -> ValueField:
    """Vanishing-viscosity solves, extrapolated to zero viscosity linearly in eta**2."""
    etas = np.asarray([float(e) for e in eta_schedule])
    if etas.size < 2 or np.any(etas <= 0):
        raise ValueError("need at least two positive viscosities")
    fields, history, total = [], [], 0
    for eta in etas:
        vf = solve_hjb(spec, grid, eps_schedule, limit=limit, viscosity=float(eta))
        fields.append(vf.V.values)
        history.append({"eta": float(eta), "iterations": vf.iterations, "residual_sup": vf.residual_sup})
        total += vf.iterations
    design = np.column_stack([np.ones_like(etas), etas**2])
    stack = np.stack([f.ravel() for f in fields])
    coef, *_ = np.linalg.lstsq(design, stack, rcond=None)
    V0 = ScalarField(grid, coef[0].reshape(grid.shape))
    return ValueField.from_values(
        spec, V0, float(eps_schedule[-1]), total, limit=limit, eta_schedule=tuple(etas.tolist()), history=history
    )


def solve(spec: ProblemSpec, grid: Grid2D, eps_schedule=DEFAULT_EPS_SCHEDULE,
          eta_schedule=DEFAULT_ETA_SCHEDULE, limit: bool = True) -> ValueField:
    if spec.degenerate:
        return solve_hjb_degenerate(spec, grid, eps_schedule, eta_schedule, limit)
    return solve_hjb(spec, grid, eps_schedule, limit)


# --------------------------------------------------------------------------
# diagnostics
# --------------------------------------------------------------------------


def operator_residual(spec: ProblemSpec, vf: ValueField) -> np.ndarray:
    """``rho V - L V - h`` from the stored derivative fields."""
    X1, X2 = vf.grid.mesh()
    b1, b2 = spec.drift(X1, X2)
    s1, s2 = spec.sigma(X1, X2)
    LV = (
        b1 * vf.Vx1.values
        + b2 * vf.Vx2.values
        + 0.5 * s1**2 * vf.Vx1x1.values
        + 0.5 * s2**2 * vf.Vx2x2.values
    )
    return spec.rho * vf.V.values - LV - spec.h(X1, X2)


def constraint_excess(spec: ProblemSpec, Vx1: np.ndarray) -> np.ndarray:
    lower = -Vx1 - spec.kappa_plus
    if spec.control_mode == BOUNDED_VARIATION:
        return np.maximum(lower, Vx1 - spec.kappa_minus)
    return lower


def vi_residual(spec: ProblemSpec, vf: ValueField, margin: int = 2) -> dict:
    """Complementarity defect ``|max(rho V - L V - h, |V_x1| - 1)|``."""
    res = np.abs(np.maximum(operator_residual(spec, vf), constraint_excess(spec, vf.Vx1.values)))
    inner = vf.grid.interior_mask(margin)
    return {"field": ScalarField(vf.grid, res), "sup_interior": float(np.max(res[inner]))}


def _d_fourth(v: np.ndarray, h: float, axis: int) -> np.ndarray:
    v = np.moveaxis(v, axis, 0)
    out = np.full_like(v, np.nan)
    out[2:-2] = (-v[4:] + 8 * v[3:-1] - 8 * v[1:-3] + v[:-4]) / (12 * h)
    return np.moveaxis(out, 0, axis)


def _dd_fourth(v: np.ndarray, h: float, axis: int) -> np.ndarray:
    v = np.moveaxis(v, axis, 0)
    out = np.full_like(v, np.nan)
    out[2:-2] = (-v[4:] + 16 * v[3:-1] - 30 * v[2:-2] + 16 * v[1:-3] - v[:-4]) / (12 * h * h)
    return np.moveaxis(out, 0, axis)


def truncation_residual(spec: ProblemSpec, vf: ValueField, band: int = 2, edge: float = 1.0,
                        active_tol: float = 1e-6) -> dict:
    """Complementarity defect measured with five-point fourth-order stencils.

    The solver's own stencils reproduce the discrete system to round-off, so
    they say nothing about discretization error.  Independent stencils do,
    away from the free boundary (where V is only C^2) and from the box edges.
    ``band`` cells around every switch between constrained and free nodes and
    a strip of physical width ``edge`` along the box are excluded.
    """
    g = vf.grid
    V = vf.V.values
    X1, X2 = g.mesh()
    b1, b2 = spec.drift(X1, X2)
    s1, s2 = spec.sigma(X1, X2)
    D1 = _d_fourth(V, g.h1, 1)
    op = (spec.rho * V - b1 * D1 - b2 * _d_fourth(V, g.h2, 0) - 0.5 * s1**2 * _dd_fourth(V, g.h1, 1)
          - 0.5 * s2**2 * _dd_fourth(V, g.h2, 0) - spec.h(X1, X2))
    res = np.abs(np.maximum(op, constraint_excess(spec, D1)))
    active = constraint_excess(spec, vf.Vx1.values) > -active_tol
    switch = np.zeros_like(active)
    for axis in (0, 1):
        diff = np.diff(active, axis=axis)
        lo = [slice(None)] * 2
        hi = [slice(None)] * 2
        lo[axis], hi[axis] = slice(None, -1), slice(1, None)
        switch[tuple(lo)] |= diff
        switch[tuple(hi)] |= diff
    keep = ~binary_dilation(switch, iterations=band + 1) if switch.any() else np.ones_like(switch)
    keep &= (X1 > g.x1_min + edge) & (X1 < g.x1_max - edge) & (X2 > g.x2_min + edge) & (X2 < g.x2_max - edge)
    keep &= np.isfinite(res)
    if not keep.any():
        raise ValueError("no nodes left after the exclusions; refine the grid or shrink the margins")
    return {"sup": float(np.max(res[keep])), "rms": float(np.sqrt(np.mean(res[keep] ** 2))),
            "nodes": int(keep.sum())}
