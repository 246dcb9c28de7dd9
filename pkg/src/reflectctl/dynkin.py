"""Two-obstacle problem for the slope of the value function, and its stopping-game checks.

The slope ``U = V_x1`` solves a two-obstacle problem with obstacles
``-kappa_plus`` and ``kappa_minus``.  It is computed here by projected SOR on
the same hybrid stencil as the value function, then compared with the
numerical derivative of the value function and with Monte Carlo estimates of
the stopping game started at interior points.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .cost import HorizonTooShort
from .grid import Grid2D, ScalarField, d1, interp_bilinear
from .hjb import NonConvergence, ValueField, _axis_weights
from .kernels.params import B11
from .model import BOUNDED_VARIATION, ProblemSpec
from .region import NotApplicable
from .rng import STREAM_GAME, STREAM_STOPPED
from .sde import RegionLookupOutOfRange, run_chunked

PSOR_OMEGA = 1.9
PSOR_TOL = 1e-10
PSOR_MAX_SWEEPS = 50_000
PSOR_BLOCK = 500
CLAMP_TOL = 1e-9
NEVER_STOPPED_LIMIT = 0.05


@dataclass
class GameField:
    U: ScalarField
    hat_h: ScalarField
    I_minus: np.ndarray
    I_plus: np.ndarray
    rho_hat: float
    lower: float
    upper: float
    sweeps: int
    change: float
    spec: ProblemSpec | None = None
    omega: float = PSOR_OMEGA

    @property
    def grid(self) -> Grid2D:
        return self.U.grid

    @property
    def clamp_state(self) -> np.ndarray:
        """-1 on the lower obstacle, +1 on the upper one, 0 elsewhere."""
        return self.I_plus.astype(int) - self.I_minus.astype(int)

    def columns(self) -> dict:
        return {"U": self.U.values, "hat_h": self.hat_h.values, "clamp_state": self.clamp_state}


def hat_h_field(spec: ProblemSpec, vf: ValueField) -> ScalarField:
    """``h_x1 + d(b2)/dx1 * V_x2`` at every node."""
    X1, X2 = vf.grid.mesh()
    c = spec.cost_eval(X1, X2)
    db2 = spec.drift2.evaluate(X1, X2)[1]
    return ScalarField(vf.grid, c.h1 + db2 * vf.Vx2.values)


def _slope_operator(spec: ProblemSpec, grid: Grid2D):
    """Stencil weights of ``(rho_hat - L~)`` for the slope equation.

    Differentiating the value equation in x1 adds ``sigma1 * d(sigma1)/dx1`` to
    the x1 drift; it vanishes unless the noise scales with x1.
    """
    X1, X2 = grid.mesh()
    b1, b2 = spec.drift(X1, X2)
    s1, s2 = spec.sigma(X1, X2)
    if spec.linear_sigma:
        b1 = b1 + spec.sigma_kind.sigma**2 * X1
    e, w = _axis_weights(b1, 0.5 * s1**2, grid.h1)
    n, s = _axis_weights(b2, 0.5 * s2**2, grid.h2)
    diag = spec.rho_hat + e + w + n + s
    return [np.ascontiguousarray(a, dtype=float) for a in (diag, e, w, n, s)]


def solve_two_obstacle(spec: ProblemSpec, hat_h: ScalarField, grid: Grid2D | None = None,
                       U0: ScalarField | None = None, omega: float = PSOR_OMEGA, tol: float = PSOR_TOL,
                       max_sweeps: int = PSOR_MAX_SWEEPS, backend: str | None = None) -> GameField:
    grid = grid or hat_h.grid
    if spec.control_mode != BOUNDED_VARIATION:
        raise NotApplicable("the two-obstacle form needs both gradient constraints")
    if spec.rho_hat <= 0:
        raise ValueError("rho - b11 must be positive")
    lower, upper = -spec.kappa_plus, spec.kappa_minus
    diag, e, w, n, s = _slope_operator(spec, grid)
    U = np.zeros(grid.shape) if U0 is None else np.clip(U0.values, lower, upper).copy()
    rhs = np.ascontiguousarray(hat_h.values, dtype=float)
    k = kernels.get(backend)
    U = np.ascontiguousarray(U)
    sweeps, change, prev = 0, math.inf, math.inf
    # the extrapolated x2 edge rows can lock strong over-relaxation into a cycle;
    # halve the over-relaxation whenever a block fails to halve the update
    while sweeps < max_sweeps:
        U, done, change = k.psor(diag, e, w, n, s, rhs, U, lower, upper, omega, tol,
                                 min(PSOR_BLOCK, max_sweeps - sweeps))
        U = np.ascontiguousarray(U)
        sweeps += int(done)
        if change < tol:
            break
        if change > 0.5 * prev and omega > 1.0:
            omega = max(1.0, 1.0 + 0.5 * (omega - 1.0))
        prev = change
    if not change < tol:
        raise NonConvergence(change, sweeps)
    return GameField(
        U=ScalarField(grid, U),
        hat_h=hat_h,
        I_minus=U <= lower + CLAMP_TOL,
        I_plus=U >= upper - CLAMP_TOL,
        rho_hat=spec.rho_hat,
        lower=lower,
        upper=upper,
        sweeps=int(sweeps),
        change=float(change),
        spec=spec,
        omega=float(omega),
    )


def solve_game(spec: ProblemSpec, vf: ValueField, **kw) -> GameField:
    """Two-obstacle solve with the right-hand side built from ``vf``, warm-started from its slope."""
    return solve_two_obstacle(spec, hat_h_field(spec, vf), vf.grid, U0=d1(vf.V), **kw)


def complementarity(game: GameField) -> dict:
    """Residual of ``(rho_hat - L~) U - hat_h`` split by clamp state (interior nodes)."""
    spec = game.spec
    diag, e, w, n, s = _slope_operator(spec, game.grid)
    U = game.U.values
    r = np.full(U.shape, np.nan)
    r[1:-1, 1:-1] = (
        diag[1:-1, 1:-1] * U[1:-1, 1:-1]
        - e[1:-1, 1:-1] * U[1:-1, 2:]
        - w[1:-1, 1:-1] * U[1:-1, :-2]
        - n[1:-1, 1:-1] * U[2:, 1:-1]
        - s[1:-1, 1:-1] * U[:-2, 1:-1]
        - game.hat_h.values[1:-1, 1:-1]
    )
    inner = np.zeros(U.shape, bool)
    inner[1:-1, 1:-1] = True
    free = inner & ~game.I_minus & ~game.I_plus
    return {
        "min_on_lower": float(np.min(r[inner & game.I_minus], initial=np.inf)),
        "max_on_upper": float(np.max(r[inner & game.I_plus], initial=-np.inf)),
        "sup_on_free": float(np.max(np.abs(r[free]), initial=0.0)),
        "scale": 1.0 + float(np.max(np.abs(game.hat_h.values))),
    }


def _margin_mask(grid: Grid2D, margin: int, coarse: Grid2D | None) -> np.ndarray:
    if coarse is None:
        return grid.interior_mask(margin)
    X1, X2 = grid.mesh()
    d1_, d2_ = margin * coarse.h1 - 1e-12, margin * coarse.h2 - 1e-12
    return (
        (X1 >= grid.x1_min + d1_) & (X1 <= grid.x1_max - d1_) & (X2 >= grid.x2_min + d2_) & (X2 <= grid.x2_max - d2_)
    )


def consistency_check(game: GameField, vf: ValueField, margin: int = 3, coarse: Grid2D | None = None) -> dict:
    """Norms of ``U - d1(V)`` away from the box edges.

    ``margin`` counts cells of ``coarse`` when given, so a refinement study
    compares the same physical region on every grid.
    """
    m = _margin_mask(vf.grid, margin, coarse)
    diff = (game.U.values - d1(vf.V).values)[m]
    return {
        "sup_diff_interior": float(np.max(np.abs(diff))),
        "l2_diff": float(np.sqrt(np.mean(diff**2))),
        "sup_U": game.U.sup(),
    }


# --------------------------------------------------------------------------
# Monte Carlo
# --------------------------------------------------------------------------


def _uncontrolled_params(spec: ProblemSpec) -> np.ndarray:
    p = kernels.encode(spec).copy()
    if spec.linear_sigma:
        p[B11] += spec.sigma_kind.sigma**2
    return p


def _stopped(spec, level, F1, F2, lo, hi, shifts, w, disc_rate, pays, x, n_paths, T, dt, seed, stream, backend,
             p=None):
    g = level.grid
    k = kernels.get(backend)
    p = kernels.encode(spec) if p is None else p
    n_steps = int(round(T / dt))
    geom = (g.x1_min, g.h1, g.x2_min, g.h2, g.x2_max)
    args = [np.ascontiguousarray(a.values, dtype=float) for a in (level, F1, F2)]
    x = np.asarray(x, dtype=float)

    def run(ids):
        return ids, k.stopped_functional(p, *args, geom, lo, hi, shifts[0], shifts[1], w[0], w[1], disc_rate,
                                         pays[0], pays[1], x, ids, n_steps, dt, int(seed), stream)

    parts = run_chunked(run, n_paths, lambda parts: parts)
    value = np.empty(n_paths)
    side = np.empty(n_paths, dtype=np.int64)
    tau = np.empty(n_paths)
    for ids, (v, sd, tu, bad) in parts:
        if bad >= 0:
            raise RegionLookupOutOfRange(f"path {int(ids[bad])} left the grid in x2; enlarge the box")
        idx = ids.astype(np.int64)
        value[idx], side[idx], tau[idx] = v, sd, tu
    return value, side, tau


def _summary(values, side):
    n = values.size
    return {
        "G_hat": float(values.mean()),
        "stderr": float(values.std(ddof=1) / math.sqrt(n)),
        "never_stopped": float(np.mean(side == 0)),
        "stopped_lower": float(np.mean(side == 1)),
        "stopped_upper": float(np.mean(side == 2)),
    }


def mc_game_value(spec: ProblemSpec, game: GameField, x, n_paths: int, T: float, dt: float, seed: int,
                  shift_lower: float = 0.0, shift_upper: float = 0.0, backend: str | None = None,
                  check: bool = True) -> dict:
    """Stopping-game payoff under the hitting times of the two clamp sets.

    ``shift_lower`` / ``shift_upper`` evaluate the hitting test at ``x1 + shift``,
    which makes the corresponding player stop earlier (for a shift toward its set).
    """
    zero = ScalarField(game.grid, np.zeros(game.grid.shape))
    values, side, _ = _stopped(
        spec, game.U, game.hat_h, zero, game.lower + CLAMP_TOL, game.upper - CLAMP_TOL,
        (shift_lower, shift_upper), (0.0, 1.0), game.rho_hat, (game.lower, game.upper), x, n_paths, T, dt, seed,
        STREAM_GAME, backend, p=_uncontrolled_params(spec),
    )
    out = _summary(values, side)
    out["bias_bound"] = math.exp(-game.rho_hat * T) * max(abs(game.lower), abs(game.upper), 1.0)
    if check and out["never_stopped"] > NEVER_STOPPED_LIMIT:
        raise HorizonTooShort(f"{out['never_stopped']:.1%} of paths never stopped")
    return out


def saddle_tests(spec: ProblemSpec, game: GameField, x, n_paths: int, T: float, dt: float, seed: int,
                 backend: str | None = None, k_std: float = 3.0) -> dict:
    """Game value at ``x`` plus the two one-cell early-stopping deviations (same noise)."""
    h1 = game.grid.h1
    U = interp_bilinear(game.U, x)
    base = mc_game_value(spec, game, x, n_paths, T, dt, seed, backend=backend)
    early_upper = mc_game_value(spec, game, x, n_paths, T, dt, seed, shift_upper=h1, backend=backend, check=False)
    early_lower = mc_game_value(spec, game, x, n_paths, T, dt, seed, shift_lower=-h1, backend=backend, check=False)
    s = base["stderr"]
    # time-discretization allowance, scaled by the obstacle size
    tol = k_std * s + 5.0 * math.sqrt(dt) * max(spec.kappa_plus, spec.kappa_minus)
    return {
        "x": [float(x[0]), float(x[1])],
        "U": U,
        **base,
        "value_tol": tol,
        "value_ok": abs(base["G_hat"] - U) <= tol,
        "G_upper_early": early_upper["G_hat"],
        "G_lower_early": early_lower["G_hat"],
        "upper_deviation_ok": early_upper["G_hat"] >= base["G_hat"] - k_std * s,
        "lower_deviation_ok": early_lower["G_hat"] <= base["G_hat"] + k_std * s,
        "dt": dt,
    }


def second_derivative_mc(spec: ProblemSpec, vf: ValueField, x, n_paths: int, T: float, dt: float, seed: int,
                         delta: float = CLAMP_TOL, backend: str | None = None, samples: bool = False) -> dict:
    """Monte Carlo value of ``V_x1x1`` for noise acting on x2 only.

    Integrates ``hat_h_x1 + hat_h_x2 * b12 (e^{b22 t} - 1)/b22`` with discount
    ``rho`` along uncontrolled paths until the slope field reaches either cap.
    """
    if not spec.degenerate:
        raise NotApplicable("the representation needs noise on x2 only")
    if spec.b11 != 0:
        raise NotApplicable("the representation needs b11 = 0")
    X1, X2 = vf.grid.mesh()
    c = spec.cost_eval(X1, X2)
    b2, db2_dx1, db2_dx2, *_ = spec.drift2.evaluate(X1, X2)
    F1 = ScalarField(vf.grid, c.h11 + db2_dx1 * vf.Vx1x2.values)
    F2 = ScalarField(vf.grid, c.h12 + db2_dx1 * vf.Vx2x2.values)
    w_c = float(np.mean(db2_dx1))
    w_d = float(np.mean(db2_dx2))
    if not (np.allclose(db2_dx1, w_c) and np.allclose(db2_dx2, w_d)):
        raise NotApplicable("the representation needs an affine x2 drift")
    if w_d == 0.0:
        raise NotApplicable("b22 = 0 is not supported")
    values, side, _ = _stopped(
        spec, vf.Vx1, F1, F2, -spec.kappa_plus + delta, spec.kappa_minus - delta, (0.0, 0.0), (w_c, w_d),
        spec.rho, (0.0, 0.0), x, n_paths, T, dt, seed, STREAM_STOPPED, backend,
    )
    out = _summary(values, side)
    out["mean"] = out.pop("G_hat")
    sup_f = float(np.max(np.abs(F1.values)) + abs(w_c / w_d) * np.max(np.abs(F2.values)) * math.exp(max(w_d, 0) * T))
    out["bias_bound"] = math.exp(-spec.rho * T) * sup_f / spec.rho
    if samples:
        out["samples"] = values
    return out


def second_derivative_extrapolated(spec: ProblemSpec, vf_coarse: ValueField, vf_fine: ValueField, x,
                                   n_paths: int, T: float, dt: float, seed: int, backend: str | None = None) -> dict:
    """Grid-extrapolated Monte Carlo ``V_x1x1`` from fields on a grid and its refinement.

    The stopping test reads the slope field at nodes, so the barrier sits up to
    one cell from the true free boundary and the estimate carries an O(h) bias.
    ``2 * fine - coarse`` removes the leading term; both runs share their noise.
    The stderr is computed from the per-path combination.
    """
    runs = [
        second_derivative_mc(spec, vf, x, n_paths, T, dt, seed, backend=backend, samples=True)["samples"]
        for vf in (vf_coarse, vf_fine)
    ]
    comb = 2 * runs[1] - runs[0]
    return {
        "mean": float(comb.mean()),
        "stderr": float(comb.std(ddof=1) / math.sqrt(comb.size)),
        "coarse": float(runs[0].mean()),
        "fine": float(runs[1].mean()),
    }
