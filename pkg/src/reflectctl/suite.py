"""Named benchmark problems and the end-to-end benchmark run."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cost import McConfig, cost_samples, grid_cost_sup, summarize
from .dynkin import consistency_check, solve_game
from .grid import Grid2D, interp_bilinear
from .hjb import DEFAULT_EPS_SCHEDULE, solve, vi_residual
from .model import (
    MONOTONE_INCREASING, Affine, Constant, ConvexForm, Degenerate, DiffSquare, Linear, ProblemSpec, Quadratic,
    Separable, SoftplusAffine, SumSquare, SumSquares, TargetPlusConvex, validate_assumptions,
)
from .region import extract_region


@dataclass(frozen=True)
class Benchmark:
    name: str
    spec: ProblemSpec
    box: tuple
    x0: tuple
    linear_quadratic: bool = False


def _sep() -> ProblemSpec:
    return ProblemSpec(0.0, -0.2, Affine(0.0, 0.0, -1.0), Constant(1.0), 1.0,
                       Separable(Quadratic(0, 0, 1), Quadratic(0, 0, 1)))


BENCHMARKS = {
    b.name: b
    for b in (
        Benchmark("separable", _sep(), (-3.0, 3.0, -5.0, 5.0), (0.5, 0.5), True),
        Benchmark("sum_squares", ProblemSpec(0.0, -0.2, Affine(0.0, -0.5, -1.0), Constant(1.0), 1.0, SumSquares()),
                  (-4.0, 4.0, -4.0, 4.0), (0.0, 0.5), True),
        Benchmark("diff_square", ProblemSpec(0.0, -0.2, Affine(0.0, -0.5, -1.0), Constant(1.0), 1.0, DiffSquare()),
                  (-4.0, 4.0, -4.0, 4.0), (0.0, 0.0), True),
        Benchmark("sum_square", ProblemSpec(0.0, -0.2, Affine(0.0, 0.5, -1.0), Constant(1.0), 1.0, SumSquare()),
                  (-7.0, 7.0, -4.5, 4.5), (0.0, 0.0), True),
        Benchmark(
            "convex_drift",
            ProblemSpec(0.0, -0.2, ConvexForm(SoftplusAffine(0.5, 0.0, -0.5), -1.0), Constant(1.0), 1.0,
                        TargetPlusConvex(0.0, SoftplusAffine(1.0, 0.0, 0.0))),
            (-4.0, 4.0, -4.0, 4.0), (0.0, 0.0),
        ),
        Benchmark(
            "linear_sigma",
            ProblemSpec(0.1, -0.05, Affine(0.2, 0.0, 0.02), Linear(0.1), 1.5,
                        TargetPlusConvex(2.0, Quadratic(4, -4, 1))),
            (0.04, 4.0, 0.04, 16.0), (2.0, 1.0),
        ),
    )
}

# not part of the end-to-end table
EXTRA = {
    "degenerate": Benchmark(
        "degenerate", ProblemSpec(0.0, 0.0, Affine(0.0, 1.0, -1.0), Degenerate(1.0), 1.0, SumSquares()),
        (-4.0, 4.0, -4.0, 4.0), (-0.3125, 0.5),
    ),
    "asymmetric_costs": Benchmark(
        "asymmetric_costs",
        ProblemSpec(0.0, -0.2, Affine(0.0, 0.0, -1.0), Constant(1.0), 1.0,
                    Separable(Quadratic(0, 0, 1), Quadratic(0, 0, 1)), kappa_plus=1.0, kappa_minus=2.0),
        (-3.0, 3.0, -5.0, 5.0), (0.5, 0.5),
    ),
    "monotone": Benchmark(
        "monotone",
        ProblemSpec(0.0, -0.2, Affine(0.0, 0.0, -1.0), Constant(1.0), 1.0,
                    Separable(Quadratic(0, 0, 1), Quadratic(0, 0, 1)), control_mode=MONOTONE_INCREASING),
        (-3.0, 3.0, -5.0, 5.0), (0.5, 0.5),
    ),
}


def get(name: str) -> Benchmark:
    try:
        return BENCHMARKS[name] if name in BENCHMARKS else EXTRA[name]
    except KeyError:
        raise KeyError(f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS) + sorted(EXTRA)}") from None


def grid_for(b: Benchmark, n: int) -> Grid2D:
    return Grid2D(*b.box, n, n)


BENCH_COLUMNS = (
    "model", "status", "n", "sup_abs_Vx1", "residual", "eps", "J", "stderr", "V0", "gap", "rel_gap",
    "consistency_sup", "consistency_l2",
)


def bench_row(b: Benchmark, n: int, eps_schedule, mc: McConfig) -> dict:
    """Validate, solve, reflect at the final eps, estimate the cost gap, and compare with the game solve."""
    spec = b.spec
    report = validate_assumptions(spec, b.box)
    grid = grid_for(b, n)
    vf = solve(spec, grid, eps_schedule)
    eps = float(eps_schedule[-1])
    region = extract_region(vf, eps)
    T = mc.T(spec.rho)
    samples = cost_samples(spec, [region], b.x0, mc.n_paths, T, mc.dt, mc.seed, mc.backend)[0]
    est = summarize(samples, spec.rho, T, grid_cost_sup(spec, grid))
    V0 = interp_bilinear(vf.V, b.x0)
    game = solve_game(spec, vf)
    cons = consistency_check(game, vf)
    return {
        "model": b.name,
        "status": "FAIL" if report.hard_fail or not report.sign_conditions_ok else "PASS",
        "n": n,
        "sup_abs_Vx1": float(np.max(np.abs(vf.Vx1.values))),
        "residual": vi_residual(spec, vf)["sup_interior"],
        "eps": eps,
        "J": est["mean"],
        "stderr": est["stderr"],
        "V0": V0,
        "gap": est["mean"] - V0,
        "rel_gap": (est["mean"] - V0) / abs(V0),
        "consistency_sup": cons["sup_diff_interior"],
        "consistency_l2": cons["l2_diff"],
    }


def run_bench(n: int = 65, eps_schedule=DEFAULT_EPS_SCHEDULE, mc: McConfig | None = None,
              models=None) -> list:
    mc = mc or McConfig(n_paths=2000, dt=1e-3, seed=0)
    names = list(models or BENCHMARKS)
    return [bench_row(BENCHMARKS[name], n, eps_schedule, mc) for name in names]
