"""Wall time of the hot kernels under the compiled and the numpy backends.

    python3 benchmarks/bench_kernels.py [--grid 65] [--paths 2000] [--repeat 3]
"""
from __future__ import annotations

import argparse
import time

from reflectctl import kernels
from reflectctl.cost import cost_samples
from reflectctl.dynkin import mc_game_value, solve_game
from reflectctl.hjb import solve
from reflectctl.region import extract_region
from reflectctl.sde import simulate_paths
from reflectctl.suite import get, grid_for


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grid", type=int, default=65)
    ap.add_argument("--paths", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--model", default="sum_squares")
    args = ap.parse_args(argv)

    b = get(args.model)
    vf = solve(b.spec, grid_for(b, args.grid))
    reg = extract_region(vf, vf.eps_final)
    family = [extract_region(vf, e) for e in (0.1, 0.01, 0.001)]
    game = solve_game(vf.spec, vf)
    T, dt = 2.0, 1e-3
    cases = {
        "simulate_record": lambda k: simulate_paths(vf.spec, reg, b.x0, T, dt, 0, n_paths=args.paths // 10,
                                                    backend=k),
        "cost_multi": lambda k: cost_samples(vf.spec, family, b.x0, args.paths, T, dt, 0, backend=k),
        "stopped_functional": lambda k: mc_game_value(vf.spec, game, b.x0, args.paths, T, dt, 0, backend=k,
                                                      check=False),
        "psor": lambda k: solve_game(vf.spec, vf, backend=k),
    }
    backends = kernels.available()
    print(f"model {args.model}, grid {args.grid}, paths {args.paths}, steps {int(T / dt)}, best of {args.repeat}")
    print(f"{'kernel':<20}" + "".join(f"{k:>12}" for k in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name, fn in cases.items():
        t = {k: best_of(lambda: fn(k), args.repeat) for k in backends}
        row = f"{name:<20}" + "".join(f"{t[k]:>11.3f}s" for k in backends)
        if len(backends) > 1:
            row += f"{t['python'] / t['cython']:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
