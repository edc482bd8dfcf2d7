"""Compare the numba and numpy solver backends on first-iteration subproblems.

    python3 benchmarks/bench_kernels.py [--repeats 3]

Both backends run the same iterations on the same program, so the table
also reports the largest objective difference between them.
"""

import argparse
import time

import numpy as np

from spcawsr._accel import USE_NUMBA
from spcawsr.conic import solve
from spcawsr.numerics import RngStream
from spcawsr.rates import build_index_set, weighted_sum_rate
from spcawsr.spca import SpcaSettings, build_subproblem, initialize, state_from_init
from spcawsr.system import SystemConfig, draw_scenario

SIZES = ((2, 2, 4, 2), (3, 2, 8, 2), (3, 2, 16, 2), (3, 2, 32, 2))


def subproblem(M, K, N, n_tx, variant, seed=0):
    cfg = SystemConfig.make(M, K, N, n_tx, 10.0)
    scn = draw_scenario(cfg, RngStream(31, seed))
    s = SpcaSettings(variant=variant)
    idx = build_index_set(cfg, scn.schedule)
    init = initialize(scn.channels, scn.schedule, cfg, idx, s)
    wsr0 = weighted_sum_rate(scn.channels, init.beams0, cfg, idx).wsr_bits
    state = state_from_init(init, idx.weights(cfg), wsr0)
    return build_subproblem(state, scn.channels, cfg, idx, s), s


def best_time(prog, s, backend, repeats):
    best, sol = np.inf, None
    for _ in range(repeats):
        t0 = time.perf_counter()
        sol = solve(prog, s.inner_tolerance, s.inner_max_iters, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, sol


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()
    if not USE_NUMBA:
        raise SystemExit("numba is disabled or missing; nothing to compare")
    # compile once outside the timings
    warm, s = subproblem(1, 1, 1, 1, "WGM")
    solve(warm, backend="numba")
    print(f"{'shape':>12} {'var':>4} {'rows':>6} {'iters':>6} {'numpy ms':>9} {'numba ms':>9} {'speedup':>8} {'|dobj|':>8}")
    for M, K, N, n_tx in SIZES:
        for variant in ("WGM", "EXP"):
            prog, s = subproblem(M, K, N, n_tx, variant)
            t_np, s_np = best_time(prog, s, "numpy", args.repeats)
            t_nb, s_nb = best_time(prog, s, "numba", args.repeats)
            rows = prog.compile().A.shape[0]
            print(f"{f'{M}x{K}x{N}x{n_tx}':>12} {variant:>4} {rows:>6} {s_nb.iterations:>6} {1e3 * t_np:>9.1f} "
                  f"{1e3 * t_nb:>9.1f} {t_np / t_nb:>8.2f} {abs(s_np.objective_value - s_nb.objective_value):>8.1e}")


if __name__ == "__main__":
    main()
