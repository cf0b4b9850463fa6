"""Compare the numba kernels with their pure-numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--vars 18]

The numba timings exclude compilation (one warm-up call per kernel).
Results are also checked for equality.
"""
import argparse
import time

import numpy as np

from genfinder import kernels
from genfinder.reduction import SatInstance, build_reduction


def _time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def random_instance(num_vars, num_clauses, seed):
    rng = np.random.default_rng(seed)
    clauses = {tuple(sorted(rng.choice(num_vars, 3, replace=False) + 1)) for _ in range(num_clauses)}
    return SatInstance(num_vars, tuple(sorted(clauses)))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--vars", type=int, default=18, help="variables for the SAT kernels")
    args = ap.parse_args()

    sat = random_instance(args.vars, 2 * args.vars, seed=1)
    masks = sat.clause_masks()
    red = build_reduction(SatInstance(8, ((1, 2, 3), (3, 4, 5), (5, 6, 7), (2, 6, 8))), emit=False)

    cases = [
        (f"exactly_one_search V={args.vars}",
         lambda: kernels._nb_exactly_one_search(masks, sat.num_vars),
         lambda: kernels._np_exactly_one_search(masks, sat.num_vars)),
        (f"exactly_one_table V={args.vars}",
         lambda: kernels._nb_exactly_one_table(masks, sat.num_vars),
         lambda: kernels._np_exactly_one_table(masks, sat.num_vars)),
        (f"box_offdiag_minima V=8 d={red.d}",
         lambda: kernels._nb_box_offdiag_minima(red.Q, red.B),
         lambda: kernels._np_box_offdiag_minima(red.Q, red.B)),
    ]
    print(f"numba active by default: {kernels.USE_NUMBA}")
    print(f"{'kernel':36s} {'numba [s]':>10s} {'numpy [s]':>10s} {'speedup':>8s}")
    for name, nb, npf in cases:
        nb()  # compile
        t_nb, out_nb = _time(nb, args.repeat)
        t_np, out_np = _time(npf, args.repeat)
        assert np.allclose(np.asarray(out_nb, dtype=float), np.asarray(out_np, dtype=float), atol=1e-9), name
        print(f"{name:36s} {t_nb:10.4f} {t_np:10.4f} {t_np / t_nb:8.1f}x")


if __name__ == "__main__":
    main()
