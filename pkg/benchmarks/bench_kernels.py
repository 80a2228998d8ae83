"""Compare the numba kernels with their pure-numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5]

Kernels are called directly (``*_numba`` vs ``*_numpy``), so the
``AGGLOAD_BACKEND`` setting does not matter here.  The end-to-end rows run
a subprocess per backend, since the backend is fixed at import time.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from aggload import kernels
from aggload.basis import BasisSpec, make_knots


def _best(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def kernel_cases():
    rng = np.random.default_rng(0)
    spec = BasisSpec()
    knots = make_knots(spec)
    times = rng.uniform(0, 24, 20_000)

    rows, n = 400, 96
    scale = rng.uniform(0, 5, rows)
    sq = rng.uniform(0, 10, (rows, n))
    eig = np.sort(rng.uniform(0, 3, n))
    reps = np.full(rows, 5.0)

    codes = rng.integers(0, 2000, 1 << 15)

    yield "bspline_design (20k times, K=9)", (
        lambda: kernels.bspline_design_numba(knots, 3, times, 9),
        lambda: kernels.bspline_design_numpy(knots, 3, times, 9),
    )
    yield "neg2ll_rows (400 x 96)", (
        lambda: kernels.neg2ll_rows_numba(scale, sq, eig, reps, 3.5),
        lambda: kernels.neg2ll_rows_numpy(scale, sq, eig, reps, 3.5),
    )
    yield "tabulate_codes (32k codes)", (
        lambda: kernels.tabulate_codes_numba(codes, 2000),
        lambda: kernels.tabulate_codes_numpy(codes, 2000),
    )


END_TO_END = {
    "H table, R=(32,43), B=1e5": (
        "from aggload.counts import FraudMatrix, estimate_h_table\n"
        "F = FraudMatrix([[0.98, 0.02], [0.05, 0.95]])\n"
        "estimate_h_table(F, (32, 43), 1000, 0)\n"
        "t = time.perf_counter(); estimate_h_table(F, (32, 43), 100_000, 1)\n"
    ),
    "fit, Case 1, D=5, B=2e4": (
        "from aggload.simulate import build_case, simulate_dataset\n"
        "from aggload.fit import FitConfig, fit\n"
        "sc = build_case(1); data = simulate_dataset(sc, seed=7)\n"
        "fit(data, sc.fraud, FitConfig(b_runs=100, max_outer_iters=1), sc.basis)\n"
        "t = time.perf_counter(); fit(data, sc.fraud, FitConfig(b_runs=20_000), sc.basis)\n"
    ),
}


def end_to_end(backend: str, body: str) -> float:
    code = "import time\n" + body + "print(time.perf_counter() - t)\n"
    env = dict(os.environ, AGGLOAD_BACKEND=backend)
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    print(f"{'case':38s} {'numba':>12s} {'numpy':>12s} {'speedup':>8s}")
    for name, (fast, slow) in kernel_cases():
        fast()  # compile outside the timing
        np.testing.assert_allclose(fast(), slow())
        t_fast = _best(fast, args.repeat, 20)
        t_slow = _best(slow, args.repeat, 20)
        print(f"{name:38s} {t_fast * 1e3:10.3f}ms {t_slow * 1e3:10.3f}ms {t_slow / t_fast:7.1f}x")
    for name, body in END_TO_END.items():
        t_fast = min(end_to_end("numba", body) for _ in range(2))
        t_slow = min(end_to_end("numpy", body) for _ in range(2))
        print(f"{name:38s} {t_fast * 1e3:10.1f}ms {t_slow * 1e3:10.1f}ms {t_slow / t_fast:7.1f}x")


if __name__ == "__main__":
    main()
