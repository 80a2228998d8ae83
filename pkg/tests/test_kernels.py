import os
import subprocess
import sys

import numpy as np

from aggload import kernels


def test_neg2ll_rows_agree():
    rng = np.random.default_rng(3)
    rows, n = 7, 40
    scale = rng.uniform(0, 5, rows)
    sq = rng.uniform(0, 10, (rows, n))
    eig = np.sort(rng.uniform(0, 3, n))
    reps = rng.integers(1, 6, rows).astype(float)
    a = kernels.neg2ll_rows_numba(scale, sq, eig, reps, 0.7)
    b = kernels.neg2ll_rows_numpy(scale, sq, eig, reps, 0.7)
    np.testing.assert_allclose(a, b, rtol=1e-13)
    # direct formula
    delta = scale[:, None] * eig[None, :] + 0.7
    ref = (reps[:, None] * np.log(delta) + sq / delta).sum(axis=1)
    np.testing.assert_allclose(a, ref, rtol=1e-13)


def test_tabulate_agree():
    codes = np.random.default_rng(0).integers(0, 17, 5000)
    a = kernels.tabulate_codes_numba(codes, 17)
    b = kernels.tabulate_codes_numpy(codes, 17)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a, np.bincount(codes, minlength=17))


def test_env_flag_selects_numpy():
    env = dict(os.environ, AGGLOAD_BACKEND="numpy")
    out = subprocess.run(
        [sys.executable, "-c", "from aggload import _backend; print(_backend.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "numpy"


def test_numpy_backend_end_to_end():
    # the same H table must come out of either backend
    code = (
        "from aggload.counts import FraudMatrix, estimate_h_table;"
        "h = estimate_h_table(FraudMatrix([[0.98,0.02],[0.05,0.95]]), (32,43), 5000, 3);"
        "print(sorted((k, str(v)) for k, v in h.entries.items()))"
    )
    outs = []
    for backend in ("numba", "numpy"):
        env = dict(os.environ, AGGLOAD_BACKEND=backend)
        outs.append(subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True).stdout)
    assert outs[0] == outs[1]
