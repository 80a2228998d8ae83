"""Hot numeric kernels, each with a numba and a pure-numpy implementation.

The public names at the bottom dispatch on :data:`aggload._backend.BACKEND`.
Both implementations are importable directly (``*_numba`` / ``*_numpy``) so
the test-suite and the benchmark can compare them side by side.
"""

from __future__ import annotations

import numpy as np

from ._backend import BACKEND, njit

# ---------------------------------------------------------------------------
# B-spline design matrix
# ---------------------------------------------------------------------------


@njit(cache=True)
def _find_span(knots, degree, num_basis, t):
    # right endpoint belongs to the last non-degenerate span
    if t >= knots[num_basis]:
        return num_basis - 1
    lo = degree
    hi = num_basis
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if t < knots[mid]:
            hi = mid
        else:
            lo = mid
    return lo


@njit(cache=True)
def bspline_design_numba(knots, degree, times, num_basis):
    n = times.shape[0]
    out = np.zeros((n, num_basis))
    left = np.empty(degree + 1)
    right = np.empty(degree + 1)
    vals = np.empty(degree + 1)
    for row in range(n):
        t = times[row]
        mu = _find_span(knots, degree, num_basis, t)
        vals[0] = 1.0
        for j in range(1, degree + 1):
            left[j] = t - knots[mu + 1 - j]
            right[j] = knots[mu + j] - t
            saved = 0.0
            for r in range(j):
                temp = vals[r] / (right[r + 1] + left[j - r])
                vals[r] = saved + right[r + 1] * temp
                saved = left[j - r] * temp
            vals[j] = saved
        for j in range(degree + 1):
            out[row, mu - degree + j] = vals[j]
    return out


def bspline_design_numpy(knots, degree, times, num_basis):
    knots = np.asarray(knots, dtype=float)
    t = np.asarray(times, dtype=float)[:, None]
    n_int = knots.shape[0] - 1
    lo, hi = knots[:-1], knots[1:]
    basis = ((lo <= t) & (t < hi)).astype(float)
    # close the last non-degenerate interval on the right
    at_end = t[:, 0] >= knots[num_basis]
    if at_end.any():
        basis[at_end] = 0.0
        basis[at_end, num_basis - 1] = 1.0
    for d in range(1, degree + 1):
        cols = n_int - d
        denom_l = knots[d : d + cols] - knots[:cols]
        denom_r = knots[d + 1 : d + 1 + cols] - knots[1 : 1 + cols]
        with np.errstate(divide="ignore", invalid="ignore"):
            wl = np.where(denom_l > 0, (t - knots[:cols]) / denom_l, 0.0)
            wr = np.where(denom_r > 0, (knots[d + 1 : d + 1 + cols] - t) / denom_r, 0.0)
        basis = wl * basis[:, :cols] + wr * basis[:, 1 : cols + 1]
    return np.ascontiguousarray(basis[:, :num_basis])


# ---------------------------------------------------------------------------
# Diagonalised Gaussian objective
# ---------------------------------------------------------------------------


@njit(cache=True)
def neg2ll_rows_numba(scale, sq_resid, eigvals, num_reps, sigma_sq):
    """Per-row ``D*sum(log delta) + sum(S/delta)`` with ``delta = s*eig + sigma_sq``."""
    rows, n = sq_resid.shape
    out = np.empty(rows)
    for i in range(rows):
        acc = 0.0
        s = scale[i]
        reps = num_reps[i]
        for j in range(n):
            delta = s * eigvals[j] + sigma_sq
            acc += reps * np.log(delta) + sq_resid[i, j] / delta
        out[i] = acc
    return out


def neg2ll_rows_numpy(scale, sq_resid, eigvals, num_reps, sigma_sq):
    delta = np.asarray(scale)[:, None] * np.asarray(eigvals)[None, :] + sigma_sq
    return (np.asarray(num_reps)[:, None] * np.log(delta) + sq_resid / delta).sum(axis=1)


# ---------------------------------------------------------------------------
# Histogram of simulated row-total vectors
# ---------------------------------------------------------------------------


@njit(cache=True)
def tabulate_codes_numba(codes, size):
    out = np.zeros(size, dtype=np.int64)
    for b in range(codes.shape[0]):
        out[codes[b]] += 1
    return out


def tabulate_codes_numpy(codes, size):
    return np.bincount(codes, minlength=size).astype(np.int64)


if BACKEND == "numba":
    bspline_design = bspline_design_numba
    neg2ll_rows = neg2ll_rows_numba
    tabulate_codes = tabulate_codes_numba
else:
    bspline_design = bspline_design_numpy
    neg2ll_rows = neg2ll_rows_numpy
    tabulate_codes = tabulate_codes_numpy
