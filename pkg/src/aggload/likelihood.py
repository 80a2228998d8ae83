"""Log-likelihood of aggregated curves and reported counts.

Transformer ``i`` contributes a Gaussian term for its ``D`` daily curves,
each ``N(Phi G' m, s * Psi Psi' + sigma2 I)`` with ``s = m . sigma_gamma_sq``,
and a count term ``log P(R | m)``.  Diagonalising ``Psi Psi' = Q' diag(eig) Q``
once turns every covariance into ``diag(s * eig + sigma2)`` after rotation by
``Q``, so each evaluation is linear in ``n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

from . import kernels
from .basis import eval_basis
from .counts import FraudMatrix, HTable, theorem_log_constant
from .model import ModelParams, TransformerData, check_grids

NEG_INF = -math.inf
LOG_2PI = math.log(2.0 * math.pi)


class NumericalError(ArithmeticError):
    """Covariance matrix is not positive definite."""


@dataclass(frozen=True)
class EigenCache:
    """``Psi Psi' = Q' diag(eigvals) Q`` with orthonormal ``Q``."""

    Q: np.ndarray
    eigvals: np.ndarray

    @classmethod
    def from_design(cls, Psi: np.ndarray) -> "EigenCache":
        w, V = np.linalg.eigh(Psi @ Psi.T)
        return cls(Q=np.ascontiguousarray(V.T), eigvals=np.clip(w, 0.0, None))

    def reconstruct(self) -> np.ndarray:
        return self.Q.T @ (self.eigvals[:, None] * self.Q)


@dataclass
class LikelihoodBreakdown:
    total: float
    per_transformer: list[dict] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "per_transformer": self.per_transformer,
            "diagnostics": self.diagnostics,
        }


def _mean_and_scale(params: ModelParams, m: Sequence[int]) -> tuple[np.ndarray, float]:
    m = np.asarray(m, dtype=float)
    return m @ params.gammas, float(m @ params.sigma_gamma_sq)


def gauss_neg2ll(params: ModelParams, data_i: TransformerData, m: Sequence[int]) -> float:
    """``D log|Lambda| + sum_d r_d' Lambda^{-1} r_d`` by Cholesky on the full covariance."""
    Phi = eval_basis(params.basis, data_i.times).values
    coef, s = _mean_and_scale(params, m)
    n = Phi.shape[0]
    cov = s * (Phi @ Phi.T) + params.sigma_sq * np.eye(n)
    try:
        chol = linalg.cho_factor(cov, lower=True)
    except linalg.LinAlgError:
        ev = np.linalg.eigvalsh(cov)
        raise NumericalError(
            f"covariance not positive definite (sigma_sq={params.sigma_sq!r}, "
            f"smallest eigenvalues {ev[:3].tolist()})"
        ) from None
    resid = data_i.Y - (Phi @ coef)[:, None]
    logdet = 2.0 * np.log(np.diag(chol[0])).sum()
    quad = float(np.sum(resid * linalg.cho_solve(chol, resid)))
    return data_i.num_days * logdet + quad


def gauss_neg2ll_eigen(
    params: ModelParams, data_i: TransformerData, m: Sequence[int], cache: EigenCache
) -> float:
    """Same quantity as :func:`gauss_neg2ll` through the rotated diagonal form."""
    Phi = eval_basis(params.basis, data_i.times).values
    coef, s = _mean_and_scale(params, m)
    ystar = cache.Q @ (data_i.Y - (Phi @ coef)[:, None])
    sq = (ystar * ystar).sum(axis=1)
    _check_delta(s, cache.eigvals, params.sigma_sq)
    return float(
        kernels.neg2ll_rows(
            np.array([s]), sq[None, :], cache.eigvals, np.array([float(data_i.num_days)]), params.sigma_sq
        )[0]
    )


def _check_delta(s: float, eigvals: np.ndarray, sigma_sq: float) -> None:
    lo = s * eigvals.min() + sigma_sq
    if not lo > 0:
        raise NumericalError(
            f"covariance not positive definite (sigma_sq={sigma_sq!r}, smallest eigenvalue {lo!r})"
        )


class Workspace:
    """Rotated data for repeated likelihood evaluations on a fixed grid."""

    def __init__(self, data: list[TransformerData], basis):
        times = check_grids(data)
        self.basis = basis
        self.times = times
        self.Phi = eval_basis(basis, times).values
        self.cache = EigenCache.from_design(self.Phi)
        self.phi_rot = self.cache.Q @ self.Phi
        self.ystar = [self.cache.Q @ td.Y for td in data]
        self.reps = np.array([td.num_days for td in data], dtype=float)
        self.n = times.shape[0]
        self.reported = np.array([td.reported for td in data], dtype=np.int64)

    @property
    def num_transformers(self) -> int:
        return len(self.ystar)

    @property
    def eigvals(self) -> np.ndarray:
        return self.cache.eigvals

    def sq_resid(self, gammas: np.ndarray, counts: np.ndarray) -> np.ndarray:
        """``(I, n)`` sums over days of squared rotated residuals."""
        curves = self.phi_rot @ gammas.T  # (n, C)
        out = np.empty((self.num_transformers, self.n))
        for i, ys in enumerate(self.ystar):
            r = ys - (curves @ counts[i])[:, None]
            out[i] = (r * r).sum(axis=1)
        return out

    def neg2ll_terms(self, scale: np.ndarray, sq: np.ndarray, sigma_sq: float) -> np.ndarray:
        _check_delta(float(np.min(scale)), self.eigvals, sigma_sq)
        return kernels.neg2ll_rows(np.asarray(scale, dtype=float), sq, self.eigvals, self.reps, float(sigma_sq))

    def l1(self, params: ModelParams, counts: np.ndarray | None = None) -> float:
        counts = params.counts if counts is None else counts
        sq = self.sq_resid(params.gammas, counts)
        scale = counts @ params.sigma_gamma_sq
        return float(self.neg2ll_terms(scale, sq, params.sigma_sq).sum())

    def candidate_neg2ll(self, i: int, params: ModelParams, candidates: np.ndarray) -> np.ndarray:
        """Gaussian ``-2 log`` term of transformer ``i`` for each candidate count row."""
        curves = self.phi_rot @ params.gammas.T
        ys = self.ystar[i]
        sq = np.empty((candidates.shape[0], self.n))
        for k, m in enumerate(candidates):
            r = ys - (curves @ m)[:, None]
            sq[k] = (r * r).sum(axis=1)
        scale = candidates @ params.sigma_gamma_sq
        reps = np.full(candidates.shape[0], self.reps[i])
        _check_delta(float(scale.min()), self.eigvals, params.sigma_sq)
        return kernels.neg2ll_rows(scale.astype(float), sq, self.eigvals, reps, params.sigma_sq)

    def gauss_logdensity(self, neg2ll: np.ndarray) -> np.ndarray:
        return -0.5 * np.asarray(neg2ll) - 0.5 * self.n * self.reps * LOG_2PI


def log_count_prob(F: FraudMatrix, m: Sequence[int], R: Sequence[int], htable: HTable) -> float:
    """``log P(R | m)`` from the tabulated ``H``; ``-inf`` outside its support."""
    lh = htable.log_h(m)
    if lh == NEG_INF:
        return NEG_INF
    return theorem_log_constant(F, R) + sum(math.lgamma(int(v) + 1) for v in m) + lh


def lstar(
    params: ModelParams,
    data_i: TransformerData,
    htable: HTable,
    m: Sequence[int],
    cache: EigenCache | None = None,
) -> float:
    """Count-dependent part of transformer ``i``'s log-likelihood at ``m``."""
    lh = htable.log_h(m)
    if lh == NEG_INF:
        return NEG_INF
    if cache is None:
        g = gauss_neg2ll(params, data_i, m)
    else:
        g = gauss_neg2ll_eigen(params, data_i, m, cache)
    return -0.5 * g + sum(math.lgamma(int(v) + 1) for v in m) + lh


def total_loglik(
    params: ModelParams,
    data: list[TransformerData],
    htables: list[HTable],
    F: FraudMatrix,
    cache: EigenCache | None = None,
) -> LikelihoodBreakdown:
    """Full log-likelihood with a per-transformer split into Gaussian and count parts."""
    if len(htables) != len(data):
        raise ValueError(f"need one H table per transformer ({len(data)}), got {len(htables)}")
    parts = []
    diagnostics = []
    for i, td in enumerate(data):
        m = params.counts[i]
        if cache is None:
            g = gauss_neg2ll(params, td, m)
        else:
            g = gauss_neg2ll_eigen(params, td, m, cache)
        gauss = -0.5 * g - 0.5 * td.Y.shape[0] * td.num_days * LOG_2PI
        count = log_count_prob(F, m, td.reported, htables[i])
        if count == NEG_INF:
            diagnostics.append(
                f"transformer {td.transformer_id}: counts {m.tolist()} outside H-table support"
            )
        parts.append({"gauss_term": float(gauss), "count_term": float(count)})
    total = math.fsum(p["gauss_term"] for p in parts) + math.fsum(p["count_term"] for p in parts)
    if any(p["count_term"] == NEG_INF for p in parts):
        total = NEG_INF
    return LikelihoodBreakdown(total=total, per_transformer=parts, diagnostics=diagnostics)
