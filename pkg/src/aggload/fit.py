"""Block-coordinate maximum likelihood for typologies, variances and true counts.

Each outer iteration updates, with the counts held fixed, the class
coefficients (closed-form generalised least squares), the noise variance
(bracketed 1-D search) and the consumer-level variances (bounded
Nelder-Mead), then re-selects every transformer's counts by scanning the
support of its H table.  Every sub-step is accepted only if it does not
lower the log-likelihood.

Alternating between the continuous block and the counts can stall where
moving one transformer's counts only pays off once the continuous
parameters follow.  With ``count_polish`` enabled, a stalled fit tries the
next-best count vectors of each transformer together with one continuous
pass and resumes iterating from the best strict improvement.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg, optimize

from ._backend import max_workers
from .basis import BasisSpec, eval_basis
from .counts import FraudMatrix, HTable, candidate_counts, estimate_h_table
from .likelihood import LOG_2PI, NEG_INF, NumericalError, Workspace, log_count_prob
from .model import ModelParams, TransformerData

log = logging.getLogger(__name__)


class SingularNormalMatrix(linalg.LinAlgError):
    """The stacked generalised least-squares system has no unique solution."""


@dataclass
class FitConfig:
    max_outer_iters: int = 200
    rel_tol: float = 1e-6
    inner_tol: float = 1e-8
    sigma_sq_floor: float = 1e-8
    sigma_gamma_floor: float = 0.0
    b_runs: int = 100_000
    seed: int = 0
    variance_ratios: list[float] | None = None
    count_polish: bool = True
    polish_width: int = 3

    def __post_init__(self):
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be >= 1")
        if not (self.rel_tol > 0 and self.inner_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.sigma_sq_floor <= 0:
            raise ValueError("sigma_sq_floor must be positive")
        if self.b_runs < 1:
            raise ValueError("b_runs must be >= 1")
        if self.polish_width < 1:
            raise ValueError("polish_width must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


@dataclass
class FitResult:
    params: ModelParams
    trace: list[tuple[int, str, float]]
    lstar_tables: list[dict[tuple[int, ...], float]]
    htables: list[HTable]
    status: str
    iterations: int
    config: FitConfig
    warnings: list[str] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def loglik(self) -> float:
        return self.trace[-1][2]

    def loglik_values(self) -> np.ndarray:
        return np.array([v for _, _, v in self.trace])


# ---------------------------------------------------------------------------
# initial values
# ---------------------------------------------------------------------------


def init_counts(data: list[TransformerData]) -> np.ndarray:
    return np.array([td.reported for td in data], dtype=np.int64)


def init_sigma_sq(data: list[TransformerData], basis: BasisSpec) -> float:
    """Pooled residual variance of per-day least-squares fits on the spline design."""
    times = data[0].times
    Phi = eval_basis(basis, times).values
    n, K = Phi.shape
    if n <= K:
        raise ValueError(f"need more time points ({n}) than basis functions ({K})")
    Qr, _ = np.linalg.qr(Phi)
    rss = 0.0
    dof = 0
    for td in data:
        resid = td.Y - Qr @ (Qr.T @ td.Y)
        rss += float((resid * resid).sum())
        dof += td.num_days * (n - K)
    return rss / dof


def init_sigma_gamma(
    data: list[TransformerData],
    basis: BasisSpec,
    counts: np.ndarray,
    gammas: np.ndarray,
    sigma_sq: float,
    ratios=None,
) -> np.ndarray:
    """Method-of-moments start for the consumer-level variances.

    Total variance across time points is matched to
    ``x * sum_i(sum_c M_ci s_c) * trace(Psi Psi') + I n sigma2`` and solved
    for ``x``; class ``c`` then gets ``s_c * x``.  Days are pooled with
    per-point sample variances when a transformer has more than one.
    """
    C = gammas.shape[0]
    s = np.ones(C) if ratios is None else np.asarray(ratios, dtype=float)
    if s.shape != (C,):
        raise ValueError(f"need {C} variance ratios, got {s.shape}")
    Phi = eval_basis(basis, data[0].times).values
    n = Phi.shape[0]
    tr = float((Phi * Phi).sum())
    lhs = 0.0
    weight = 0.0
    for i, td in enumerate(data):
        if td.num_days > 1:
            lhs += float(td.Y.var(axis=1, ddof=1).sum())
        else:
            mean = Phi @ (counts[i] @ gammas)
            lhs += float(((td.Y[:, 0] - mean) ** 2).sum())
        weight += float(counts[i] @ s)
    denom = weight * tr
    if denom == 0:
        raise ValueError("moment equation is degenerate: sum_i sum_c M_ci s_c * trace(Psi Psi') = 0")
    x = (lhs - len(data) * n * sigma_sq) / denom
    return s * max(x, 0.0)


# ---------------------------------------------------------------------------
# Step 1 updates
# ---------------------------------------------------------------------------


def update_gammas(ws: Workspace, counts: np.ndarray, sigma_gamma_sq, sigma_sq: float) -> np.ndarray:
    """Closed-form GLS coefficients for all classes, ``(C, K)``."""
    counts = np.asarray(counts, dtype=float)
    C = counts.shape[1]
    K = ws.phi_rot.shape[1]
    scale = counts @ np.asarray(sigma_gamma_sq, dtype=float)
    normal = np.zeros((C * K, C * K))
    rhs = np.zeros(C * K)
    for i, ys in enumerate(ws.ystar):
        w = 1.0 / (scale[i] * ws.eigvals + sigma_sq)
        A = ws.phi_rot.T @ (w[:, None] * ws.phi_rot)
        b = ws.phi_rot.T @ (w * ys.sum(axis=1))
        m = counts[i]
        normal += ws.reps[i] * np.kron(np.outer(m, m), A)
        rhs += np.kron(m, b)
    rank = np.linalg.matrix_rank(counts)
    if rank < C:
        raise SingularNormalMatrix(
            f"normal matrix is singular: count matrix has rank {rank} < {C} classes "
            "(count vectors are proportional across transformers)"
        )
    try:
        sol = linalg.cho_solve(linalg.cho_factor(normal, lower=True), rhs)
    except linalg.LinAlgError:
        raise SingularNormalMatrix(
            f"normal matrix of size {C * K} is not positive definite; the design is rank deficient"
        ) from None
    return sol.reshape(C, K)


def _sigma_sq_objective(ws: Workspace, sq: np.ndarray, scale: np.ndarray):
    def f(x: float) -> float:
        return float(ws.neg2ll_terms(scale, sq, x).sum())

    return f


def update_sigma_sq(
    ws: Workspace,
    counts: np.ndarray,
    gammas: np.ndarray,
    sigma_gamma_sq,
    sigma_sq: float,
    config: FitConfig | None = None,
) -> tuple[float, str | None]:
    """Minimise the Gaussian objective over the noise variance.

    Returns the new value and an optional warning when the optimum sits on
    the upper bracket edge after three widenings.
    """
    cfg = config or FitConfig()
    sq = ws.sq_resid(gammas, counts)
    scale = counts @ np.asarray(sigma_gamma_sq, dtype=float)
    f = _sigma_sq_objective(ws, sq, scale)
    lo = cfg.sigma_sq_floor
    hi = 10.0 * max(sigma_sq, lo)
    warning = None
    x = sigma_sq
    for attempt in range(4):
        res = optimize.minimize_scalar(
            f, bounds=(lo, hi), method="bounded", options={"xatol": max(cfg.inner_tol * hi, 1e-14)}
        )
        x = float(res.x)
        if x < hi * (1 - 1e-6) or attempt == 3:
            if x >= hi * (1 - 1e-6):
                warning = f"sigma_sq optimum on bracket edge {hi:.6g} after widening"
            break
        hi *= 10.0
    best = min((sigma_sq, x, lo), key=lambda v: (f(v), v != sigma_sq))
    return best, warning


def update_sigma_gamma(
    ws: Workspace,
    counts: np.ndarray,
    gammas: np.ndarray,
    sigma_sq: float,
    sigma_gamma_sq,
    config: FitConfig | None = None,
) -> np.ndarray:
    """Bounded Nelder-Mead over the consumer-level variances (one restart)."""
    cfg = config or FitConfig()
    prev = np.maximum(np.asarray(sigma_gamma_sq, dtype=float), cfg.sigma_gamma_floor)
    C = prev.shape[0]
    sq = ws.sq_resid(gammas, counts)
    counts_f = counts.astype(float)
    ref = max(float(prev.max()), sigma_sq / (counts_f.sum(axis=1).mean() * max(ws.eigvals.max(), 1e-300)))
    floor = cfg.sigma_gamma_floor / ref

    def f_scaled(u: np.ndarray) -> float:
        v = np.maximum(u, floor) * ref
        return float(ws.neg2ll_terms(counts_f @ v, sq, sigma_sq).sum())

    def nm(start: np.ndarray) -> np.ndarray:
        simplex = np.tile(start, (C + 1, 1))
        for k in range(C):
            simplex[k + 1, k] += max(0.2 * start[k], 0.2)
        res = optimize.minimize(
            f_scaled,
            start,
            method="Nelder-Mead",
            bounds=[(floor, None)] * C,
            options={
                "initial_simplex": simplex,
                "xatol": max(cfg.inner_tol, 1e-10),
                "fatol": max(cfg.inner_tol, 1e-12),
                "maxiter": 4000 * C,
                "maxfev": 8000 * C,
            },
        )
        return np.maximum(res.x, floor)

    u0 = prev / ref
    u1 = nm(u0)
    u2 = nm(u1 * 1.1)
    best = min((u0, u1, u2), key=f_scaled)
    return np.maximum(best, floor) * ref


# ---------------------------------------------------------------------------
# Step 2: integer search over counts
# ---------------------------------------------------------------------------


def lstar_scan(ws: Workspace, i: int, params: ModelParams, htable: HTable, cands: np.ndarray) -> np.ndarray:
    g = ws.candidate_neg2ll(i, params, cands)
    lfact = np.array([sum(math.lgamma(int(v) + 1) for v in m) for m in cands])
    logh = np.array([htable.log_h(m) for m in cands])
    return -0.5 * g + lfact + logh


def update_counts(
    ws: Workspace,
    params: ModelParams,
    htables: list[HTable],
    candidates: list[np.ndarray] | None = None,
) -> tuple[np.ndarray, list[dict[tuple[int, ...], float]]]:
    """Per transformer, the candidate count vector with the largest ``L*``.

    Ties go to the vector closest (L1) to the reported one, then to the
    lexicographically smallest.
    """
    if candidates is None:
        candidates = [np.array(candidate_counts(h), dtype=np.int64) for h in htables]
    new = params.counts.copy()
    tables = []
    for i, cands in enumerate(candidates):
        vals = lstar_scan(ws, i, params, htables[i], cands)
        R = ws.reported[i]
        order = sorted(
            range(len(cands)),
            key=lambda k: (-vals[k], int(np.abs(cands[k] - R).sum()), tuple(int(v) for v in cands[k])),
        )
        if vals[order[0]] > NEG_INF:
            new[i] = cands[order[0]]
        tables.append({tuple(int(v) for v in m): float(v) for m, v in zip(cands, vals)})
    return new, tables


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


def loglik(ws: Workspace, params: ModelParams, htables: list[HTable], F: FraudMatrix) -> float:
    """Full log-likelihood on the rotated workspace."""
    sq = ws.sq_resid(params.gammas, params.counts)
    g = ws.neg2ll_terms(params.counts @ params.sigma_gamma_sq, sq, params.sigma_sq)
    gauss = ws.gauss_logdensity(g)
    counts = [log_count_prob(F, params.counts[i], ws.reported[i], htables[i]) for i in range(len(htables))]
    if any(c == NEG_INF for c in counts):
        return NEG_INF
    return math.fsum(gauss) + math.fsum(counts)


def build_htables(
    data: list[TransformerData], F: FraudMatrix, B: int, seed: int, workers: int | None = None
) -> list[HTable]:
    """One Monte Carlo H table per transformer, each with its own derived seed."""
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(len(data))]
    workers = workers or max_workers()

    def one(i: int) -> HTable:
        return estimate_h_table(F, data[i].reported, B, seeds[i], workers=1)

    if workers > 1 and len(data) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(one, range(len(data))))
    return [one(i) for i in range(len(data))]


def _relative_change(new: float, old: float) -> float:
    if not (math.isfinite(new) and math.isfinite(old)):
        return math.inf
    return abs(new - old) / max(1.0, abs(old))


def initial_params(ws: Workspace, data: list[TransformerData], basis: BasisSpec, cfg: FitConfig) -> ModelParams:
    counts = init_counts(data)
    C = counts.shape[1]
    sigma_sq = max(init_sigma_sq(data, basis), cfg.sigma_sq_floor)
    gammas = update_gammas(ws, counts, np.zeros(C), sigma_sq)
    s2g = init_sigma_gamma(data, basis, counts, gammas, sigma_sq, cfg.variance_ratios)
    s2g = np.maximum(s2g, cfg.sigma_gamma_floor)
    return ModelParams(basis=basis, gammas=gammas, sigma_gamma_sq=s2g, sigma_sq=sigma_sq, counts=counts)


def _step1(ws, params: ModelParams, htables, F, cfg: FitConfig, warnings: list[str] | None, it: int = 0):
    """Continuous block in place; yields ``(label, loglik)`` after each update."""
    params.gammas = update_gammas(ws, params.counts, params.sigma_gamma_sq, params.sigma_sq)
    yield "gammas", loglik(ws, params, htables, F)
    params.sigma_sq, warn = update_sigma_sq(
        ws, params.counts, params.gammas, params.sigma_gamma_sq, params.sigma_sq, cfg
    )
    if warn and warnings is not None:
        warnings.append(f"iteration {it}: {warn}")
    yield "sigma_sq", loglik(ws, params, htables, F)
    params.sigma_gamma_sq = update_sigma_gamma(
        ws, params.counts, params.gammas, params.sigma_sq, params.sigma_gamma_sq, cfg
    )
    yield "sigma_gamma_sq", loglik(ws, params, htables, F)


def _polish_counts(ws, params: ModelParams, htables, F, candidates, cfg: FitConfig, L: float):
    """Best single-transformer count move followed by one continuous pass.

    Returns ``(params, loglik)`` for a strict improvement, else ``None``.
    """
    best = None
    for i, cands in enumerate(candidates):
        vals = lstar_scan(ws, i, params, htables[i], cands)
        order = np.argsort(-vals, kind="stable")
        tried = 0
        for k in order:
            if tried >= cfg.polish_width or vals[k] == NEG_INF:
                break
            if np.array_equal(cands[k], params.counts[i]):
                continue
            tried += 1
            trial = params.copy()
            trial.counts[i] = cands[k]
            try:
                for _, Lt in _step1(ws, trial, htables, F, cfg, None):
                    pass
            except linalg.LinAlgError:
                continue
            gain = Lt - L
            if gain > cfg.rel_tol * max(1.0, abs(L)) and (best is None or Lt > best[1]):
                best = (trial, Lt)
    return best


def fit(
    data: list[TransformerData],
    F: FraudMatrix,
    config: FitConfig | None = None,
    basis: BasisSpec | None = None,
    *,
    init: ModelParams | None = None,
    htables: list[HTable] | None = None,
) -> FitResult:
    """Maximise the log-likelihood; see the module docstring for the steps.

    ``init`` overrides the default starting values and ``htables`` reuses
    previously built H tables (they must match the reported counts).
    """
    cfg = config or FitConfig()
    if not data:
        raise ValueError("no transformers")
    basis = basis or (init.basis if init is not None else BasisSpec())
    ws = Workspace(data, basis)
    if F.num_classes != ws.reported.shape[1]:
        raise ValueError(f"fraud matrix has {F.num_classes} classes, data have {ws.reported.shape[1]}")
    if htables is None:
        htables = build_htables(data, F, cfg.b_runs, cfg.seed)
    elif len(htables) != len(data):
        raise ValueError("need one H table per transformer")
    for td, ht in zip(data, htables):
        if tuple(int(v) for v in td.reported) != tuple(ht.reported):
            raise ValueError(f"H table for transformer {td.transformer_id} was built for other reported counts")
    candidates = [np.array(candidate_counts(h), dtype=np.int64) for h in htables]

    params = initial_params(ws, data, basis, cfg) if init is None else init.copy()
    params.sigma_sq = max(params.sigma_sq, cfg.sigma_sq_floor)
    warnings: list[str] = []
    L = loglik(ws, params, htables, F)
    trace: list[tuple[int, str, float]] = [(0, "init", L)]
    status = "max_iters"
    it = 0
    for it in range(1, cfg.max_outer_iters + 1):
        L_start = L
        counts_start = params.counts.copy()

        for label, L in _step1(ws, params, htables, F, cfg, warnings, it):
            trace.append((it, label, L))

        new_counts, _ = update_counts(ws, params, htables, candidates)
        params.counts = new_counts
        L = loglik(ws, params, htables, F)
        trace.append((it, "counts", L))
        log.debug("iteration %d: loglik %.10g", it, L)

        if _relative_change(L, L_start) < cfg.rel_tol and np.array_equal(new_counts, counts_start):
            moved = _polish_counts(ws, params, htables, F, candidates, cfg, L) if cfg.count_polish else None
            if moved is None:
                status = "converged"
                break
            params, L = moved
            trace.append((it, "polish", L))

    _, tables = update_counts(ws, params, htables, candidates)
    zero = np.flatnonzero(params.sigma_gamma_sq == 0.0)
    if zero.size:
        warnings.append(f"consumer-level variance estimated as zero for class(es) {(zero + 1).tolist()}")
    return FitResult(
        params=params,
        trace=trace,
        lstar_tables=tables,
        htables=htables,
        status=status,
        iterations=it,
        config=cfg,
        warnings=warnings,
    )


def l1_value(ws: Workspace, params: ModelParams) -> float:
    """Gaussian ``-2 log`` objective (without the ``2 pi`` constant)."""
    return ws.l1(params)


__all__ = [
    "FitConfig",
    "FitResult",
    "NumericalError",
    "SingularNormalMatrix",
    "build_htables",
    "fit",
    "init_counts",
    "init_sigma_gamma",
    "init_sigma_sq",
    "l1_value",
    "loglik",
    "update_counts",
    "update_gammas",
    "update_sigma_gamma",
    "update_sigma_sq",
]
