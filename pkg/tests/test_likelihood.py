import math

import numpy as np
import pytest
import scipy.linalg
from scipy.stats import multivariate_normal

from aggload.basis import BasisSpec, eval_basis
from aggload.counts import FraudMatrix, exact_h, exact_report_prob
from aggload.likelihood import (
    NEG_INF,
    EigenCache,
    NumericalError,
    Workspace,
    gauss_neg2ll,
    gauss_neg2ll_eigen,
    lstar,
    total_loglik,
)
from aggload.model import ModelParams, TransformerData

from conftest import random_instance

F2 = FraudMatrix([[0.9, 0.1], [0.25, 0.75]])


def cache_for(params, td):
    return EigenCache.from_design(eval_basis(params.basis, td.times).values)


def test_diagonal_case(rng):
    params, (td,) = random_instance(rng, n=20, K=6, C=2, D=4)
    params = params.copy(sigma_gamma_sq=np.zeros(2))
    m = params.counts[0]
    Phi = eval_basis(params.basis, td.times).values
    r = td.Y - (Phi @ (m @ params.gammas))[:, None]
    ref = 20 * 4 * math.log(params.sigma_sq) + float((r * r).sum()) / params.sigma_sq
    assert gauss_neg2ll(params, td, m) == pytest.approx(ref, rel=1e-12)
    assert gauss_neg2ll_eigen(params, td, m, cache_for(params, td)) == pytest.approx(ref, rel=1e-12)


def test_two_by_two_by_hand():
    # Phi = [[1],[1]], m=2, gamma=1.5, s2g=0.25, s2=1 -> cov [[1.5,.5],[.5,1.5]], det 2
    basis = BasisSpec(degree=0, num_basis=1, t_lo=0, t_hi=3)
    params = ModelParams(basis=basis, gammas=[[1.5]], sigma_gamma_sq=[0.25], sigma_sq=1.0, counts=[[2]])
    td = TransformerData("a", np.array([[4.0], [2.0]]), [1.0, 2.0], reported=[2])
    cov_inv = np.array([[1.5, -0.5], [-0.5, 1.5]]) / 2.0
    resid = np.array([1.0, -1.0])
    ref = math.log(2.0) + resid @ cov_inv @ resid
    assert gauss_neg2ll(params, td, [2]) == pytest.approx(ref, abs=1e-12)
    assert gauss_neg2ll_eigen(params, td, [2], cache_for(params, td)) == pytest.approx(ref, abs=1e-12)


def test_eigen_matches_direct_n24(rng):
    params, (td,) = random_instance(rng, n=24, K=5, C=2, D=3)
    m = params.counts[0]
    a = gauss_neg2ll(params, td, m)
    b = gauss_neg2ll_eigen(params, td, m, cache_for(params, td))
    assert abs(a - b) <= 1e-8 * max(1.0, abs(a))


def test_eigen_matches_direct_randomised():
    rng = np.random.default_rng(2)
    for _ in range(40):
        n = int(rng.integers(10, 49))
        K = int(rng.integers(2, 10))
        params, (td,) = random_instance(rng, n=n, K=K, C=int(rng.integers(1, 4)), D=int(rng.integers(1, 6)))
        m = params.counts[0]
        a = gauss_neg2ll(params, td, m)
        b = gauss_neg2ll_eigen(params, td, m, cache_for(params, td))
        assert abs(a - b) <= 1e-8 * max(1.0, abs(a))


def test_eigen_cache_invariants(rng):
    Psi = eval_basis(BasisSpec(), np.linspace(0.1, 23.9, 48)).values
    cache = EigenCache.from_design(Psi)
    np.testing.assert_allclose(cache.Q.T @ cache.Q, np.eye(48), atol=1e-10)
    assert np.max(np.abs(Psi @ Psi.T - cache.reconstruct())) < 1e-8
    assert np.all(cache.eigvals >= 0)


def test_eigen_path_does_no_inversion(rng, monkeypatch):
    params, (td,) = random_instance(rng, n=30, K=6, C=2, D=2)
    cache = cache_for(params, td)
    expected = gauss_neg2ll(params, td, params.counts[0])

    def boom(*a, **k):
        raise AssertionError("matrix factorisation on the fast path")

    for mod, names in [
        (np.linalg, ("inv", "solve", "cholesky", "eigh", "det", "slogdet")),
        (scipy.linalg, ("inv", "solve", "cho_factor", "cho_solve", "eigh", "det")),
    ]:
        for name in names:
            monkeypatch.setattr(mod, name, boom)
    got = gauss_neg2ll_eigen(params, td, params.counts[0], cache)
    assert got == pytest.approx(expected, rel=1e-10)


def test_non_pd_error_names_sigma(rng):
    params, (td,) = random_instance(rng, n=12, K=4, C=1, D=1, sigma_sq=0.0)
    params = params.copy(sigma_gamma_sq=np.zeros(1))
    with pytest.raises(NumericalError, match="sigma_sq=0.0"):
        gauss_neg2ll(params, td, params.counts[0])
    with pytest.raises(NumericalError, match="sigma_sq"):
        gauss_neg2ll_eigen(params, td, params.counts[0], cache_for(params, td))


def test_monotone_covariance(rng):
    Psi = eval_basis(BasisSpec(), np.linspace(0, 24, 40)).values
    eig = EigenCache.from_design(Psi).eigvals
    M = np.array([3, 0, 5])
    s2g = np.array([0.1, 0.2, 0.05])
    base = (M @ s2g) * eig + 0.7
    for c in range(3):
        bumped = s2g.copy()
        bumped[c] += 0.3
        delta = (M @ bumped) * eig + 0.7
        assert np.all(delta >= base)
        # the covariance itself: smallest eigenvalue of the difference is >= 0
        diff = (M @ bumped - M @ s2g) * Psi @ Psi.T
        assert np.linalg.eigvalsh(diff).min() >= -1e-10


# ---- count objective ------------------------------------------------------------

def small_problem(seed=0, R=(3, 2)):
    rng = np.random.default_rng(seed)
    basis = BasisSpec(degree=2, num_basis=4)
    times = np.linspace(0.5, 23.5, 10)
    gammas = np.array([[1.0, 2.0, 0.5, 1.5], [2.5, 0.3, 1.0, 3.0]])
    params = ModelParams(basis=basis, gammas=gammas, sigma_gamma_sq=[0.1, 0.05], sigma_sq=0.4, counts=[R])
    mean = eval_basis(basis, times).values @ (np.array([4, 1]) @ gammas)
    td = TransformerData("t", mean[:, None] + rng.normal(0, 0.8, (10, 2)), times, reported=R)
    return params, td


def full_loglik_i(params, td, m, F):
    """Gaussian log-density plus exact count log-probability, from scratch."""
    Phi = eval_basis(params.basis, td.times).values
    mu = Phi @ (np.asarray(m) @ params.gammas)
    cov = float(np.asarray(m) @ params.sigma_gamma_sq) * Phi @ Phi.T + params.sigma_sq * np.eye(len(td.times))
    g = sum(multivariate_normal(mu, cov).logpdf(td.Y[:, d]) for d in range(td.num_days))
    p = exact_report_prob(F, m, td.reported)
    return g + (math.log(p) if p > 0 else NEG_INF)


def test_lstar_zero_h():
    params, td = small_problem()
    h = exact_h(FraudMatrix.identity(2), td.reported)
    assert lstar(params, td, h, (4, 1)) == NEG_INF


def test_lstar_differences_equal_full_differences():
    params, td = small_problem()
    h = exact_h(F2, td.reported)
    cands = sorted(h.entries)
    ls = {m: lstar(params, td, h, m) for m in cands}
    full = {m: full_loglik_i(params, td, m, F2) for m in cands}
    ref = cands[0]
    for m in cands[1:]:
        assert ls[m] - ls[ref] == pytest.approx(full[m] - full[ref], abs=1e-10)
    # ranking is unchanged by the dropped constant
    assert sorted(cands, key=ls.get) == sorted(cands, key=full.get)


def test_lstar_argmax_matches_enumeration():
    for seed in range(4):
        params, td = small_problem(seed, R=(3, 3))
        h = exact_h(F2, td.reported)
        cands = list(h.entries)
        best_star = max(cands, key=lambda m: lstar(params, td, h, m))
        best_full = max(cands, key=lambda m: full_loglik_i(params, td, m, F2))
        assert best_star == best_full


def test_lstar_eigen_cache_same(rng):
    params, td = small_problem()
    h = exact_h(F2, td.reported)
    c = cache_for(params, td)
    for m in h.entries:
        assert lstar(params, td, h, m, cache=c) == pytest.approx(lstar(params, td, h, m), abs=1e-9)


def test_total_identity_count_term_zero(rng):
    params, data = random_instance(rng, n=16, K=5, C=2, D=2, I=3)
    F = FraudMatrix.identity(2)
    hts = [exact_h(F, td.reported) for td in data]
    bd = total_loglik(params, data, hts, F)
    for part in bd.per_transformer:
        assert part["count_term"] == pytest.approx(0.0, abs=1e-12)
    parts = sum(p["gauss_term"] + p["count_term"] for p in bd.per_transformer)
    assert bd.total == pytest.approx(parts, abs=1e-10)


def test_total_vs_independent_density():
    rng = np.random.default_rng(8)
    basis = BasisSpec(degree=3, num_basis=5)
    times = np.linspace(1, 23, 12)
    gammas = rng.uniform(0.5, 2.0, (2, 5))
    counts = np.array([[2, 3], [4, 1]])
    data = [
        TransformerData(str(i), rng.normal(5, 1, (12, 3)), times, reported=r)
        for i, r in enumerate([(3, 2), (3, 2)])
    ]
    params = ModelParams(basis=basis, gammas=gammas, sigma_gamma_sq=[0.2, 0.1], sigma_sq=0.6, counts=counts)
    hts = [exact_h(F2, td.reported) for td in data]
    bd = total_loglik(params, data, hts, F2)
    ref = sum(full_loglik_i(params, td, m, F2) for td, m in zip(data, counts))
    assert bd.total == pytest.approx(ref, abs=1e-9)
    ws = Workspace(data, basis)
    cached = total_loglik(params, data, hts, F2, cache=ws.cache)
    assert cached.total == pytest.approx(ref, abs=1e-8)


def test_total_outside_support():
    params, td = small_problem()
    F = FraudMatrix.identity(2)
    bd = total_loglik(params.copy(counts=np.array([[4, 1]])), [td], [exact_h(F, td.reported)], F)
    assert bd.total == NEG_INF
    assert "outside H-table support" in bd.diagnostics[0]
