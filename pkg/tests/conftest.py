import numpy as np
import pytest

from aggload.basis import BasisSpec, default_times
from aggload.model import ModelParams, TransformerData
from aggload.simulate import build_case, simulate_dataset


def random_instance(rng, n=24, K=5, C=2, D=3, I=1, sigma_sq=None):
    """Small random parameter set and matching data (not from the simulator)."""
    basis = BasisSpec(degree=min(3, K - 1), num_basis=K)
    times = np.sort(rng.uniform(0.0, 24.0, size=n))
    gammas = rng.normal(1.0, 0.5, size=(C, K))
    s2g = rng.uniform(0.0, 0.2, size=C)
    s2 = rng.uniform(0.2, 2.0) if sigma_sq is None else sigma_sq
    counts = rng.integers(1, 6, size=(I, C))
    data = [
        TransformerData(
            transformer_id=str(i + 1),
            Y=rng.normal(0.0, 2.0, size=(n, D)) + 3.0,
            times=times,
            reported=counts[i],
        )
        for i in range(I)
    ]
    params = ModelParams(basis=basis, gammas=gammas, sigma_gamma_sq=s2g, sigma_sq=s2, counts=counts)
    return params, data


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def case1():
    return build_case(1)


@pytest.fixture(scope="session")
def case1_data(case1):
    return simulate_dataset(case1, seed=7)


@pytest.fixture
def grid96():
    return default_times(96)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
