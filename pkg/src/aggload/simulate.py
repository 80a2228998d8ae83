"""Synthetic consumer-level and aggregated load data.

Consumer curves are ``phi(t)' (gamma_c + g)`` with ``g ~ N(0, s2_c I)``;
a transformer observes the sum of its consumers' curves plus white noise,
independently for every day.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .basis import BasisSpec, default_times, eval_basis
from .counts import FraudMatrix, sample_reported
from .model import ModelParams, TransformerData

# Stand-in class curves for K=9 cubic splines on [0, 24] h (not fitted to any
# real data).  Coefficient k sits near hour 0, 1.3, 4, 8, 12, 16, 20, 22.7, 24.
RESIDENTIAL_GAMMA = np.array([0.45, 0.35, 0.25, 0.45, 0.75, 0.55, 1.30, 0.80, 0.50])
COMMERCIAL_GAMMA = np.array([0.80, 0.50, 0.20, 1.50, 3.20, 4.60, 4.60, 1.80, 1.00])
BASE_GAMMAS = np.vstack([RESIDENTIAL_GAMMA, COMMERCIAL_GAMMA])

BASE_SIGMA_GAMMA_SQ = np.array([0.03, 0.06])
CASE_SIGMA_SQ = 3.5
CASE_CONSUMERS = 75
CASE_OFFSET = 2.0
CASE_FRAUD = ((0.98, 0.02), (0.05, 0.95))

# class-1 counts per transformer: true values and the single reported draw
BALANCED_TRUE = (45, 29, 61, 24, 12)
BALANCED_REPORTED = (45, 32, 60, 28, 16)
UNBALANCED_TRUE = (66, 65, 69, 62, 72)
UNBALANCED_REPORTED = (65, 66, 68, 63, 71)


@dataclass
class SimScenario:
    case_id: int | None
    true_counts: np.ndarray
    gammas: np.ndarray
    sigma_gamma_sq: np.ndarray
    sigma_sq: float
    fraud: FraudMatrix
    basis: BasisSpec = field(default_factory=BasisSpec)
    replicates: int = 5
    num_times: int = 96
    reported_counts: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        self.true_counts = np.atleast_2d(np.asarray(self.true_counts, dtype=np.int64))
        self.gammas = np.atleast_2d(np.asarray(self.gammas, dtype=float))
        self.sigma_gamma_sq = np.asarray(self.sigma_gamma_sq, dtype=float)
        if not isinstance(self.fraud, FraudMatrix):
            self.fraud = FraudMatrix(np.asarray(self.fraud, dtype=float))
        C = self.gammas.shape[0]
        if self.true_counts.shape[1] != C or self.fraud.num_classes != C:
            raise ValueError("true_counts, gammas and fraud matrix disagree on the number of classes")
        if self.gammas.shape[1] != self.basis.num_basis:
            raise ValueError("gammas do not match the basis size")
        if self.sigma_gamma_sq.shape != (C,):
            raise ValueError(f"sigma_gamma_sq must have length {C}")
        if self.replicates < 1 or self.num_times < 1:
            raise ValueError("replicates and num_times must be >= 1")
        if self.reported_counts is not None:
            rep = np.atleast_2d(np.asarray(self.reported_counts, dtype=np.int64))
            if rep.shape != self.true_counts.shape:
                raise ValueError("reported_counts shape differs from true_counts")
            if not np.array_equal(rep.sum(axis=1), self.true_counts.sum(axis=1)):
                raise ValueError("reported totals must equal true totals per transformer")
            self.reported_counts = rep

    @property
    def num_transformers(self) -> int:
        return self.true_counts.shape[0]

    @property
    def consumers(self) -> np.ndarray:
        return self.true_counts.sum(axis=1)

    @property
    def times(self) -> np.ndarray:
        return default_times(self.num_times, self.basis.t_lo, self.basis.t_hi)

    def params(self) -> ModelParams:
        return ModelParams(
            basis=self.basis,
            gammas=self.gammas,
            sigma_gamma_sq=self.sigma_gamma_sq,
            sigma_sq=self.sigma_sq,
            counts=self.true_counts,
        )

    def with_reported(self) -> "SimScenario":
        """Copy with reported counts fixed (drawn from the scenario seed if unset)."""
        if self.reported_counts is not None:
            return self
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0x5EED]))
        rep = np.array([sample_reported(self.fraud, M, rng) for M in self.true_counts])
        return _replace(self, reported_counts=rep)

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "num_transformers": self.num_transformers,
            "consumers": self.consumers.tolist(),
            "true_counts": self.true_counts.tolist(),
            "reported_counts": None if self.reported_counts is None else self.reported_counts.tolist(),
            "replicates": self.replicates,
            "num_times": self.num_times,
            "basis": self.basis.to_dict(),
            "gammas": self.gammas.tolist(),
            "sigma_gamma_sq": self.sigma_gamma_sq.tolist(),
            "sigma_sq": self.sigma_sq,
            "fraud_matrix": self.fraud.to_list(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimScenario":
        """Build from JSON; a bare ``{"case_id": k}`` expands to the built-in case."""
        if d.get("case_id") is not None and "true_counts" not in d:
            sc = build_case(
                int(d["case_id"]),
                seed=int(d.get("seed", 0)),
                replicates=int(d.get("replicates", 5)),
                base_gammas=d.get("base_gammas"),
            )
            return sc
        missing = [k for k in ("true_counts", "gammas", "sigma_gamma_sq", "sigma_sq", "fraud_matrix") if k not in d]
        if missing:
            raise KeyError(f"scenario is missing field(s): {', '.join(missing)}")
        return cls(
            case_id=d.get("case_id"),
            true_counts=np.array(d["true_counts"]),
            reported_counts=None if d.get("reported_counts") is None else np.array(d["reported_counts"]),
            gammas=np.array(d["gammas"], dtype=float),
            sigma_gamma_sq=np.array(d["sigma_gamma_sq"], dtype=float),
            sigma_sq=float(d["sigma_sq"]),
            fraud=FraudMatrix(np.array(d["fraud_matrix"], dtype=float)),
            basis=BasisSpec.from_dict(d.get("basis", {})),
            replicates=int(d.get("replicates", 5)),
            num_times=int(d.get("num_times", 96)),
            seed=int(d.get("seed", 0)),
        )


def _replace(sc: SimScenario, **changes) -> SimScenario:
    kw = {f: getattr(sc, f) for f in sc.__dataclass_fields__}
    kw.update(changes)
    return SimScenario(**kw)


def rescale_unit(gamma: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Min/max normalise a coefficient vector; returns ``(scaled, a, b)``."""
    gamma = np.asarray(gamma, dtype=float)
    a, b = float(gamma.min()), float(gamma.max())
    if b <= a:
        raise ValueError("cannot rescale a constant coefficient vector")
    return (gamma - a) / (b - a), a, b


def build_case(
    case_id: int,
    base_gammas=None,
    seed: int = 0,
    *,
    replicates: int = 5,
) -> SimScenario:
    """One of the four two-class simulation settings.

    Cases 1-2 put both classes on a common scale (coefficients mapped to
    [0, 1], curves lifted by 2) with variances 0.03 and 0.06.  Cases 3-4 keep
    the raw coefficients and multiply those variances by ``(b_c - a_c)**2``.
    Odd cases use balanced counts, even cases counts dominated by class 1.
    """
    if case_id not in (1, 2, 3, 4):
        raise ValueError(f"invalid case id {case_id!r}; expected 1, 2, 3 or 4")
    base = BASE_GAMMAS if base_gammas is None else np.atleast_2d(np.asarray(base_gammas, dtype=float))
    if base.shape[0] != 2:
        raise ValueError("simulation cases need exactly two base coefficient vectors")
    basis = BasisSpec(degree=3, num_basis=base.shape[1], t_lo=0.0, t_hi=24.0)

    gammas = np.empty_like(base)
    s2 = np.empty(2)
    for c in range(2):
        scaled, a, b = rescale_unit(base[c])
        if case_id in (1, 2):
            gammas[c] = scaled + CASE_OFFSET
            s2[c] = BASE_SIGMA_GAMMA_SQ[c]
        else:
            gammas[c] = base[c]
            s2[c] = BASE_SIGMA_GAMMA_SQ[c] * (b - a) ** 2

    if case_id in (1, 3):
        m1, r1 = BALANCED_TRUE, BALANCED_REPORTED
    else:
        m1, r1 = UNBALANCED_TRUE, UNBALANCED_REPORTED
    m1 = np.array(m1)
    r1 = np.array(r1)
    true_counts = np.column_stack([m1, CASE_CONSUMERS - m1])
    reported = np.column_stack([r1, CASE_CONSUMERS - r1])
    return SimScenario(
        case_id=case_id,
        true_counts=true_counts,
        reported_counts=reported,
        gammas=gammas,
        sigma_gamma_sq=s2,
        sigma_sq=CASE_SIGMA_SQ,
        fraud=FraudMatrix(np.array(CASE_FRAUD)),
        basis=basis,
        replicates=replicates,
        num_times=96,
        seed=seed,
    )


def simulate_consumer(params: ModelParams, c: int, times, rng: np.random.Generator) -> np.ndarray:
    """One class-``c`` consumer curve on ``times`` (no measurement noise)."""
    if not 0 <= c < params.num_classes:
        raise IndexError(f"class index {c} out of range")
    Phi = eval_basis(params.basis, times).values
    g = rng.standard_normal(params.basis.num_basis) * np.sqrt(params.sigma_gamma_sq[c])
    return Phi @ (params.gammas[c] + g)


def _aggregate_day(Phi, params: ModelParams, M, rng) -> np.ndarray:
    coef = np.zeros(params.basis.num_basis)
    for c, m in enumerate(M):
        if m == 0:
            continue
        g = rng.standard_normal((int(m), params.basis.num_basis)) * np.sqrt(params.sigma_gamma_sq[c])
        coef += m * params.gammas[c] + g.sum(axis=0)
    return Phi @ coef


def simulate_transformer(
    params: ModelParams,
    i: int,
    D: int,
    rng: np.random.Generator,
    *,
    times=None,
    fraud: FraudMatrix | None = None,
    reported=None,
    transformer_id: str | None = None,
) -> TransformerData:
    """``D`` independent days of aggregated load for transformer ``i``.

    Reported counts are taken from ``reported`` when given, otherwise drawn
    once from ``fraud``.
    """
    times = default_times(96, params.basis.t_lo, params.basis.t_hi) if times is None else np.asarray(times, float)
    M = params.counts[i]
    if reported is None:
        if fraud is None:
            raise ValueError("need either reported counts or a fraud matrix")
        reported = sample_reported(fraud, M, rng)
    Phi = eval_basis(params.basis, times).values
    noise_sd = np.sqrt(params.sigma_sq)
    Y = np.empty((times.shape[0], D))
    for d in range(D):
        Y[:, d] = _aggregate_day(Phi, params, M, rng) + noise_sd * rng.standard_normal(times.shape[0])
    return TransformerData(
        transformer_id=transformer_id if transformer_id is not None else str(i + 1),
        Y=Y,
        times=times,
        reported=np.asarray(reported, dtype=np.int64),
        num_consumers=int(M.sum()),
    )


def simulate_dataset(scenario: SimScenario, seed=None) -> list[TransformerData]:
    """All transformers of one replicate dataset.

    ``seed`` defaults to the scenario seed; reported counts are fixed per
    scenario, so every dataset drawn from it shares them.
    """
    sc = scenario.with_reported()
    params = sc.params()
    ss = np.random.SeedSequence(sc.seed if seed is None else seed)
    rngs = [np.random.default_rng(s) for s in ss.spawn(sc.num_transformers)]
    times = sc.times
    return [
        simulate_transformer(params, i, sc.replicates, rngs[i], times=times, reported=sc.reported_counts[i])
        for i in range(sc.num_transformers)
    ]


def dataset_seeds(seed: int, count: int) -> list[int]:
    """Independent integer seeds for ``count`` replicate datasets."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(count)]
