"""Parameter and data containers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .basis import BasisSpec, eval_basis


@dataclass
class ModelParams:
    """Class typology coefficients, variance components and true counts.

    ``gammas`` is ``(C, K)``, ``sigma_gamma_sq`` is ``(C,)`` and ``counts``
    is an ``(I, C)`` integer array of true counts per transformer.
    """

    basis: BasisSpec
    gammas: np.ndarray
    sigma_gamma_sq: np.ndarray
    sigma_sq: float
    counts: np.ndarray

    def __post_init__(self):
        self.gammas = np.atleast_2d(np.asarray(self.gammas, dtype=float))
        self.sigma_gamma_sq = np.atleast_1d(np.asarray(self.sigma_gamma_sq, dtype=float))
        self.counts = np.atleast_2d(np.asarray(self.counts, dtype=np.int64))
        self.sigma_sq = float(self.sigma_sq)
        C, K = self.gammas.shape
        if K != self.basis.num_basis:
            raise ValueError(f"gammas have {K} columns, basis has {self.basis.num_basis}")
        if self.sigma_gamma_sq.shape != (C,):
            raise ValueError(f"sigma_gamma_sq must have length {C}")
        if self.counts.shape[1] != C:
            raise ValueError(f"counts must have {C} columns")
        if self.sigma_sq < 0 or np.any(self.sigma_gamma_sq < 0):
            raise ValueError("variances must be nonnegative")
        if np.any(self.counts < 0):
            raise ValueError("counts must be nonnegative")

    @property
    def num_classes(self) -> int:
        return self.gammas.shape[0]

    def copy(self, **changes) -> "ModelParams":
        kw = dict(
            basis=self.basis,
            gammas=self.gammas.copy(),
            sigma_gamma_sq=self.sigma_gamma_sq.copy(),
            sigma_sq=self.sigma_sq,
            counts=self.counts.copy(),
        )
        kw.update(changes)
        return ModelParams(**kw)

    def typologies(self, times) -> np.ndarray:
        """``(n, C)`` class mean curves evaluated at ``times``."""
        return eval_basis(self.basis, times).values @ self.gammas.T

    def to_dict(self) -> dict:
        return {
            "basis": self.basis.to_dict(),
            "gammas": self.gammas.tolist(),
            "sigma_gamma_sq": self.sigma_gamma_sq.tolist(),
            "sigma_sq": self.sigma_sq,
            "counts": self.counts.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        return cls(
            basis=BasisSpec.from_dict(d["basis"]),
            gammas=np.array(d["gammas"], dtype=float),
            sigma_gamma_sq=np.array(d["sigma_gamma_sq"], dtype=float),
            sigma_sq=float(d["sigma_sq"]),
            counts=np.array(d["counts"], dtype=np.int64),
        )


@dataclass
class TransformerData:
    """Aggregated load of one transformer: ``Y`` is ``(n, D)``, one column per day."""

    transformer_id: str
    Y: np.ndarray
    times: np.ndarray
    reported: np.ndarray
    num_consumers: int = field(default=-1)

    def __post_init__(self):
        self.transformer_id = str(self.transformer_id)
        Y = np.asarray(self.Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        self.Y = Y
        self.times = np.asarray(self.times, dtype=float)
        self.reported = np.asarray(self.reported, dtype=np.int64)
        if self.num_consumers < 0:
            self.num_consumers = int(self.reported.sum())
        if Y.shape[0] < 1 or Y.shape[1] < 1:
            raise ValueError(f"transformer {self.transformer_id}: empty data")
        if Y.shape[0] != self.times.shape[0]:
            raise ValueError(
                f"transformer {self.transformer_id}: {Y.shape[0]} rows but {self.times.shape[0]} times"
            )
        if int(self.reported.sum()) != self.num_consumers:
            raise ValueError(
                f"transformer {self.transformer_id}: reported counts sum to "
                f"{int(self.reported.sum())}, expected {self.num_consumers}"
            )

    @property
    def num_days(self) -> int:
        return self.Y.shape[1]

    def __eq__(self, other):
        if not isinstance(other, TransformerData):
            return NotImplemented
        return (
            self.transformer_id == other.transformer_id
            and self.num_consumers == other.num_consumers
            and np.array_equal(self.Y, other.Y)
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.reported, other.reported)
        )


def check_grids(data: list[TransformerData]) -> np.ndarray:
    """Shared time grid of all transformers; raises if they differ."""
    if not data:
        raise ValueError("no transformers")
    times = data[0].times
    C = data[0].reported.shape[0]
    for td in data[1:]:
        if not np.array_equal(td.times, times):
            raise ValueError(f"transformer {td.transformer_id} uses a different time grid")
        if td.reported.shape[0] != C:
            raise ValueError(f"transformer {td.transformer_id} has a different number of classes")
    return times
