"""Clamped B-spline bases with equally spaced knots."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels


class DomainError(ValueError):
    """An evaluation time falls outside the basis domain."""


@dataclass(frozen=True)
class BasisSpec:
    """B-spline basis on ``[t_lo, t_hi]`` with ``num_basis`` functions."""

    degree: int = 3
    num_basis: int = 9
    t_lo: float = 0.0
    t_hi: float = 24.0

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError(f"degree must be >= 0, got {self.degree}")
        if self.num_basis < self.degree + 1:
            raise ValueError(
                f"num_basis={self.num_basis} must be >= degree+1={self.degree + 1}"
            )
        if not self.t_lo < self.t_hi:
            raise ValueError(f"empty domain [{self.t_lo}, {self.t_hi}]")

    def to_dict(self) -> dict:
        return {
            "degree": self.degree,
            "num_basis": self.num_basis,
            "t_lo": self.t_lo,
            "t_hi": self.t_hi,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BasisSpec":
        return cls(
            degree=int(d.get("degree", 3)),
            num_basis=int(d.get("num_basis", 9)),
            t_lo=float(d.get("t_lo", 0.0)),
            t_hi=float(d.get("t_hi", 24.0)),
        )


@dataclass(frozen=True)
class DesignMatrix:
    values: np.ndarray
    times: np.ndarray

    @property
    def shape(self):
        return self.values.shape


def make_knots(spec: BasisSpec) -> np.ndarray:
    """Clamped knot vector of length ``num_basis + degree + 1``."""
    p, K = spec.degree, spec.num_basis
    if K < p + 1:
        raise ValueError(f"num_basis={K} must be >= degree+1={p + 1}")
    n_interior = K - p - 1
    interior = np.linspace(spec.t_lo, spec.t_hi, n_interior + 2)[1:-1]
    return np.concatenate(
        [np.full(p + 1, spec.t_lo), interior, np.full(p + 1, spec.t_hi)]
    )


def default_times(n: int = 96, t_lo: float = 0.0, t_hi: float = 24.0) -> np.ndarray:
    """Midpoints of ``n`` equal cells, e.g. 0.125, 0.375, ..., 23.875 for n=96."""
    step = (t_hi - t_lo) / n
    return t_lo + step * (np.arange(n) + 0.5)


def eval_basis(spec: BasisSpec, times) -> DesignMatrix:
    """Evaluate every basis function at ``times`` (Cox-de Boor recursion)."""
    times = np.ascontiguousarray(np.atleast_1d(np.asarray(times, dtype=float)))
    bad = (times < spec.t_lo) | (times > spec.t_hi) | ~np.isfinite(times)
    if bad.any():
        t = times[np.argmax(bad)]
        raise DomainError(f"time {t!r} outside basis domain [{spec.t_lo}, {spec.t_hi}]")
    values = kernels.bspline_design(make_knots(spec), spec.degree, times, spec.num_basis)
    return DesignMatrix(values=values, times=times)


def greville_abscissae(spec: BasisSpec) -> np.ndarray:
    knots = make_knots(spec)
    p = spec.degree
    if p == 0:
        return 0.5 * (knots[:-1] + knots[1:])[: spec.num_basis]
    return np.array([knots[k + 1 : k + p + 1].mean() for k in range(spec.num_basis)])
