"""Misreporting model for class counts.

Consumers of true class ``c`` report class ``r`` with probability
``F[c, r]``.  The probability of the reported vector given the true vector
factorises into an ``m``-free constant, ``prod(m_c!)`` and a function
``H(m)`` that can be tabulated for every ``m`` at once by redistributing the
reported counts column by column.  :func:`estimate_h_table` does that by
Monte Carlo; :func:`exact_h` and :func:`exact_report_prob` enumerate count
tables and serve as oracles on small problems.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Sequence

import numpy as np

from . import kernels
from ._backend import max_workers

ROW_SUM_TOL = 1e-9
EXACT_SIZE_LIMIT = 10**7
_CHUNK = 1 << 15


class TooLargeError(ValueError):
    """Exact enumeration would exceed the configured table-count limit."""


@dataclass(frozen=True)
class FraudMatrix:
    """Row-stochastic ``C x C`` matrix, ``probs[c, r] = P(report r | class c)``."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if p.ndim != 2 or p.shape[0] != p.shape[1] or p.shape[0] < 1:
            raise ValueError(f"fraud matrix must be square, got shape {p.shape}")
        if np.any(~np.isfinite(p)) or np.any(p < -ROW_SUM_TOL) or np.any(p > 1 + ROW_SUM_TOL):
            raise ValueError("fraud matrix entries must lie in [0, 1]")
        p = np.clip(p, 0.0, 1.0)
        sums = p.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)
        if bad.size:
            r = int(bad[0])
            raise ValueError(f"fraud matrix row {r} sums to {sums[r]!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def num_classes(self) -> int:
        return self.probs.shape[0]

    @classmethod
    def identity(cls, num_classes: int) -> "FraudMatrix":
        return cls(np.eye(num_classes))

    def to_list(self) -> list:
        return self.probs.tolist()

    def as_fractions(self) -> list[list[Fraction]]:
        """Entries as decimal rationals (``0.98 -> 49/50``) for exact arithmetic."""
        return [[Fraction(repr(float(x))) for x in row] for row in self.probs]


def column_probs(F: FraudMatrix, j: int) -> np.ndarray:
    """Normalised column ``j``: probability that a class-``j`` reporter is truly class ``c``."""
    col = F.probs[:, j]
    total = col.sum()
    if total <= 0:
        raise ValueError(f"column {j} of the fraud matrix is all zero; class {j} is never reported")
    return col / total


def _multinomial(rng: np.random.Generator, n, p: np.ndarray, size: int | None = None) -> np.ndarray:
    """Multinomial draws by sequential conditional binomials.

    ``n`` may be a scalar (with ``size`` draws) or an integer array.
    """
    p = np.asarray(p, dtype=float)
    C = p.shape[0]
    if size is None:
        remaining = np.asarray(n, dtype=np.int64).copy()
    else:
        remaining = np.full(size, int(n), dtype=np.int64)
    out = np.zeros(remaining.shape + (C,), dtype=np.int64)
    tail = np.cumsum(p[::-1])[::-1]
    for c in range(C - 1):
        if tail[c + 1] <= 0.0:
            q = 1.0
        elif p[c] <= 0.0:
            continue
        else:
            q = min(1.0, p[c] / tail[c])
        x = rng.binomial(remaining, q)
        out[..., c] = x
        remaining = remaining - x
    out[..., C - 1] = remaining
    return out


def sample_reported(
    F: FraudMatrix, M: Sequence[int], rng: np.random.Generator, size: int | None = None
) -> np.ndarray:
    """Reported-count vector(s) for true counts ``M``; ``(size, C)`` when ``size`` is given."""
    M = np.asarray(M, dtype=np.int64)
    if np.any(M < 0):
        raise ValueError(f"true counts must be nonnegative, got {M.tolist()}")
    shape = (F.num_classes,) if size is None else (size, F.num_classes)
    R = np.zeros(shape, dtype=np.int64)
    for c in range(F.num_classes):
        R += _multinomial(rng, M[c], F.probs[c], size=size)
    return R


# ---------------------------------------------------------------------------
# exact enumeration
# ---------------------------------------------------------------------------


def _compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def _num_compositions(total: int, parts: int) -> int:
    return math.comb(total + parts - 1, parts - 1)


def _check_size(totals: Sequence[int], C: int, limit: int) -> None:
    size = 1
    for t in totals:
        size *= _num_compositions(int(t), C)
        if size > limit:
            raise TooLargeError(
                f"too large for exact mode: more than {limit} count tables for totals {list(totals)}"
            )


def _multinomial_pmf(x: tuple[int, ...], probs) -> float | Fraction:
    coef = math.factorial(sum(x))
    for k in x:
        coef //= math.factorial(k)
    val = coef
    for k, q in zip(x, probs):
        if k:
            val = val * q**k
    return val


def exact_report_prob(
    F: FraudMatrix,
    M: Sequence[int],
    R: Sequence[int],
    *,
    exact: bool = False,
    limit: int = EXACT_SIZE_LIMIT,
) -> float | Fraction:
    """``P(R | M)`` summed over every count table with row sums ``M``.

    Rows are folded in one at a time, keeping only partial column sums that
    can still reach ``R``.  With ``exact=True`` the arithmetic is done in
    rationals built from the decimal entries of ``F``.
    """
    M = [int(v) for v in M]
    R = tuple(int(v) for v in R)
    C = F.num_classes
    if len(M) != C or len(R) != C:
        raise ValueError("count vectors must have one entry per class")
    if sum(M) != sum(R):
        return Fraction(0) if exact else 0.0
    _check_size(M, C, limit)
    rows = F.as_fractions() if exact else F.probs.tolist()
    zero = Fraction(0) if exact else 0.0
    states: dict[tuple[int, ...], object] = {(0,) * C: Fraction(1) if exact else 1.0}
    for c in range(C):
        nxt: dict[tuple[int, ...], object] = {}
        for x in _compositions(M[c], C):
            if any(xj > 0 and rows[c][j] == 0 for j, xj in enumerate(x)):
                continue
            w = _multinomial_pmf(x, rows[c])
            for partial, prob in states.items():
                s = tuple(a + b for a, b in zip(partial, x))
                if any(a > b for a, b in zip(s, R)):
                    continue
                nxt[s] = nxt.get(s, zero) + prob * w
        states = nxt
    return states.get(R, zero)


# ---------------------------------------------------------------------------
# H tables
# ---------------------------------------------------------------------------


@dataclass
class HTable:
    """Distribution of redistributed row totals for one reported vector.

    Monte Carlo tables hold ``Fraction(count, num_runs)`` entries; exact
    tables hold floats (or Fractions when built with ``exact=True``) and have
    ``num_runs=None``.
    """

    reported: tuple[int, ...]
    entries: dict[tuple[int, ...], Fraction | float]
    num_runs: int | None = None
    seed: int | None = None
    raw_counts: dict[tuple[int, ...], int] = field(default_factory=dict, repr=False)

    def h(self, m: Sequence[int]) -> float:
        return float(self.entries.get(tuple(int(v) for v in m), 0.0))

    def log_h(self, m: Sequence[int]) -> float:
        v = self.h(m)
        return math.log(v) if v > 0 else -math.inf

    def total(self) -> Fraction | float:
        return sum(self.entries.values(), Fraction(0) if self._rational else 0.0)

    @property
    def _rational(self) -> bool:
        return all(isinstance(v, Fraction) for v in self.entries.values())

    @property
    def provenance(self) -> dict:
        return {
            "reported": list(self.reported),
            "num_runs": self.num_runs,
            "seed": self.seed,
            "mode": "exact" if self.num_runs is None else "monte_carlo",
        }

    def to_dict(self) -> dict:
        rows = []
        for m in sorted(self.entries):
            v = self.entries[m]
            if self.num_runs is not None and m in self.raw_counts:
                h = f"{self.raw_counts[m]}/{self.num_runs}"
            elif isinstance(v, Fraction):
                h = f"{v.numerator}/{v.denominator}"
            else:
                h = float(v)
            rows.append({"m": list(m), "h": h})
        return {
            "reported": list(self.reported),
            "num_runs": self.num_runs,
            "seed": self.seed,
            "entries": rows,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HTable":
        entries: dict[tuple[int, ...], Fraction | float] = {}
        raw: dict[tuple[int, ...], int] = {}
        B = d.get("num_runs")
        for row in d["entries"]:
            m = tuple(int(v) for v in row["m"])
            h = row["h"]
            if isinstance(h, str):
                num, den = h.split("/")
                entries[m] = Fraction(int(num), int(den))
                if B is not None and int(den) == B:
                    raw[m] = int(num)
            else:
                entries[m] = float(h)
        return cls(
            reported=tuple(int(v) for v in d["reported"]),
            entries=entries,
            num_runs=B,
            seed=d.get("seed"),
            raw_counts=raw,
        )


def _sample_row_totals(F: FraudMatrix, R: Sequence[int], size: int, seed_seq) -> np.ndarray:
    rng = np.random.default_rng(seed_seq)
    C = F.num_classes
    totals = np.zeros((size, C), dtype=np.int64)
    for j in range(C):
        if R[j] == 0:
            continue
        totals += _multinomial(rng, R[j], column_probs(F, j), size=size)
    return totals


def estimate_h_table(
    F: FraudMatrix,
    R: Sequence[int],
    B: int,
    seed: int,
    *,
    workers: int | None = None,
) -> HTable:
    """Monte Carlo estimate of ``H(m)`` over all reachable ``m``.

    The ``B`` runs are split into fixed-size chunks, each with its own child
    seed, so the table does not depend on the number of workers.
    """
    if B < 1:
        raise ValueError(f"B must be >= 1, got {B}")
    R = tuple(int(v) for v in R)
    C = F.num_classes
    if len(R) != C:
        raise ValueError("reported vector must have one entry per class")
    N = sum(R)
    sizes = [_CHUNK] * (B // _CHUNK)
    if B % _CHUNK:
        sizes.append(B % _CHUNK)
    children = np.random.SeedSequence(seed).spawn(len(sizes))
    radix = N + 1
    n_cells = radix**C
    powers = radix ** np.arange(C - 1, -1, -1, dtype=np.int64)

    def run(k: int) -> np.ndarray:
        return _sample_row_totals(F, R, sizes[k], children[k])

    workers = workers or max_workers()
    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            chunks = list(ex.map(run, range(len(sizes))))
    else:
        chunks = [run(k) for k in range(len(sizes))]

    counts: dict[tuple[int, ...], int] = {}
    if n_cells <= 20_000_000:
        hist = np.zeros(n_cells, dtype=np.int64)
        for totals in chunks:
            hist += kernels.tabulate_codes(totals @ powers, n_cells)
        for code in np.flatnonzero(hist):
            m = tuple(int(v) for v in np.unravel_index(code, (radix,) * C))
            counts[m] = int(hist[code])
    else:
        for totals in chunks:
            uniq, cnt = np.unique(totals, axis=0, return_counts=True)
            for row, k in zip(uniq, cnt):
                m = tuple(int(v) for v in row)
                counts[m] = counts.get(m, 0) + int(k)
    entries = {m: Fraction(k, B) for m, k in counts.items()}
    return HTable(reported=R, entries=entries, num_runs=B, seed=seed, raw_counts=counts)


def exact_h(
    F: FraudMatrix,
    R: Sequence[int],
    *,
    exact: bool = False,
    limit: int = EXACT_SIZE_LIMIT,
) -> HTable:
    """``H(m)`` for every reachable ``m`` by enumerating the column redistributions."""
    R = tuple(int(v) for v in R)
    C = F.num_classes
    if len(R) != C:
        raise ValueError("reported vector must have one entry per class")
    _check_size(R, C, limit)
    if exact:
        cols = F.as_fractions()
        probs = []
        for j in range(C):
            col = [cols[c][j] for c in range(C)]
            s = sum(col)
            probs.append([v / s for v in col] if s else None)
        one, zero = Fraction(1), Fraction(0)
    else:
        probs = [
            column_probs(F, j).tolist() if F.probs[:, j].sum() > 0 else None
            for j in range(C)
        ]
        one, zero = 1.0, 0.0
    states: dict[tuple[int, ...], object] = {(0,) * C: one}
    for j in range(C):
        if R[j] == 0:
            continue
        p = probs[j]
        if p is None:
            raise ValueError(f"column {j} of the fraud matrix is all zero; class {j} is never reported")
        nxt: dict[tuple[int, ...], object] = {}
        for x in _compositions(R[j], C):
            if any(xc > 0 and p[c] == 0 for c, xc in enumerate(x)):
                continue
            w = _multinomial_pmf(x, p)
            for partial, prob in states.items():
                s = tuple(a + b for a, b in zip(partial, x))
                nxt[s] = nxt.get(s, zero) + prob * w
        states = nxt
    entries = {m: v for m, v in states.items() if v > 0}
    return HTable(reported=R, entries=entries, num_runs=None, seed=None)


def theorem_log_constant(F: FraudMatrix, R: Sequence[int]) -> float:
    """``log( prod_j colsum_j^R_j / prod_j R_j! )``; does not depend on ``m``."""
    colsum = F.probs.sum(axis=0)
    out = 0.0
    for j, r in enumerate(R):
        r = int(r)
        if r == 0:
            continue
        if colsum[j] <= 0:
            return -math.inf
        out += r * math.log(colsum[j]) - math.lgamma(r + 1)
    return out


def log_report_prob_via_theorem(
    F: FraudMatrix, M: Sequence[int], R: Sequence[int], h_value: float
) -> float:
    if sum(int(v) for v in M) != sum(int(v) for v in R):
        raise ValueError("true and reported totals differ")
    if not 0.0 <= h_value <= 1.0:
        raise ValueError(f"H value must lie in [0, 1], got {h_value}")
    if h_value == 0.0:
        return -math.inf
    log_mfact = sum(math.lgamma(int(m) + 1) for m in M)
    return theorem_log_constant(F, R) + log_mfact + math.log(h_value)


def report_prob_via_theorem(
    F: FraudMatrix, M: Sequence[int], R: Sequence[int], h_value: float
) -> float:
    """``P(R | M)`` rebuilt from ``H(M)`` and the closed-form factor, in log space."""
    return math.exp(log_report_prob_via_theorem(F, M, R, float(h_value)))


def candidate_counts(htable: HTable) -> list[tuple[int, ...]]:
    """Support of ``H``, most probable first, ties broken lexicographically."""
    support = [(m, v) for m, v in htable.entries.items() if v > 0]
    if not support:
        raise ValueError("H table is empty")
    support.sort(key=lambda mv: (-float(mv[1]), mv[0]))
    return [m for m, _ in support]
