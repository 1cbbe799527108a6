"""Probability distributions on the nonnegative integers, truncated at K.

Provides the W1 distance (sum of absolute CDF differences, exact for the
|x - y| cost on the integers), an independent transport oracle for tests,
and conversions from empirical particle configurations.
"""

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Callable, Dict, Sequence, Union

import numpy as np

__all__ = [
    "TruncationError",
    "DistN",
    "EmpiricalMeasure",
    "delta",
    "uniform",
    "poisson",
    "geometric",
    "first_moment",
    "w1_dist",
    "w1_oracle",
    "empirical_to_dist",
    "lipschitz_integral",
    "exp_moment",
]

_NORM_TOL = 1e-12


class TruncationError(ValueError):
    """More tail mass would be discarded than tail_tol admits."""


@dataclass(frozen=True)
class DistN:
    """Probability vector on {0..K} with an explicit truncation budget.

    The mass vector is normalized exactly on construction (raw weights
    are accepted) and frozen.  ``tail_tol`` bounds the probability mass
    any later operation may silently renormalize away; larger losses
    raise TruncationError.
    """

    mass: np.ndarray
    tail_tol: float = 1e-10

    def __post_init__(self):
        m = np.asarray(self.mass, dtype=np.float64).copy()
        if m.ndim != 1 or m.size == 0:
            raise ValueError("mass must be a nonempty 1-D vector")
        if np.any(m < -_NORM_TOL) or not np.all(np.isfinite(m)):
            raise ValueError("mass entries must be finite and nonnegative")
        m = np.maximum(m, 0.0)
        s = m.sum()
        if s <= 0:
            raise ValueError("total mass must be positive")
        m /= s
        m.flags.writeable = False
        object.__setattr__(self, "mass", m)
        if self.tail_tol <= 0:
            raise ValueError("tail_tol must be positive")

    @property
    def K(self) -> int:
        return self.mass.size - 1

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.mass)

    def padded(self, K: int) -> "DistN":
        """Zero-pad up to truncation level K (never drops mass)."""
        if K < self.K:
            raise ValueError("padded() cannot shrink; use truncated()")
        if K == self.K:
            return self
        m = np.zeros(K + 1)
        m[: self.mass.size] = self.mass
        return DistN(m, tail_tol=self.tail_tol)

    def truncated(self, K: int) -> "DistN":
        """Drop states above K; fails if the lost mass exceeds tail_tol."""
        if K >= self.K:
            return self.padded(K)
        lost = float(self.mass[K + 1:].sum())
        if lost > self.tail_tol:
            raise TruncationError(f"would discard {lost:.3e} > tail_tol={self.tail_tol:.3e}")
        return DistN(self.mass[: K + 1], tail_tol=self.tail_tol)

    def quantile(self, u) -> np.ndarray:
        """Inverse CDF at u in [0,1); vectorized, returns int64 states."""
        cdf = self.cdf()
        idx = np.searchsorted(cdf, np.asarray(u), side="right")
        return np.minimum(idx, self.K).astype(np.int64)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "mass"])
        for k, p in enumerate(self.mass):
            w.writerow([k, repr(float(p))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, tail_tol: float = 1e-10) -> "DistN":
        rows = list(csv.reader(io.StringIO(text)))
        if rows and rows[0][:2] == ["k", "mass"]:
            rows = rows[1:]
        pairs = [(int(r[0]), float(r[1])) for r in rows if r]
        K = max(k for k, _ in pairs)
        m = np.zeros(K + 1)
        for k, p in pairs:
            m[k] = p
        return cls(m, tail_tol=tail_tol)

    def to_json(self) -> str:
        return json.dumps([float(p) for p in self.mass])

    @classmethod
    def from_json(cls, text: str, tail_tol: float = 1e-10) -> "DistN":
        return cls(np.asarray(json.loads(text), dtype=np.float64), tail_tol=tail_tol)


def delta(k: int, K: int = None, tail_tol: float = 1e-10) -> DistN:
    """Point mass at k."""
    if K is None:
        K = k
    if k > K:
        raise ValueError("delta location above truncation level")
    m = np.zeros(K + 1)
    m[k] = 1.0
    return DistN(m, tail_tol=tail_tol)


def uniform(K: int, tail_tol: float = 1e-10) -> DistN:
    """Uniform law on {0..K}."""
    return DistN(np.full(K + 1, 1.0 / (K + 1)), tail_tol=tail_tol)


def poisson(mu: float, K: int, tail_tol: float = 1e-10) -> DistN:
    """Poisson(mu) truncated at K; the dropped tail must fit in tail_tol."""
    ks = np.arange(K + 1)
    logp = ks * math.log(mu) - mu - np.array([math.lgamma(k + 1) for k in ks]) if mu > 0 else None
    m = np.exp(logp) if mu > 0 else np.eye(1, K + 1, 0).ravel()
    lost = 1.0 - m.sum()
    if lost > tail_tol:
        raise TruncationError(f"Poisson({mu}) tail above K={K} holds {lost:.3e} mass")
    return DistN(m, tail_tol=tail_tol)


def geometric(r: float, K: int, tail_tol: float = 1e-10) -> DistN:
    """P(k) proportional to r^k on {0..K} (renormalized, no tail check needed)."""
    if not 0 < r < 1:
        raise ValueError("ratio must lie in (0,1)")
    return DistN(r ** np.arange(K + 1), tail_tol=tail_tol)


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Occupation counts of a particle configuration."""

    counts: Dict[int, int]
    total: int

    def __post_init__(self):
        if self.total < 1:
            raise ValueError("total must be >= 1")
        if sum(self.counts.values()) != self.total:
            raise ValueError("counts must sum to total")
        if any(k < 0 or c < 0 for k, c in self.counts.items()):
            raise ValueError("states and counts must be nonnegative")

    @classmethod
    def from_values(cls, x) -> "EmpiricalMeasure":
        vals, cnt = np.unique(np.asarray(x, dtype=np.int64), return_counts=True)
        return cls(counts={int(v): int(c) for v, c in zip(vals, cnt)}, total=int(cnt.sum()))

    @property
    def max_state(self) -> int:
        return max(self.counts)


def empirical_to_dist(e: EmpiricalMeasure, K: int, tail_tol: float = 1e-10) -> DistN:
    """Empirical distribution as a DistN on {0..K}; states above K are an error."""
    if e.max_state > K:
        raise TruncationError(f"observed state {e.max_state} above truncation K={K}")
    m = np.zeros(K + 1)
    for k, c in e.counts.items():
        m[k] = c / e.total
    return DistN(m, tail_tol=tail_tol)


def first_moment(u: DistN) -> float:
    """Mean of the distribution, sum_k k*u(k)."""
    return float(np.arange(u.mass.size) @ u.mass)


def exp_moment(u: DistN, delta_: float) -> float:
    """sum_k exp(delta*k) u(k)."""
    return float(np.exp(delta_ * np.arange(u.mass.size)) @ u.mass)


def lipschitz_integral(u: DistN, phi: Union[Callable[[int], float], Sequence[float]]) -> float:
    """sum_k phi(k) u(k) for phi given as a callable or a table on 0..K."""
    if callable(phi):
        vals = np.array([float(phi(k)) for k in range(u.mass.size)])
    else:
        vals = np.asarray(phi, dtype=np.float64)
        if vals.size < u.mass.size:
            raise ValueError("phi table shorter than the support")
        vals = vals[: u.mass.size]
    return float(vals @ u.mass)


def _common_masses(u: DistN, v: DistN):
    K = max(u.K, v.K)
    return u.padded(K).mass, v.padded(K).mass


def w1_dist(u: DistN, v: DistN) -> float:
    """Exact W1 distance under the |x - y| cost: sum_k |F_u(k) - F_v(k)|."""
    mu, mv = _common_masses(u, v)
    return float(np.abs(np.cumsum(mu) - np.cumsum(mv)).sum())


def _w1_greedy(mu: np.ndarray, mv: np.ndarray) -> float:
    # monotone (north-west corner) coupling; optimal for convex 1-D costs
    i = j = 0
    ui, vj = mu[0], mv[0]
    cost = 0.0
    K = mu.size - 1
    while True:
        m = min(ui, vj)
        cost += m * abs(i - j)
        ui -= m
        vj -= m
        if ui <= 1e-15:
            i += 1
            if i > K:
                break
            ui = mu[i]
        if vj <= 1e-15:
            j += 1
            if j > K:
                break
            vj = mv[j]
    return cost


def _w1_lp(mu: np.ndarray, mv: np.ndarray) -> float:
    from scipy.optimize import linprog

    n = mu.size
    cost = np.abs(np.subtract.outer(np.arange(n), np.arange(n))).ravel().astype(np.float64)
    A = []
    b = []
    for i in range(n):
        row = np.zeros(n * n)
        row[i * n: (i + 1) * n] = 1.0
        A.append(row)
        b.append(mu[i])
    for j in range(n - 1):  # last column constraint is redundant
        row = np.zeros(n * n)
        row[j::n] = 1.0
        A.append(row)
        b.append(mv[j])
    res = linprog(cost, A_eq=np.array(A), b_eq=np.array(b), bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def w1_oracle(u: DistN, v: DistN) -> float:
    """Independent W1 via the explicit monotone coupling (LP-checked when tiny).

    Test-only verification path for w1_dist; limited to K <= 64.
    """
    mu, mv = _common_masses(u, v)
    if mu.size - 1 > 64:
        raise ValueError("oracle limited to K <= 64")
    greedy = _w1_greedy(mu, mv)
    if mu.size - 1 <= 8:
        lp = _w1_lp(mu, mv)
        if abs(lp - greedy) > 1e-9:
            raise AssertionError(f"transport oracle disagreement: greedy={greedy!r}, lp={lp!r}")
    return greedy
