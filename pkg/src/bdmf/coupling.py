"""Synchronized evolution of two particle systems under the explicit
min/excess coupling.

Per site the twelve channels split each marginal rate into a joint part
(both chains move together, at the minimum of the two rates) and one-sided
excess parts; summing the channels that move a given marginal recovers
that marginal's generator exactly.  The same decomposition is applied to
the base rates and to the interaction rates, for both the mean-field and
the quadratic pairwise interactions.
"""

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import rng
from ._kernels import DEFAULT_BUDGET, TableOverflow, backend_for, build_table
from ._kernels.common import CHANNEL_DX, CHANNEL_DY, coupled_channels
from .analysis import ExperimentResult
from .measure import DistN, w1_dist
from .rates import QuadraticPairwise, RateModel, effective_rates, resolve_constants
from .ssa import ParticleState, SimClock

__all__ = [
    "CoupledState",
    "CoupledEventTable",
    "CoupledEvent",
    "build_event_table",
    "coupled_step",
    "coupled_distance_curve",
    "marginality_report",
    "marginality_audit",
    "drift_report",
    "joint_mean_distance_curve",
]

CHANNEL_LABELS = (
    "joint_birth", "x_birth", "y_birth", "joint_death", "x_death", "y_death",
    "joint_q_birth", "x_q_birth", "y_q_birth", "joint_q_death", "x_q_death", "y_q_death",
)


@dataclass
class CoupledState:
    x: ParticleState
    y: ParticleState

    def __post_init__(self):
        if self.x.N != self.y.N:
            raise ValueError("coupled systems must share N")

    @property
    def N(self) -> int:
        return self.x.N

    def distance(self) -> int:
        return int(np.abs(self.x.x - self.y.x).sum())


@dataclass(frozen=True)
class CoupledEventTable:
    """(N, 12) channel rates in the canonical layout."""

    rates: np.ndarray

    def total_rate(self) -> float:
        return float(self.rates.sum())

    def x_marginal_rates(self) -> np.ndarray:
        """(N, 2) birth/death rates of the X marginal implied by the channels."""
        r = self.rates
        birth = r[:, 0] + r[:, 1] + r[:, 6] + r[:, 7]
        death = r[:, 3] + r[:, 4] + r[:, 9] + r[:, 10]
        return np.column_stack([birth, death])

    def y_marginal_rates(self) -> np.ndarray:
        r = self.rates
        birth = r[:, 0] + r[:, 2] + r[:, 6] + r[:, 8]
        death = r[:, 3] + r[:, 5] + r[:, 9] + r[:, 11]
        return np.column_stack([birth, death])


def build_event_table(model: RateModel, cs: CoupledState) -> CoupledEventTable:
    """Channel rates for the coupled pair at its current configuration."""
    cap = int(max(cs.x.x.max(), cs.y.x.max())) + 1
    table = build_table(model, cap)
    return CoupledEventTable(rates=coupled_channels(table, cs.x.x, cs.y.x))


@dataclass(frozen=True)
class CoupledEvent:
    time: float
    site: int
    channel: int
    dx: int
    dy: int


def coupled_step(model: RateModel, cs: CoupledState, clock: SimClock) -> CoupledEvent:
    """One jump of the coupled chain; joint channels move both marginals."""
    flat = build_event_table(model, cs).rates.reshape(-1)
    cum = np.cumsum(flat)
    total = float(cum[-1])
    if total <= 0.0:
        raise ValueError("zero total channel rate: the coupled configuration is absorbing")
    u1 = clock.gen.random()
    clock.t += -math.log1p(-u1) / total
    u2 = clock.gen.random()
    j = int(np.searchsorted(cum, u2 * total, side="right"))
    j = min(j, flat.size - 1)
    while flat[j] <= 0.0 and j > 0:
        j -= 1
    site, ch = divmod(j, 12)
    dx = int(CHANNEL_DX[ch])
    dy = int(CHANNEL_DY[ch])
    if dx:
        cs.x.apply(site, dx)
    if dy:
        cs.y.apply(site, dy)
    return CoupledEvent(time=clock.t, site=site, channel=ch, dx=dx, dy=dy)


def coupled_distance_curve(model: RateModel, law_x0: DistN, law_y0: DistN,
                           N: int, n_replicas: int, grid: Sequence[float], *,
                           seed: int, threads: Optional[int] = None,
                           max_events: int = DEFAULT_BUDGET,
                           backend: str = None) -> ExperimentResult:
    """Monte-Carlo mean of the l1 coupling distance over time.

    Initial coordinates are paired comonotonically: one vector of
    uniforms feeds both laws' quantile functions, so the expected initial
    distance is exactly N * W1(law_x0, law_y0).
    """
    model.validate()
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size == 0 or (np.diff(grid) < 0).any():
        raise ValueError("grid must be a sorted, nonempty vector")

    def one(ridx: int):
        cap = max(64, 2 * max(law_x0.K, law_y0.K) + 16)
        for _ in range(32):
            table = build_table(model, cap)
            kern = backend_for(table, backend)
            bg = rng.bit_generator(seed, ridx)
            gen = np.random.Generator(bg)
            u = gen.random(N)
            x0 = law_x0.quantile(u)
            y0 = law_y0.quantile(u)
            try:
                xs, ys, _ = kern.run_coupled(table, x0, y0, grid, bit_generator=bg,
                                             max_events=max_events)
            except TableOverflow as exc:
                cap = max(2 * cap, exc.needed + 1)
                continue
            return np.abs(xs - ys).sum(axis=1).astype(np.float64)
        raise RuntimeError("rate table grew without bound in coupled_distance_curve")

    with ThreadPoolExecutor(max_workers=threads) as ex:
        dists = np.stack(list(ex.map(one, range(n_replicas))))
    values = dists.mean(axis=0)
    hws = dists.std(axis=0, ddof=1) / math.sqrt(n_replicas) if n_replicas > 1 \
        else np.zeros(grid.size)
    return ExperimentResult(
        label="coupled_distance",
        grid=grid,
        values=values,
        half_widths=hws,
        meta={"seed": seed, "N": N, "n_replicas": n_replicas,
              "d0_expected": N * w1_dist(law_x0, law_y0)},
    )


def _box_states(N: int, K: int):
    return list(itertools.product(range(K + 1), repeat=N))


def marginality_report(model: RateModel, N: int, K: int,
                       table_fn: Optional[Callable] = None) -> dict:
    """Exact marginality check over the enumerated joint state space.

    For every pair of configurations in {0..K}^N and every site, the
    channel sums that move one marginal must reproduce that marginal's
    generator rates (birth and death) from the single-system definition.
    ``table_fn`` can substitute a corrupted channel builder as a negative
    control.
    """
    if N > 2 or K > 6:
        raise ValueError("enumeration limited to N <= 2, K <= 6")
    model.validate()
    fn = table_fn if table_fn is not None else build_event_table
    worst = 0.0
    checked = 0
    states = _box_states(N, K)
    for xs in states:
        x = ParticleState(np.array(xs, dtype=np.int64))
        expect_x = np.array([effective_rates(model, x, i) for i in range(N)])
        for ys in states:
            y = ParticleState(np.array(ys, dtype=np.int64))
            tab = fn(model, CoupledState(x.copy(), y.copy()))
            expect_y = np.array([effective_rates(model, y, i) for i in range(N)])
            err_x = np.abs(tab.x_marginal_rates() - expect_x).max()
            err_y = np.abs(tab.y_marginal_rates() - expect_y).max()
            worst = max(worst, float(err_x), float(err_y))
            checked += 1
    return {
        "ok": worst <= 1e-12,
        "max_abs_error": worst,
        "joint_states": checked,
        "N": N,
        "K": K,
    }


def marginality_audit(model: RateModel, N: int, K: int) -> bool:
    """True when the coupled generator projects exactly onto both marginals."""
    return bool(marginality_report(model, N, K)["ok"])


def drift_report(model: RateModel, N: int, K: int,
                 kappa: Optional[float] = None, tol: float = 1e-9) -> dict:
    """State-by-state check of the coupling drift on the distance.

    Applies the coupled generator to d(x, y) = sum |x_i - y_i| at every
    enumerated joint state and verifies L d <= -kappa d + tol.  kappa
    defaults to lambda - 2*alpha for mean-field models and to lambda for
    the quadratic pairwise interaction.
    """
    if N > 2 or K > 6:
        raise ValueError("enumeration limited to N <= 2, K <= 6")
    model.validate()
    if kappa is None:
        lam, alpha = resolve_constants(model)
        kappa = lam if isinstance(model.interaction, QuadraticPairwise) else lam - 2.0 * alpha
    worst = -math.inf
    violations = 0
    checked = 0
    states = _box_states(N, K)
    dxs = np.asarray(CHANNEL_DX)
    dys = np.asarray(CHANNEL_DY)
    for xs in states:
        xa = np.array(xs, dtype=np.int64)
        for ys in states:
            ya = np.array(ys, dtype=np.int64)
            cs = CoupledState(ParticleState(xa.copy()), ParticleState(ya.copy()))
            rates = build_event_table(model, cs).rates
            d0 = np.abs(xa - ya).sum()
            ld = 0.0
            for i in range(N):
                gap = int(xa[i] - ya[i])
                d_new = np.abs(gap + dxs - dys)
                ld += float((rates[i] * (d_new - abs(gap))).sum())
            margin = ld + kappa * float(d0)
            worst = max(worst, margin)
            if margin > tol:
                violations += 1
            checked += 1
    return {
        "ok": violations == 0,
        "kappa": float(kappa),
        "violations": violations,
        "worst_margin": worst,
        "joint_states": checked,
        "N": N,
        "K": K,
    }


def joint_mean_distance_curve(model: RateModel, x0, y0, K: int,
                              ts: Sequence[float]) -> np.ndarray:
    """Exact E d(X_t, Y_t) on the truncated joint chain via expm.

    Test oracle: transitions leaving {0..K}^N x {0..K}^N are suppressed,
    so K must be generous enough that the boundary carries no mass.
    """
    from scipy.linalg import expm

    x0 = np.asarray(x0, dtype=np.int64)
    y0 = np.asarray(y0, dtype=np.int64)
    N = x0.size
    if N > 2 or K > 8:
        raise ValueError("joint enumeration limited to N <= 2, K <= 8")
    states = _box_states(N, K)
    pairs = [(xs, ys) for xs in states for ys in states]
    index = {p: i for i, p in enumerate(pairs)}
    S = len(pairs)
    Q = np.zeros((S, S))
    for (xs, ys), si in index.items():
        xa = np.array(xs, dtype=np.int64)
        ya = np.array(ys, dtype=np.int64)
        cs = CoupledState(ParticleState(xa.copy()), ParticleState(ya.copy()))
        rates = build_event_table(model, cs).rates
        for i in range(N):
            for ch in range(12):
                r = float(rates[i, ch])
                if r <= 0.0:
                    continue
                nx, ny = list(xs), list(ys)
                nx[i] += int(CHANNEL_DX[ch])
                ny[i] += int(CHANNEL_DY[ch])
                tgt = (tuple(nx), tuple(ny))
                if tgt in index:
                    Q[si, index[tgt]] += r
                    Q[si, si] -= r
                # out-of-box moves suppressed (reflecting truncation)
    d = np.array([np.abs(np.array(xs) - np.array(ys)).sum() for xs, ys in pairs],
                 dtype=np.float64)
    p0 = np.zeros(S)
    p0[index[(tuple(x0), tuple(y0))]] = 1.0
    out = np.empty(len(ts))
    for j, t in enumerate(ts):
        pt = expm(Q.T * float(t)) @ p0
        out[j] = float(pt @ d)
    return out
