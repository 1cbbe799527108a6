"""Exact event-driven simulation of the N-particle system.

Single trajectories are strictly sequential; replicas run in parallel on
private Philox streams keyed by (seed, replica index) and are merged in
replica order, so results do not depend on the thread count.
"""

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import rng
from ._kernels import DEFAULT_BUDGET, TableOverflow, backend_for, build_table
from ._kernels.common import system_rates
from .measure import DistN
from .rates import RateModel

__all__ = [
    "ParticleState",
    "SimClock",
    "Event",
    "Trajectory",
    "ReplicaSummary",
    "total_event_rate",
    "step",
    "simulate",
    "simulate_replicas",
    "sample_initial",
]


@dataclass
class ParticleState:
    """Configuration in N^N with a cached coordinate sum."""

    x: np.ndarray
    total: int = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.int64)
        if self.x.ndim != 1 or self.x.size < 1:
            raise ValueError("state must be a nonempty 1-D integer vector")
        if (self.x < 0).any():
            raise ValueError("coordinates must be nonnegative")
        if self.total is None:
            self.total = int(self.x.sum())

    @classmethod
    def constant(cls, n: int, value: int = 0) -> "ParticleState":
        return cls(np.full(n, value, dtype=np.int64))

    @property
    def N(self) -> int:
        return self.x.size

    @property
    def mean(self) -> float:
        return self.total / self.N

    def copy(self) -> "ParticleState":
        return ParticleState(self.x.copy(), self.total)

    def apply(self, site: int, delta: int) -> None:
        """Move one coordinate by +/-1 and update the cached sum in O(1)."""
        nv = self.x[site] + delta
        if nv < 0:
            raise ValueError(f"death at zero coordinate (site {site})")
        self.x[site] = nv
        self.total += delta
        assert self.total == int(self.x.sum())

    def check(self) -> None:
        if self.total != int(self.x.sum()):
            raise AssertionError("cached sum out of sync")


@dataclass
class SimClock:
    """Current time plus the deterministic stream driving the trajectory."""

    t: float
    gen: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int, *stream: int) -> "SimClock":
        return cls(0.0, rng.generator(seed, *stream))


@dataclass(frozen=True)
class Event:
    time: float
    site: int
    delta: int


@dataclass(frozen=True)
class Trajectory:
    """Snapshots of the state at the requested record times (left limits)."""

    record_times: np.ndarray
    states: np.ndarray  # (n_records, N) int64
    n_events: int = 0

    def __post_init__(self):
        if self.record_times.shape[0] != self.states.shape[0]:
            raise ValueError("one snapshot per record time")

    def state_at(self, j: int) -> ParticleState:
        return ParticleState(self.states[j].copy())

    def to_csv(self, replica: int = 0) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["replica", "t", "i", "x_i"])
        for t, row in zip(self.record_times, self.states):
            for i, v in enumerate(row):
                w.writerow([replica, repr(float(t)), i, int(v)])
        return buf.getvalue()


def total_event_rate(model: RateModel, s: ParticleState) -> float:
    """Sum of all per-site effective birth and death rates."""
    table = build_table(model, int(s.x.max()) + 1)
    birth, death = system_rates(table, s.x)
    total = float(birth.sum() + death.sum())
    if not math.isfinite(total):
        raise ValueError("non-finite total event rate; check the model")
    return total


def step(model: RateModel, s: ParticleState, clock: SimClock) -> Event:
    """Advance one jump: exponential holding time, rate-proportional choice.

    Mutates the state and clock; never applies a death at a zero
    coordinate (those channels carry zero rate).
    """
    table = build_table(model, int(s.x.max()) + 1)
    birth, death = system_rates(table, s.x)
    n = s.N
    flat = np.empty(2 * n)
    flat[0::2] = birth
    flat[1::2] = death
    cum = np.cumsum(flat)
    total = float(cum[-1])
    if total <= 0.0:
        raise ValueError("zero total rate: the configuration is absorbing")
    u1 = clock.gen.random()
    clock.t += -math.log1p(-u1) / total
    u2 = clock.gen.random()
    j = int(np.searchsorted(cum, u2 * total, side="right"))
    j = min(j, 2 * n - 1)
    while flat[j] <= 0.0 and j > 0:
        j -= 1
    site, delta = j >> 1, (-1 if j & 1 else 1)
    s.apply(site, delta)
    return Event(time=clock.t, site=site, delta=delta)


def _initial_cap(max_coord: int) -> int:
    return max(64, 2 * int(max_coord) + 16)


def _run_with_growth(model, runner_name, make_args, seed_indices, seed,
                     backend=None, max_events=DEFAULT_BUDGET, cap_hint=0):
    """Run one replica, doubling the rate table on overflow.

    The replica's stream is re-created on retry, so the successful run
    replays the identical trajectory with room to continue: results are
    independent of the initial cap.
    """
    cap = _initial_cap(cap_hint)
    for _ in range(32):
        table = build_table(model, cap)
        kern = backend_for(table, backend)
        bg = rng.bit_generator(seed, *seed_indices)
        gen = np.random.Generator(bg)
        args = make_args(table, gen)
        try:
            return getattr(kern, runner_name)(table, *args, bit_generator=bg, max_events=max_events)
        except TableOverflow as exc:
            cap = max(2 * cap, exc.needed + 1)
    raise RuntimeError("rate table grew past 2**32 states; model looks explosive")


def simulate(model: RateModel, init: ParticleState, t_max: float,
             record_times: Optional[Sequence[float]] = None, *,
             seed: int, stream: Sequence[int] = (),
             max_events: int = DEFAULT_BUDGET, backend: str = None) -> Trajectory:
    """Exact trajectory with snapshots at the record times.

    Snapshots are left limits; identical (seed, model, init, grid) give a
    bit-identical Trajectory.  record_times must be sorted inside
    [0, t_max] and defaults to 51 evenly spaced points.
    """
    if t_max < 0:
        raise ValueError("t_max must be nonnegative")
    if record_times is None:
        record_times = np.linspace(0.0, t_max, 51) if t_max > 0 else np.array([0.0])
    grid = np.asarray(record_times, dtype=np.float64)
    if grid.ndim != 1 or grid.size == 0 or (np.diff(grid) < 0).any():
        raise ValueError("record_times must be a sorted, nonempty vector")
    if grid[0] < 0 or grid[-1] > t_max:
        raise ValueError("record_times must lie inside [0, t_max]")
    model.validate()

    def make_args(table, gen):
        return (init.x.copy(), grid)

    snaps, n_events = _run_with_growth(
        model, "run_system", make_args, tuple(stream), seed,
        backend=backend, max_events=max_events, cap_hint=int(init.x.max()))
    return Trajectory(record_times=grid, states=snaps, n_events=n_events)


def sample_initial(law: DistN, n: int, gen: np.random.Generator) -> np.ndarray:
    """n i.i.d. coordinates drawn from the law by inverse transform."""
    return law.quantile(gen.random(n))


def replica_trajectory(model: RateModel, init_law: DistN, ridx: int, t_max: float,
                       grid: Sequence[float], *, n: int, seed: int,
                       max_events: int = DEFAULT_BUDGET, backend: str = None) -> Trajectory:
    """The exact trajectory replica ``ridx`` of simulate_replicas follows.

    Replays the same stream (init draw included), so exporting
    trajectories reproduces the aggregated replicas bit for bit.
    """
    grid = np.asarray(grid, dtype=np.float64)

    def make_args(table, gen):
        return (sample_initial(init_law, n, gen), grid)

    snaps, n_events = _run_with_growth(
        model, "run_system", make_args, (ridx,), seed,
        backend=backend, max_events=max_events, cap_hint=init_law.K)
    return Trajectory(record_times=grid, states=snaps, n_events=n_events)


@dataclass(frozen=True)
class ReplicaSummary:
    """Cross-replica statistics at each record time, merged in replica order."""

    record_times: np.ndarray
    mean_m: np.ndarray          # average over replicas of the particle mean
    se_m: np.ndarray            # standard error of that average
    marginal1: np.ndarray       # (n_records, K+1) occupation counts of coordinate 1
    pooled: np.ndarray          # (n_records, K+1) occupation counts pooled over sites
    n_replicas: int
    n: int

    def marginal1_dist(self, j: int) -> DistN:
        return DistN(self.marginal1[j].astype(np.float64))


def simulate_replicas(model: RateModel, init_law: DistN, n_replicas: int,
                      t_max: float, grid: Sequence[float], *, n: int,
                      seed: int, threads: Optional[int] = None,
                      max_events: int = DEFAULT_BUDGET, backend: str = None) -> ReplicaSummary:
    """Independent replicas of the N-particle system from i.i.d. initial draws."""
    if n_replicas < 1:
        raise ValueError("n_replicas must be >= 1")
    grid = np.asarray(grid, dtype=np.float64)
    if grid[0] < 0 or grid[-1] > t_max:
        raise ValueError("grid must lie inside [0, t_max]")
    model.validate()

    def one(ridx: int):
        def make_args(table, gen):
            x0 = sample_initial(init_law, n, gen)
            return (x0, grid)

        snaps, _ = _run_with_growth(
            model, "run_system", make_args, (ridx,), seed,
            backend=backend, max_events=max_events, cap_hint=init_law.K)
        return snaps

    with ThreadPoolExecutor(max_workers=threads) as ex:
        all_snaps = list(ex.map(one, range(n_replicas)))

    kmax = max(int(s.max()) for s in all_snaps)
    nrec = grid.size
    marginal1 = np.zeros((nrec, kmax + 1), dtype=np.int64)
    pooled = np.zeros((nrec, kmax + 1), dtype=np.int64)
    means = np.empty((n_replicas, nrec))
    for r, snaps in enumerate(all_snaps):
        means[r] = snaps.mean(axis=1)
        for j in range(nrec):
            marginal1[j, snaps[j, 0]] += 1
            pooled[j] += np.bincount(snaps[j], minlength=kmax + 1)
    mean_m = means.mean(axis=0)
    se_m = means.std(axis=0, ddof=1) / math.sqrt(n_replicas) if n_replicas > 1 else np.zeros(nrec)
    return ReplicaSummary(record_times=grid, mean_m=mean_m, se_m=se_m,
                          marginal1=marginal1, pooled=pooled,
                          n_replicas=n_replicas, n=n)
