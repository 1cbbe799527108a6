"""Nonlinear master equation on a truncated state space.

The law u_t of the mean-field limit solves a forward equation whose
birth/death rates are frozen at the current first moment m = ||u_t||:

    du(i)/dt = beta(i-1) u(i-1) + delta(i+1) u(i+1) - (beta(i) + delta(i)) u(i),
    beta(k) = b_k + q+(k, m),  delta(k) = d_k + q-(k, m).

The equation is integrated with classic RK4, re-evaluating m at every
stage, on {0..K} with a reflecting cap (the birth rate at K is dropped)
and a running estimate of the mass that the cap withholds.  The module
also ships the time-inhomogeneous simulation of the limiting process and
the certificates for the mean and exponential-moment bounds.
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
from ._kernels.common import KernelTable, interaction_rates
from .measure import DistN, first_moment
from .rates import NoInteraction, QuadraticPairwise, RateModel, resolve_constants

__all__ = [
    "StabilityError",
    "NonlinearFlow",
    "MomentCertificate",
    "NonlinearSamples",
    "master_rhs",
    "integrate_flow",
    "linear_oracle",
    "fixed_point",
    "simulate_nonlinear",
    "exp_moment_certificate",
    "verify_certificate",
    "mean_bound",
]


class StabilityError(RuntimeError):
    """The integrator lost positivity or the cap leaked too much mass."""


def _require_meanfield(model: RateModel) -> None:
    if isinstance(model.interaction, QuadraticPairwise):
        raise ValueError("the nonlinear master equation is defined through the first "
                         "moment; the quadratic pairwise interaction has no such form")


def _flow_rates(table: KernelTable, m: float):
    """(beta, delta) on 0..K at frozen mean m, reflecting cap at K."""
    ks = np.arange(table.cap + 1, dtype=np.int64)
    qp, qm = interaction_rates(table, ks, mean=m)
    beta = table.b + qp
    delta = table.d + qm
    beta[-1] = 0.0
    delta[0] = 0.0
    return beta, delta


def _rhs(mass: np.ndarray, beta: np.ndarray, delta: np.ndarray) -> np.ndarray:
    out = (beta + delta) * mass
    rhs = -out
    rhs[1:] += beta[:-1] * mass[:-1]
    rhs[:-1] += delta[1:] * mass[1:]
    return rhs


def master_rhs(model: RateModel, u: DistN) -> np.ndarray:
    """du/dt at u, rates frozen at m = first_moment(u).

    Components sum to zero up to the reflecting-cap flux; the cap is
    healthy only while u puts negligible mass at K.
    """
    _require_meanfield(model)
    model.validate()
    table = build_table(model, u.K)
    m = first_moment(u)
    beta, delta = _flow_rates(table, m)
    return _rhs(u.mass, beta, delta)


@dataclass(frozen=True)
class NonlinearFlow:
    """Integrated law of the mean-field limit on a time grid."""

    times: np.ndarray
    dists: tuple            # DistN at each grid time
    means: np.ndarray       # first moments, ||u_t||
    cap_leak: float = 0.0   # integrated estimate of mass withheld by the cap

    def __post_init__(self):
        if not (len(self.times) == len(self.dists) == len(self.means)):
            raise ValueError("times, dists and means must align")

    @property
    def K(self) -> int:
        return self.dists[0].K

    def mean_at(self, t) -> np.ndarray:
        return np.interp(t, self.times, self.means)

    def index_of(self, t: float) -> int:
        j = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[j] - t) > 1e-9:
            raise KeyError(f"time {t} not on the flow grid")
        return j

    def dist_at(self, t: float) -> DistN:
        return self.dists[self.index_of(t)]

    def to_csv_long(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "k", "mass"])
        for t, u in zip(self.times, self.dists):
            for k, p in enumerate(u.mass):
                w.writerow([repr(float(t)), k, repr(float(p))])
        return buf.getvalue()

    def to_csv_summary(self, delta: Optional[float] = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        head = ["t", "mean"] + ([f"exp_moment_{delta}"] if delta is not None else [])
        w.writerow(head)
        for t, u, m in zip(self.times, self.dists, self.means):
            row = [repr(float(t)), repr(float(m))]
            if delta is not None:
                row.append(repr(float(np.exp(delta * np.arange(u.mass.size)) @ u.mass)))
            w.writerow(row)
        return buf.getvalue()


class _CapLeak(Exception):
    pass


def _integrate_fixed_K(table, mass0, grid, dt, tail_tol):
    mass = mass0.copy()
    K = mass.size - 1
    cap_birth = float(table.b[K])  # unforced base birth at the cap
    leak = 0.0
    out_dists = [mass.copy()]
    out_means = [float(np.arange(K + 1) @ mass)]
    ks = np.arange(K + 1, dtype=np.float64)
    cap_state = np.array([K], dtype=np.int64)
    for j in range(1, grid.size):
        span = float(grid[j] - grid[j - 1])
        nsub = max(1, int(math.ceil(span / dt)))
        h = span / nsub
        for _ in range(nsub):
            m1 = float(ks @ mass)
            b1, d1 = _flow_rates(table, m1)
            k1 = _rhs(mass, b1, d1)
            y2 = mass + 0.5 * h * k1
            b2, d2 = _flow_rates(table, float(ks @ y2))
            k2 = _rhs(y2, b2, d2)
            y3 = mass + 0.5 * h * k2
            b3, d3 = _flow_rates(table, float(ks @ y3))
            k3 = _rhs(y3, b3, d3)
            y4 = mass + h * k3
            b4, d4 = _flow_rates(table, float(ks @ y4))
            k4 = _rhs(y4, b4, d4)
            mass = mass + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            qp_cap, _ = interaction_rates(table, cap_state, mean=m1)
            leak += h * (cap_birth + float(qp_cap[0])) * float(mass[K])
            if leak > tail_tol:
                raise _CapLeak
            low = float(mass.min())
            if low < -1e-12:
                raise StabilityError(f"mass went negative ({low:.3e}) near t={grid[j]:.6g}; "
                                     "reduce dt or raise the cap")
            if low < 0.0:
                mass = np.maximum(mass, 0.0)
                mass = mass / mass.sum()
        out_dists.append(mass.copy())
        out_means.append(float(ks @ mass))
    return out_dists, out_means, leak


def integrate_flow(model: RateModel, u0: DistN, t_max: float,
                   dt: Optional[float] = None,
                   grid: Optional[Sequence[float]] = None,
                   tail_tol: Optional[float] = None) -> NonlinearFlow:
    """Integrate the nonlinear forward equation from u0 over [0, t_max].

    The truncation level starts at max(20, 4*||u0||, K of u0) and doubles
    until the reflecting cap withholds less than tail_tol mass over the
    whole horizon.  dt defaults to 0.1 / max total rate at the cap and is
    halved on loss of positivity.
    """
    _require_meanfield(model)
    model.validate()
    if t_max < 0:
        raise ValueError("t_max must be nonnegative")
    if grid is None:
        grid = np.linspace(0.0, t_max, max(2, int(round(t_max / 0.05)) + 1)) if t_max > 0 \
            else np.array([0.0])
    grid = np.asarray(grid, dtype=np.float64)
    if grid[0] != 0.0 or (np.diff(grid) <= 0).any() or grid[-1] > t_max + 1e-12:
        raise ValueError("grid must start at 0, increase strictly, and stay within t_max")
    tol = tail_tol if tail_tol is not None else u0.tail_tol
    m0 = first_moment(u0)
    K = max(20, int(math.ceil(4 * m0)), u0.K)
    for _ in range(12):
        table = build_table(model, K)
        mass0 = u0.padded(K).mass
        beta0, delta0 = _flow_rates(table, m0)
        max_rate = float(np.max(beta0 + delta0)) + float(model.birth(K))
        step = dt if dt is not None else (0.1 / max_rate if max_rate > 0 else 0.1)
        try:
            for _ in range(6):
                try:
                    dists, means, leak = _integrate_fixed_K(table, mass0, grid, step, tol)
                    return NonlinearFlow(
                        times=grid,
                        dists=tuple(DistN(d, tail_tol=u0.tail_tol) for d in dists),
                        means=np.asarray(means),
                        cap_leak=leak,
                    )
                except StabilityError:
                    step *= 0.5
            raise StabilityError("positivity failure persisted after dt refinement")
        except _CapLeak:
            K *= 2
    raise StabilityError("truncation level exceeded 4096x the initial cap; "
                         "the flow looks heavy-tailed")


def linear_oracle(model: RateModel, u0: DistN, t: float) -> DistN:
    """Matrix-exponential solution of the interaction-free equation.

    Independent reference for integrate_flow: same reflecting cap, exact
    in time via scipy's expm.
    """
    if not isinstance(model.interaction, NoInteraction):
        raise ValueError("the matrix-exponential oracle covers the linear case only")
    from scipy.linalg import expm

    K = u0.K
    beta = np.array([float(model.birth(k)) for k in range(K + 1)])
    delta = np.array([float(model.death(k)) for k in range(K + 1)])
    beta[-1] = 0.0
    delta[0] = 0.0
    Q = np.zeros((K + 1, K + 1))
    for k in range(K + 1):
        if k < K:
            Q[k, k + 1] = beta[k]
        if k > 0:
            Q[k, k - 1] = delta[k]
        Q[k, k] = -(beta[k] + delta[k])
    p = expm(Q.T * t) @ u0.mass
    return DistN(np.maximum(p, 0.0), tail_tol=u0.tail_tol)


def fixed_point(model: RateModel, u_init: DistN, tol: float = 1e-10,
                max_iter: int = 500, damping: float = 0.5,
                K: Optional[int] = None) -> DistN:
    """Stationary law of the nonlinear equation by damped mean iteration.

    Given a mean m, the frozen-rate birth-death chain has the detailed
    balance law pi_k proportional to prod b(j-1,m)/d(j,m); the mean of pi
    feeds back with damping until it is a fixed point.  Meaningful in the
    contraction regime, where the invariant law is unique.
    """
    _require_meanfield(model)
    model.validate()
    m = first_moment(u_init)
    K = K if K is not None else max(40, 4 * int(math.ceil(m)) + 20, u_init.K)
    for _ in range(8):
        table = build_table(model, K)
        converged = False
        mm = m
        for _ in range(max_iter):
            pi = _frozen_stationary(table, mm)
            m_new = float(np.arange(K + 1) @ pi)
            if abs(m_new - mm) <= tol:
                mm = m_new
                converged = True
                break
            mm = mm + damping * (m_new - mm)
        if not converged:
            raise RuntimeError(f"fixed-point iteration did not converge in {max_iter} steps")
        pi = _frozen_stationary(table, mm)
        if pi[-1] > 1e-12:
            K *= 2
            continue
        u = DistN(pi, tail_tol=u_init.tail_tol)
        resid = float(np.abs(master_rhs(model, u)).sum())
        if resid > max(tol, 1e-8):
            K *= 2
            continue
        return u
    raise RuntimeError("fixed point did not stabilize under cap growth")


def _frozen_stationary(table: KernelTable, m: float) -> np.ndarray:
    beta, delta = _flow_rates(table, m)
    K = table.cap
    with np.errstate(divide="ignore"):
        logb = np.log(beta[:-1])
        logd = np.log(delta[1:])
    logw = np.concatenate([[0.0], np.cumsum(logb - logd)])
    logw[np.isnan(logw)] = -np.inf
    logw -= logw.max()
    w = np.exp(logw)
    return w / w.sum()


@dataclass(frozen=True)
class MomentCertificate:
    """Exponential-moment bound sum_i exp(delta*i) u_t(i) <= bound.

    beta_delta is the scan infimum of d_x e^{-delta} - b_x over x >= 1;
    K1 = alpha (||u0|| + b0 / (lambda - 2 alpha)).  The certificate is
    applicable only when beta_delta - K1 > 0.
    """

    delta: float
    beta_delta: float
    K1: float
    bound: float
    applicable: bool
    lam: float
    alpha: float
    scan_max: int
    boundary_minimum: bool = False


def exp_moment_certificate(model: RateModel, u0: DistN, delta: float,
                           scan_max: int = 200,
                           lam: Optional[float] = None,
                           alpha: Optional[float] = None) -> MomentCertificate:
    """Build the exponential-moment certificate for the flow from u0."""
    _require_meanfield(model)
    if delta <= 0:
        raise ValueError("delta must be positive")
    if lam is None or alpha is None:
        lam_r, alpha_r = resolve_constants(model)
        lam = lam if lam is not None else lam_r
        alpha = alpha if alpha is not None else alpha_r
    kappa = lam - 2.0 * alpha
    if kappa <= 0:
        raise ValueError("the certificate needs lambda - 2*alpha > 0")
    xs = np.arange(1, scan_max + 1)
    vals = np.array([float(model.death(int(x))) * math.exp(-delta) - float(model.birth(int(x)))
                     for x in xs])
    beta_delta = float(vals.min())
    boundary = bool(np.argmin(vals) == xs.size - 1)
    K1 = alpha * (first_moment(u0) + model.b0 / kappa)
    applicable = beta_delta - K1 > 0
    if applicable:
        e0 = float(np.exp(delta * np.arange(u0.mass.size)) @ u0.mass)
        bound = e0 + model.b0 / (beta_delta - K1)
    else:
        bound = math.inf
    return MomentCertificate(delta=delta, beta_delta=beta_delta, K1=K1, bound=bound,
                             applicable=applicable, lam=lam, alpha=alpha,
                             scan_max=scan_max, boundary_minimum=boundary)


def verify_certificate(cert: MomentCertificate, flow: NonlinearFlow,
                       tol: float = 1e-6):
    """Evaluate the exponential moment along the flow against the bound.

    Returns (ok, worst_excess); worst_excess > 0 means the bound failed
    somewhere on the grid.
    """
    if not cert.applicable:
        raise ValueError("certificate marked inapplicable (beta(delta) - K1 <= 0)")
    worst = -math.inf
    for u in flow.dists:
        em = float(np.exp(cert.delta * np.arange(u.mass.size)) @ u.mass)
        worst = max(worst, em - cert.bound)
    return worst <= tol, worst


def mean_bound(model: RateModel, u0: DistN, kappa: float) -> float:
    """||u_t|| <= ||u0|| + b0/kappa for all t, in the contraction regime."""
    if kappa <= 0:
        raise ValueError("mean bound needs kappa > 0")
    return first_moment(u0) + model.b0 / kappa


@dataclass(frozen=True)
class NonlinearSamples:
    """Replica paths of the limiting process at the record times."""

    record_times: np.ndarray
    values: np.ndarray  # (n_replicas, n_records) int64

    def marginal(self, j: int) -> DistN:
        return DistN(np.bincount(self.values[:, j]).astype(np.float64))

    def mean_curve(self) -> np.ndarray:
        return self.values.mean(axis=0)

    def se_curve(self) -> np.ndarray:
        r = self.values.shape[0]
        return self.values.std(axis=0, ddof=1) / math.sqrt(r) if r > 1 else np.zeros(self.values.shape[1])


def simulate_nonlinear(model: RateModel, flow: NonlinearFlow, n_replicas: int,
                       grid: Sequence[float], *, seed: int,
                       init_law: Optional[DistN] = None,
                       threads: Optional[int] = None,
                       block: int = 64,
                       max_events: int = DEFAULT_BUDGET,
                       backend: str = None) -> NonlinearSamples:
    """Sample the time-inhomogeneous limiting process along the flow.

    Rates read the flow's mean curve, interpolated linearly between grid
    knots; simulation is exact by thinning.  Replicas are grouped into
    blocks of independent chains, one Philox stream per block.
    """
    _require_meanfield(model)
    grid = np.asarray(grid, dtype=np.float64)
    if grid[-1] > flow.times[-1] + 1e-9:
        raise ValueError("grid extends past the integrated flow")
    law = init_law if init_law is not None else flow.dists[0]
    knots_t = np.asarray(flow.times, dtype=np.float64)
    knots_v = np.asarray(flow.means, dtype=np.float64)
    blocks = [(bi, min(block, n_replicas - bi * block))
              for bi in range((n_replicas + block - 1) // block)]

    def one(bspec):
        bi, sz = bspec
        cap = max(64, 2 * law.K + 16)
        for _ in range(32):
            table = build_table(model, cap)
            kern = backend_for(table, backend)
            bg = rng.bit_generator(seed, bi)
            gen = np.random.Generator(bg)
            x0 = law.quantile(gen.random(sz))
            try:
                snaps, _ = kern.run_driven(table, x0, knots_t, knots_v, grid,
                                           bit_generator=bg, max_events=max_events)
                return snaps.T  # (sz, n_records)
            except TableOverflow as exc:
                cap = max(2 * cap, exc.needed + 1)
        raise RuntimeError("rate table grew without bound in simulate_nonlinear")

    with ThreadPoolExecutor(max_workers=threads) as ex:
        parts = list(ex.map(one, blocks))
    return NonlinearSamples(record_times=grid, values=np.vstack(parts))
