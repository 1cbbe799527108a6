"""Rate models for birth-death particles with mean-field interaction.

A model consists of per-site base rates b(k), d(k) on the nonnegative
integers plus an interaction term: either mean-field functions
q+(k, m), q-(k, m) of the site value k and the particle mean m, or the
quadratic pairwise attraction with rates (a/N) * sum_j (x_i - x_j)∓.

The module also provides finite-scan certificates for the two structural
constants: lambda (one-sided convexity of d - b) and alpha (joint
Lipschitz constant of q+ - q-).  Scans are certificates on the scanned
range only, not symbolic proofs.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

__all__ = [
    "ModelError",
    "NoInteraction",
    "MeanField",
    "QuadraticPairwise",
    "RateModel",
    "AssumptionReport",
    "Eq14Report",
    "linear_attraction",
    "power_model",
    "mm_inf_model",
    "tabulated_model",
    "check_assumption_A",
    "check_assumption_B",
    "check_condition_eq14",
    "resolve_constants",
    "effective_rates",
]


class ModelError(ValueError):
    """A rate model violates a structural constraint."""


@dataclass(frozen=True)
class NoInteraction:
    """Independent particles: q+ = q- = 0."""


@dataclass(frozen=True)
class MeanField:
    """Interaction through the particle mean.

    ``qplus(k, m)`` and ``qminus(k, m)`` map (site value, mean) to a
    nonnegative rate.  ``tag`` marks a recognized parametric family
    (e.g. ``("attraction", c)`` for c*(m-k)+ / c*(k-m)+) which lets the
    compiled kernels evaluate the interaction natively; models built by
    hand leave it None and run on the pure-Python path.
    """

    qplus: Callable[[int, float], float]
    qminus: Callable[[int, float], float]
    tag: Optional[tuple] = None


@dataclass(frozen=True)
class QuadraticPairwise:
    """Pairwise attraction q_X+(x_i) = (a/N) sum_j (x_i - x_j)-, q_X- likewise with (.)+."""

    a: float


Interaction = Union[NoInteraction, MeanField, QuadraticPairwise]


def linear_attraction(strength: float = 1.0) -> MeanField:
    """q+(k, m) = c*(m-k)+, q-(k, m) = c*(k-m)+ (attraction toward the mean)."""
    c = float(strength)
    if c < 0:
        raise ModelError("attraction strength must be nonnegative")
    return MeanField(
        qplus=lambda k, m: c * max(m - k, 0.0),
        qminus=lambda k, m: c * max(k - m, 0.0),
        tag=("attraction", c),
    )


@dataclass(frozen=True)
class RateModel:
    """Birth-death rates plus interaction.

    ``birth`` and ``death`` are evaluated lazily on demand; they must be
    pure.  ``death(0)`` is never used by the dynamics (deaths at 0 are
    blocked), so it may take any nonnegative value; assumption scans use
    it as given.
    """

    birth: Callable[[int], float]
    death: Callable[[int], float]
    interaction: Interaction = field(default_factory=NoInteraction)
    declared_lambda: Optional[float] = None
    declared_alpha: Optional[float] = None

    @property
    def b0(self) -> float:
        return float(self.birth(0))

    def validate(self, scan_max: int = 64, m_probe: Sequence[float] = (0.0, 0.5, 1.0, 5.0)) -> None:
        """Check positivity/boundary invariants on 0..scan_max.

        Raises ModelError on negative or non-finite rates, or on a
        mean-field interaction with q-(0, m) != 0.  b(0) = 0 is allowed
        (the process may then have an absorbing configuration); b(k) must
        be positive for k >= 1 and d(k) positive for k >= 1.
        """
        for k in range(scan_max + 1):
            b = float(self.birth(k))
            d = float(self.death(k))
            if not (np.isfinite(b) and np.isfinite(d)):
                raise ModelError(f"non-finite rate at k={k}: b={b}, d={d}")
            if b < 0 or d < 0:
                raise ModelError(f"negative rate at k={k}: b={b}, d={d}")
            if k >= 1 and b <= 0:
                raise ModelError(f"birth rate must be positive for k>=1, got b({k})={b}")
            if k >= 1 and d <= 0:
                raise ModelError(f"death rate must be positive for k>=1, got d({k})={d}")
        q = self.interaction
        if isinstance(q, MeanField):
            for m in m_probe:
                if abs(float(q.qminus(0, m))) > 1e-12:
                    raise ModelError(f"mean-field interaction needs q-(0, m) = 0, got {q.qminus(0, m)} at m={m}")
                for k in (0, 1, 2, 5):
                    if float(q.qplus(k, m)) < -1e-12 or float(q.qminus(k, m)) < -1e-12:
                        raise ModelError("interaction rates must be nonnegative")
        elif isinstance(q, QuadraticPairwise):
            if q.a <= 0:
                raise ModelError("quadratic interaction needs a > 0")


def power_model(p: float, q: float, a: float = 1.0,
                interaction: Optional[Interaction] = None,
                declared_lambda: Optional[float] = None,
                declared_alpha: Optional[float] = None) -> RateModel:
    """b_k = p*k^a, d_k = q*k^a (a >= 1); satisfies the convexity scan with q - p."""
    return RateModel(
        birth=lambda k: p * float(k) ** a,
        death=lambda k: q * float(k) ** a,
        interaction=interaction if interaction is not None else NoInteraction(),
        declared_lambda=declared_lambda,
        declared_alpha=declared_alpha,
    )


def mm_inf_model(p: float, q: float,
                 interaction: Optional[Interaction] = None,
                 declared_lambda: Optional[float] = None,
                 declared_alpha: Optional[float] = None) -> RateModel:
    """M/M/inf rates b_k = p, d_k = q*k; convexity scan yields exactly q."""
    return RateModel(
        birth=lambda k: float(p),
        death=lambda k: q * float(k),
        interaction=interaction if interaction is not None else NoInteraction(),
        declared_lambda=declared_lambda,
        declared_alpha=declared_alpha,
    )


def tabulated_model(birth_head: Sequence[float], death_head: Sequence[float],
                    tail: RateModel, interaction: Optional[Interaction] = None) -> RateModel:
    """Tabulated rates up to a cutoff, falling back to ``tail``'s formulas beyond."""
    bh = [float(v) for v in birth_head]
    dh = [float(v) for v in death_head]
    if len(bh) != len(dh):
        raise ModelError("birth/death tables must share a cutoff")
    cut = len(bh)
    return RateModel(
        birth=lambda k: bh[k] if k < cut else float(tail.birth(k)),
        death=lambda k: dh[k] if k < cut else float(tail.death(k)),
        interaction=interaction if interaction is not None else tail.interaction,
        declared_lambda=tail.declared_lambda,
        declared_alpha=tail.declared_alpha,
    )


@dataclass(frozen=True)
class AssumptionReport:
    """Finite-scan certificate for the structural constants.

    ``lambda_min`` is the scan minimum of (d-b)(n+1) - (d-b)(n);
    ``alpha_min`` the largest grid ratio |delta(q+ - q-)| / (|dk| + |dl|);
    ``kappa = lambda_min - 2*alpha_min`` is the contraction rate the
    coupling theorem provides when positive.
    """

    lambda_min: float
    alpha_min: float
    monotone_ok: bool
    kappa: float
    scan_range: int
    warnings: tuple = ()


@dataclass(frozen=True)
class Eq14Report:
    """Best (alpha, zeta) for the alternative interaction condition, by grid LP."""

    alpha: float
    zeta: float
    rate: float
    feasible: bool


def check_assumption_A(model: RateModel, n_max: int) -> float:
    """Minimum of (d-b)(n+1) - (d-b)(n) over n in 0..n_max-1.

    A positive return certifies the convexity condition with that lambda
    on the scanned range.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    model.validate(scan_max=n_max)
    g = np.array([float(model.death(n)) - float(model.birth(n)) for n in range(n_max + 1)])
    return float(np.min(np.diff(g)))


def _grid_points(k_max: int, m_grid: Sequence[float]):
    ks = np.arange(k_max + 1, dtype=np.float64)
    ms = np.asarray(sorted(float(m) for m in m_grid), dtype=np.float64)
    if ms.size == 0:
        raise ValueError("m_grid must be nonempty")
    return ks, ms


def _qdiff_table(model: RateModel, ks: np.ndarray, ms: np.ndarray) -> np.ndarray:
    q = model.interaction
    out = np.empty((ks.size, ms.size))
    for i, k in enumerate(ks):
        for j, m in enumerate(ms):
            out[i, j] = float(q.qplus(int(k), m)) - float(q.qminus(int(k), m))
    return out


def check_assumption_B(model: RateModel, k_max: int, m_grid: Sequence[float]) -> AssumptionReport:
    """Grid certificate for the Lipschitz condition on q+ - q-.

    alpha_min is the smallest Lipschitz constant consistent with the
    scanned grid: the maximum of |delta(q+ - q-)| / (|dk| + |dl|) over
    all pairs of grid points.  Monotonicity of q+ (nondecreasing) and
    q- (nonincreasing) in the mean argument is checked on the same grid.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    if isinstance(model.interaction, QuadraticPairwise):
        raise ModelError("the Lipschitz condition does not apply to the quadratic pairwise "
                         "interaction; its contraction theorem needs only the convexity scan")
    lam = check_assumption_A(model, k_max)
    warnings = []
    if isinstance(model.interaction, NoInteraction):
        alpha = 0.0
        monotone_ok = True
    else:
        ks, ms = _grid_points(k_max, m_grid)
        f = _qdiff_table(model, ks, ms)
        kk = np.repeat(ks, ms.size)
        ll = np.tile(ms, ks.size)
        ff = f.ravel()
        dk = np.abs(kk[:, None] - kk[None, :])
        dl = np.abs(ll[:, None] - ll[None, :])
        den = dk + dl
        num = np.abs(ff[:, None] - ff[None, :])
        mask = den > 0
        alpha = float(np.max(num[mask] / den[mask])) if mask.any() else 0.0

        qp = np.empty_like(f)
        qm = np.empty_like(f)
        for i, k in enumerate(ks):
            for j, m in enumerate(ms):
                qp[i, j] = float(model.interaction.qplus(int(k), m))
                qm[i, j] = float(model.interaction.qminus(int(k), m))
        monotone_ok = bool(np.all(np.diff(qp, axis=1) >= -1e-12)
                           and np.all(np.diff(qm, axis=1) <= 1e-12))
        if not monotone_ok:
            warnings.append("q+ / q- monotonicity in the mean argument fails on the grid")

    if model.declared_alpha is not None and alpha > model.declared_alpha + 1e-12:
        warnings.append(f"scan found alpha={alpha:.6g} above declared alpha={model.declared_alpha:.6g}")
    if model.declared_lambda is not None and lam < model.declared_lambda - 1e-12:
        warnings.append(f"scan found lambda={lam:.6g} below declared lambda={model.declared_lambda:.6g}")
    return AssumptionReport(
        lambda_min=lam,
        alpha_min=alpha,
        monotone_ok=monotone_ok,
        kappa=lam - 2.0 * alpha,
        scan_range=k_max,
        warnings=tuple(warnings),
    )


def check_condition_eq14(model: RateModel, k_max: int, m_grid: Sequence[float]) -> Eq14Report:
    """Fit the alternative one-sided condition on the interaction rates.

    Finds nonnegative (alpha, zeta) maximizing alpha - zeta subject to
    (q+ - q-)(k1, l1) - (q+ - q-)(k2, l2) <= -alpha*(k1-k2) + zeta*(l1-l2)
    for all scanned pairs with k1 >= k2.  The resulting contraction rate
    is (lambda + alpha) - zeta.
    """
    from scipy.optimize import linprog

    if isinstance(model.interaction, QuadraticPairwise):
        raise ModelError("the alternative condition is stated for mean-field rates")
    lam = check_assumption_A(model, k_max)
    if isinstance(model.interaction, NoInteraction):
        return Eq14Report(alpha=0.0, zeta=0.0, rate=lam, feasible=True)

    ks, ms = _grid_points(k_max, m_grid)
    f = _qdiff_table(model, ks, ms)
    kk = np.repeat(ks, ms.size)
    ll = np.tile(ms, ks.size)
    ff = f.ravel()
    dk = kk[:, None] - kk[None, :]
    dl = ll[:, None] - ll[None, :]
    df = ff[:, None] - ff[None, :]
    sel = dk >= 0
    # constraint rows: alpha*dk - zeta*dl <= -df
    A = np.column_stack([dk[sel], -dl[sel]])
    b = -df[sel]
    keep = ~((np.abs(A) < 1e-14).all(axis=1) & (b > -1e-12))
    res = linprog(c=[-1.0, 1.0], A_ub=A[keep], b_ub=b[keep],
                  bounds=[(0, None), (0, None)], method="highs")
    if not res.success:
        return Eq14Report(alpha=0.0, zeta=0.0, rate=float("-inf"), feasible=False)
    alpha, zeta = float(res.x[0]), float(res.x[1])
    return Eq14Report(alpha=alpha, zeta=zeta, rate=(lam + alpha) - zeta, feasible=True)


def resolve_constants(model: RateModel, n_max: int = 100,
                      m_grid: Optional[Sequence[float]] = None) -> tuple:
    """(lambda, alpha) for experiments: declared values win, scans fill gaps.

    For the quadratic pairwise interaction alpha is 0 by convention: its
    contraction theorem already yields the full rate lambda.
    """
    lam = model.declared_lambda
    if lam is None:
        lam = check_assumption_A(model, n_max)
    if model.declared_alpha is not None:
        return float(lam), float(model.declared_alpha)
    q = model.interaction
    if isinstance(q, (NoInteraction, QuadraticPairwise)):
        return float(lam), 0.0
    if m_grid is None:
        m_grid = np.arange(0.0, n_max / 2 + 0.25, 0.5)
    rep = check_assumption_B(model, min(n_max, 30), m_grid)
    return float(lam), float(rep.alpha_min)


def effective_rates(model: RateModel, state, i: int) -> tuple:
    """Per-site jump rates (birth, death) of the N-particle generator.

    ``state`` is a ParticleState or an integer array.  The death side is
    zero at value 0 regardless of d(0).
    """
    x = np.asarray(getattr(state, "x", state), dtype=np.int64)
    n = x.size
    if not 0 <= i < n:
        raise IndexError(f"site {i} out of range for N={n}")
    v = int(x[i])
    birth = float(model.birth(v))
    death = float(model.death(v)) if v > 0 else 0.0
    q = model.interaction
    if isinstance(q, NoInteraction):
        qp = qm = 0.0
    elif isinstance(q, MeanField):
        m = float(x.sum()) / n
        qp = float(q.qplus(v, m))
        qm = float(q.qminus(v, m)) if v > 0 else 0.0
    else:
        qp = q.a / n * float(np.maximum(x - v, 0).sum())
        qm = q.a / n * float(np.maximum(v - x, 0).sum())
    if v > 0:
        return birth + qp, death + qm
    return birth + qp, 0.0
