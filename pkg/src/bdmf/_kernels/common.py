"""Shared machinery for the event-loop kernels.

Rate models are tabulated (base rates up to a cap, interaction reduced to
a small integer code plus one parameter) so the hot loops can run without
calling back into Python.  Models whose interaction is an arbitrary
callable get code GENERIC_MF and are served by the pure-Python kernels
only.

Both kernel implementations (compiled and fallback) follow one draw
protocol so that trajectories are bit-for-bit identical:

* homogeneous loops: per event draw U1 (holding time, inverse transform
  -log1p(-U1)/total) then U2 (channel choice, first index whose running
  rate sum exceeds U2*total);
* thinned loops (external mean curve): per candidate draw U1 against the
  segment bound B, then a single U2 with target U2*B used both for the
  accept test (target < actual total) and, on acceptance, for the channel
  choice.

Totals are always taken from the final entry of the sequential cumulative
sum, never from a pairwise sum, so both implementations accumulate in the
same order.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..rates import MeanField, NoInteraction, QuadraticPairwise, RateModel

KIND_NONE = 0
KIND_ATTRACTION = 1
KIND_QUADRATIC = 2
KIND_GENERIC_MF = 3

DEFAULT_BUDGET = 100_000_000

# coupled channel layout per site: (index, rate, X move, Y move)
#  0 joint birth      min(bx, by)     +1 +1
#  1 X-only birth     (bx - by)+      +1  0
#  2 Y-only birth     (by - bx)+       0 +1
#  3 joint death      min(dx, dy)     -1 -1
#  4 X-only death     (dx - dy)+      -1  0
#  5 Y-only death     (dy - dx)+       0 -1
#  6..11 repeat the pattern for the interaction rates q+/q-.
CHANNEL_DX = np.array([1, 1, 0, -1, -1, 0, 1, 1, 0, -1, -1, 0], dtype=np.int64)
CHANNEL_DY = np.array([1, 0, 1, -1, 0, -1, 1, 0, 1, -1, 0, -1], dtype=np.int64)


class TableOverflow(Exception):
    """A coordinate moved past the tabulated range; retry with a bigger cap."""

    def __init__(self, needed: int):
        super().__init__(f"state {needed} above table cap")
        self.needed = needed


class BudgetExceeded(RuntimeError):
    """Event budget exhausted; the model may be runaway (explosive)."""


@dataclass
class KernelTable:
    """Tabulated rates: b[k], d[k] for k in 0..cap, plus interaction code."""

    b: np.ndarray
    d: np.ndarray
    kind: int
    param: float
    qplus: Optional[Callable] = None
    qminus: Optional[Callable] = None

    @property
    def cap(self) -> int:
        return self.b.size - 1

    @property
    def kernel_compatible(self) -> bool:
        return self.kind != KIND_GENERIC_MF


def interaction_code(model: RateModel):
    q = model.interaction
    if isinstance(q, NoInteraction):
        return KIND_NONE, 0.0, None, None
    if isinstance(q, QuadraticPairwise):
        return KIND_QUADRATIC, float(q.a), None, None
    if isinstance(q, MeanField):
        if q.tag is not None and q.tag[0] == "attraction":
            return KIND_ATTRACTION, float(q.tag[1]), None, None
        return KIND_GENERIC_MF, 0.0, q.qplus, q.qminus
    raise TypeError(f"unknown interaction {q!r}")


def build_table(model: RateModel, cap: int) -> KernelTable:
    """Evaluate the base rates on 0..cap.  d[0] is coerced to zero: the
    generator blocks deaths at 0, and the tabulated value is only ever
    used by the dynamics."""
    ks = range(cap + 1)
    b = np.array([float(model.birth(k)) for k in ks])
    d = np.array([float(model.death(k)) for k in ks])
    if not (np.isfinite(b).all() and np.isfinite(d).all()):
        raise ValueError("non-finite tabulated rate")
    if (b < 0).any() or (d < 0).any():
        raise ValueError("negative tabulated rate")
    d[0] = 0.0
    kind, param, qp, qm = interaction_code(model)
    return KernelTable(b=b, d=d, kind=kind, param=param, qplus=qp, qminus=qm)


def grow_table(model: RateModel, table: KernelTable, needed: int) -> KernelTable:
    return build_table(model, max(2 * table.cap, int(needed) + 1))


def interaction_rates(table: KernelTable, x: np.ndarray, mean: Optional[float] = None):
    """(q+, q-) arrays for configuration x.

    ``mean`` overrides the interaction's second argument (used for the
    nonlinear process, whose rates read an external mean curve); by
    default the configuration's own mean is used.  q- is forced to zero
    at value 0, matching the generator's death indicator.
    """
    n = x.size
    if table.kind == KIND_NONE:
        z = np.zeros(n)
        return z, z.copy()
    if table.kind == KIND_QUADRATIC:
        if mean is not None:
            raise ValueError("quadratic interaction has no external-mean form")
        gap_above, gap_below = _pairwise_gaps(x)
        a_over_n = table.param / n
        return a_over_n * gap_above.astype(np.float64), a_over_n * gap_below.astype(np.float64)
    if mean is None:
        mean = float(int(x.sum())) / n
    xf = x.astype(np.float64)
    if table.kind == KIND_ATTRACTION:
        c = table.param
        qp = c * np.maximum(mean - xf, 0.0)
        qm = c * np.maximum(xf - mean, 0.0)
    else:
        qp = np.array([float(table.qplus(int(v), mean)) for v in x])
        qm = np.array([float(table.qminus(int(v), mean)) if v > 0 else 0.0 for v in x])
    qm[x == 0] = 0.0
    return qp, qm


def _pairwise_gaps(x: np.ndarray):
    """Integer pairwise sums: (sum_j (x_j - v)+, sum_j (v - x_j)+) per site.

    Computed through occupation counts and prefix sums so large N stays
    O(N + max value); all arithmetic is exact int64.
    """
    n = x.size
    top = int(x.max())
    counts = np.bincount(x, minlength=top + 1).astype(np.int64)
    cumc = np.cumsum(counts)
    cums = np.cumsum(counts * np.arange(top + 1, dtype=np.int64))
    s_total = int(cums[-1])
    c_le = cumc[x]
    s_le = cums[x]
    gap_above = (s_total - s_le) - x * (n - c_le)
    c_lt = c_le - counts[x]
    s_lt = s_le - counts[x] * x
    gap_below = x * c_lt - s_lt
    return gap_above, gap_below


def system_rates(table: KernelTable, x: np.ndarray, mean: Optional[float] = None):
    """Per-site (birth, death) rates of the N-particle generator."""
    birth = table.b[x].copy()
    death = table.d[x].copy()
    qp, qm = interaction_rates(table, x, mean)
    birth += qp
    death += qm
    death[x == 0] = 0.0
    return birth, death


def assemble_channels(bx, dx, qxp, qxm, by, dy, qyp, qym) -> np.ndarray:
    """(N, 12) coupled channel rates in the canonical layout."""
    n = bx.size
    ch = np.empty((n, 12))
    ch[:, 0] = np.minimum(bx, by)
    ch[:, 1] = np.maximum(bx - by, 0.0)
    ch[:, 2] = np.maximum(by - bx, 0.0)
    ch[:, 3] = np.minimum(dx, dy)
    ch[:, 4] = np.maximum(dx - dy, 0.0)
    ch[:, 5] = np.maximum(dy - dx, 0.0)
    ch[:, 6] = np.minimum(qxp, qyp)
    ch[:, 7] = np.maximum(qxp - qyp, 0.0)
    ch[:, 8] = np.maximum(qyp - qxp, 0.0)
    ch[:, 9] = np.minimum(qxm, qym)
    ch[:, 10] = np.maximum(qxm - qym, 0.0)
    ch[:, 11] = np.maximum(qym - qxm, 0.0)
    return ch


def coupled_channels(table: KernelTable, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Channel table for the synchronized pair (both sides self-mean)."""
    bx, dxs = table.b[x], table.d[x].copy()
    by, dys = table.b[y], table.d[y].copy()
    dxs[x == 0] = 0.0
    dys[y == 0] = 0.0
    qxp, qxm = interaction_rates(table, x)
    qyp, qym = interaction_rates(table, y)
    return assemble_channels(bx, dxs, qxp, qxm, by, dys, qyp, qym)


def chaos_channels(table: KernelTable, x: np.ndarray, c: np.ndarray, mean_t: float) -> np.ndarray:
    """Channel table for particle system X coupled to companions at mean_t."""
    bx, dxs = table.b[x], table.d[x].copy()
    bc, dcs = table.b[c], table.d[c].copy()
    dxs[x == 0] = 0.0
    dcs[c == 0] = 0.0
    qxp, qxm = interaction_rates(table, x)
    qcp, qcm = interaction_rates(table, c, mean=mean_t)
    return assemble_channels(bx, dxs, qxp, qxm, bc, dcs, qcp, qcm)
