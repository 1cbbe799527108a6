"""Pure numpy event loops (reference implementation).

Selected at import when the compiled core is unavailable, and always used
for models with callable (non-tabulated) interactions.  Draw protocol and
float operation order match the compiled core exactly; with the same
Philox stream both produce bit-identical trajectories.
"""

import math

import numpy as np

from .common import (
    BudgetExceeded,
    CHANNEL_DX,
    CHANNEL_DY,
    DEFAULT_BUDGET,
    KIND_NONE,
    KIND_QUADRATIC,
    TableOverflow,
    chaos_channels,
    coupled_channels,
    interaction_rates,
    system_rates,
)

COMPILED = False


def _pick(flat: np.ndarray, cum: np.ndarray, target: float) -> int:
    """First index whose cumulative rate exceeds target (skipping a
    rounding-edge landing on the very end)."""
    j = int(np.searchsorted(cum, target, side="right"))
    if j >= flat.size:
        j = flat.size - 1
    while flat[j] <= 0.0 and j > 0:
        j -= 1
    return j


def run_system(table, x0, t_grid, bit_generator, max_events=DEFAULT_BUDGET):
    """Exact SSA for the homogeneous N-particle system.

    Returns (snapshots, n_events) where snapshots[r] is the state at
    t_grid[r] (left limit).  Raises TableOverflow when a coordinate
    outgrows the tabulated rates.
    """
    gen = np.random.Generator(bit_generator)
    x = np.array(x0, dtype=np.int64)
    n = x.size
    t_grid = np.asarray(t_grid, dtype=np.float64)
    nrec = t_grid.size
    snaps = np.empty((nrec, n), dtype=np.int64)
    ri = 0
    t = 0.0
    events = 0
    cap = table.cap
    while ri < nrec:
        birth, death = system_rates(table, x)
        flat = np.empty(2 * n)
        flat[0::2] = birth
        flat[1::2] = death
        cum = np.cumsum(flat)
        total = float(cum[-1])
        if total <= 0.0:
            snaps[ri:] = x
            break
        u1 = gen.random()
        t_event = t + (-math.log1p(-u1) / total)
        while ri < nrec and t_grid[ri] <= t_event:
            snaps[ri] = x
            ri += 1
        if ri >= nrec:
            break
        t = t_event
        u2 = gen.random()
        j = _pick(flat, cum, u2 * total)
        site = j >> 1
        if j & 1:
            x[site] -= 1
        else:
            if x[site] + 1 > cap:
                raise TableOverflow(int(x[site] + 1))
            x[site] += 1
        events += 1
        if events >= max_events:
            raise BudgetExceeded(f"{events} events without reaching the last record time")
    return snaps, events


def run_coupled(table, x0, y0, t_grid, bit_generator, max_events=DEFAULT_BUDGET):
    """Exact SSA for the synchronized pair under the coupling generator.

    Returns (x_snapshots, y_snapshots, n_events).
    """
    gen = np.random.Generator(bit_generator)
    x = np.array(x0, dtype=np.int64)
    y = np.array(y0, dtype=np.int64)
    n = x.size
    t_grid = np.asarray(t_grid, dtype=np.float64)
    nrec = t_grid.size
    xsnaps = np.empty((nrec, n), dtype=np.int64)
    ysnaps = np.empty((nrec, n), dtype=np.int64)
    ri = 0
    t = 0.0
    events = 0
    cap = table.cap
    while ri < nrec:
        flat = coupled_channels(table, x, y).reshape(-1)
        cum = np.cumsum(flat)
        total = float(cum[-1])
        if total <= 0.0:
            xsnaps[ri:] = x
            ysnaps[ri:] = y
            break
        u1 = gen.random()
        t_event = t + (-math.log1p(-u1) / total)
        while ri < nrec and t_grid[ri] <= t_event:
            xsnaps[ri] = x
            ysnaps[ri] = y
            ri += 1
        if ri >= nrec:
            break
        t = t_event
        u2 = gen.random()
        j = _pick(flat, cum, u2 * total)
        site, ch = divmod(j, 12)
        dx = int(CHANNEL_DX[ch])
        dy = int(CHANNEL_DY[ch])
        if dx > 0 and x[site] + 1 > cap:
            raise TableOverflow(int(x[site] + 1))
        if dy > 0 and y[site] + 1 > cap:
            raise TableOverflow(int(y[site] + 1))
        x[site] += dx
        y[site] += dy
        events += 1
        if events >= max_events:
            raise BudgetExceeded(f"{events} events without reaching the last record time")
    return xsnaps, ysnaps, events


def _mean_at(knots_t, knots_v, seg, t):
    nseg = knots_t.size - 1
    if seg >= nseg:
        return float(knots_v[nseg])
    t0 = knots_t[seg]
    t1 = knots_t[seg + 1]
    frac = (t - t0) / (t1 - t0)
    return float(knots_v[seg] + (knots_v[seg + 1] - knots_v[seg]) * frac)


def _seg_bounds(knots_t, knots_v, seg):
    nseg = knots_t.size - 1
    if seg >= nseg:
        v = float(knots_v[nseg])
        return v, v, math.inf
    v0 = float(knots_v[seg])
    v1 = float(knots_v[seg + 1])
    return min(v0, v1), max(v0, v1), float(knots_t[seg + 1])


def run_driven(table, x0, knots_t, knots_v, t_grid, bit_generator,
               max_events=DEFAULT_BUDGET):
    """Independent chains driven by an external, piecewise-linear mean curve.

    Time-inhomogeneous rates are simulated exactly by thinning: within
    each curve segment the monotonicity of q+ (resp. q-) in the mean
    bounds every rate by its value at the segment's extreme means.  A
    bound violation (possible only for non-monotone callable rates)
    rescales the bound and retries the step.
    """
    if table.kind == KIND_QUADRATIC:
        raise ValueError("no external-mean dynamics for the quadratic interaction")
    gen = np.random.Generator(bit_generator)
    x = np.array(x0, dtype=np.int64)
    n = x.size
    knots_t = np.asarray(knots_t, dtype=np.float64)
    knots_v = np.asarray(knots_v, dtype=np.float64)
    t_grid = np.asarray(t_grid, dtype=np.float64)
    nrec = t_grid.size
    snaps = np.empty((nrec, n), dtype=np.int64)
    ri = 0
    t = 0.0
    events = 0
    work = 0
    cap = table.cap
    seg = 0
    nseg = knots_t.size - 1
    scale = 1.0
    need_bound = True
    bound = 0.0
    seg_end = 0.0
    while ri < nrec:
        while seg < nseg and t >= float(knots_t[seg + 1]):
            seg += 1
            need_bound = True
        if need_bound:
            m_lo, m_hi, seg_end = _seg_bounds(knots_t, knots_v, seg)
            qp_hi, _ = interaction_rates(table, x, mean=m_hi)
            _, qm_hi = interaction_rates(table, x, mean=m_lo)
            birth_b = table.b[x] + qp_hi
            death_b = table.d[x] + qm_hi
            death_b[x == 0] = 0.0
            bcum = np.cumsum(np.concatenate([birth_b, death_b]))
            bound = float(bcum[-1]) * scale
            need_bound = False
        if bound <= 0.0:
            if seg >= nseg:
                snaps[ri:] = x
                break
            while ri < nrec and t_grid[ri] <= seg_end:
                snaps[ri] = x
                ri += 1
            t = seg_end
            seg += 1
            need_bound = True
            continue
        u1 = gen.random()
        t_cand = t + (-math.log1p(-u1) / bound)
        work += 1
        if work >= max_events:
            raise BudgetExceeded(f"{work} candidate events without reaching the last record time")
        if t_cand >= seg_end:
            while ri < nrec and t_grid[ri] <= seg_end:
                snaps[ri] = x
                ri += 1
            t = seg_end
            seg += 1
            need_bound = True
            continue
        while ri < nrec and t_grid[ri] <= t_cand:
            snaps[ri] = x
            ri += 1
        if ri >= nrec:
            break
        t = t_cand
        m = _mean_at(knots_t, knots_v, seg, t)
        birth, death = system_rates(table, x, mean=m)
        flat = np.empty(2 * n)
        flat[0::2] = birth
        flat[1::2] = death
        cum = np.cumsum(flat)
        total = float(cum[-1])
        if total > bound:
            scale = (total / bound) * 1.25 * scale
            need_bound = True
            continue
        u2 = gen.random()
        target = u2 * bound
        if target >= total:
            continue
        j = _pick(flat, cum, target)
        site = j >> 1
        if j & 1:
            x[site] -= 1
        else:
            if x[site] + 1 > cap:
                raise TableOverflow(int(x[site] + 1))
            x[site] += 1
        events += 1
        need_bound = True
    return snaps, events


def run_chaos(table, x0, knots_t, knots_v, t_grid, bit_generator,
              max_events=DEFAULT_BUDGET):
    """Particle system X coupled pairwise to companion nonlinear processes.

    Site i of X interacts through the live system mean; companion i uses
    the external curve.  Channels follow the coupled layout; the external
    dependence is thinned exactly as in run_driven, with channel-wise
    bounds from the segment's extreme means.

    Returns (x_snapshots, companion_snapshots, n_events).
    """
    if table.kind == KIND_QUADRATIC:
        raise ValueError("no external-mean dynamics for the quadratic interaction")
    gen = np.random.Generator(bit_generator)
    x = np.array(x0, dtype=np.int64)
    c = np.array(x0, dtype=np.int64)
    n = x.size
    knots_t = np.asarray(knots_t, dtype=np.float64)
    knots_v = np.asarray(knots_v, dtype=np.float64)
    t_grid = np.asarray(t_grid, dtype=np.float64)
    nrec = t_grid.size
    xsnaps = np.empty((nrec, n), dtype=np.int64)
    csnaps = np.empty((nrec, n), dtype=np.int64)
    ri = 0
    t = 0.0
    events = 0
    work = 0
    cap = table.cap
    seg = 0
    nseg = knots_t.size - 1
    scale = 1.0
    need_bound = True
    bound = 0.0
    seg_end = 0.0
    while ri < nrec:
        while seg < nseg and t >= float(knots_t[seg + 1]):
            seg += 1
            need_bound = True
        if need_bound:
            m_lo, m_hi, seg_end = _seg_bounds(knots_t, knots_v, seg)
            bound = float(np.cumsum(_chaos_bound_channels(table, x, c, m_lo, m_hi).reshape(-1))[-1]) * scale
            need_bound = False
        if bound <= 0.0:
            if seg >= nseg:
                xsnaps[ri:] = x
                csnaps[ri:] = c
                break
            while ri < nrec and t_grid[ri] <= seg_end:
                xsnaps[ri] = x
                csnaps[ri] = c
                ri += 1
            t = seg_end
            seg += 1
            need_bound = True
            continue
        u1 = gen.random()
        t_cand = t + (-math.log1p(-u1) / bound)
        work += 1
        if work >= max_events:
            raise BudgetExceeded(f"{work} candidate events without reaching the last record time")
        if t_cand >= seg_end:
            while ri < nrec and t_grid[ri] <= seg_end:
                xsnaps[ri] = x
                csnaps[ri] = c
                ri += 1
            t = seg_end
            seg += 1
            need_bound = True
            continue
        while ri < nrec and t_grid[ri] <= t_cand:
            xsnaps[ri] = x
            csnaps[ri] = c
            ri += 1
        if ri >= nrec:
            break
        t = t_cand
        m = _mean_at(knots_t, knots_v, seg, t)
        flat = chaos_channels(table, x, c, m).reshape(-1)
        cum = np.cumsum(flat)
        total = float(cum[-1])
        if total > bound:
            scale = (total / bound) * 1.25 * scale
            need_bound = True
            continue
        u2 = gen.random()
        target = u2 * bound
        if target >= total:
            continue
        j = _pick(flat, cum, target)
        site, ch = divmod(j, 12)
        dx = int(CHANNEL_DX[ch])
        dy = int(CHANNEL_DY[ch])
        if dx > 0 and x[site] + 1 > cap:
            raise TableOverflow(int(x[site] + 1))
        if dy > 0 and c[site] + 1 > cap:
            raise TableOverflow(int(c[site] + 1))
        x[site] += dx
        c[site] += dy
        events += 1
        need_bound = True
    return xsnaps, csnaps, events


def _chaos_bound_channels(table, x, c, m_lo, m_hi):
    """Channel-wise upper bounds over a mean-curve segment.

    q+ is nondecreasing and q- nonincreasing in the mean, so each channel
    is monotone in the curve value and attains its maximum at one of the
    segment's ends.
    """
    from .common import assemble_channels

    bx, dxs = table.b[x], table.d[x].copy()
    bc, dcs = table.b[c], table.d[c].copy()
    dxs[x == 0] = 0.0
    dcs[c == 0] = 0.0
    qxp, qxm = interaction_rates(table, x)
    if table.kind == KIND_NONE:
        return assemble_channels(bx, dxs, qxp, qxm, bc, dcs, qxp * 0.0, qxm * 0.0)
    qcp_max, qcm_min = interaction_rates(table, c, mean=m_hi)
    qcp_min, qcm_max = interaction_rates(table, c, mean=m_lo)
    n = x.size
    ch = np.empty((n, 12))
    ch[:, 0] = np.minimum(bx, bc)
    ch[:, 1] = np.maximum(bx - bc, 0.0)
    ch[:, 2] = np.maximum(bc - bx, 0.0)
    ch[:, 3] = np.minimum(dxs, dcs)
    ch[:, 4] = np.maximum(dxs - dcs, 0.0)
    ch[:, 5] = np.maximum(dcs - dxs, 0.0)
    ch[:, 6] = np.minimum(qxp, qcp_max)
    ch[:, 7] = np.maximum(qxp - qcp_min, 0.0)
    ch[:, 8] = np.maximum(qcp_max - qxp, 0.0)
    ch[:, 9] = np.minimum(qxm, qcm_max)
    ch[:, 10] = np.maximum(qxm - qcm_min, 0.0)
    ch[:, 11] = np.maximum(qcm_max - qxm, 0.0)
    return ch
