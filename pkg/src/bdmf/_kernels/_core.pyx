# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled event loops.

Mirrors fallback.py operation for operation: same Philox draw sequence,
same float operation order (totals from sequential accumulation), so a
given stream yields bit-identical trajectories on either implementation.
"""

import numpy as np

cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport INFINITY, fmax, fmin, log1p
from numpy.random cimport bitgen_t

from .common import (
    BudgetExceeded,
    DEFAULT_BUDGET,
    KIND_ATTRACTION,
    KIND_NONE,
    KIND_QUADRATIC,
    TableOverflow,
)

cnp.import_array()

COMPILED = True

ctypedef cnp.int64_t i64

cdef const char *CAPSULE = b"BitGenerator"

cdef int K_NONE = KIND_NONE
cdef int K_ATTR = KIND_ATTRACTION
cdef int K_QUAD = KIND_QUADRATIC

# coupled channel moves, matching common.CHANNEL_DX / CHANNEL_DY
cdef int[12] CDX = [1, 1, 0, -1, -1, 0, 1, 1, 0, -1, -1, 0]
cdef int[12] CDY = [1, 0, 1, -1, 0, -1, 1, 0, 1, -1, 0, -1]

# loop exit flags
cdef int OK = 0
cdef int OVERFLOW = 1
cdef int BUDGET = 2


cdef inline double nd(bitgen_t *rng) noexcept nogil:
    return rng.next_double(rng.state)


# branch-select min/max: inputs are never NaN, ties at +/-0.0 are
# interchangeable downstream, so these match np.minimum/np.maximum bitwise
cdef inline double dmin(double a, double b) noexcept nogil:
    return a if a < b else b


cdef inline double dmax(double a, double b) noexcept nogil:
    return a if a > b else b


cdef inline double pos(double a) noexcept nogil:
    return a if a > 0.0 else 0.0


cdef inline void prefix_sums(i64[::1] counts, i64[::1] cumc, i64[::1] cums,
                             Py_ssize_t top) noexcept nogil:
    cdef Py_ssize_t v
    cdef i64 cc = 0, cs = 0
    for v in range(top + 1):
        cc += counts[v]
        cs += counts[v] * v
        cumc[v] = cc
        cums[v] = cs


cdef inline void interaction_pair(int kind, double param, Py_ssize_t n,
                                  i64 v, double m,
                                  i64 s_total, i64[::1] counts,
                                  i64[::1] cumc, i64[::1] cums,
                                  double *qp, double *qm) noexcept nogil:
    """(q+, q-) for one site; m is the mean argument (self or external).
    Quadratic uses the caller-maintained occupation prefix sums."""
    cdef i64 gap_above, gap_below, c_le, s_le, c_lt, s_lt
    cdef double a_over_n
    if kind == 0:
        qp[0] = 0.0
        qm[0] = 0.0
    elif kind == 1:
        qp[0] = param * pos(m - <double> v)
        if v == 0:
            qm[0] = 0.0
        else:
            qm[0] = param * pos(<double> v - m)
    else:
        a_over_n = param / <double> n
        c_le = cumc[v]
        s_le = cums[v]
        gap_above = (s_total - s_le) - v * (<i64> n - c_le)
        c_lt = c_le - counts[v]
        s_lt = s_le - counts[v] * v
        gap_below = v * c_lt - s_lt
        qp[0] = a_over_n * <double> gap_above
        if v == 0:
            qm[0] = 0.0
        else:
            qm[0] = a_over_n * <double> gap_below


cdef inline double mean_interp(double[::1] kt, double[::1] kv, Py_ssize_t seg,
                               Py_ssize_t nseg, double t) noexcept nogil:
    cdef double t0, t1, frac
    if seg >= nseg:
        return kv[nseg]
    t0 = kt[seg]
    t1 = kt[seg + 1]
    frac = (t - t0) / (t1 - t0)
    return kv[seg] + (kv[seg + 1] - kv[seg]) * frac


cdef inline Py_ssize_t pick_channel(double[::1] flat, Py_ssize_t m,
                                    double target) noexcept nogil:
    """First index whose running sum exceeds target (sequential, matching
    np.cumsum + searchsorted side='right'), with the rounding-edge clamp."""
    cdef Py_ssize_t j
    cdef double acc = 0.0
    for j in range(m):
        acc += flat[j]
        if target < acc:
            return j
    j = m - 1
    while flat[j] <= 0.0 and j > 0:
        j -= 1
    return j


def run_system(table, x0, t_grid, bit_generator, max_events=DEFAULT_BUDGET):
    """Compiled twin of fallback.run_system."""
    cdef double[::1] b = table.b
    cdef double[::1] d = table.d
    cdef int kind = table.kind
    cdef double param = table.param
    cdef Py_ssize_t cap = b.shape[0] - 1
    if kind != K_NONE and kind != K_ATTR and kind != K_QUAD:
        raise ValueError("compiled kernels need a tabulated interaction")

    x_arr = np.array(x0, dtype=np.int64)
    grid_arr = np.ascontiguousarray(t_grid, dtype=np.float64)
    cdef i64[::1] x = x_arr
    cdef double[::1] grid = grid_arr
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t nrec = grid.shape[0]
    snaps_arr = np.empty((nrec, n), dtype=np.int64)
    cdef i64[:, ::1] snaps = snaps_arr
    flat_arr = np.empty(2 * n, dtype=np.float64)
    cdef double[::1] flat = flat_arr
    counts_arr = np.zeros(cap + 1, dtype=np.int64)
    cumc_arr = np.empty(cap + 1, dtype=np.int64)
    cums_arr = np.empty(cap + 1, dtype=np.int64)
    cdef i64[::1] counts = counts_arr
    cdef i64[::1] cumc = cumc_arr
    cdef i64[::1] cums = cums_arr

    cdef bitgen_t *rng = <bitgen_t *> PyCapsule_GetPointer(bit_generator.capsule, CAPSULE)
    cdef i64 budget = max_events
    cdef i64 events = 0
    cdef i64 sum_x = 0
    cdef i64 needed = 0
    cdef int status = OK
    cdef Py_ssize_t ri = 0, i, j, site
    cdef i64 v
    cdef double t = 0.0, total, acc, u1, u2, t_event, m, qp, qm

    for i in range(n):
        if x[i] > cap:
            raise TableOverflow(int(x[i]))
        sum_x += x[i]
        counts[x[i]] += 1

    with bit_generator.lock, nogil:
        while ri < nrec:
            if kind == K_QUAD:
                prefix_sums(counts, cumc, cums, cap)
            m = (<double> sum_x) / (<double> n)
            acc = 0.0
            for i in range(n):
                v = x[i]
                interaction_pair(kind, param, n, v, m, sum_x, counts, cumc, cums, &qp, &qm)
                flat[2 * i] = b[v] + qp
                if v == 0:
                    flat[2 * i + 1] = 0.0
                else:
                    flat[2 * i + 1] = d[v] + qm
                acc += flat[2 * i]
                acc += flat[2 * i + 1]
            total = acc
            if total <= 0.0:
                while ri < nrec:
                    for i in range(n):
                        snaps[ri, i] = x[i]
                    ri += 1
                break
            u1 = nd(rng)
            t_event = t + (-log1p(-u1) / total)
            while ri < nrec and grid[ri] <= t_event:
                for i in range(n):
                    snaps[ri, i] = x[i]
                ri += 1
            if ri >= nrec:
                break
            t = t_event
            u2 = nd(rng)
            j = pick_channel(flat, 2 * n, u2 * total)
            site = j >> 1
            if j & 1:
                counts[x[site]] -= 1
                x[site] -= 1
                counts[x[site]] += 1
                sum_x -= 1
            else:
                if x[site] + 1 > cap:
                    needed = x[site] + 1
                    status = OVERFLOW
                    break
                counts[x[site]] -= 1
                x[site] += 1
                counts[x[site]] += 1
                sum_x += 1
            events += 1
            if events >= budget:
                status = BUDGET
                break

    if status == OVERFLOW:
        raise TableOverflow(int(needed))
    if status == BUDGET:
        raise BudgetExceeded(f"{events} events without reaching the last record time")
    return snaps_arr, int(events)


def run_coupled(table, x0, y0, t_grid, bit_generator, max_events=DEFAULT_BUDGET):
    """Compiled twin of fallback.run_coupled."""
    cdef double[::1] b = table.b
    cdef double[::1] d = table.d
    cdef int kind = table.kind
    cdef double param = table.param
    cdef Py_ssize_t cap = b.shape[0] - 1
    if kind != K_NONE and kind != K_ATTR and kind != K_QUAD:
        raise ValueError("compiled kernels need a tabulated interaction")

    x_arr = np.array(x0, dtype=np.int64)
    y_arr = np.array(y0, dtype=np.int64)
    grid_arr = np.ascontiguousarray(t_grid, dtype=np.float64)
    cdef i64[::1] x = x_arr
    cdef i64[::1] y = y_arr
    cdef double[::1] grid = grid_arr
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t nrec = grid.shape[0]
    xs_arr = np.empty((nrec, n), dtype=np.int64)
    ys_arr = np.empty((nrec, n), dtype=np.int64)
    cdef i64[:, ::1] xs = xs_arr
    cdef i64[:, ::1] ys = ys_arr
    flat_arr = np.empty(12 * n, dtype=np.float64)
    cdef double[::1] flat = flat_arr
    cx_arr = np.zeros(cap + 1, dtype=np.int64)
    cy_arr = np.zeros(cap + 1, dtype=np.int64)
    cumcx_arr = np.empty(cap + 1, dtype=np.int64)
    cumsx_arr = np.empty(cap + 1, dtype=np.int64)
    cumcy_arr = np.empty(cap + 1, dtype=np.int64)
    cumsy_arr = np.empty(cap + 1, dtype=np.int64)
    cdef i64[::1] counts_x = cx_arr
    cdef i64[::1] counts_y = cy_arr
    cdef i64[::1] cumcx = cumcx_arr
    cdef i64[::1] cumsx = cumsx_arr
    cdef i64[::1] cumcy = cumcy_arr
    cdef i64[::1] cumsy = cumsy_arr

    cdef bitgen_t *rng = <bitgen_t *> PyCapsule_GetPointer(bit_generator.capsule, CAPSULE)
    cdef i64 budget = max_events
    cdef i64 events = 0
    cdef i64 sum_x = 0, sum_y = 0, needed = 0
    cdef int status = OK
    cdef Py_ssize_t ri = 0, i, j, site, ch
    cdef i64 vx, vy
    cdef int dxm, dym
    cdef double t = 0.0, total, acc, u1, u2, t_event
    cdef double mx, my, bx, by_, dx_, dy_, qxp, qxm, qyp, qym

    for i in range(n):
        if x[i] > cap or y[i] > cap:
            raise TableOverflow(int(max(x[i], y[i])))
        sum_x += x[i]
        counts_x[x[i]] += 1
        sum_y += y[i]
        counts_y[y[i]] += 1

    with bit_generator.lock, nogil:
        while ri < nrec:
            if kind == K_QUAD:
                prefix_sums(counts_x, cumcx, cumsx, cap)
                prefix_sums(counts_y, cumcy, cumsy, cap)
            mx = (<double> sum_x) / (<double> n)
            my = (<double> sum_y) / (<double> n)
            acc = 0.0
            for i in range(n):
                vx = x[i]
                vy = y[i]
                bx = b[vx]
                by_ = b[vy]
                dx_ = 0.0 if vx == 0 else d[vx]
                dy_ = 0.0 if vy == 0 else d[vy]
                interaction_pair(kind, param, n, vx, mx, sum_x, counts_x, cumcx, cumsx, &qxp, &qxm)
                interaction_pair(kind, param, n, vy, my, sum_y, counts_y, cumcy, cumsy, &qyp, &qym)
                flat[12 * i + 0] = dmin(bx, by_)
                flat[12 * i + 1] = pos(bx - by_)
                flat[12 * i + 2] = pos(by_ - bx)
                flat[12 * i + 3] = dmin(dx_, dy_)
                flat[12 * i + 4] = pos(dx_ - dy_)
                flat[12 * i + 5] = pos(dy_ - dx_)
                flat[12 * i + 6] = dmin(qxp, qyp)
                flat[12 * i + 7] = pos(qxp - qyp)
                flat[12 * i + 8] = pos(qyp - qxp)
                flat[12 * i + 9] = dmin(qxm, qym)
                flat[12 * i + 10] = pos(qxm - qym)
                flat[12 * i + 11] = pos(qym - qxm)
                for j in range(12):
                    acc += flat[12 * i + j]
            total = acc
            if total <= 0.0:
                while ri < nrec:
                    for i in range(n):
                        xs[ri, i] = x[i]
                        ys[ri, i] = y[i]
                    ri += 1
                break
            u1 = nd(rng)
            t_event = t + (-log1p(-u1) / total)
            while ri < nrec and grid[ri] <= t_event:
                for i in range(n):
                    xs[ri, i] = x[i]
                    ys[ri, i] = y[i]
                ri += 1
            if ri >= nrec:
                break
            t = t_event
            u2 = nd(rng)
            j = pick_channel(flat, 12 * n, u2 * total)
            site = j // 12
            ch = j % 12
            dxm = CDX[ch]
            dym = CDY[ch]
            if dxm > 0 and x[site] + 1 > cap:
                needed = x[site] + 1
                status = OVERFLOW
                break
            if dym > 0 and y[site] + 1 > cap:
                needed = y[site] + 1
                status = OVERFLOW
                break
            if dxm != 0:
                counts_x[x[site]] -= 1
                x[site] += dxm
                counts_x[x[site]] += 1
                sum_x += dxm
            if dym != 0:
                counts_y[y[site]] -= 1
                y[site] += dym
                counts_y[y[site]] += 1
                sum_y += dym
            events += 1
            if events >= budget:
                status = BUDGET
                break

    if status == OVERFLOW:
        raise TableOverflow(int(needed))
    if status == BUDGET:
        raise BudgetExceeded(f"{events} events without reaching the last record time")
    return xs_arr, ys_arr, int(events)


def run_driven(table, x0, knots_t, knots_v, t_grid, bit_generator,
               max_events=DEFAULT_BUDGET):
    """Compiled twin of fallback.run_driven (independent driven chains)."""
    cdef double[::1] b = table.b
    cdef double[::1] d = table.d
    cdef int kind = table.kind
    cdef double param = table.param
    cdef Py_ssize_t cap = b.shape[0] - 1
    if kind == K_QUAD:
        raise ValueError("no external-mean dynamics for the quadratic interaction")
    if kind != K_NONE and kind != K_ATTR:
        raise ValueError("compiled kernels need a tabulated interaction")

    x_arr = np.array(x0, dtype=np.int64)
    kt_arr = np.ascontiguousarray(knots_t, dtype=np.float64)
    kv_arr = np.ascontiguousarray(knots_v, dtype=np.float64)
    grid_arr = np.ascontiguousarray(t_grid, dtype=np.float64)
    cdef i64[::1] x = x_arr
    cdef double[::1] kt = kt_arr
    cdef double[::1] kv = kv_arr
    cdef double[::1] grid = grid_arr
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t nrec = grid.shape[0]
    cdef Py_ssize_t nseg = kt.shape[0] - 1
    snaps_arr = np.empty((nrec, n), dtype=np.int64)
    cdef i64[:, ::1] snaps = snaps_arr
    flat_arr = np.empty(2 * n, dtype=np.float64)
    cdef double[::1] flat = flat_arr
    cdef i64[::1] dummy = np.zeros(1, dtype=np.int64)

    cdef bitgen_t *rng = <bitgen_t *> PyCapsule_GetPointer(bit_generator.capsule, CAPSULE)
    cdef i64 budget = max_events
    cdef i64 events = 0, work = 0, needed = 0
    cdef int status = OK
    cdef Py_ssize_t ri = 0, i, j, site, seg = 0
    cdef i64 v
    cdef double t = 0.0, total, acc, u1, u2, target, t_cand
    cdef double m, m_lo, m_hi, seg_end = 0.0, bound = 0.0, scale = 1.0, v0, v1, qp, qm
    cdef bint need_bound = True

    for i in range(n):
        if x[i] > cap:
            raise TableOverflow(int(x[i]))

    with bit_generator.lock, nogil:
        while ri < nrec:
            while seg < nseg and t >= kt[seg + 1]:
                seg += 1
                need_bound = True
            if need_bound:
                if seg >= nseg:
                    m_lo = kv[nseg]
                    m_hi = kv[nseg]
                    seg_end = INFINITY
                else:
                    v0 = kv[seg]
                    v1 = kv[seg + 1]
                    m_lo = fmin(v0, v1)
                    m_hi = fmax(v0, v1)
                    seg_end = kt[seg + 1]
                acc = 0.0
                for i in range(n):
                    v = x[i]
                    interaction_pair(kind, param, n, v, m_hi, 0, dummy, dummy, dummy, &qp, &qm)
                    acc += b[v] + qp
                for i in range(n):
                    v = x[i]
                    interaction_pair(kind, param, n, v, m_lo, 0, dummy, dummy, dummy, &qp, &qm)
                    if v == 0:
                        acc += 0.0
                    else:
                        acc += d[v] + qm
                bound = acc * scale
                need_bound = False
            if bound <= 0.0:
                if seg >= nseg:
                    while ri < nrec:
                        for i in range(n):
                            snaps[ri, i] = x[i]
                        ri += 1
                    break
                while ri < nrec and grid[ri] <= seg_end:
                    for i in range(n):
                        snaps[ri, i] = x[i]
                    ri += 1
                t = seg_end
                seg += 1
                need_bound = True
                continue
            u1 = nd(rng)
            t_cand = t + (-log1p(-u1) / bound)
            work += 1
            if work >= budget:
                status = BUDGET
                break
            if t_cand >= seg_end:
                while ri < nrec and grid[ri] <= seg_end:
                    for i in range(n):
                        snaps[ri, i] = x[i]
                    ri += 1
                t = seg_end
                seg += 1
                need_bound = True
                continue
            while ri < nrec and grid[ri] <= t_cand:
                for i in range(n):
                    snaps[ri, i] = x[i]
                ri += 1
            if ri >= nrec:
                break
            t = t_cand
            m = mean_interp(kt, kv, seg, nseg, t)
            acc = 0.0
            for i in range(n):
                v = x[i]
                interaction_pair(kind, param, n, v, m, 0, dummy, dummy, dummy, &qp, &qm)
                flat[2 * i] = b[v] + qp
                if v == 0:
                    flat[2 * i + 1] = 0.0
                else:
                    flat[2 * i + 1] = d[v] + qm
                acc += flat[2 * i]
                acc += flat[2 * i + 1]
            total = acc
            if total > bound:
                scale = (total / bound) * 1.25 * scale
                need_bound = True
                continue
            u2 = nd(rng)
            target = u2 * bound
            if target >= total:
                continue
            j = pick_channel(flat, 2 * n, target)
            site = j >> 1
            if j & 1:
                x[site] -= 1
            else:
                if x[site] + 1 > cap:
                    needed = x[site] + 1
                    status = OVERFLOW
                    break
                x[site] += 1
            events += 1
            need_bound = True

    if status == OVERFLOW:
        raise TableOverflow(int(needed))
    if status == BUDGET:
        raise BudgetExceeded(f"{work} candidate events without reaching the last record time")
    return snaps_arr, int(events)


cdef inline double _chaos_table(double[::1] b, double[::1] d, int kind, double param,
                                Py_ssize_t n, i64[::1] x, i64[::1] c,
                                i64 sum_x,
                                double m_actual, double m_lo, double m_hi, bint is_bound,
                                double[::1] flat) noexcept nogil:
    """Fill the (n x 12) chaos channel table; returns the sequential total.

    With is_bound, companion q-terms are evaluated at both segment
    extremes and each channel takes its monotone upper end.  Only the
    no-interaction and attraction kinds reach this loop, so the q math is
    inlined."""
    cdef Py_ssize_t i, base
    cdef i64 vx, vc
    cdef double acc = 0.0, mx
    cdef double bx, bc, dx_, dc_, qxp, qxm, vxd, vcd
    cdef double qcp, qcm, qcp_max, qcp_min, qcm_max, qcm_min
    mx = (<double> sum_x) / (<double> n)
    for i in range(n):
        vx = x[i]
        vc = c[i]
        bx = b[vx]
        bc = b[vc]
        dx_ = 0.0 if vx == 0 else d[vx]
        dc_ = 0.0 if vc == 0 else d[vc]
        if kind == 0:
            qxp = 0.0
            qxm = 0.0
        else:
            vxd = <double> vx
            qxp = param * pos(mx - vxd)
            qxm = 0.0 if vx == 0 else param * pos(vxd - mx)
        base = 12 * i
        flat[base + 0] = dmin(bx, bc)
        flat[base + 1] = pos(bx - bc)
        flat[base + 2] = pos(bc - bx)
        flat[base + 3] = dmin(dx_, dc_)
        flat[base + 4] = pos(dx_ - dc_)
        flat[base + 5] = pos(dc_ - dx_)
        if kind == 0:
            flat[base + 6] = 0.0
            flat[base + 7] = 0.0
            flat[base + 8] = 0.0
            flat[base + 9] = 0.0
            flat[base + 10] = 0.0
            flat[base + 11] = 0.0
        elif is_bound:
            vcd = <double> vc
            qcp_max = param * pos(m_hi - vcd)
            qcp_min = param * pos(m_lo - vcd)
            if vc == 0:
                qcm_max = 0.0
                qcm_min = 0.0
            else:
                qcm_max = param * pos(vcd - m_lo)
                qcm_min = param * pos(vcd - m_hi)
            flat[base + 6] = dmin(qxp, qcp_max)
            flat[base + 7] = pos(qxp - qcp_min)
            flat[base + 8] = pos(qcp_max - qxp)
            flat[base + 9] = dmin(qxm, qcm_max)
            flat[base + 10] = pos(qxm - qcm_min)
            flat[base + 11] = pos(qcm_max - qxm)
        else:
            vcd = <double> vc
            qcp = param * pos(m_actual - vcd)
            qcm = 0.0 if vc == 0 else param * pos(vcd - m_actual)
            flat[base + 6] = dmin(qxp, qcp)
            flat[base + 7] = pos(qxp - qcp)
            flat[base + 8] = pos(qcp - qxp)
            flat[base + 9] = dmin(qxm, qcm)
            flat[base + 10] = pos(qxm - qcm)
            flat[base + 11] = pos(qcm - qxm)
        # one element at a time, matching the sequential cumsum order
        acc += flat[base + 0]
        acc += flat[base + 1]
        acc += flat[base + 2]
        acc += flat[base + 3]
        acc += flat[base + 4]
        acc += flat[base + 5]
        acc += flat[base + 6]
        acc += flat[base + 7]
        acc += flat[base + 8]
        acc += flat[base + 9]
        acc += flat[base + 10]
        acc += flat[base + 11]
    return acc


def run_chaos(table, x0, knots_t, knots_v, t_grid, bit_generator,
              max_events=DEFAULT_BUDGET):
    """Compiled twin of fallback.run_chaos (system + companions)."""
    cdef double[::1] b = table.b
    cdef double[::1] d = table.d
    cdef int kind = table.kind
    cdef double param = table.param
    cdef Py_ssize_t cap = b.shape[0] - 1
    if kind == K_QUAD:
        raise ValueError("no external-mean dynamics for the quadratic interaction")
    if kind != K_NONE and kind != K_ATTR:
        raise ValueError("compiled kernels need a tabulated interaction")

    x_arr = np.array(x0, dtype=np.int64)
    c_arr = np.array(x0, dtype=np.int64)
    kt_arr = np.ascontiguousarray(knots_t, dtype=np.float64)
    kv_arr = np.ascontiguousarray(knots_v, dtype=np.float64)
    grid_arr = np.ascontiguousarray(t_grid, dtype=np.float64)
    cdef i64[::1] x = x_arr
    cdef i64[::1] c = c_arr
    cdef double[::1] kt = kt_arr
    cdef double[::1] kv = kv_arr
    cdef double[::1] grid = grid_arr
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t nrec = grid.shape[0]
    cdef Py_ssize_t nseg = kt.shape[0] - 1
    xs_arr = np.empty((nrec, n), dtype=np.int64)
    cs_arr = np.empty((nrec, n), dtype=np.int64)
    cdef i64[:, ::1] xs = xs_arr
    cdef i64[:, ::1] cs = cs_arr
    flat_arr = np.empty(12 * n, dtype=np.float64)
    cdef double[::1] flat = flat_arr

    cdef bitgen_t *rng = <bitgen_t *> PyCapsule_GetPointer(bit_generator.capsule, CAPSULE)
    cdef i64 budget = max_events
    cdef i64 events = 0, work = 0, needed = 0, sum_x = 0
    cdef int status = OK
    cdef Py_ssize_t ri = 0, i, j, site, ch, seg = 0
    cdef int dxm, dym
    cdef double t = 0.0, total, u1, u2, target, t_cand
    cdef double m, m_lo, m_hi, seg_end = 0.0, bound = 0.0, scale = 1.0, v0, v1
    cdef bint need_bound = True

    for i in range(n):
        if x[i] > cap:
            raise TableOverflow(int(x[i]))
        sum_x += x[i]

    with bit_generator.lock, nogil:
        while ri < nrec:
            while seg < nseg and t >= kt[seg + 1]:
                seg += 1
                need_bound = True
            if need_bound:
                if seg >= nseg:
                    m_lo = kv[nseg]
                    m_hi = kv[nseg]
                    seg_end = INFINITY
                else:
                    v0 = kv[seg]
                    v1 = kv[seg + 1]
                    m_lo = fmin(v0, v1)
                    m_hi = fmax(v0, v1)
                    seg_end = kt[seg + 1]
                bound = _chaos_table(b, d, kind, param, n, x, c, sum_x,
                                     0.0, m_lo, m_hi, True, flat) * scale
                need_bound = False
            if bound <= 0.0:
                if seg >= nseg:
                    while ri < nrec:
                        for i in range(n):
                            xs[ri, i] = x[i]
                            cs[ri, i] = c[i]
                        ri += 1
                    break
                while ri < nrec and grid[ri] <= seg_end:
                    for i in range(n):
                        xs[ri, i] = x[i]
                        cs[ri, i] = c[i]
                    ri += 1
                t = seg_end
                seg += 1
                need_bound = True
                continue
            u1 = nd(rng)
            t_cand = t + (-log1p(-u1) / bound)
            work += 1
            if work >= budget:
                status = BUDGET
                break
            if t_cand >= seg_end:
                while ri < nrec and grid[ri] <= seg_end:
                    for i in range(n):
                        xs[ri, i] = x[i]
                        cs[ri, i] = c[i]
                    ri += 1
                t = seg_end
                seg += 1
                need_bound = True
                continue
            while ri < nrec and grid[ri] <= t_cand:
                for i in range(n):
                    xs[ri, i] = x[i]
                    cs[ri, i] = c[i]
                ri += 1
            if ri >= nrec:
                break
            t = t_cand
            m = mean_interp(kt, kv, seg, nseg, t)
            total = _chaos_table(b, d, kind, param, n, x, c, sum_x,
                                 m, 0.0, 0.0, False, flat)
            if total > bound:
                scale = (total / bound) * 1.25 * scale
                need_bound = True
                continue
            u2 = nd(rng)
            target = u2 * bound
            if target >= total:
                continue
            j = pick_channel(flat, 12 * n, target)
            site = j // 12
            ch = j % 12
            dxm = CDX[ch]
            dym = CDY[ch]
            if dxm > 0 and x[site] + 1 > cap:
                needed = x[site] + 1
                status = OVERFLOW
                break
            if dym > 0 and c[site] + 1 > cap:
                needed = c[site] + 1
                status = OVERFLOW
                break
            if dxm != 0:
                x[site] += dxm
                sum_x += dxm
            if dym != 0:
                c[site] += dym
            events += 1
            need_bound = True

    if status == OVERFLOW:
        raise TableOverflow(int(needed))
    if status == BUDGET:
        raise BudgetExceeded(f"{work} candidate events without reaching the last record time")
    return xs_arr, cs_arr, int(events)
