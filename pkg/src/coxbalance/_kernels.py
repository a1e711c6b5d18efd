"""Compiled inner loop of the aggregate simulator.

The kernel consumes a block of uniforms (two per event) and returns when
the block is exhausted or the horizon is reached, so the caller owns the
random stream. All accumulators are updated in place.
"""

import math

import numpy as np
from numba import njit

POLICY_CODES = {"jsq": 0, "jiq": 1, "i1f": 2, "pod": 3}

# indices into the per-batch time accumulator, after the 2b s-counts
T_TOTAL, T_EXCESS, T_NOT_SSC, T_A1, T_LEN = 0, 1, 2, 3, 4
N_TIME_EXTRA = 5
# per-batch arrival accumulator
A_COUNT, A_SUM_A1, A_SUM_AB, A_BLOCKED, A_BUSY = 0, 1, 2, 3, 4
N_ARRIVAL = 5


@njit(cache=True)
def _tail_prob(tail, N, d, with_repl):
    if with_repl:
        return (tail / N) ** d
    if tail < d:
        return 0.0
    out = 1.0
    for i in range(d):
        out *= (tail - i) / (N - i)
    return out


@njit(cache=True)
def level_weights_kernel(levels, N, code, d, with_repl, out):
    """Probability of joining a server with exactly j jobs; writes into ``out``."""
    nb = levels.shape[0]
    for j in range(nb):
        out[j] = 0.0
    if code == 0:
        for j in range(nb):
            if levels[j] > 0:
                out[j] = 1.0
                return
    elif code == 1 or code == 2:
        if levels[0] > 0:
            out[0] = 1.0
            return
        if code == 2 and nb > 1 and levels[1] > 0:
            out[1] = 1.0
            return
        for j in range(nb):
            out[j] = levels[j] / N
    else:
        tail = 0
        prev = 0.0
        for j in range(nb - 1, -1, -1):
            tail += levels[j]
            cur = _tail_prob(tail, N, d, with_repl)
            out[j] = cur - prev
            prev = cur


@njit(cache=True)
def _levels(counts, b, levels):
    levels[0] = counts[0]
    for j in range(1, b + 1):
        levels[j] = counts[2 * j - 1] + counts[2 * j]


@njit(cache=True)
def _state_stats(counts, b, N, ssc, use_ssc):
    """(total jobs / N, excess over eta, outside-collapse indicator)."""
    jobs = 0
    for j in range(1, b + 1):
        jobs += j * (counts[2 * j - 1] + counts[2 * j])
    total = jobs / N
    if not use_ssc:
        return total, 0.0, 0.0
    lam, floor_shift, L11, L12, eta, tol = ssc[0], ssc[1], ssc[2], ssc[3], ssc[4], ssc[5]
    s11 = 0
    s12 = 0
    for j in range(1, b + 1):
        s11 += counts[2 * j - 1]
        s12 += counts[2 * j]
    f11 = s11 / N
    f12 = s12 / N
    in1 = (f11 + f12 >= lam + floor_shift - tol) and (f11 >= L11 - tol) and (f12 >= L12 - tol)
    in2 = total <= eta + tol
    excess = total - eta if total > eta else 0.0
    return total, excess, 0.0 if (in1 or in2) else 1.0


@njit(cache=True)
def _accumulate_time(t0, t1, edges, kb, counts, b, N, a1, ssc, use_ssc, tacc):
    """Add the constant-state interval [t0, t1) to the time accumulators; returns batch pointer."""
    nbatch = edges.shape[0] - 1
    if t1 <= edges[0]:
        return kb
    start = t0 if t0 > edges[0] else edges[0]
    end = t1 if t1 < edges[nbatch] else edges[nbatch]
    if end <= start:
        return kb
    total, excess, outside = _state_stats(counts, b, N, ssc, use_ssc)
    while start < end:
        while kb < nbatch - 1 and start >= edges[kb + 1]:
            kb += 1
        stop = end if end < edges[kb + 1] else edges[kb + 1]
        w = stop - start
        # suffix sums of phase counts give N * s_{i,m}
        acc1 = 0.0
        acc2 = 0.0
        for i in range(b, 0, -1):
            acc1 += counts[2 * i - 1]
            acc2 += counts[2 * i]
            tacc[kb, 2 * (i - 1)] += w * acc1 / N
            tacc[kb, 2 * (i - 1) + 1] += w * acc2 / N
        base = 2 * b
        tacc[kb, base + T_TOTAL] += w * total
        tacc[kb, base + T_EXCESS] += w * excess
        tacc[kb, base + T_NOT_SSC] += w * outside
        tacc[kb, base + T_A1] += w * a1
        tacc[kb, base + T_LEN] += w
        start = stop
    return kb


@njit(cache=True)
def simulate_block(
    counts, t, horizon, edges, kb, uniforms, lam, mu1, mu2, p, code, d, with_repl,
    ssc, use_ssc, tacc, aacc, trace_t, trace_v, trace_state, events,
):
    """Advance the chain with one block of uniforms.

    ``trace_state`` holds (next trace time, interval, next slot). Returns
    (t, kb, events, done).
    """
    nclass = counts.shape[0]
    b = (nclass - 1) // 2
    N = 0
    for k in range(nclass):
        N += counts[k]
    lam_n = lam * N
    d1 = (1.0 - p) * mu1
    up = p * mu1
    levels = np.empty(b + 1, dtype=np.int64)
    w = np.empty(b + 1)
    nbatch = edges.shape[0] - 1
    pos = 0
    nu = uniforms.shape[0]
    while pos + 1 < nu:
        _levels(counts, b, levels)
        level_weights_kernel(levels, N, code, d, with_repl, w)
        a1 = 1.0 - w[0]
        ab = w[b]
        busy1 = 0
        busy2 = 0
        for i in range(1, b + 1):
            busy1 += counts[2 * i - 1]
            busy2 += counts[2 * i]
        rate = lam_n + mu1 * busy1 + mu2 * busy2
        if rate <= 0.0:
            kb = _accumulate_time(t, horizon, edges, kb, counts, b, N, a1, ssc, use_ssc, tacc)
            while trace_state[2] < trace_t.shape[0] and trace_state[0] <= horizon:
                k = int(trace_state[2])
                trace_t[k] = trace_state[0]
                trace_v[k] = _state_stats(counts, b, N, ssc, False)[0]
                trace_state[0] += trace_state[1]
                trace_state[2] += 1
            return horizon, kb, events, True
        dwell = -math.log(1.0 - uniforms[pos]) / rate
        x = uniforms[pos + 1] * rate
        pos += 2
        t_next = t + dwell
        while trace_state[2] < trace_t.shape[0] and trace_state[0] < t_next and trace_state[0] <= horizon:
            k = int(trace_state[2])
            trace_t[k] = trace_state[0]
            trace_v[k] = _state_stats(counts, b, N, ssc, False)[0]
            trace_state[0] += trace_state[1]
            trace_state[2] += 1
        kb = _accumulate_time(t, t_next, edges, kb, counts, b, N, a1, ssc, use_ssc, tacc)
        if t_next >= horizon:
            return horizon, kb, events, True
        t = t_next
        events += 1
        if x < lam_n:
            v = x / lam_n
            j = 0
            cum = w[0]
            while j < b and v >= cum:
                j += 1
                cum += w[j]
            # guard against rounding past the last positive weight
            while levels[j] == 0 or w[j] <= 0.0:
                j -= 1
            if t >= edges[0]:
                kk = kb
                while kk < nbatch - 1 and t >= edges[kk + 1]:
                    kk += 1
                aacc[kk, A_COUNT] += 1.0
                aacc[kk, A_SUM_A1] += a1
                aacc[kk, A_SUM_AB] += ab
                if j > 0:
                    aacc[kk, A_BUSY] += 1.0
                if j == b:
                    aacc[kk, A_BLOCKED] += 1.0
            if j == 0:
                counts[0] -= 1
                counts[1] += 1
            elif j < b:
                # phase split inside the level is proportional to counts
                lo = w[j] - (cum - v)
                first = lo / w[j] * levels[j] < counts[2 * j - 1]
                if first and counts[2 * j - 1] == 0:
                    first = False
                elif not first and counts[2 * j] == 0:
                    first = True
                if first:
                    counts[2 * j - 1] -= 1
                    counts[2 * j + 1] += 1
                else:
                    counts[2 * j] -= 1
                    counts[2 * j + 2] += 1
            continue
        x -= lam_n
        # walk the service events; rounding can leave x at the top of the range,
        # in which case the last enabled event fires
        kind = -1
        at = 0
        for i in range(1, b + 1):
            n1 = counts[2 * i - 1]
            n2 = counts[2 * i]
            if n1 > 0 and d1 > 0:
                kind, at = 0, i
                if x < d1 * n1:
                    break
                x -= d1 * n1
            if n1 > 0 and up > 0:
                kind, at = 1, i
                if x < up * n1:
                    break
                x -= up * n1
            if n2 > 0:
                kind, at = 2, i
                if x < mu2 * n2:
                    break
                x -= mu2 * n2
        dest = 0 if at == 1 else 2 * at - 3
        if kind == 0:
            counts[2 * at - 1] -= 1
            counts[dest] += 1
        elif kind == 1:
            counts[2 * at - 1] -= 1
            counts[2 * at] += 1
        else:
            counts[2 * at] -= 1
            counts[dest] += 1
    return t, kb, events, False
