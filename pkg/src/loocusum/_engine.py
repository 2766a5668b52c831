"""Compiled inner loops for bulk detection runs.

Each ``*_chunk`` function advances one detector through a block of
observations, writing the statistic path into ``trace`` and returning the
0-based index within the block where the threshold was first reached (or -1).
Detector state lives in caller-owned numpy arrays so a run can span many
chunks without recomputing history.

The leave-one-out runners keep kernel evaluations at O(window^2) per step:

* per-time bandwidth: one shared kernel matrix over the ring of live
  samples; row suffix sums give every candidate's leave-one-out totals.
* per-segment bandwidth: one sliding kernel matrix per segment length
  (bandwidth depends only on that length, so entries stay valid as the
  window slides and only the new sample's pairs are evaluated).

``loo_statistic_brute`` recomputes a single time step from scratch and is
the reference the optimized runners are tested against.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

GAUSS = 0
EPAN = 1

_LOG_2PI = math.log(2.0 * math.pi)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

RULE_ADAPTIVE = 0
RULE_FIXED = 1

SCOPE_SEGMENT = 0
SCOPE_TIME = 1


@njit(cache=True, nogil=True, inline="always")
def _kernel_value(u: float, code: int) -> float:
    if code == GAUSS:
        return _INV_SQRT_2PI * math.exp(-0.5 * u * u)
    uu = u * u
    if uu < 1.0:
        return 0.75 * (1.0 - uu)
    return 0.0


@njit(cache=True, nogil=True, inline="always")
def _kernel_diag(code: int) -> float:
    if code == GAUSS:
        return _INV_SQRT_2PI
    return 0.75


@njit(cache=True, nogil=True, inline="always")
def _log_density(x: float, mean: float, var: float) -> float:
    return -0.5 * (_LOG_2PI + math.log(var)) - (x - mean) ** 2 / (2.0 * var)


@njit(cache=True, nogil=True, inline="always")
def _clamped_log_density(x: float, mean: float, var: float, lo: float, hi: float) -> float:
    d = math.exp(_log_density(x, mean, var))
    if d < lo:
        d = lo
    elif d > hi:
        d = hi
    return math.log(d)


@njit(cache=True, nogil=True)
def cusum_chunk(
    xs: np.ndarray,
    state: np.ndarray,
    threshold: float,
    mu0: float,
    var0: float,
    mu1: float,
    var1: float,
    trace: np.ndarray,
) -> int:
    w = state[0]
    for t in range(xs.shape[0]):
        x = xs[t]
        z = _log_density(x, mu1, var1) - _log_density(x, mu0, var0)
        w = w + z
        if w < 0.0:
            w = 0.0
        trace[t] = w
        if w >= threshold:
            state[0] = w
            return t
    state[0] = w
    return -1


@njit(cache=True, nogil=True)
def glr_chunk(
    xs: np.ndarray,
    ring: np.ndarray,
    meta: np.ndarray,
    threshold: float,
    mu0: float,
    var0: float,
    trace: np.ndarray,
) -> int:
    m = ring.shape[0]
    count = meta[0]
    pos = meta[1]
    for t in range(xs.shape[0]):
        ring[pos] = xs[t] - mu0
        pos += 1
        if pos == m:
            pos = 0
        count += 1
        length = m if count > m else count
        best = 0.0
        s = 0.0
        idx = pos
        for d in range(length):
            idx -= 1
            if idx < 0:
                idx = m - 1
            s += ring[idx]
            if s > 0.0:
                v = s * s / (2.0 * var0 * (d + 1))
                if v > best:
                    best = v
        trace[t] = best
        if best >= threshold:
            meta[0] = count
            meta[1] = pos
            return t
    meta[0] = count
    meta[1] = pos
    return -1


@njit(cache=True, nogil=True)
def loo_time_chunk(
    xs: np.ndarray,
    ring: np.ndarray,
    lpc0: np.ndarray,
    kmat: np.ndarray,
    suffix: np.ndarray,
    lpc_lin: np.ndarray,
    n_start: int,
    window: int,
    threshold: float,
    mu0: float,
    var0: float,
    clamp_lo: float,
    clamp_hi: float,
    kcode: int,
    rule: int,
    fixed_h: float,
    trace: np.ndarray,
) -> int:
    m = window
    cap = m + 1
    kd = _kernel_diag(kcode)
    for t in range(xs.shape[0]):
        n = n_start + t + 1
        x = xs[t]
        pn = n % cap
        ring[pn] = x
        lpc0[pn] = _clamped_log_density(x, mu0, var0, clamp_lo, clamp_hi)
        kmat[pn * cap + pn] = kd
        if rule == RULE_FIXED:
            h = fixed_h
        elif n >= 2:
            count = n if n < m else m
            h = (count - 1) ** -0.2
        else:
            h = 1.0  # unused before the first statistic exists
        if rule == RULE_ADAPTIVE and 2 <= n <= m:
            # the shared bandwidth still changes with n: refresh all pairs.
            # During warm-up index == ring position (i <= m < cap).
            for i in range(1, n + 1):
                kmat[i * cap + i] = kd
                xi = ring[i]
                for j in range(i + 1, n + 1):
                    v = _kernel_value((xi - ring[j]) / h, kcode)
                    kmat[i * cap + j] = v
                    kmat[j * cap + i] = v
        elif n >= 2:
            # bandwidth is settled: only the new sample's pairs are missing
            dmax = m if n - 1 > m else n - 1
            pj = pn
            for _ in range(dmax):
                pj -= 1
                if pj < 0:
                    pj = cap - 1
                v = _kernel_value((x - ring[pj]) / h, kcode)
                kmat[pn * cap + pj] = v
                kmat[pj * cap + pn] = v
        if n < 2:
            trace[t] = -math.inf
            continue
        kmin = n - m if n - m > 1 else 1
        width = n - kmin + 1
        pi = kmin % cap
        for r in range(width):
            lpc_lin[r] = lpc0[pi]
            base = pi * cap
            row = r * width
            acc = 0.0
            pj = (n + 1) % cap
            for c in range(width - 1, -1, -1):
                pj -= 1
                if pj < 0:
                    pj = cap - 1
                acc += kmat[base + pj]
                suffix[row + c] = acc
            pi += 1
            if pi == cap:
                pi = 0
        best = -math.inf
        for k in range(kmin, n):
            inv = 1.0 / ((n - k) * h)
            s = 0.0
            for r in range(k - kmin, width):
                q = (suffix[r * width + (k - kmin)] - kd) * inv
                if q < clamp_lo:
                    q = clamp_lo
                elif q > clamp_hi:
                    q = clamp_hi
                s += math.log(q) - lpc_lin[r]
            if s > best:
                best = s
        trace[t] = best
        if best >= threshold:
            return t
    return -1


@njit(cache=True, nogil=True)
def loo_segment_chunk(
    xs: np.ndarray,
    ring: np.ndarray,
    lpc0: np.ndarray,
    rowsums: np.ndarray,
    offsets: np.ndarray,
    n_start: int,
    window: int,
    threshold: float,
    mu0: float,
    var0: float,
    clamp_lo: float,
    clamp_hi: float,
    kcode: int,
    trace: np.ndarray,
) -> int:
    # Per-segment bandwidth: the segment for candidate k has length
    # (n - k + 1), so its bandwidth depends only on that length. For each
    # length we keep the leave-one-out kernel row sums of the current
    # segment and update them incrementally as it slides: the oldest sample
    # drops out, the newest joins. The sample ring is one slot longer than
    # the window so the just-dropped sample is still readable.
    m = window
    cap = m + 2
    for t in range(xs.shape[0]):
        n = n_start + t + 1
        x = xs[t]
        pn_g = n % cap
        ring[pn_g] = x
        lpc0[pn_g] = _clamped_log_density(x, mu0, var0, clamp_lo, clamp_hi)
        for ell in range(1, m + 1):
            w1 = ell + 1
            h = ell**-0.2
            base = offsets[ell]
            lo = n - ell
            s_new = 0.0
            if lo >= 2:
                # sample lo-1 leaves this segment length, sample n joins
                x_old = ring[(lo - 1) % cap]
                p = lo % w1
                q = lo % cap
                for _ in range(ell):
                    xi = ring[q]
                    k_new = _kernel_value((xi - x) / h, kcode)
                    k_old = _kernel_value((xi - x_old) / h, kcode)
                    rowsums[base + p] += k_new - k_old
                    s_new += k_new
                    p += 1
                    if p == w1:
                        p = 0
                    q += 1
                    if q == cap:
                        q = 0
            else:
                # segment still growing from the first sample
                p = 1 % w1
                q = 1 % cap
                for _ in range(n - 1):
                    k_new = _kernel_value((ring[q] - x) / h, kcode)
                    rowsums[base + p] += k_new
                    s_new += k_new
                    p += 1
                    if p == w1:
                        p = 0
                    q += 1
                    if q == cap:
                        q = 0
            rowsums[base + n % w1] = s_new
        if n < 2:
            trace[t] = -math.inf
            continue
        best = -math.inf
        lmax = m if n - 1 > m else n - 1
        for ell in range(1, lmax + 1):
            w1 = ell + 1
            h = ell**-0.2
            inv = 1.0 / (ell * h)
            base = offsets[ell]
            k = n - ell
            s = 0.0
            p = k % w1
            q = k % cap
            for _ in range(w1):
                v = rowsums[base + p] * inv
                if v < clamp_lo:
                    v = clamp_lo
                elif v > clamp_hi:
                    v = clamp_hi
                s += math.log(v) - lpc0[q]
                p += 1
                if p == w1:
                    p = 0
                q += 1
                if q == cap:
                    q = 0
            if s > best:
                best = s
        trace[t] = best
        if best >= threshold:
            return t
    return -1


@njit(cache=True, nogil=True)
def loo_statistic_brute(
    window_samples: np.ndarray,
    n: int,
    window: int,
    scope: int,
    rule: int,
    fixed_h: float,
    mu0: float,
    var0: float,
    clamp_lo: float,
    clamp_hi: float,
    kcode: int,
) -> float:
    """From-scratch statistic at time ``n`` given the live window contents."""
    if n < 2:
        return -math.inf
    width = window_samples.shape[0]
    first = n - width + 1
    lpc = np.empty(width)
    for a in range(width):
        lpc[a] = _clamped_log_density(window_samples[a], mu0, var0, clamp_lo, clamp_hi)
    kmin = n - window if n - window > 1 else 1
    best = -math.inf
    for k in range(kmin, n):
        off = k - first
        seg_len = n - k + 1
        if rule == RULE_FIXED:
            h = fixed_h
        elif scope == SCOPE_TIME:
            count = n if n < window else window
            h = (count - 1) ** -0.2
        else:
            h = (seg_len - 1) ** -0.2
        inv = 1.0 / ((seg_len - 1) * h)
        s = 0.0
        for a in range(off, width):
            total = 0.0
            for b in range(off, width):
                if b != a:
                    total += _kernel_value((window_samples[a] - window_samples[b]) / h, kcode)
            q = total * inv
            if q < clamp_lo:
                q = clamp_lo
            elif q > clamp_hi:
                q = clamp_hi
            s += math.log(q) - lpc[a]
        if s > best:
            best = s
    return best


def segment_rowsum_offsets(window: int) -> np.ndarray:
    """Flat-array offsets of the per-segment-length row-sum rings."""
    offsets = np.zeros(window + 1, dtype=np.int64)
    total = 0
    for ell in range(1, window + 1):
        offsets[ell] = total
        total += ell + 1
    return offsets


def segment_rowsum_size(window: int) -> int:
    return int(sum(ell + 1 for ell in range(1, window + 1)))
