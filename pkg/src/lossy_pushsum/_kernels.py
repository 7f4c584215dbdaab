"""Compiled inner loops shared by the value and coefficient runs.

Every kernel consumes a block ``u`` of shape (k, 2) of uniforms from the
trial's event stream: ``u[s, 0]`` picks the ordered pair, ``u[s, 1] < p``
marks the transmission as lost.  Kernels mutate their state arrays in place
and return the number of events consumed when the stopping rule fired,
-1 if the whole block was consumed without stopping, or DEGENERATE if a
weight underflowed to zero.
"""

import math

import numba
import numpy as np

PUSHSUM = 0
CONSENSUS = 1

RENORM_PERIOD = 512
# rescale early once the sender drops below this (extreme alpha and p)
TINY = 2.0**-256
DEGENERATE = -2


@numba.njit(cache=True, inline="always")
def _pair(u0, n):
    idx = int(u0 * (n * (n - 1)))
    if idx >= n * (n - 1):
        idx = n * (n - 1) - 1
    i = idx // (n - 1)
    j = idx % (n - 1)
    if j >= i:
        j += 1
    return i, j


@numba.njit(cache=True)
def decode(u, n, p):
    k = u.shape[0]
    senders = np.empty(k, np.int64)
    receivers = np.empty(k, np.int64)
    delivered = np.empty(k, np.bool_)
    for s in range(k):
        i, j = _pair(u[s, 0], n)
        senders[s] = i
        receivers[s] = j
        delivered[s] = not (u[s, 1] < p)
    return senders, receivers, delivered


@numba.njit(cache=True, inline="always")
def _pow2_scale(m):
    # power of two close to 1/m: scaling by it is exact in floating point
    mant, ex = math.frexp(m)
    return math.ldexp(1.0, 1 - ex)


@numba.njit(cache=True)
def value_spread(x, w, mode):
    lo = math.inf
    hi = -math.inf
    for a in range(x.shape[0]):
        r = x[a] / w[a] if mode == PUSHSUM else x[a]
        if r < lo:
            lo = r
        if r > hi:
            hi = r
    return hi - lo


@numba.njit(cache=True)
def value_block(x, w, u, p, alpha, tol, mode, t0, trace):
    """Advance a value run over one block.

    ``trace`` is either an empty array or has shape (len(u), 3) and then
    receives (max ratio, min ratio, min weight) after every step.
    """
    n = x.shape[0]
    record = trace.shape[0] > 0
    # multiply rather than subtract the share: x - alpha*x cancels badly for alpha near 1
    keep = 1.0 - alpha
    for s in range(u.shape[0]):
        i, j = _pair(u[s, 0], n)
        ok = not (u[s, 1] < p)
        if mode == PUSHSUM:
            sx = alpha * x[i]
            sw = alpha * w[i]
            x[i] *= keep
            w[i] *= keep
            if ok:
                x[j] += sx
                w[j] += sw
            if (t0 + s + 1) % RENORM_PERIOD == 0 or w[i] < TINY:
                m = 0.0
                for a in range(n):
                    if w[a] > m:
                        m = w[a]
                c = _pow2_scale(m)
                for a in range(n):
                    x[a] *= c
                    w[a] *= c
        elif ok:
            x[j] = keep * x[j] + alpha * x[i]
        if record:
            lo = math.inf
            hi = -math.inf
            wmin = math.inf
            for a in range(n):
                r = x[a] / w[a] if mode == PUSHSUM else x[a]
                lo = min(lo, r)
                hi = max(hi, r)
                wmin = min(wmin, w[a])
            trace[s, 0] = hi
            trace[s, 1] = lo
            trace[s, 2] = wmin
        if mode == PUSHSUM and not w[i] > 0.0:
            return DEGENERATE
        if ok and value_spread(x, w, mode) <= tol:
            return s + 1
    return -1


@numba.njit(cache=True)
def row_disagreement(z, mode):
    n = z.shape[0]
    worst = 0.0
    for c in range(n):
        lo = math.inf
        hi = -math.inf
        for r in range(n):
            if mode == PUSHSUM:
                norm = 0.0
                for cc in range(n):
                    norm += z[r, cc]
                if not norm > 0.0:
                    return -1.0
                v = z[r, c] / norm
            else:
                v = z[r, c]
            lo = min(lo, v)
            hi = max(hi, v)
        worst = max(worst, hi - lo)
    return worst


@numba.njit(cache=True)
def coefficient_block(z, u, p, alpha, tol, eps, mode, t0, eps_step):
    """Advance a coefficient run (rows ``z_i``) over one block.

    ``eps_step[0]`` is set to the first global step count at which the
    row disagreement is <= ``eps`` (left alone if already set, i.e. >= 0).
    """
    n = z.shape[0]
    keep = 1.0 - alpha
    for s in range(u.shape[0]):
        i, j = _pair(u[s, 0], n)
        ok = not (u[s, 1] < p)
        sender_norm = 1.0
        if mode == PUSHSUM:
            for c in range(n):
                sh = alpha * z[i, c]
                z[i, c] *= keep
                if ok:
                    z[j, c] += sh
            sender_norm = 0.0
            for c in range(n):
                sender_norm += z[i, c]
            if (t0 + s + 1) % RENORM_PERIOD == 0 or sender_norm < TINY:
                m = 0.0
                for r in range(n):
                    norm = 0.0
                    for c in range(n):
                        norm += z[r, c]
                    m = max(m, norm)
                z *= _pow2_scale(m)
        elif ok:
            for c in range(n):
                z[j, c] = keep * z[j, c] + alpha * z[i, c]
        if mode == PUSHSUM and not sender_norm > 0.0:
            return DEGENERATE
        if ok:
            d = row_disagreement(z, mode)
            if d < 0.0:
                return DEGENERATE
            if eps_step[0] < 0 and d <= eps:
                eps_step[0] = t0 + s + 1
            if d <= tol:
                return s + 1
    return -1
