"""Compiled inner loop of the stochastic sub-gradient ascent.

Per iteration the potentials are updated, the softmax numerators
``e_j = exp(-lam (g_j - shift))`` and their sum are refreshed, and the
shifted nearest atom of the next stream point is located; O(n) work each.

``shift`` is kept one learning rate below the log-normaliser of the previous
softmax, which bounds every exponent by 0 (no overflow) without a min
reduction over ``g``. The exponential is a branch-free polynomial so the
update loop vectorises; it agrees with libm to ~1e-14 relative.
"""
import math

import numpy as np
from numba import njit

_LOG2E = 1.4426950408889634
_LN2_HI = 0.693145751953125
_LN2_LO = 1.4286068203094173e-06
_EXP_FLOOR = -700.0
_Z_FLOOR = 1e-250


@njit(fastmath=True, inline="always")
def _exp_parts(t):
    # exp(t) = poly(r) * 2**k with |r| <= ln2 / 2
    k = math.floor(t * _LOG2E + 0.5)
    r = (t - k * _LN2_HI) - k * _LN2_LO
    p = 1.0 / 479001600.0
    p = p * r + 1.0 / 39916800.0
    p = p * r + 1.0 / 3628800.0
    p = p * r + 1.0 / 362880.0
    p = p * r + 1.0 / 40320.0
    p = p * r + 1.0 / 5040.0
    p = p * r + 1.0 / 720.0
    p = p * r + 1.0 / 120.0
    p = p * r + 1.0 / 24.0
    p = p * r + 1.0 / 6.0
    p = p * r + 0.5
    p = p * r + 1.0
    p = p * r + 1.0
    return p, k


@njit(fastmath=True)
def _update_potentials(g, e, bits, step, shift, lam):
    n = g.shape[0]
    for j in range(n):
        gj = g[j] + step * e[j]
        g[j] = gj
        t = -lam * (gj - shift)
        p, k = _exp_parts(max(t, _EXP_FLOOR))
        e[j] = p if t > _EXP_FLOOR else 0.0
        bits[j] = (np.int64(k) + 1023) << 52
    scale = bits.view(np.float64)
    z = 0.0
    for j in range(n):
        e[j] *= scale[j]
        z += e[j]
    return z


@njit
def _exact_refresh(g, e, lam):
    gmin = g[0]
    for j in range(g.shape[0]):
        if g[j] < gmin:
            gmin = g[j]
    z = 0.0
    for j in range(g.shape[0]):
        e[j] = math.exp(-lam * (g[j] - gmin))
        z += e[j]
    return z, gmin


@njit(fastmath=True)
def _shifted_costs_1d(y, g, x, out):
    best = np.inf
    for j in range(y.shape[0]):
        d = x - y[j]
        v = d * d - g[j]
        out[j] = v
        best = v if v < best else best
    return best


@njit
def _nearest(atoms, g, point, buf):
    """Lowest index attaining min_j |point - atoms_j|^2 - g_j."""
    n, m = atoms.shape
    if m == 1:
        best = _shifted_costs_1d(atoms[:, 0], g, point[0], buf)
        for j in range(n):
            if buf[j] == best:
                return best, j
    best = np.inf
    jstar = 0
    for j in range(n):
        c = 0.0
        for k in range(m):
            d = point[k] - atoms[j, k]
            c += d * d
        v = c - g[j]
        if v < best:
            best = v
            jstar = j
    return best, jstar


@njit(cache=True, nogil=True)
def sga_loop(atoms, stream, lam, scale, g0, burn_in, keep_trace):
    n = atoms.shape[0]
    s = stream.shape[0]
    g = g0.copy()
    e = np.empty(n)
    bits = np.empty(n, np.int64)
    buf = np.empty(n)
    trace = np.empty(s if keep_trace else 0)
    log_n = math.log(n)

    z, shift = _exact_refresh(g, e, lam)
    best, jstar = _nearest(atoms, g, stream[0], buf)
    running = 0.0
    total_rate = 0.0
    for i in range(1, s + 1):
        rate = scale * math.sqrt(n / i)
        log_z = math.log(z)
        if i > burn_in or keep_trace:
            h1 = best + shift - (log_z - log_n) / lam
            if keep_trace:
                trace[i - 1] = h1
            if i > burn_in:
                running += rate * h1
                total_rate += rate

        # g_j += rate * (p_j - [j == j*]), with p = e / z
        g[jstar] -= rate
        shift = shift - log_z / lam - rate
        z = _update_potentials(g, e, bits, rate / z, shift, lam)
        if z < _Z_FLOOR:
            z, shift = _exact_refresh(g, e, lam)
        if i < s:
            best, jstar = _nearest(atoms, g, stream[i], buf)

    return running / total_rate, g, trace
