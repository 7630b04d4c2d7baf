"""Compiled likelihood kernels used inside the optimiser loop.

These compute the same quantities as the array code in ``multistate`` but
without per-call numpy overhead; the tests hold the two to agreement.
"""

import math

import numpy as np
from numba import njit

LOG_FLOOR = 1e-300


@njit(cache=True)
def ms_parts(p, c, psi, alpha, zi, zc, vi, vc, pt1, pt2, pr, ps, pc):
    """Return (summed log-probability of observed histories, rho)."""
    T, R = p.shape

    # unmarked: forward sweep of the "not yet caught" state distribution
    zeta = np.empty((T, R))
    u = np.empty(R)
    for r in range(R):
        zeta[0, r] = p[0, r] * alpha[r]
        u[r] = alpha[r] * (1.0 - p[0, r])
    nxt = np.empty(R)
    for t in range(1, T):
        for s in range(R):
            acc = 0.0
            for r in range(R):
                acc += u[r] * psi[t - 1, r, s]
            nxt[s] = acc
        for s in range(R):
            zeta[t, s] = p[t, s] * nxt[s]
            u[s] = nxt[s] * (1.0 - p[t, s])
    rho = 0.0
    for r in range(R):
        rho += u[r]

    # marked: Q[t1, t2] by backward recursion in t1
    Q = np.zeros((T, T, R, R))
    for t1 in range(T - 2, -1, -1):
        for r in range(R):
            for s in range(R):
                Q[t1, t1 + 1, r, s] = psi[t1, r, s]
        for t2 in range(t1 + 2, T):
            for r in range(R):
                for s in range(R):
                    acc = 0.0
                    for m in range(R):
                        acc += psi[t1, r, m] * (1.0 - c[t1 + 1, m]) * Q[t1 + 1, t2, m, s]
                    Q[t1, t2, r, s] = acc

    total = 0.0
    for k in range(zi.size):
        t = zi[k] // R
        r = zi[k] % R
        val = zeta[t, r]
        if not val >= LOG_FLOOR:
            return -np.inf, rho
        total += zc[k] * math.log(val)
    for k in range(vi.size):
        t = vi[k] // R
        r = vi[k] % R
        val = 0.0
        for m in range(R):
            val += Q[t, T - 1, r, m] * (1.0 - c[T - 1, m])
        if not val >= LOG_FLOOR:
            return -np.inf, rho
        total += vc[k] * math.log(val)
    for k in range(pc.size):
        val = Q[pt1[k], pt2[k], pr[k], ps[k]] * c[pt2[k], ps[k]]
        if not val >= LOG_FLOOR:
            return -np.inf, rho
        total += pc[k] * math.log(val)
    return total, rho


@njit(cache=True)
def _log_betafn(a, b):
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


@njit(cache=True)
def _schnabel_sum(logm, f):
    total = 0.0
    for j in range(1, logm.size):
        if f[j - 1] > 0:
            if logm[j] == -np.inf:
                return -np.inf
            total += f[j - 1] * logm[j]
    return total


@njit(cache=True)
def _log_binomial_history(j, T, p):
    out = 0.0
    if j > 0:
        out += j * math.log(p) if p > 0 else -np.inf
    if T - j > 0:
        out += (T - j) * math.log1p(-p) if p < 1 else -np.inf
    return out


@njit(cache=True)
def finite_mixture_parts(weights, comps, f):
    """Finite binomial mixture on the Schnabel census ``f`` (f[j-1] caught j times)."""
    T = f.size
    logm = np.empty(T + 1)
    for j in range(T + 1):
        top = -np.inf
        terms = np.empty(weights.size)
        for g in range(weights.size):
            if weights[g] > 0:
                terms[g] = math.log(weights[g]) + _log_binomial_history(j, T, comps[g])
            else:
                terms[g] = -np.inf
            top = max(top, terms[g])
        if top == -np.inf:
            logm[j] = -np.inf
        else:
            acc = 0.0
            for g in range(weights.size):
                acc += math.exp(terms[g] - top)
            logm[j] = top + math.log(acc)
    return _schnabel_sum(logm, f), math.exp(logm[0])


@njit(cache=True)
def pointbeta_parts(w, p0, a, b, f):
    """Point mass at ``p0`` (weight ``w``) plus Beta(a, b); ``w = 0`` is pure beta."""
    T = f.size
    logm = np.empty(T + 1)
    base = _log_betafn(a, b)
    for j in range(T + 1):
        spread = _log_betafn(a + j, b + T - j) - base
        if w <= 0:
            logm[j] = spread
            continue
        point = math.log(w) + _log_binomial_history(j, T, p0)
        if w >= 1:
            logm[j] = point
            continue
        spread += math.log1p(-w)
        top = max(point, spread)
        logm[j] = top + math.log(math.exp(point - top) + math.exp(spread - top))
    return _schnabel_sum(logm, f), math.exp(logm[0])
