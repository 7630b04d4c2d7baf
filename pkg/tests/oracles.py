"""Brute-force reference computations used by the tests.

Nothing here touches the sufficient statistics or the Q recursions: every
quantity is recomputed from individual histories or by walking every
possible hidden state path.
"""

import itertools
from math import lgamma, log

import numpy as np
import mpmath

from closedpop.multistate import MsParams


def random_params(rng, T, R, behaviour=False, N=None, time_psi=True):
    """Arbitrary valid parameters, capture probabilities away from 0 and 1."""
    p = rng.uniform(0.05, 0.95, size=(T, R))
    if behaviour:
        c = rng.uniform(0.05, 0.95, size=(T, R))
    else:
        c = p.copy()
    if time_psi:
        psi = rng.dirichlet(np.ones(R), size=(T - 1, R))
    else:
        psi = np.broadcast_to(rng.dirichlet(np.ones(R), size=R), (T - 1, R, R)).copy()
    alpha = rng.dirichlet(np.ones(R))
    return MsParams(p=p, c=c, psi=psi, alpha=alpha, N=N)


def random_histories(rng, n, T, R, density=0.4):
    rows = []
    while len(rows) < n:
        seen = rng.random(T) < density
        if not seen.any():
            continue
        rows.append(np.where(seen, rng.integers(1, R + 1, size=T), 0))
    return np.array(rows)


def _path_weight(params, t_from, t_to, r, s, miss):
    """Sum over hidden paths r at t_from -> s at t_to, unseen strictly between."""
    R = params.R
    total = 0.0
    inner = t_to - t_from - 1
    for mid in itertools.product(range(R), repeat=inner):
        path = (r, *mid, s)
        w = 1.0
        for k in range(len(path) - 1):
            t = t_from + k
            w *= params.psi[t, path[k], path[k + 1]]
            if k + 1 < len(path) - 1:
                w *= miss[t + 1, path[k + 1]]
        total += w
    return total


def enum_zeta(params):
    T, R = params.T, params.R
    out = np.zeros((T, R))
    for t in range(T):
        for r in range(R):
            tot = 0.0
            for path in itertools.product(range(R), repeat=t + 1):
                if path[-1] != r:
                    continue
                w = params.alpha[path[0]]
                for k in range(t):
                    w *= (1 - params.p[k, path[k]]) * params.psi[k, path[k], path[k + 1]]
                tot += w * params.p[t, r]
            out[t, r] = tot
    return out


def enum_O(params):
    T, R = params.T, params.R
    out = np.zeros((T, T, R, R))
    miss = 1 - params.c
    for t1 in range(T - 1):
        for t2 in range(t1 + 1, T):
            for r in range(R):
                for s in range(R):
                    out[t1, t2, r, s] = _path_weight(params, t1, t2, r, s, miss) * params.c[t2, s]
    return out


def enum_chi(params):
    T, R = params.T, params.R
    out = np.ones((T, R))
    for t in range(T - 1):
        for r in range(R):
            tot = 0.0
            for path in itertools.product(range(R), repeat=T - 1 - t):
                full = (r, *path)
                w = 1.0
                for k in range(len(full) - 1):
                    w *= params.psi[t + k, full[k], full[k + 1]] * (1 - params.c[t + k + 1, full[k + 1]])
                tot += w
            out[t, r] = tot
    return out


def enum_rho(params):
    T, R = params.T, params.R
    tot = 0.0
    for path in itertools.product(range(R), repeat=T):
        w = params.alpha[path[0]] * (1 - params.p[0, path[0]])
        for k in range(1, T):
            w *= params.psi[k - 1, path[k - 1], path[k]] * (1 - params.p[k, path[k]])
        tot += w
    return tot


def forward_history_prob(history, params):
    """HMM forward pass over one encounter history."""
    T, R = params.T, params.R
    a = params.alpha.copy()
    marked = False
    for t in range(T):
        cap = params.c[t] if marked else params.p[t]
        x = history[t]
        if x == 0:
            a = a * (1 - cap)
        else:
            keep = np.zeros(R)
            keep[x - 1] = a[x - 1] * cap[x - 1]
            a = keep
            marked = True
        if t < T - 1:
            a = a @ params.psi[t]
    return a.sum()


def forward_loglik(histories, params, N):
    n = len(histories)
    rho = forward_history_prob(np.zeros(params.T, dtype=int), params)
    out = lgamma(N + 1) - lgamma(N - n + 1) + (N - n) * log(rho)
    for h in histories:
        out += log(forward_history_prob(h, params))
    return out


def bernoulli_history_loglik(histories, p_first, p_after):
    """Per-history product with separate first-capture/recapture vectors."""
    out = 0.0
    for h in histories:
        marked = False
        for t, x in enumerate(h):
            pr = p_after[t] if marked else p_first[t]
            out += log(pr) if x else log(1 - pr)
            marked = marked or bool(x)
    return out


def n_term(N, n, rho):
    return lgamma(N + 1) - lgamma(N - n + 1) + (N - n) * log(rho)


def mixture_loglik(histories, T, N, weights, comps):
    """Finite mixture via per-history sums over components."""
    n = len(histories)
    out = 0.0
    for h in histories:
        j = int((np.asarray(h) > 0).sum())
        out += log(sum(w * p**j * (1 - p) ** (T - j) for w, p in zip(weights, comps)))
    rho = sum(w * (1 - p) ** T for w, p in zip(weights, comps))
    return out + n_term(N, n, rho)


def beta_quadrature(j, T, a, b):
    """Integral of p^j (1-p)^(T-j) against the Beta(a, b) density.

    Both the numerator and the normalising constant are integrated
    numerically (tanh-sinh, 30 digits), so no beta function is involved.
    """
    with mpmath.workdps(30):
        num = mpmath.quad(lambda x: x ** (a + j - 1) * (1 - x) ** (b + T - j - 1), [0, 0.5, 1])
        den = mpmath.quad(lambda x: x ** (a - 1) * (1 - x) ** (b - 1), [0, 0.5, 1])
        return float(num / den)
