"""Single-state closed-population likelihoods.

All models use the per-history convention: the likelihood is the product
of the probabilities of the individual observed histories, so there is no
binomial coefficient on the Schnabel-census cells.  This keeps every model
on the same footing as the multi-state likelihood for AIC comparisons.

Each model is split into ``*_parts`` returning the summed log-probability
of the observed histories and the probability of never being caught;
the full likelihood adds :func:`log_population_term`.
"""

from __future__ import annotations

from math import log

import numpy as np
from scipy.special import betaln, xlogy

from .data import SufficientStats
from .multistate import log_population_term

__all__ = [
    "loglik_m0",
    "loglik_mt",
    "loglik_mb",
    "loglik_mh_finite",
    "loglik_mh_beta",
    "loglik_mh_pointbeta",
    "beta_binomial_history_prob",
]


def _full(parts, stats, N):
    hist, rho = parts
    pop = log_population_term(N, stats.n, rho)
    if pop == -np.inf or hist == -np.inf:
        return -np.inf
    return pop + hist


def m0_parts(stats: SufficientStats, p: float) -> tuple[float, float]:
    s = stats.single
    T = stats.T
    hist = xlogy(s.f, p) + xlogy(s.n * T - s.f, 1.0 - p)
    return float(hist), (1.0 - p) ** T


def mt_parts(stats: SufficientStats, p) -> tuple[float, float]:
    s = stats.single
    p = np.asarray(p, dtype=float)
    if p.shape != (stats.T,):
        raise ValueError(f"expected {stats.T} capture probabilities")
    nt = s.occasion_totals
    hist = np.sum(xlogy(nt, p) + xlogy(s.n - nt, 1.0 - p))
    return float(hist), float(np.prod(1.0 - p))


def mb_parts(stats: SufficientStats, p: float, c: float) -> tuple[float, float]:
    s = stats.single
    T = stats.T
    recaps = s.f - s.n
    misses_after = s.n * T - s.n - s.y - recaps
    hist = (
        xlogy(s.y, 1.0 - p)
        + xlogy(s.n, p)
        + xlogy(recaps, c)
        + xlogy(misses_after, 1.0 - c)
    )
    return float(hist), (1.0 - p) ** T


def _schnabel_parts(stats: SufficientStats, log_probs: np.ndarray, rho: float):
    """``log_probs[j]`` is the log-probability of one history with j captures."""
    f = stats.single.schnabel
    mask = f > 0
    hist = float(np.dot(f[mask], log_probs[1:][mask]))
    return hist, rho


def _binomial_history_logprobs(T: int, p: float) -> np.ndarray:
    j = np.arange(T + 1)
    return xlogy(j, p) + xlogy(T - j, 1.0 - p)


def mh_finite_parts(stats: SufficientStats, weights, comps) -> tuple[float, float]:
    weights = np.asarray(weights, dtype=float)
    comps = np.asarray(comps, dtype=float)
    if weights.size == 0 or weights.shape != comps.shape:
        raise ValueError("need matching, non-empty weights and component probabilities")
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-10:
        raise ValueError("mixture weights must lie on the simplex")
    T = stats.T
    j = np.arange(T + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        per = xlogy(j, comps[:, None]) + xlogy(T - j, 1.0 - comps[:, None])
        logm = np.logaddexp.reduce(np.log(weights)[:, None] + per, axis=0)
    return _schnabel_parts(stats, logm, float(np.exp(logm[0])))


def beta_binomial_history_prob(j, T: int, a: float, b: float):
    """Probability of one particular history with ``j`` captures out of ``T``."""
    return np.exp(betaln(a + j, b + T - j) - betaln(a, b))


def mh_beta_parts(stats: SufficientStats, a: float, b: float) -> tuple[float, float]:
    if a <= 0 or b <= 0:
        raise ValueError("beta shapes must be positive")
    T = stats.T
    j = np.arange(T + 1)
    logm = betaln(a + j, b + T - j) - betaln(a, b)
    return _schnabel_parts(stats, logm, float(np.exp(logm[0])))


def mh_pointbeta_parts(
    stats: SufficientStats, w: float, p0: float, a: float, b: float
) -> tuple[float, float]:
    if not 0.0 <= w <= 1.0:
        raise ValueError("mixing weight must be in [0, 1]")
    if a <= 0 or b <= 0:
        raise ValueError("beta shapes must be positive")
    T = stats.T
    j = np.arange(T + 1)
    point = _binomial_history_logprobs(T, p0)
    spread = betaln(a + j, b + T - j) - betaln(a, b)
    with np.errstate(divide="ignore"):
        logm = np.logaddexp(np.log(w) + point, np.log1p(-w) + spread)
    return _schnabel_parts(stats, logm, float(np.exp(logm[0])))


def loglik_m0(stats: SufficientStats, p: float, N: float) -> float:
    """Constant capture probability ``p``."""
    return _full(m0_parts(stats, p), stats, N)


def loglik_mt(stats: SufficientStats, p, N: float) -> float:
    """One capture probability per occasion."""
    return _full(mt_parts(stats, p), stats, N)


def loglik_mb(stats: SufficientStats, p: float, c: float, N: float) -> float:
    """First capture with ``p``, every later occasion with ``c``."""
    return _full(mb_parts(stats, p, c), stats, N)


def loglik_mh_finite(stats: SufficientStats, weights, comps, N: float) -> float:
    """Finite binomial mixture over individuals."""
    return _full(mh_finite_parts(stats, weights, comps), stats, N)


def loglik_mh_beta(stats: SufficientStats, a: float, b: float, N: float) -> float:
    """Capture probabilities drawn from Beta(a, b)."""
    return _full(mh_beta_parts(stats, a, b), stats, N)


def loglik_mh_pointbeta(
    stats: SufficientStats, w: float, p0: float, a: float, b: float, N: float
) -> float:
    """Point mass at ``p0`` with weight ``w``, Beta(a, b) otherwise."""
    return _full(mh_pointbeta_parts(stats, w, p0, a, b), stats, N)


def schnabel_probs(kind: str, T: int, **params) -> np.ndarray:
    """Per-history probability for each capture count j = 0..T.

    ``kind`` is one of ``finite``, ``beta`` or ``pointbeta``; used by the
    goodness-of-fit cells.
    """
    j = np.arange(T + 1)
    if kind == "finite":
        w, comps = np.asarray(params["weights"]), np.asarray(params["comps"])
        return sum(wg * np.exp(_binomial_history_logprobs(T, pg)) for wg, pg in zip(w, comps))
    if kind == "beta":
        return beta_binomial_history_prob(j, T, params["a"], params["b"])
    if kind == "pointbeta":
        w = params["w"]
        return w * np.exp(_binomial_history_logprobs(T, params["p0"])) + (
            1 - w
        ) * beta_binomial_history_prob(j, T, params["a"], params["b"])
    raise ValueError(f"unknown heterogeneity kind {kind!r}")
