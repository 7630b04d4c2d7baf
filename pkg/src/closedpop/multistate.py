"""Multi-state closed-population likelihood.

Individuals move between R discrete states as a first-order Markov chain
and are captured with a state-dependent probability: ``p`` before first
capture, ``c`` afterwards.  The likelihood is assembled from the partial
history probabilities

* ``zeta[t, r]``       first capture at occasion t in state r,
* ``O[t1, t2, r, s]``  next recapture at t2 in s after a capture at t1 in r,
* ``chi[t, r]``        never seen again after a capture at t in r,
* ``rho``              never seen at all,

raised to the matching sufficient-statistic counts.  Arrays are indexed
from 0 in both time and state.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import lgamma, log, log1p

import numpy as np
from scipy.special import expit, logit

from .data import SufficientStats

LOG_FLOOR = 1e-300


@dataclass
class MsParams:
    """Natural-scale parameters of the multi-state model.

    Attributes
    ----------
    p : ndarray, shape (T, R)
        First-capture probabilities.
    c : ndarray, shape (T, R)
        Recapture probabilities; row 0 is never used.
    psi : ndarray, shape (T-1, R, R)
        Row-stochastic transition matrices between consecutive occasions.
    alpha : ndarray, shape (R,)
        Initial state distribution.
    N : float or None
        Population size (continuous, at least n).
    beta : float or None
        Logit-scale trap-response offset, when behaviour is modelled.
    """

    p: np.ndarray
    c: np.ndarray
    psi: np.ndarray
    alpha: np.ndarray
    N: float | None = None
    beta: float | None = None

    @property
    def T(self) -> int:
        return self.p.shape[0]

    @property
    def R(self) -> int:
        return self.p.shape[1]

    @classmethod
    def build(cls, p, psi, alpha, T=None, c=None, beta=None, N=None) -> "MsParams":
        """Broadcast compact parameter values to full arrays.

        ``p`` may be a scalar, a length-R vector of state values or a (T, R)
        array; ``psi`` may be one R x R matrix (tied over time) or a stack of
        T-1 matrices.  ``c`` defaults to ``p`` unless ``beta`` is given.
        """
        alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        R = alpha.size
        psi = np.asarray(psi, dtype=float)
        if psi.ndim == 2:
            if T is None:
                raise ValueError("T is required when psi is a single matrix")
            psi = np.broadcast_to(psi, (T - 1, R, R)).copy()
        T = psi.shape[0] + 1 if T is None else T
        p = np.broadcast_to(np.asarray(p, dtype=float), (T, R)).copy()
        if c is None:
            c = expit(logit(p) + beta) if beta is not None else p.copy()
        else:
            c = np.broadcast_to(np.asarray(c, dtype=float), (T, R)).copy()
        return cls(p=p, c=c, psi=psi, alpha=alpha, N=N, beta=beta)

    def check(self, atol: float = 1e-12) -> None:
        T, R = self.p.shape
        if self.c.shape != (T, R) or self.psi.shape != (max(T - 1, 0), R, R):
            raise ValueError("parameter arrays have inconsistent shapes")
        if self.alpha.shape != (R,):
            raise ValueError("alpha must have length R")
        if not np.allclose(self.psi.sum(axis=-1), 1.0, atol=atol, rtol=0):
            raise ValueError("transition rows must sum to one")
        if abs(self.alpha.sum() - 1.0) > atol:
            raise ValueError("alpha must sum to one")

    def relabel(self, perm) -> "MsParams":
        """Reorder states so that new state ``i`` is old state ``perm[i]``."""
        perm = np.asarray(perm)
        return MsParams(
            p=self.p[:, perm],
            c=self.c[:, perm],
            psi=self.psi[:, perm][:, :, perm],
            alpha=self.alpha[perm],
            N=self.N,
            beta=self.beta,
        )


def _q_matrix(psi: np.ndarray, miss: np.ndarray) -> np.ndarray:
    """Probabilities of moving r -> s while going unseen in between.

    ``miss[t]`` is the per-state probability of not being caught at t.  The
    result ``Q[t1, t2]`` is filled for t1 < t2 and zero elsewhere.
    """
    T1, R, _ = psi.shape
    T = T1 + 1
    Q = np.zeros((T, T, R, R))
    for t1 in range(T - 2, -1, -1):
        Q[t1, t1 + 1] = psi[t1]
        if t1 + 2 < T:
            step = psi[t1] * miss[t1 + 1][None, :]
            Q[t1, t1 + 2 :] = np.einsum("ru,kus->krs", step, Q[t1 + 1, t1 + 2 :])
    return Q


def q_unmarked(params: MsParams) -> np.ndarray:
    """Unseen-transit probabilities for individuals not yet captured."""
    return _q_matrix(params.psi, 1.0 - params.p)


def q_marked(params: MsParams) -> np.ndarray:
    """Unseen-transit probabilities for individuals already marked."""
    return _q_matrix(params.psi, 1.0 - params.c)


def first_capture_probs(params: MsParams, QP: np.ndarray | None = None) -> np.ndarray:
    if QP is None:
        QP = q_unmarked(params)
    p, alpha = params.p, params.alpha
    zeta = np.empty_like(p)
    zeta[0] = p[0] * alpha
    start = alpha * (1.0 - p[0])
    if p.shape[0] > 1:
        zeta[1:] = p[1:] * np.einsum("u,tus->ts", start, QP[0, 1:])
    return zeta


def recapture_probs(params: MsParams, QC: np.ndarray | None = None) -> np.ndarray:
    if QC is None:
        QC = q_marked(params)
    # QC is zero for t2 <= t1, so the product keeps that structure
    return QC * params.c[None, :, None, :]


def chi_probs(params: MsParams, QC: np.ndarray | None = None) -> np.ndarray:
    if QC is None:
        QC = q_marked(params)
    T = params.T
    chi = np.ones((T, params.R))
    if T > 1:
        chi[:-1] = QC[:-1, T - 1] @ (1.0 - params.c[T - 1])
    return chi


def never_observed_prob(params: MsParams, QP: np.ndarray | None = None) -> float:
    p, alpha = params.p, params.alpha
    start = alpha * (1.0 - p[0])
    if params.T == 1:
        return float(start.sum())
    if QP is None:
        QP = q_unmarked(params)
    return float(start @ QP[0, params.T - 1] @ (1.0 - p[-1]))


@dataclass
class PartialProbs:
    """Everything the likelihood and the fit diagnostics need, computed once."""

    zeta: np.ndarray
    O: np.ndarray
    chi: np.ndarray
    rho: float


def partial_probs(params: MsParams) -> PartialProbs:
    QP = q_unmarked(params)
    QC = QP if params.c is params.p else q_marked(params)
    return PartialProbs(
        zeta=first_capture_probs(params, QP),
        O=recapture_probs(params, QC),
        chi=chi_probs(params, QC),
        rho=never_observed_prob(params, QP),
    )


def _count_log(counts: np.ndarray, probs: np.ndarray) -> float:
    """Sum of ``counts * log(probs)`` over cells with positive counts.

    Callers pass only the non-empty cells, so a zero probability there makes
    the data impossible and the result is -inf.
    """
    if counts.size == 0:
        return 0.0
    if not probs.min() >= LOG_FLOOR:
        return -np.inf
    return float(counts @ np.log(probs))


def log_population_term(N: float, n: int, rho: float) -> float:
    """log of N!/(N-n)! * rho**(N-n) with N continuous."""
    if N < n:
        raise ValueError(f"N={N} is below the number observed n={n}")
    extra = N - n
    out = lgamma(N + 1.0) - lgamma(extra + 1.0)
    if extra > 0:
        if rho < LOG_FLOOR:
            return -np.inf
        out += extra * log(rho)
    return out


def history_loglik(stats: SufficientStats, probs: PartialProbs) -> float:
    """Log-probability of all observed histories (no population term)."""
    cells = stats.nonzero_cells
    zi, zc = cells["z"]
    total = _count_log(zc, probs.zeta.ravel()[zi])
    if stats.T > 1:
        vi, vc = cells["v"]
        total += _count_log(vc, probs.chi[:-1].ravel()[vi])
    idx, pc = cells["pairs"]
    total += _count_log(pc, probs.O[idx])
    return total


def _check_dims(stats: SufficientStats, params: MsParams) -> None:
    if (stats.T, stats.R) != (params.T, params.R):
        raise ValueError(
            f"data have T={stats.T}, R={stats.R} but parameters have "
            f"T={params.T}, R={params.R}"
        )


def log_likelihood(stats: SufficientStats, params: MsParams) -> float:
    """Full (unconditional) log-likelihood at ``params.N``."""
    _check_dims(stats, params)
    if params.N is None:
        raise ValueError("params.N is required for the unconditional likelihood")
    probs = partial_probs(params)
    pop = log_population_term(params.N, stats.n, probs.rho)
    if pop == -np.inf:
        return -np.inf
    return pop + history_loglik(stats, probs)


def conditional_log_likelihood(stats: SufficientStats, params: MsParams) -> float:
    """Log-likelihood of the observed histories given capture at least once."""
    _check_dims(stats, params)
    probs = partial_probs(params)
    if probs.rho >= 1.0:
        return -np.inf
    return history_loglik(stats, probs) - stats.n * log1p(-probs.rho)


# --- working-scale parameterisation -------------------------------------------------


@dataclass(frozen=True)
class MsConstraints:
    """Which dependencies the capture probabilities carry.

    ``additive`` only matters when both ``time`` and ``state`` are on: the
    state effect is then a constant logit offset from state 1.  ``psi_time``
    frees a separate transition matrix for every interval.
    """

    time: bool = False
    behaviour: bool = False
    state: bool = False
    additive: bool = True
    psi_time: bool = False

    def capture_count(self, T: int, R: int) -> int:
        if self.time and self.state and R > 1:
            return T + R - 1 if self.additive else T * R
        if self.time:
            return T
        if self.state:
            return R
        return 1

    def n_params(self, T: int, R: int, with_n: bool = True) -> int:
        n_psi = R * (R - 1) * ((T - 1) if self.psi_time else 1)
        return (
            self.capture_count(T, R)
            + int(self.behaviour)
            + n_psi
            + (R - 1)
            + int(with_n)
        )

    def layout(self, T: int, R: int, with_n: bool = True) -> list[tuple[str, str]]:
        """Label and link kind (``logit``, ``real`` or ``nu``) of each working entry."""
        out = []
        if self.time and self.state and R > 1:
            if self.additive:
                out += [(f"logit p_{t + 1}(1)", "logit") for t in range(T)]
                out += [(f"eta({r + 1})", "real") for r in range(1, R)]
            else:
                out += [
                    (f"logit p_{t + 1}({r + 1})", "logit")
                    for t in range(T)
                    for r in range(R)
                ]
        elif self.time:
            out += [(f"logit p_{t + 1}", "logit") for t in range(T)]
        elif self.state:
            out += [(f"logit p({r + 1})", "logit") for r in range(R)]
        else:
            out += [("logit p", "logit")]
        if self.behaviour:
            out += [("beta", "real")]
        blocks = range(T - 1) if self.psi_time else [None]
        for b in blocks:
            tag = "" if b is None else f"_{b + 1}"
            for r in range(R):
                for s in range(R - 1):
                    out += [(f"mlogit psi{tag}({r + 1},{s + 1})", "logit")]
        out += [(f"mlogit alpha({r + 1})", "logit") for r in range(R - 1)]
        if with_n:
            out += [("log(N-n)", "nu")]
        return out


def softmax_ref(theta: np.ndarray) -> np.ndarray:
    """Multinomial logit with the last category as the zero baseline.

    Works on the last axis, so a (..., R-1) array maps to (..., R).
    """
    theta = np.asarray(theta, dtype=float)
    full = np.concatenate([theta, np.zeros(theta.shape[:-1] + (1,))], axis=-1)
    full = full - full.max(axis=-1, keepdims=True)
    e = np.exp(full)
    return e / e.sum(axis=-1, keepdims=True)


def log_ratio_ref(probs: np.ndarray) -> np.ndarray:
    """Inverse of :func:`softmax_ref`."""
    probs = np.asarray(probs, dtype=float)
    return np.log(probs[..., :-1]) - np.log(probs[..., -1:])


def working_logits(theta, cons: MsConstraints, T: int, R: int):
    """Linear part of the working-to-natural map.

    Returns logit p (T, R), logit c (T, R), the baseline-category logits of
    every transition row (T-1, R, R-1) and of alpha (R-1,).  Every output
    is a linear function of the core working vector.
    """
    theta = np.asarray(theta, dtype=float)
    k = cons.capture_count(T, R)
    cap, pos = theta[:k], k
    if cons.time and cons.state and R > 1:
        if cons.additive:
            eta = np.concatenate([[0.0], theta[T : T + R - 1]])
            lp = cap[:T, None] + eta[None, :]
        else:
            lp = cap.reshape(T, R)
    elif cons.time:
        lp = np.repeat(cap[:, None], R, axis=1)
    elif cons.state:
        lp = np.repeat(cap[None, :], T, axis=0)
    else:
        lp = np.full((T, R), cap[0])
    lc = lp
    if cons.behaviour:
        lc = lp + theta[pos]
        pos += 1
    n_rows = (T - 1) if cons.psi_time else 1
    size = n_rows * R * (R - 1)
    lpsi = theta[pos : pos + size].reshape(n_rows, R, R - 1)
    if not cons.psi_time:
        lpsi = np.broadcast_to(lpsi, (max(T - 1, 0), R, R - 1))
    pos += size
    lalpha = theta[pos : pos + R - 1]
    return lp, lc, lpsi, lalpha


def apply_constraints(
    working, cons: MsConstraints, T: int, R: int, n: int = 0, with_n: bool = True
) -> MsParams:
    """Map an unconstrained working vector onto natural-scale parameters."""
    theta = np.asarray(working, dtype=float)
    expected = cons.n_params(T, R, with_n)
    if theta.shape != (expected,):
        raise ValueError(f"expected {expected} working parameters, got {theta.size}")
    core = theta[:-1] if with_n else theta
    lp, lc, lpsi, lalpha = working_logits(core, cons, T, R)
    p = expit(lp)
    beta = None
    if cons.behaviour:
        beta = float(core[cons.capture_count(T, R)])
        c = expit(lc)
    else:
        c = p
    psi = softmax_ref(lpsi)
    alpha = softmax_ref(lalpha)
    N = n + float(np.exp(theta[-1])) if with_n else None
    return MsParams(p=p, c=c, psi=psi, alpha=alpha, N=N, beta=beta)


def to_working(
    params: MsParams, cons: MsConstraints, n: int = 0, with_n: bool = True
) -> np.ndarray:
    """Inverse of :func:`apply_constraints` for parameters that obey ``cons``."""
    T, R = params.p.shape
    lp = logit(params.p)
    if cons.time and cons.state and R > 1:
        if cons.additive:
            parts = [lp[:, 0], lp[0, 1:] - lp[0, 0]]
        else:
            parts = [lp.ravel()]
    elif cons.time:
        parts = [lp[:, 0]]
    elif cons.state:
        parts = [lp[0]]
    else:
        parts = [lp[:1, 0]]
    if cons.behaviour:
        beta = params.beta
        if beta is None:
            beta = float(logit(params.c[-1, 0]) - lp[-1, 0])
        parts.append([beta])
    psi = params.psi if cons.psi_time else params.psi[:1]
    parts.append(log_ratio_ref(psi).ravel())
    parts.append(log_ratio_ref(params.alpha))
    if with_n:
        parts.append([np.log(params.N - n)])
    return np.concatenate([np.ravel(x) for x in parts]).astype(float)
