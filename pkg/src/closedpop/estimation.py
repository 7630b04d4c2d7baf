"""Maximum-likelihood fitting, standard errors and AIC comparison.

Unconditional fits maximise the full likelihood over the core working
vector plus ``nu = log(N - n)``.  Conditional fits maximise the likelihood
of the observed histories given capture at least once and recover the
population size as ``n / (1 - rho)``.

Optimiser choices (multi-start BFGS on central-difference gradients, ten
starts, Wald intervals on the working scale) are implementation decisions.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from math import exp, log, log1p

import numpy as np
from scipy import optimize
from scipy.special import expit, logit
from scipy.stats import chi2

from .data import SufficientStats
from .models import NU_HIGH, NU_LOW, Model, ModelSpec, bind, parse_model_spec
from .multistate import log_population_term

log_ = logging.getLogger(__name__)

Z95 = 1.959963984540054
WORKING_LIMIT = 50.0


class FitError(RuntimeError):
    pass


@dataclass
class Estimate:
    label: str
    value: float
    se: float | None = None
    lower: float | None = None
    upper: float | None = None
    boundary: bool = False

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "value": self.value,
            "se": self.se,
            "lower": self.lower,
            "upper": self.upper,
            "boundary": self.boundary,
        }


@dataclass
class FitResult:
    spec: ModelSpec
    approach: str
    n: int
    T: int
    R: int
    theta: np.ndarray
    loglik: float
    n_params: int
    estimates: list = field(default_factory=list)
    boundary: bool = False
    singular: bool = False
    converged: bool = True
    iterations: int = 0
    starts: int = 0
    n_converged: int = 0
    grad_norm: float = float("nan")
    gof: object = None

    @property
    def aic(self) -> float:
        return -2.0 * self.loglik + 2.0 * self.n_params

    @property
    def N_hat(self) -> float:
        return self.estimates[0].value

    @property
    def N_estimate(self) -> Estimate:
        return self.estimates[0]

    def estimate(self, label: str) -> Estimate:
        for est in self.estimates:
            if est.label == label:
                return est
        raise KeyError(label)

    @property
    def name(self) -> str:
        return self.spec.name + ("(c)" if self.approach == "conditional" else "")

    def to_dict(self, stats: SufficientStats | None = None) -> dict:
        out = {
            "model": self.spec.name,
            "approach": self.approach,
            "n": self.n,
            "T": self.T,
            "R": self.R,
            "theta": [float(x) for x in self.theta],
            "loglik": self.loglik,
            "n_params": self.n_params,
            "aic": self.aic,
            "N_hat": self.N_hat,
            "estimates": [e.to_dict() for e in self.estimates],
            "boundary": self.boundary,
            "singular": self.singular,
            "converged": self.converged,
            "diagnostics": {
                "iterations": self.iterations,
                "starts": self.starts,
                "converged_starts": self.n_converged,
                "grad_norm": self.grad_norm,
            },
        }
        if self.gof is not None:
            out["gof"] = self.gof.summary()
        if stats is not None:
            out["stats"] = stats.to_dict()
        return out


def _fmt(x, digits=2):
    return "-" if x is None else f"{x:.{digits}f}"


def format_fit(fit: FitResult) -> str:
    """Parameter / MLE / SE / 95% CI table followed by logL, AIC and N."""
    rows = [("Parameter", "MLE", "SE", "95% CI")]
    for est in fit.estimates:
        ci = "-"
        if est.lower is not None and est.upper is not None:
            ci = f"({est.lower:.2f}, {est.upper:.2f})"
        se_digits = 2 if est.label == "N" else 3
        rows.append((est.label, f"{est.value:.2f}", _fmt(est.se, se_digits), ci))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = [f"Model {fit.name} ({fit.approach})"]
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    lines.append(f"logL = {fit.loglik:.4f}   AIC = {fit.aic:.2f}   N_hat = {fit.N_hat:.2f}")
    flags = [name for name, on in (("boundary", fit.boundary), ("singular", fit.singular)) if on]
    if flags:
        lines.append("flags: " + ", ".join(flags))
    return "\n".join(lines)


# --- objective ----------------------------------------------------------------------


def objective(model: Model, stats: SufficientStats, approach: str):
    """Log-likelihood as a function of the full working vector."""
    n = stats.n
    unconditional = approach == "unconditional"

    def f(theta):
        theta = np.asarray(theta, dtype=float)
        if not np.all(np.abs(theta) <= WORKING_LIMIT):
            return -np.inf
        core = theta[:-1] if unconditional else theta
        with np.errstate(all="ignore"):
            hist, rho = model.parts(core, stats)
        if not np.isfinite(hist) or not (0.0 <= rho <= 1.0):
            return -np.inf
        if unconditional:
            pop = log_population_term(n + exp(theta[-1]), n, rho)
            return pop + hist
        if rho >= 1.0:
            return -np.inf
        return hist - n * log1p(-rho)

    return f


def loglik_at(stats: SufficientStats, spec, theta, approach: str = "unconditional") -> float:
    """Re-evaluate a stored fit's log-likelihood from its working vector."""
    spec = parse_model_spec(spec) if isinstance(spec, str) else spec
    model = bind(spec, stats.T, stats.R, stats.n)
    return objective(model, stats, approach)(np.asarray(theta, dtype=float))


def _central_gradient(f, x, rel=1e-6):
    g = np.empty_like(x)
    for i in range(x.size):
        h = rel * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def _minimise(f, x0, maxiter):
    def neg(x):
        val = f(x)
        return 1e12 if not np.isfinite(val) else -val

    def jac(x):
        return _central_gradient(neg, x)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = optimize.minimize(
            neg, x0, jac=jac, method="BFGS", options={"gtol": 1e-6, "maxiter": maxiter}
        )
    # a second short pass restarts the Hessian approximation and mops up
    # progress lost to precision warnings
    if res.status != 0 and np.isfinite(res.fun) and res.fun < 1e12:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res2 = optimize.minimize(
                neg, res.x, jac=jac, method="BFGS", options={"gtol": 1e-6, "maxiter": maxiter}
            )
        if res2.fun <= res.fun:
            res2.nit += res.nit
            res = res2
    grad = jac(res.x)
    return res, float(np.linalg.norm(grad))


def _converged(res, grad_norm) -> bool:
    if not np.isfinite(res.fun) or res.fun >= 1e12:
        return False
    return bool(res.success) or grad_norm < 1e-3


def maximise(f, dim: int, starts: int = 10, rng=None, maxiter: int = 2000, x0=None):
    """Multi-start maximisation of ``f`` over R^dim.

    The first start is the zero vector (or ``x0``); the rest are drawn from
    N(0, 1.5^2).  Returns ``(x, value, info)`` for the best converged start;
    ties within 1e-8 go to the start with the smallest norm.
    """
    rng = np.random.default_rng(rng)
    points = [np.zeros(dim) if x0 is None else np.asarray(x0, dtype=float)]
    points += [rng.normal(0.0, 1.5, size=dim) for _ in range(max(starts, 1) - 1)]
    found = []
    iterations = 0
    for x in points:
        if not np.isfinite(f(x)):
            continue
        res, gnorm = _minimise(f, x, maxiter)
        iterations += int(res.nit)
        if _converged(res, gnorm):
            found.append((-float(res.fun), res.x, gnorm))
    if not found:
        raise FitError("no optimiser start converged")
    best = max(v for v, _, _ in found)
    tied = [item for item in found if best - item[0] < 1e-8]
    value, x, gnorm = min(tied, key=lambda item: np.linalg.norm(item[1]))
    info = {"iterations": iterations, "starts": len(points), "converged": len(found), "grad_norm": gnorm}
    return x, value, info


# --- fitting ------------------------------------------------------------------------


def fit(
    stats: SufficientStats,
    spec: ModelSpec | str,
    approach: str = "unconditional",
    starts: int = 10,
    rng=None,
    profile_ci: bool = False,
    x0=None,
) -> FitResult:
    """Fit one model by maximum likelihood and attach standard errors."""
    if approach not in ("unconditional", "conditional"):
        raise ValueError(f"unknown approach {approach!r}")
    spec = parse_model_spec(spec) if isinstance(spec, str) else spec
    model = bind(spec, stats.T, stats.R, stats.n)
    f = objective(model, stats, approach)
    dim = model.n_core + (approach == "unconditional")
    x, value, info = maximise(f, dim, starts=starts, rng=rng, x0=x0)
    result = FitResult(
        spec=spec,
        approach=approach,
        n=stats.n,
        T=stats.T,
        R=stats.R,
        theta=x,
        loglik=value,
        n_params=dim,
        iterations=info["iterations"],
        starts=info["starts"],
        n_converged=info["converged"],
        grad_norm=info["grad_norm"],
    )
    standard_errors(result, stats, model=model)
    if profile_ci and approach == "unconditional":
        lo, hi = profile_n_interval(result, stats, model=model)
        result.estimates[0].lower, result.estimates[0].upper = lo, hi
    return result


def fit_unconditional(stats, spec, **kwargs) -> FitResult:
    return fit(stats, spec, approach="unconditional", **kwargs)


def fit_conditional(stats, spec, **kwargs) -> FitResult:
    return fit(stats, spec, approach="conditional", **kwargs)


def horvitz_thompson(n: int, rho: float) -> float:
    """Population size from the number seen and the miss probability."""
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must be in [0, 1)")
    return n / (1.0 - rho)


# --- standard errors ----------------------------------------------------------------


def hessian(f, x, idx=None, rel=1e-4):
    """Central-difference Hessian of ``f`` restricted to coordinates ``idx``."""
    x = np.asarray(x, dtype=float)
    idx = np.arange(x.size) if idx is None else np.asarray(idx)
    k = idx.size
    h = rel * np.maximum(1.0, np.abs(x[idx]))
    f0 = f(x)
    H = np.empty((k, k))

    def at(steps):
        y = x.copy()
        for i, s in steps:
            y[idx[i]] += s * h[i]
        return f(y)

    for i in range(k):
        H[i, i] = (at([(i, 1)]) - 2 * f0 + at([(i, -1)])) / h[i] ** 2
        for j in range(i):
            val = (
                at([(i, 1), (j, 1)])
                - at([(i, 1), (j, -1)])
                - at([(i, -1), (j, 1)])
                + at([(i, -1), (j, -1)])
            ) / (4 * h[i] * h[j])
            H[i, j] = H[j, i] = val
    return H


def _jacobian(g, x, rel=1e-6):
    x = np.asarray(x, dtype=float)
    y0 = np.atleast_1d(g(x))
    J = np.empty((y0.size, x.size))
    for i in range(x.size):
        h = rel * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        with np.errstate(invalid="ignore"):
            J[:, i] = (np.atleast_1d(g(x + e)) - np.atleast_1d(g(x - e))) / (2 * h)
    return J


_LINKS = {
    "logit": (logit, expit),
    "log": (np.log, np.exp),
    "real": (lambda v: v, lambda v: v),
}


def _dependence(g, x):
    """Which coordinates each output of ``g`` responds to."""
    y0 = np.atleast_1d(g(x))
    dep = np.zeros((y0.size, x.size), dtype=bool)
    for j in range(x.size):
        y = x.copy()
        y[j] -= np.sign(x[j]) or 1.0
        dep[:, j] = np.abs(np.atleast_1d(g(y)) - y0) > 1e-12
    return dep


def standard_errors(fit: FitResult, stats: SufficientStats, model: Model | None = None) -> FitResult:
    """Observed-information SEs and working-scale Wald intervals.

    Coordinates sitting at a boundary are held fixed; if the remaining
    information matrix is not positive definite every SE is dropped and
    ``fit.singular`` is set.  Quantities that depend on a boundary
    coordinate get no SE or interval.
    """
    if model is None:
        model = bind(fit.spec, stats.T, stats.R, stats.n)
    unconditional = fit.approach == "unconditional"
    f = objective(model, stats, fit.approach)
    theta = np.asarray(fit.theta, dtype=float)
    core = theta[:-1] if unconditional else theta
    n = stats.n

    bnd = np.zeros(theta.size, dtype=bool)
    bnd[: model.n_core] = model.boundary_coords(core)
    if unconditional:
        bnd[-1] = not (NU_LOW <= theta[-1] <= NU_HIGH)
    free = np.flatnonzero(~bnd)

    cov = None
    if free.size:
        info = -hessian(f, theta, free)
        try:
            np.linalg.cholesky(info)
            cov_free = np.linalg.inv(info)
            if np.all(np.isfinite(cov_free)) and np.all(np.diag(cov_free) > 0):
                cov = np.zeros((theta.size, theta.size))
                cov[np.ix_(free, free)] = cov_free
        except np.linalg.LinAlgError:
            cov = None
    fit.singular = cov is None and free.size > 0
    fit.boundary = bool(bnd.any())

    def ci_from(link_value, grad_link, inv):
        if cov is None:
            return None, None
        var = float(grad_link @ cov @ grad_link)
        if var < 0:
            return None, None
        half = Z95 * np.sqrt(var)
        return float(inv(link_value - half)), float(inv(link_value + half))

    estimates = []
    # population size
    if unconditional:
        nu = theta[-1]
        N_hat = n + exp(nu)
        est = Estimate("N", N_hat, boundary=bool(bnd[-1]))
        if cov is not None and not bnd[-1]:
            g = np.zeros(theta.size)
            g[-1] = 1.0
            lo, hi = ci_from(nu, g, lambda v: n + np.exp(v))
            est.se = exp(nu) * float(np.sqrt(cov[-1, -1]))
            est.lower, est.upper = lo, hi
    else:
        rho_of = lambda th: model.parts(th, stats)[1]  # noqa: E731
        rho = rho_of(core)
        N_hat = horvitz_thompson(n, rho)
        est = Estimate("N", N_hat)
        est.boundary = N_hat - n < exp(NU_LOW) or bool(bnd.any())
        if cov is not None and not est.boundary:
            grho = _jacobian(rho_of, core)[0]
            se = n / (1 - rho) ** 2 * float(np.sqrt(grho @ cov @ grho))
            est.se = se
            nu = log(N_hat - n)
            half = Z95 * se / (N_hat - n)
            est.lower, est.upper = n + exp(nu - half), n + exp(nu + half)
    estimates.append(est)

    values = model.values(core)
    dep = _dependence(model.values, core)
    J_nat = _jacobian(model.values, core) if cov is not None else None
    for i, q in enumerate(model.quantities):
        link, inv = _LINKS[q.link]
        est = Estimate(q.label, float(values[i]))
        est.boundary = bool((dep[i] & bnd[: model.n_core]).any())
        if cov is not None and not est.boundary:
            c = cov[: model.n_core, : model.n_core]
            g_nat = J_nat[i]
            est.se = float(np.sqrt(max(g_nat @ c @ g_nat, 0.0)))
            g_link = _jacobian(lambda th: link(model.values(th)[i]), core)[0]
            var = float(g_link @ c @ g_link)
            half = Z95 * np.sqrt(max(var, 0.0))
            lv = float(link(values[i]))
            with np.errstate(over="ignore"):
                est.lower, est.upper = float(inv(lv - half)), float(inv(lv + half))
        estimates.append(est)
    fit.estimates = estimates
    return fit


def profile_n_interval(fit: FitResult, stats: SufficientStats, model: Model | None = None, level=0.95):
    """Profile-likelihood interval for N (unconditional fits only).

    Returns ``(lower, upper)``; the upper end is ``None`` when the profile
    never drops below the cut-off.
    """
    if fit.approach != "unconditional":
        raise ValueError("profile intervals need an unconditional fit")
    if model is None:
        model = bind(fit.spec, stats.T, stats.R, stats.n)
    f = objective(model, stats, "unconditional")
    cut = fit.loglik - chi2.ppf(level, 1) / 2.0
    core_hat = np.asarray(fit.theta[:-1], dtype=float)
    n = stats.n

    def profile(nu):
        g = lambda core: f(np.append(core, nu))  # noqa: E731
        if core_hat.size == 0:
            return g(core_hat)
        x, val, _ = maximise(g, core_hat.size, starts=1, x0=core_hat)
        return val

    nu_hat = fit.theta[-1]
    lo_nu = max(nu_hat - 1.0, -12.0)
    while profile(lo_nu) > cut and lo_nu > -12.0:
        lo_nu = max(lo_nu - 1.0, -12.0)
    if profile(lo_nu) > cut:
        lower = float(n)
    else:
        lower = n + exp(optimize.brentq(lambda v: profile(v) - cut, lo_nu, nu_hat, xtol=1e-6))
    hi_nu = nu_hat + 1.0
    while profile(hi_nu) > cut and hi_nu < NU_HIGH:
        hi_nu += 1.0
    if profile(hi_nu) > cut:
        upper = None
    else:
        upper = n + exp(optimize.brentq(lambda v: profile(v) - cut, nu_hat, hi_nu, xtol=1e-6))
    return lower, upper


# --- comparison ---------------------------------------------------------------------


@dataclass
class ComparisonRow:
    model: str
    delta_aic: float
    aic: float
    loglik: float
    n_params: int
    N_hat: float
    lower: float | None
    upper: float | None
    x2: float | None
    p_value: float | None
    boundary: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def compare_models(fits, stats: SufficientStats | None = None) -> list[ComparisonRow]:
    """Rank fits by AIC.

    When ``stats`` is given, fits without a goodness-of-fit report get one.
    Ties keep the input order.
    """
    from .gof import pearson_gof

    rows = []
    best = min(f.aic for f in fits)
    for pos, fit_ in enumerate(fits):
        if fit_.gof is None and stats is not None:
            fit_.gof = pearson_gof(stats, fit_)
        g = fit_.gof
        N_est = fit_.N_estimate
        rows.append(
            (
                fit_.aic,
                pos,
                fit_.name,
                ComparisonRow(
                    model=fit_.name,
                    delta_aic=fit_.aic - best,
                    aic=fit_.aic,
                    loglik=fit_.loglik,
                    n_params=fit_.n_params,
                    N_hat=fit_.N_hat,
                    lower=N_est.lower,
                    upper=N_est.upper,
                    x2=None if g is None else g.x2,
                    p_value=None if g is None else g.p_value,
                    boundary=fit_.boundary,
                ),
            )
        )
    rows.sort(key=lambda item: item[:3])
    return [row for *_, row in rows]


def comparison_notes(fits) -> list[str]:
    """Warnings about AIC values that do not share a likelihood scale.

    Conditional and unconditional likelihoods differ by the population
    term, and on data with more than one state the single-state models see
    only the collapsed histories, so their AIC omits the state labels.
    """
    notes = []
    if len({f.approach for f in fits}) > 1:
        notes.append("conditional and unconditional fits are on different likelihood scales; compare dAIC within an approach")
    families = {f.spec.family for f in fits}
    if len(families) > 1 and any(f.R > 1 for f in fits):
        notes.append("single-state models use the collapsed histories; their AIC is not comparable with multi-state fits when R > 1")
    return notes


def format_comparison(rows) -> str:
    """Model / dAIC / N_hat / 95% CI / X2 / p-value table."""
    table = [("Model", "dAIC", "N_hat", "95% CI", "X2", "p-value")]
    for r in rows:
        ci = "-" if r.lower is None or r.upper is None else f"({r.lower:.1f}, {r.upper:.1f})"
        if r.p_value is None:
            p = "-"
        elif r.p_value < 0.001:
            p = "<0.001"
        else:
            p = f"{r.p_value:.3f}"
        x2 = "-" if r.x2 is None else f"{r.x2:.2f}"
        table.append((r.model, f"{r.delta_aic:.2f}", f"{r.N_hat:.1f}", ci, x2, p))
    widths = [max(len(row[i]) for row in table) for i in range(6)]
    lines = []
    for i, row in enumerate(table):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)
