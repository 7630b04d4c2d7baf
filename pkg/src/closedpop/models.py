"""Model specifications and their working-scale parameterisations.

A :class:`ModelSpec` is the parsed form of names such as ``Mh^2`` or
``Mhbe``.  Binding it to a data shape (T, R, n) gives a model object that
turns an unconstrained "core" vector (everything except log(N - n)) into

* the two pieces every likelihood here is built from: the summed
  log-probability of the observed histories and the probability ``rho`` of
  never being caught;
* labelled natural-scale quantities for reporting.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from math import log

import numpy as np
from scipy.special import expit

from . import singlestate as ss
from .data import SufficientStats
from .multistate import (
    MsConstraints,
    MsParams,
    apply_constraints,
    softmax_ref,
    working_logits,
)
from ._kernels import finite_mixture_parts, ms_parts, pointbeta_parts


def _kernel_cells(stats: SufficientStats) -> tuple:
    """Non-empty sufficient-statistic cells in the layout the kernel expects."""
    cells = stats.nonzero_cells
    zi, zc = cells["z"]
    vi, vc = cells["v"]
    (t1, t2, r, s), pc = cells["pairs"]
    return zi, zc, vi, vc, t1, t2, r, s, pc


class ModelSpecError(ValueError):
    pass


PROB_EDGE = 1e-4
NU_LOW = log(1e-3)
NU_HIGH = log(1e5)
LOGIT_EDGE = log((1 - PROB_EDGE) / PROB_EDGE)


@dataclass(frozen=True)
class ModelSpec:
    """Parsed model name.

    ``family`` is ``multi`` or ``single``.  For single-state models
    ``hetero`` is ``None`` (M0/Mt/Mb), ``finite`` (with ``k`` components),
    ``beta`` or ``pointbeta``.
    """

    family: str
    time: bool = False
    behaviour: bool = False
    heterogeneity: bool = False
    R: int | None = None
    hetero: str | None = None
    k: int | None = None
    additive: bool = True
    psi_time: bool = False

    @property
    def letters(self) -> str:
        out = "t" * self.time + "b" * self.behaviour + "h" * self.heterogeneity
        return out or "0"

    @property
    def name(self) -> str:
        if self.family == "multi":
            return f"M{self.letters}^{self.R}" + (PSI_TIME_SUFFIX if self.psi_time else "")
        if self.hetero == "finite":
            return f"Mh{self.k}"
        if self.hetero == "beta":
            return "Mhbe"
        if self.hetero == "pointbeta":
            return "Mhb-be"
        return f"M{self.letters}"

    def __str__(self) -> str:
        return self.name

    @property
    def constraints(self) -> MsConstraints:
        return MsConstraints(
            time=self.time,
            behaviour=self.behaviour,
            state=self.heterogeneity,
            additive=self.additive,
            psi_time=self.psi_time,
        )


PSI_TIME_SUFFIX = "[psi_t]"

_SPEC = re.compile(r"^M(?P<body>[0-9a-z\-]*)(?:\^(?P<R>-?\d+))?$")


def parse_model_spec(text: str) -> ModelSpec:
    """Parse ``M`` + dependence letters + optional ``^R``.

    Letters come from {0, t, b, h}.  Multi-state models carry ``^R`` (for
    example ``M0^3``, ``Mth^2``); single-state heterogeneity models give
    their mixing distribution instead: ``Mh2``, ``Mh3``, ``Mhbe``, ``Mhb-be``.
    A multi-state spec may end in ``[psi_t]`` to give every occasion its
    own transition matrix (by default one matrix is shared).
    """
    text = text.strip()
    if text.endswith(PSI_TIME_SUFFIX):
        spec = parse_model_spec(text[: -len(PSI_TIME_SUFFIX)])
        if spec.family != "multi":
            raise ModelSpecError(f"{text!r}: {PSI_TIME_SUFFIX} needs a multi-state model")
        return replace(spec, psi_time=True)
    m = _SPEC.match(text)
    if not m:
        raise ModelSpecError(f"cannot parse model {text!r}")
    body, r_text = m.group("body"), m.group("R")

    if r_text is None:
        tail = re.fullmatch(r"(?P<head>[tb]*)h(?P<mix>\d+|be|b-be)", body)
        if tail:
            if tail.group("head"):
                raise ModelSpecError(f"{text!r}: mixtures combine with no other effect")
            mix = tail.group("mix")
            if mix == "be":
                return ModelSpec("single", heterogeneity=True, hetero="beta")
            if mix == "b-be":
                return ModelSpec("single", heterogeneity=True, hetero="pointbeta")
            k = int(mix)
            if k < 1:
                raise ModelSpecError(f"{text!r}: mixture needs at least one component")
            return ModelSpec("single", heterogeneity=True, hetero="finite", k=k)
    elif body != "0" and re.search(r"[0-9e\-]", body):
        raise ModelSpecError(f"{text!r}: ^R cannot be combined with a mixture")

    if body == "0":
        letters = ""
    elif body and set(body) <= set("tbh"):
        if len(set(body)) != len(body):
            raise ModelSpecError(f"{text!r}: repeated dependence letter")
        letters = body
    else:
        raise ModelSpecError(f"{text!r}: unknown dependence letters {body!r}")

    flags = dict(time="t" in letters, behaviour="b" in letters, heterogeneity="h" in letters)
    if r_text is not None:
        R = int(r_text)
        if R < 1:
            raise ModelSpecError(f"{text!r}: R must be at least 1")
        return ModelSpec("multi", R=R, **flags)
    if flags["heterogeneity"]:
        raise ModelSpecError(f"{text!r}: give a mixture (Mh2, Mhbe, ...) or ^R")
    if flags["time"] and flags["behaviour"]:
        raise ModelSpecError(f"{text!r}: single-state Mtb fitting is not supported")
    return ModelSpec("single", **flags)


@dataclass
class Quantity:
    label: str
    link: str  # "logit", "log" or "real"


class Model:
    """A model spec bound to a data shape."""

    spec: ModelSpec
    T: int
    R: int
    n: int
    kinds: list
    labels: list
    quantities: list

    @property
    def n_core(self) -> int:
        return len(self.kinds)

    def parts(self, theta, stats: SufficientStats) -> tuple[float, float]:
        raise NotImplementedError

    def values(self, theta) -> np.ndarray:
        raise NotImplementedError

    def ms_params(self, theta) -> MsParams | None:
        """Equivalent multi-state parameters, for Markov-capture models."""
        return None

    def schnabel(self, theta) -> tuple[str, dict] | None:
        """Heterogeneity kind and parameters, for mixture models."""
        return None

    def boundary_coords(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        out = np.zeros(theta.size, dtype=bool)
        for i, kind in enumerate(self.kinds):
            if kind in ("logit", "log"):
                out[i] = abs(theta[i]) > LOGIT_EDGE
            elif kind == "log_increment":
                out[i] = theta[i] < log(PROB_EDGE)
        return out


class MultiStateModel(Model):
    def __init__(self, spec: ModelSpec, T: int, R: int, n: int):
        if spec.R != R:
            raise ModelSpecError(f"{spec.name} needs R={spec.R} but the data have R={R}")
        self.spec, self.T, self.R, self.n = spec, T, R, n
        self.cons = spec.constraints
        layout = self.cons.layout(T, R, with_n=False)
        self.labels = [lab for lab, _ in layout]
        self.kinds = [kind for _, kind in layout]
        self.quantities = self._quantities()
        self._lin = self._linear_map()
        k = self.cons.capture_count(T, R) + int(self.cons.behaviour)
        n_psi = R * (R - 1) * ((T - 1) if self.cons.psi_time else 1)
        # simplex blocks: each is a set of coordinates sharing one softmax
        self._blocks = [
            list(range(k + i * (R - 1), k + (i + 1) * (R - 1)))
            for i in range(n_psi // (R - 1) if R > 1 else 0)
        ]
        if R > 1:
            self._blocks.append(list(range(k + n_psi, k + n_psi + R - 1)))

    def _quantities(self) -> list[Quantity]:
        T, R, c = self.T, self.R, self.cons
        q = []
        if c.time and c.state and R > 1:
            if c.additive:
                q += [Quantity(f"p_{t + 1}(1)", "logit") for t in range(T)]
                q += [Quantity(f"eta({r + 1})", "real") for r in range(1, R)]
            else:
                q += [Quantity(f"p_{t + 1}({r + 1})", "logit") for t in range(T) for r in range(R)]
        elif c.time:
            q += [Quantity(f"p_{t + 1}", "logit") for t in range(T)]
        elif c.state:
            q += [Quantity(f"p({r + 1})", "logit") for r in range(R)]
        else:
            q += [Quantity("p", "logit")]
        if c.behaviour:
            q += [Quantity("beta", "real")]
        steps = range(T - 1) if c.psi_time else [None]
        for b in steps:
            tag = "" if b is None else f"_{b + 1}"
            q += [
                Quantity(f"psi{tag}({r + 1},{s + 1})", "logit")
                for r in range(R)
                for s in range(R)
                if r != s
            ]
        q += [Quantity(f"alpha({r + 1})", "logit") for r in range(R - 1)]
        return q

    def _linear_map(self) -> np.ndarray:
        """Matrix taking the core vector to the stacked logits."""
        T, R, d = self.T, self.R, self.n_core
        cols = []
        for i in range(d):
            e = np.zeros(d)
            e[i] = 1.0
            cols.append(np.concatenate([np.ravel(x) for x in working_logits(e, self.cons, T, R)]))
        return np.array(cols).T.copy()

    def ms_params(self, theta) -> MsParams:
        return apply_constraints(theta, self.cons, self.T, self.R, with_n=False)

    def parts(self, theta, stats):
        T, R = self.T, self.R
        flat = self._lin @ np.asarray(theta, dtype=float)
        n_cap = T * R
        p = expit(flat[:n_cap].reshape(T, R))
        c = expit(flat[n_cap : 2 * n_cap].reshape(T, R))
        psi = softmax_ref(flat[2 * n_cap : 2 * n_cap + (T - 1) * R * (R - 1)].reshape(T - 1, R, R - 1))
        alpha = softmax_ref(flat[2 * n_cap + (T - 1) * R * (R - 1) :])
        return ms_parts(p, c, psi, alpha, *_kernel_cells(stats))

    def values(self, theta) -> np.ndarray:
        par = self.ms_params(theta)
        T, R, c = self.T, self.R, self.cons
        theta = np.asarray(theta, dtype=float)
        out = []
        if c.time and c.state and R > 1:
            if c.additive:
                out += list(par.p[:, 0])
                out += list(theta[T : T + R - 1])
            else:
                out += list(par.p.ravel())
        elif c.time:
            out += list(par.p[:, 0])
        elif c.state:
            out += list(par.p[0])
        else:
            out += [par.p[0, 0]]
        if c.behaviour:
            out += [par.beta]
        mats = par.psi if c.psi_time else par.psi[:1]
        for m in mats:
            out += [m[r, s] for r in range(R) for s in range(R) if r != s]
        out += list(par.alpha[:-1])
        return np.array(out, dtype=float)

    def boundary_coords(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = super().boundary_coords(theta)
        for block in self._blocks:
            probs = softmax_ref(theta[block])
            out[block] = probs.min() < PROB_EDGE
        return out


class M0Model(Model):
    def __init__(self, spec, T, R, n):
        self.spec, self.T, self.R, self.n = spec, T, R, n
        self.labels, self.kinds = ["logit p"], ["logit"]
        self.quantities = [Quantity("p", "logit")]

    def parts(self, theta, stats):
        return ss.m0_parts(stats, float(expit(theta[0])))

    def values(self, theta):
        return expit(np.asarray(theta, dtype=float))

    def ms_params(self, theta):
        return MsParams.build(p=expit(theta[0]), psi=np.ones((1, 1)), alpha=[1.0], T=self.T)


class MtModel(Model):
    def __init__(self, spec, T, R, n):
        self.spec, self.T, self.R, self.n = spec, T, R, n
        self.labels = [f"logit p_{t + 1}" for t in range(T)]
        self.kinds = ["logit"] * T
        self.quantities = [Quantity(f"p_{t + 1}", "logit") for t in range(T)]

    def parts(self, theta, stats):
        return ss.mt_parts(stats, expit(np.asarray(theta, dtype=float)))

    def values(self, theta):
        return expit(np.asarray(theta, dtype=float))

    def ms_params(self, theta):
        p = expit(np.asarray(theta, dtype=float))[:, None]
        return MsParams.build(p=p, psi=np.ones((1, 1)), alpha=[1.0], T=self.T)


class MbModel(Model):
    def __init__(self, spec, T, R, n):
        self.spec, self.T, self.R, self.n = spec, T, R, n
        self.labels, self.kinds = ["logit p", "logit c"], ["logit", "logit"]
        self.quantities = [Quantity("p", "logit"), Quantity("c", "logit")]

    def parts(self, theta, stats):
        p, c = expit(np.asarray(theta, dtype=float))
        return ss.mb_parts(stats, p, c)

    def values(self, theta):
        return expit(np.asarray(theta, dtype=float))

    def ms_params(self, theta):
        p, c = expit(np.asarray(theta, dtype=float))
        return MsParams.build(p=p, c=c, psi=np.ones((1, 1)), alpha=[1.0], T=self.T)


def ordered_probs(theta) -> np.ndarray:
    """Increasing probabilities: logit p_1 = theta_0, then positive logit steps."""
    theta = np.asarray(theta, dtype=float)
    steps = np.concatenate([theta[:1], np.exp(theta[1:])])
    return expit(np.cumsum(steps))


class MhFiniteModel(Model):
    def __init__(self, spec, T, R, n):
        self.spec, self.T, self.R, self.n = spec, T, R, n
        k = self.k = spec.k
        self.labels = (
            ["logit p_1"]
            + [f"log step p_{g + 1}" for g in range(1, k)]
            + [f"mlogit w_{g + 1}" for g in range(k - 1)]
        )
        self.kinds = ["logit"] + ["log_increment"] * (k - 1) + ["logit"] * (k - 1)
        self.quantities = [Quantity(f"p_{g + 1}", "logit") for g in range(k)] + [
            Quantity(f"w_{g + 1}", "logit") for g in range(k - 1)
        ]

    def unpack(self, theta):
        theta = np.asarray(theta, dtype=float)
        comps = ordered_probs(theta[: self.k])
        weights = softmax_ref(theta[self.k :])
        return weights, comps

    def parts(self, theta, stats):
        weights, comps = self.unpack(theta)
        return finite_mixture_parts(weights, comps, stats.single.schnabel)

    def values(self, theta):
        weights, comps = self.unpack(theta)
        return np.concatenate([comps, weights[:-1]])

    def schnabel(self, theta):
        weights, comps = self.unpack(theta)
        return "finite", {"weights": weights, "comps": comps}

    def boundary_coords(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = np.zeros(theta.size, dtype=bool)
        weights, comps = self.unpack(theta)
        k = self.k
        out[0] = abs(theta[0]) > LOGIT_EDGE or comps[-1] > 1 - PROB_EDGE
        for g in range(1, k):
            out[g] = comps[g] - comps[g - 1] < PROB_EDGE
        if k > 1 and weights.min() < PROB_EDGE:
            out[k:] = True
        return out


class MhBetaModel(Model):
    def __init__(self, spec, T, R, n):
        self.spec, self.T, self.R, self.n = spec, T, R, n
        self.labels, self.kinds = ["log a", "log b"], ["log", "log"]
        self.quantities = [Quantity("a", "log"), Quantity("b", "log")]

    def parts(self, theta, stats):
        a, b = np.exp(np.asarray(theta, dtype=float))
        return pointbeta_parts(0.0, 0.5, a, b, stats.single.schnabel)

    def values(self, theta):
        return np.exp(np.asarray(theta, dtype=float))

    def schnabel(self, theta):
        a, b = np.exp(np.asarray(theta, dtype=float))
        return "beta", {"a": a, "b": b}


class MhPointBetaModel(Model):
    def __init__(self, spec, T, R, n):
        self.spec, self.T, self.R, self.n = spec, T, R, n
        self.labels = ["logit w", "logit p0", "log a", "log b"]
        self.kinds = ["logit", "logit", "log", "log"]
        self.quantities = [
            Quantity("w", "logit"),
            Quantity("p0", "logit"),
            Quantity("a", "log"),
            Quantity("b", "log"),
        ]

    def unpack(self, theta):
        theta = np.asarray(theta, dtype=float)
        w, p0 = expit(theta[:2])
        a, b = np.exp(theta[2:])
        return w, p0, a, b

    def parts(self, theta, stats):
        return pointbeta_parts(*self.unpack(theta), stats.single.schnabel)

    def values(self, theta):
        return np.array(self.unpack(theta))

    def schnabel(self, theta):
        w, p0, a, b = self.unpack(theta)
        return "pointbeta", {"w": w, "p0": p0, "a": a, "b": b}


def bind(spec: ModelSpec | str, T: int, R: int, n: int) -> Model:
    """Attach a spec to a data shape."""
    if isinstance(spec, str):
        spec = parse_model_spec(spec)
    if spec.family == "multi":
        return MultiStateModel(spec, T, R, n)
    if spec.hetero == "finite":
        return MhFiniteModel(spec, T, R, n)
    if spec.hetero == "beta":
        return MhBetaModel(spec, T, R, n)
    if spec.hetero == "pointbeta":
        return MhPointBetaModel(spec, T, R, n)
    if spec.behaviour:
        return MbModel(spec, T, R, n)
    if spec.time:
        return MtModel(spec, T, R, n)
    return M0Model(spec, T, R, n)
