"""Simulate multi-state capture-recapture data and run simulation studies.

Replicate ``k`` of a study with master seed ``m`` draws everything (the
dataset, then every optimiser restart of every fitted model, in model
order) from ``numpy.random.default_rng(SeedSequence([m, k]))``.  Results
therefore do not depend on how replicates are scheduled across workers.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, DataError, sufficient_stats
from .estimation import FitError, fit
from .multistate import MsParams

log = logging.getLogger(__name__)

HETEROGENEITY_MODELS = ("Mh2", "Mh3", "Mhbe", "Mhb-be")


@dataclass(frozen=True)
class Scenario:
    """True population and parameter values for simulation.

    ``p`` (and ``c`` if given) may be per-state (length R) or per-occasion
    and state (T x R).  ``psi`` is a single R x R matrix or T-1 of them.
    """

    name: str
    N: int
    T: int
    alpha: tuple
    psi: tuple
    p: tuple
    c: tuple | None = None
    beta: float | None = None
    replicates: int = 100
    seed: int = 1
    models: tuple = ()

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if self.N < 1 or self.T < 1:
            raise ValueError("N and T must be positive")
        self.params().check(atol=1e-9)

    @property
    def R(self) -> int:
        return len(self.alpha)

    def params(self) -> MsParams:
        return MsParams.build(
            p=np.asarray(self.p, dtype=float),
            c=None if self.c is None else np.asarray(self.c, dtype=float),
            beta=self.beta,
            psi=np.asarray(self.psi, dtype=float),
            alpha=np.asarray(self.alpha, dtype=float),
            T=self.T,
            N=float(self.N),
        )

    def model_list(self) -> tuple:
        if self.models:
            return tuple(self.models)
        return ("M0", "Mt", "Mb", *HETEROGENEITY_MODELS, f"Mh^{self.R}", f"Mh^{self.R}(c)")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "N": self.N,
            "T": self.T,
            "alpha": list(self.alpha),
            "psi": np.asarray(self.psi).tolist(),
            "p": np.asarray(self.p).tolist(),
            "c": None if self.c is None else np.asarray(self.c).tolist(),
            "beta": self.beta,
            "replicates": self.replicates,
            "seed": self.seed,
            "models": list(self.model_list()),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Scenario":
        def tup(x):
            return None if x is None else tuple(map(tup, x)) if isinstance(x, list) else x

        return cls(
            name=doc.get("name", "custom"),
            N=int(doc["N"]),
            T=int(doc["T"]),
            alpha=tup(doc["alpha"]),
            psi=tup(doc["psi"]),
            p=tup(doc["p"]),
            c=tup(doc.get("c")),
            beta=doc.get("beta"),
            replicates=int(doc.get("replicates", 100)),
            seed=int(doc.get("seed", 1)),
            models=tuple(doc.get("models", ())),
        )


_LOW3 = ((0.76, 0.12, 0.12), (0.1, 0.8, 0.1), (0.15, 0.15, 0.7))
_HIGH3 = ((0.28, 0.36, 0.36), (0.3, 0.4, 0.3), (0.45, 0.45, 0.1))

PRESETS = {
    "lo2": Scenario("lo2", N=100, T=6, alpha=(0.4, 0.6), psi=((0.7, 0.3), (0.2, 0.8)), p=(0.15, 0.4)),
    "hi2": Scenario("hi2", N=100, T=6, alpha=(0.4, 0.6), psi=((0.1, 0.9), (0.6, 0.4)), p=(0.15, 0.4)),
    "lo3": Scenario("lo3", N=100, T=6, alpha=(0.33, 0.4, 0.27), psi=_LOW3, p=(0.15, 0.25, 0.4)),
    "hi3": Scenario("hi3", N=100, T=6, alpha=(0.33, 0.4, 0.27), psi=_HIGH3, p=(0.15, 0.25, 0.4)),
}


def preset(name: str, **overrides) -> Scenario:
    try:
        base = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(base, **overrides) if overrides else base


def replicate_rng(master: int, k: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([master, k]))


def _draw_categorical(rng, probs_rows):
    """One draw per row of a (m, K) probability array."""
    cum = np.cumsum(probs_rows, axis=1)
    u = rng.random(len(probs_rows))[:, None]
    return np.minimum((u >= cum).sum(axis=1), probs_rows.shape[1] - 1)


def simulate_histories(params: MsParams, N: int, rng) -> np.ndarray:
    """Full N x T history matrix, unseen individuals included."""
    rng = np.random.default_rng(rng)
    T, R = params.T, params.R
    state = _draw_categorical(rng, np.broadcast_to(params.alpha, (N, R)))
    marked = np.zeros(N, dtype=bool)
    out = np.zeros((N, T), dtype=np.int64)
    for t in range(T):
        cap = np.where(marked, params.c[t, state], params.p[t, state])
        caught = rng.random(N) < cap
        out[caught, t] = state[caught] + 1
        marked |= caught
        if t < T - 1:
            state = _draw_categorical(rng, params.psi[t][state])
    return out


def simulate_dataset(scenario: Scenario, seed) -> Dataset:
    """Simulate one dataset; ``seed`` may be an int, SeedSequence or Generator."""
    full = simulate_histories(scenario.params(), scenario.N, seed)
    seen = full.any(axis=1)
    if not seen.any():
        raise DataError("no individual was captured")
    return Dataset(full[seen], scenario.R)


# --- studies ------------------------------------------------------------------------


@dataclass
class ModelSummary:
    model: str
    requested: int
    converged: int
    boundary: int
    mean: float
    median: float
    q1: float
    q3: float
    sd: float
    mc_se: float

    @property
    def iqr(self) -> float:
        return self.q3 - self.q1

    def to_dict(self) -> dict:
        return {**self.__dict__, "iqr": self.iqr}


@dataclass
class StudySummary:
    scenario: Scenario
    records: list = field(default_factory=list)
    models: dict = field(default_factory=dict)

    def estimates(self, model: str, param: str = "N") -> np.ndarray:
        """Converged estimates of ``param`` ordered by replicate."""
        vals = [
            r["estimate"]
            for r in self.records
            if r["model"] == model and r["param"] == param and r["converged"]
        ]
        return np.array(vals, dtype=float)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.to_dict(),
            "models": {name: s.to_dict() for name, s in self.models.items()},
        }


def _split_model(name: str) -> tuple[str, str]:
    if name.endswith("(c)"):
        return name[:-3], "conditional"
    return name, "unconditional"


def run_replicate(scenario: Scenario, k: int, starts: int = 10) -> list[dict]:
    """Simulate replicate ``k`` and fit every model in the scenario."""
    rng = replicate_rng(scenario.seed, k)
    base = {"scenario": scenario.name, "replicate": k}
    try:
        data = simulate_dataset(scenario, rng)
    except DataError:
        return [
            {**base, "model": m, "param": "N", "estimate": float("nan"), "converged": False, "boundary": False}
            for m in scenario.model_list()
        ]
    stats = sufficient_stats(data)
    rows = [{**base, "model": "data", "param": "n", "estimate": float(stats.n), "converged": True, "boundary": False}]
    for name in scenario.model_list():
        spec, approach = _split_model(name)
        try:
            res = fit(stats, spec, approach=approach, starts=starts, rng=rng)
        except (FitError, ValueError) as exc:
            log.info("replicate %d, %s: %s", k, name, exc)
            rows.append({**base, "model": name, "param": "N", "estimate": float("nan"), "converged": False, "boundary": False})
            continue
        for est in res.estimates:
            rows.append(
                {
                    **base,
                    "model": name,
                    "param": est.label,
                    "estimate": float(est.value),
                    "converged": True,
                    "boundary": bool(est.boundary),
                }
            )
    return rows


def _worker_count(workers):
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("CLOSEDPOP_THREADS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def summarise(scenario: Scenario, records: list[dict]) -> dict:
    out = {}
    for name in scenario.model_list():
        rows = [r for r in records if r["model"] == name and r["param"] == "N"]
        ok = np.array([r["estimate"] for r in rows if r["converged"]], dtype=float)
        n_bnd = sum(1 for r in rows if r["converged"] and r["boundary"])
        if ok.size:
            q1, med, q3 = np.percentile(ok, [25, 50, 75])
            sd = float(ok.std(ddof=1)) if ok.size > 1 else 0.0
            mean = float(ok.mean())
        else:
            q1 = med = q3 = mean = sd = float("nan")
        out[name] = ModelSummary(
            model=name,
            requested=scenario.replicates,
            converged=int(ok.size),
            boundary=n_bnd,
            mean=mean,
            median=float(med),
            q1=float(q1),
            q3=float(q3),
            sd=sd,
            mc_se=sd / np.sqrt(ok.size) if ok.size > 1 else float("nan"),
        )
    return out


def run_study(scenario: Scenario, starts: int = 10, workers: int | None = None) -> StudySummary:
    """Simulate every replicate, fit every model, summarise the N estimates."""
    n_workers = min(_worker_count(workers), scenario.replicates)
    ks = range(scenario.replicates)
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            chunks = list(pool.map(run_replicate, [scenario] * len(ks), ks, [starts] * len(ks)))
    else:
        chunks = [run_replicate(scenario, k, starts) for k in ks]
    records = [row for chunk in chunks for row in chunk]
    return StudySummary(scenario=scenario, records=records, models=summarise(scenario, records))


def precision_comparison(summary: StudySummary) -> list[dict]:
    """Spread of N estimates per model, most precise (smallest IQR) first."""
    rows = []
    for name, s in summary.models.items():
        rows.append(
            {
                "model": name,
                "iqr": s.iqr,
                "sd": s.sd,
                "converged": s.converged,
                "insufficient": s.converged < 2,
            }
        )
    rows.sort(key=lambda r: (np.isnan(r["iqr"]), r["iqr"]))
    for rank, row in enumerate(rows, start=1):
        row["rank"] = rank
    return rows


RESULT_COLUMNS = ("scenario", "replicate", "model", "param", "estimate", "converged", "boundary")


def results_csv(summary: StudySummary) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RESULT_COLUMNS)
    for r in summary.records:
        writer.writerow(
            [
                r["scenario"],
                r["replicate"],
                r["model"],
                r["param"],
                repr(float(r["estimate"])),
                int(r["converged"]),
                int(r["boundary"]),
            ]
        )
    return buf.getvalue()


def summary_json(summary: StudySummary) -> str:
    return json.dumps(summary.to_dict(), indent=2, sort_keys=True)
