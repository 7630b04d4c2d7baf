"""Pearson chi-squared goodness of fit over the sufficient-statistic cells.

Cells follow the multinomials the likelihood factorises into:

* ``first``: where each of the N individuals is first captured, plus a
  cell for never being captured (observed N_hat - n, expected N_hat * rho);
* ``next t1=.. r=..``: for every occasion/state with marked individuals
  leaving it, where each is next recaptured, plus a never-seen-again cell.

Models without a Markov capture structure (the heterogeneity mixtures)
use the Schnabel census instead: f_0 = N_hat - n and f_1..f_T individuals
caught exactly j times.  Small cells are never pooled.

Degrees of freedom = cells - component multinomials - free parameters,
where the population size always counts as one parameter.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.special import comb
from scipy.stats import chi2

from .data import SufficientStats
from .models import bind
from .multistate import partial_probs
from .singlestate import schnabel_probs

SMALL_EXPECTED = 5.0


@dataclass
class GofCell:
    component: str
    cell: str
    observed: float
    expected: float

    @property
    def contribution(self) -> float:
        if self.expected > 0:
            return (self.observed - self.expected) ** 2 / self.expected
        return float("inf") if self.observed > 0 else 0.0


@dataclass
class GofReport:
    x2: float
    df: int | None
    p_value: float | None
    cells: list = field(default_factory=list)
    n_small: int = 0
    components: int = 0
    warnings: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "x2": self.x2,
            "df": self.df,
            "p_value": self.p_value,
            "cells": len(self.cells),
            "components": self.components,
            "small_cells": self.n_small,
            "warnings": list(self.warnings),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["component", "cell-id", "observed", "expected", "contribution"])
        for c in self.cells:
            writer.writerow([c.component, c.cell, repr(float(c.observed)), repr(float(c.expected)), repr(float(c.contribution))])
        return buf.getvalue()


def _markov_cells(stats: SufficientStats, probs, N_hat: float) -> list[list[GofCell]]:
    T, R = stats.T, stats.R
    first = [
        GofCell("first", f"t={t + 1} r={r + 1}", float(stats.z[t, r]), N_hat * probs.zeta[t, r])
        for t in range(T)
        for r in range(R)
    ]
    first.append(GofCell("first", "unseen", N_hat - stats.n, N_hat * probs.rho))
    groups = [first]
    nmat = stats.nmat
    inflow = stats.inflow
    for t1 in range(T - 1):
        for r in range(R):
            m = float(inflow[t1, r])
            if m <= 0:
                continue
            comp = f"next t1={t1 + 1} r={r + 1}"
            group = [
                GofCell(comp, f"t2={t2 + 1} s={s + 1}", float(nmat[t1, t2, r, s]), m * probs.O[t1, t2, r, s])
                for t2 in range(t1 + 1, T)
                for s in range(R)
            ]
            group.append(GofCell(comp, "not seen again", float(stats.v[t1, r]), m * probs.chi[t1, r]))
            groups.append(group)
    return groups


def _schnabel_cells(stats: SufficientStats, kind: str, params: dict, N_hat: float) -> list[list[GofCell]]:
    T = stats.T
    m = schnabel_probs(kind, T, **params)
    expected = N_hat * comb(T, np.arange(T + 1)) * m
    f = stats.single.schnabel
    cells = [GofCell("schnabel", "f0", N_hat - stats.n, float(expected[0]))]
    cells += [GofCell("schnabel", f"f{j}", float(f[j - 1]), float(expected[j])) for j in range(1, T + 1)]
    return [cells]


def cell_groups(stats: SufficientStats, fit) -> list[list[GofCell]]:
    """Observed and expected counts, one list per component multinomial."""
    model = bind(fit.spec, stats.T, stats.R, stats.n)
    theta = np.asarray(fit.theta, dtype=float)
    core = theta[:-1] if fit.approach == "unconditional" else theta
    N_hat = float(fit.N_hat)
    ms = model.ms_params(core)
    if ms is not None:
        use = stats if fit.spec.family == "multi" else stats.collapsed()
        return _markov_cells(use, partial_probs(ms), N_hat)
    kind, params = model.schnabel(core)
    return _schnabel_cells(stats, kind, params, N_hat)


def report_from_cells(groups, n_params: int) -> GofReport:
    """Pearson statistic, df and p-value from grouped cells."""
    cells = [c for g in groups for c in g]
    notes = []
    x2 = 0.0
    for c in cells:
        if c.expected <= 0 and c.observed <= 0:
            continue
        if c.expected <= 0:
            notes.append(f"{c.component} {c.cell}: observed {c.observed:g} with zero expected count")
        x2 += c.contribution
    n_cells = len(cells)
    df = n_cells - len(groups) - n_params
    n_small = sum(1 for c in cells if c.expected < SMALL_EXPECTED)
    if df <= 0:
        notes.append("degrees of freedom not positive; no p-value")
        return GofReport(x2, None, None, cells, n_small, len(groups), notes)
    p = float(chi2.sf(x2, df)) if np.isfinite(x2) else 0.0
    return GofReport(float(x2), int(df), p, cells, n_small, len(groups), notes)


def pearson_gof(stats: SufficientStats, fit) -> GofReport:
    """Pearson chi-squared test of a fitted model against its data."""
    if not fit.converged:
        raise ValueError("goodness of fit needs a converged fit")
    # N is a parameter of the first-capture multinomial under both approaches
    n_params = fit.n_params + (fit.approach == "conditional")
    report = report_from_cells(cell_groups(stats, fit), n_params)
    if fit.boundary:
        report.warnings.append("fit is on the parameter boundary")
    if report.n_small:
        msg = f"{report.n_small} cells have expected count below {SMALL_EXPECTED:g}; p-value is approximate"
        report.warnings.append(msg)
    return report


def format_gof(report: GofReport) -> str:
    p = "-" if report.p_value is None else ("<0.001" if report.p_value < 0.001 else f"{report.p_value:.3f}")
    df = "-" if report.df is None else str(report.df)
    lines = [f"X2 = {report.x2:.2f}   df = {df}   p = {p}   cells = {len(report.cells)}"]
    lines += [f"note: {w}" for w in report.warnings]
    return "\n".join(lines)
