"""Command-line interface: ``closedpop fit|gof|compare|simulate|study``.

Exit status is 0 on success, 2 when a fit lands on the parameter boundary
and 1 on any error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import DataError, parse_dataset, infer_states, sufficient_stats
from .estimation import FitError, comparison_notes, compare_models, fit, format_comparison, format_fit
from .gof import format_gof, pearson_gof
from .models import ModelSpecError, parse_model_spec
from .simulate import (
    PRESETS,
    Scenario,
    precision_comparison,
    preset,
    replicate_rng,
    results_csv,
    run_study,
    simulate_dataset,
    summary_json,
)

EXIT_OK, EXIT_ERROR, EXIT_BOUNDARY = 0, 1, 2

log = logging.getLogger("closedpop")


class CliError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    data: str | None = None
    models: tuple = ()
    R: int | None = None
    seed: int = 1
    starts: int = 10
    out: str | None = None
    format: str = "table"
    approach: str = "unconditional"
    preset: str | None = None
    scenario: str | None = None
    replicates: int | None = None
    profile_ci: bool = False
    time_psi: bool = False

    @classmethod
    def from_args(cls, args) -> "RunConfig":
        models = []
        for item in getattr(args, "model", None) or []:
            models += [m.strip() for m in item.split(",") if m.strip()]
        for m in models:
            parse_model_spec(_split(m)[0])
        return cls(
            command=args.command,
            data=getattr(args, "data", None),
            models=tuple(models),
            R=getattr(args, "R", None),
            seed=args.seed,
            starts=getattr(args, "starts", 10),
            out=getattr(args, "out", None),
            format=getattr(args, "format", "table"),
            approach=getattr(args, "approach", "unconditional"),
            preset=getattr(args, "preset", None),
            scenario=getattr(args, "scenario", None),
            replicates=getattr(args, "replicates", None),
            profile_ci=getattr(args, "profile_ci", False),
            time_psi=getattr(args, "time_psi", False),
        )


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _load_stats(cfg: RunConfig):
    if not cfg.data:
        raise CliError("--data is required")
    try:
        text = Path(cfg.data).read_text()
    except OSError as exc:
        raise CliError(f"cannot read {cfg.data}: {exc.strerror or exc}") from None
    R = cfg.R
    if R is None:
        R = infer_states(text)
        for m in cfg.models:
            spec = parse_model_spec(_split(m)[0])
            if spec.family == "multi":
                R = max(R, spec.R)
    return sufficient_stats(parse_dataset(text, R))


def _split(model: str) -> tuple[str, bool]:
    """A trailing ``(c)`` requests the conditional approach for that model."""
    if model.endswith("(c)"):
        return model[:-3], True
    return model, False


def _fit_one(cfg: RunConfig, stats, model: str, rng):
    text, conditional = _split(model)
    spec = parse_model_spec(text)
    if cfg.time_psi and spec.family == "multi":
        spec = replace(spec, psi_time=True)
    approach = "conditional" if conditional else cfg.approach
    return fit(stats, spec, approach=approach, starts=cfg.starts, rng=rng, profile_ci=cfg.profile_ci)


def _need_one_model(cfg: RunConfig) -> str:
    if len(cfg.models) != 1:
        raise CliError("exactly one --model is required")
    return cfg.models[0]


def cmd_fit(cfg: RunConfig) -> int:
    stats = _load_stats(cfg)
    res = _fit_one(cfg, stats, _need_one_model(cfg), np.random.default_rng(cfg.seed))
    if cfg.format == "json":
        _emit(json.dumps(res.to_dict(stats), indent=2, sort_keys=True), cfg.out)
    elif cfg.format == "csv":
        lines = ["parameter,estimate,se,lower,upper,boundary"]
        for e in res.estimates:
            cells = [e.label] + ["" if x is None else repr(float(x)) for x in (e.value, e.se, e.lower, e.upper)]
            lines.append(",".join(cells) + f",{int(e.boundary)}")
        _emit("\n".join(lines), cfg.out)
    else:
        _emit(format_fit(res), cfg.out)
    return EXIT_BOUNDARY if (res.boundary or res.singular) else EXIT_OK


def cmd_gof(cfg: RunConfig) -> int:
    stats = _load_stats(cfg)
    res = _fit_one(cfg, stats, _need_one_model(cfg), np.random.default_rng(cfg.seed))
    report = pearson_gof(stats, res)
    if cfg.format == "csv":
        _emit(report.to_csv(), cfg.out)
    elif cfg.format == "json":
        doc = {"model": res.name, **report.summary()}
        _emit(json.dumps(doc, indent=2, sort_keys=True), cfg.out)
    else:
        _emit(f"Model {res.name}\n" + format_gof(report), cfg.out)
    return EXIT_OK


def cmd_compare(cfg: RunConfig) -> int:
    if not cfg.models:
        raise CliError("at least one --model is required")
    stats = _load_stats(cfg)
    rng = np.random.default_rng(cfg.seed)
    fits = [_fit_one(cfg, stats, m, rng) for m in cfg.models]
    rows = compare_models(fits, stats)
    for note in comparison_notes(fits):
        print(f"closedpop: note: {note}", file=sys.stderr)
    if cfg.format == "json":
        _emit(json.dumps([r.to_dict() for r in rows], indent=2, sort_keys=True), cfg.out)
    elif cfg.format == "csv":
        lines = ["model,delta_aic,N_hat,lower,upper,x2,p_value"]
        for r in rows:
            vals = [r.delta_aic, r.N_hat, r.lower, r.upper, r.x2, r.p_value]
            lines.append(",".join([r.model] + ["" if v is None else repr(float(v)) for v in vals]))
        _emit("\n".join(lines), cfg.out)
    else:
        _emit(format_comparison(rows), cfg.out)
    return EXIT_OK


def _scenario(cfg: RunConfig) -> Scenario:
    if cfg.scenario:
        try:
            doc = json.loads(Path(cfg.scenario).read_text())
        except OSError as exc:
            raise CliError(f"cannot read {cfg.scenario}: {exc.strerror or exc}") from None
        sc = Scenario.from_dict(doc)
    elif cfg.preset:
        if cfg.preset not in PRESETS:
            raise CliError(f"unknown preset {cfg.preset!r}; choose from {', '.join(sorted(PRESETS))}")
        sc = preset(cfg.preset)
    else:
        raise CliError("--preset or --scenario is required")
    overrides = {"seed": cfg.seed}
    if cfg.replicates is not None:
        overrides["replicates"] = cfg.replicates
    if cfg.models:
        overrides["models"] = cfg.models
    return Scenario.from_dict({**sc.to_dict(), **overrides})


def cmd_simulate(cfg: RunConfig) -> int:
    sc = _scenario(cfg)
    data = simulate_dataset(sc, replicate_rng(sc.seed, 0))
    _emit(data.to_text(), cfg.out)
    return EXIT_OK


def cmd_study(cfg: RunConfig) -> int:
    sc = _scenario(cfg)
    summary = run_study(sc, starts=cfg.starts)
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "results.csv").write_text(results_csv(summary))
        (out / "summary.json").write_text(summary_json(summary) + "\n")
    if cfg.format == "json":
        sys.stdout.write(summary_json(summary) + "\n")
    elif cfg.format == "csv":
        sys.stdout.write(results_csv(summary))
    else:
        lines = [f"Scenario {sc.name}: N={sc.N}, T={sc.T}, R={sc.R}, {sc.replicates} replicates, seed {sc.seed}"]
        lines.append(f"{'Model':<10} {'conv':>5} {'bnd':>4} {'mean':>8} {'MC se':>6} {'median':>8} {'IQR':>7}")
        ranks = {r["model"]: r["rank"] for r in precision_comparison(summary)}
        for name, s in summary.models.items():
            lines.append(
                f"{name:<10} {s.converged:>5} {s.boundary:>4} {s.mean:>8.2f} {s.mc_se:>6.2f} "
                f"{s.median:>8.2f} {s.iqr:>7.2f}  (precision rank {ranks[name]})"
            )
        sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "gof": cmd_gof,
    "compare": cmd_compare,
    "simulate": cmd_simulate,
    "study": cmd_study,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="closedpop", description="Closed-population capture-recapture models.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True, fitting=True):
        p.add_argument("--seed", type=int, default=1, help="RNG seed (default 1)")
        p.add_argument("--out", help="output file (directory for study)")
        p.add_argument("--format", choices=("table", "json", "csv"), default="table")
        p.add_argument("--model", action="append", help="model spec, e.g. Mh^2; repeat or comma-separate")
        if data:
            p.add_argument("--data", help="encounter history file")
            p.add_argument("--R", type=int, help="number of states (default: largest label)")
        if fitting:
            p.add_argument("--starts", type=int, default=10, help="optimiser starts (default 10)")
            p.add_argument("--approach", choices=("unconditional", "conditional"), default="unconditional")
            p.add_argument("--profile-ci", action="store_true", help="profile-likelihood interval for N")
            p.add_argument(
                "--time-psi", action="store_true", help="one transition matrix per occasion (multi-state models)"
            )

    common(sub.add_parser("fit", help="fit one model"))
    common(sub.add_parser("gof", help="Pearson goodness of fit for one model"))
    common(sub.add_parser("compare", help="fit several models and rank by AIC"))
    for name, helptext in (("simulate", "simulate one dataset"), ("study", "run a simulation study")):
        p = sub.add_parser(name, help=helptext)
        common(p, data=False, fitting=name == "study")
        p.add_argument("--preset", help=f"built-in scenario: {', '.join(sorted(PRESETS))}")
        p.add_argument("--scenario", help="scenario JSON file")
        p.add_argument("--replicates", type=int)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = RunConfig.from_args(args)
        return COMMANDS[cfg.command](cfg)
    except (CliError, DataError, ModelSpecError, FitError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"closedpop: error: {msg}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
