"""Closed-population capture-recapture with discrete, Markov-evolving states."""

from .data import DataError, Dataset, SufficientStats, parse_dataset, read_dataset, sufficient_stats
from .estimation import (
    FitError,
    FitResult,
    compare_models,
    fit,
    fit_conditional,
    fit_unconditional,
    horvitz_thompson,
    standard_errors,
)
from .gof import GofReport, pearson_gof
from .models import ModelSpec, ModelSpecError, parse_model_spec
from .multistate import MsParams, log_likelihood, never_observed_prob
from .simulate import PRESETS, Scenario, precision_comparison, preset, replicate_rng, run_study, simulate_dataset

__all__ = [
    "DataError",
    "Dataset",
    "FitError",
    "FitResult",
    "GofReport",
    "ModelSpec",
    "ModelSpecError",
    "MsParams",
    "PRESETS",
    "Scenario",
    "SufficientStats",
    "compare_models",
    "fit",
    "fit_conditional",
    "fit_unconditional",
    "horvitz_thompson",
    "log_likelihood",
    "never_observed_prob",
    "parse_dataset",
    "parse_model_spec",
    "pearson_gof",
    "precision_comparison",
    "preset",
    "read_dataset",
    "replicate_rng",
    "run_study",
    "simulate_dataset",
    "standard_errors",
    "sufficient_stats",
]
