"""Bayesian inference for derived outcomes whose source variables have missing values."""

__version__ = "0.1.0"

from .dataset import Dataset, DerivedDefinition, VariableSpec, derive_outcome, derived_definition, load_csv, write_csv
from .distributions import RngStream
from .gcomp import EstimandCombiner, TargetPopulation, ThetaDraws, gcompute
from .imputation import impute, three_step
from .mcmc import ChainConfig, Draws, rhat, run_mcmc, split_rhat, summarize
from .models import build_model

__all__ = [
    "ChainConfig",
    "Dataset",
    "DerivedDefinition",
    "Draws",
    "EstimandCombiner",
    "RngStream",
    "TargetPopulation",
    "ThetaDraws",
    "VariableSpec",
    "build_model",
    "derive_outcome",
    "derived_definition",
    "gcompute",
    "impute",
    "load_csv",
    "rhat",
    "run_mcmc",
    "split_rhat",
    "summarize",
    "three_step",
    "write_csv",
]
