"""Parabolic Anderson model driven by Gaussian noise: chaos expansions,
moment bounds, spectral noise sampling, a split-step solver and
empirical Hoelder analysis."""
from ._backend import name as backend_name
from .chaos import (ChaosEstimate, InitialCondition, chaos_variance, chaos_variance_bound,
                    moment_bound, second_moment_series)
from .errors import (BlowUpError, ConfigError, DomainError, PamlabError, PersistenceError,
                     RegressionError, StatisticsError, UnsupportedRegimeError)
from .holder import HolderFit, IncrementTable, analyze, fit_exponents, increment_moments, lag_design
from .noise import GridSpec, NoiseSpec, sample_noise_path, white_preset
from .solver import FieldEnsemble, mean_check, run_ensemble, solve_one_path

__version__ = "0.1.0"

__all__ = [
    "BlowUpError", "ChaosEstimate", "ConfigError", "DomainError", "FieldEnsemble", "GridSpec",
    "HolderFit", "IncrementTable", "InitialCondition", "NoiseSpec", "PamlabError",
    "PersistenceError", "RegressionError", "StatisticsError", "UnsupportedRegimeError",
    "analyze", "backend_name", "chaos_variance", "chaos_variance_bound", "fit_exponents",
    "increment_moments", "lag_design", "mean_check", "moment_bound", "run_ensemble",
    "sample_noise_path", "second_moment_series", "solve_one_path", "white_preset",
]
