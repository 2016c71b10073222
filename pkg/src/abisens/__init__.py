"""Sensitivity-aware amortized Bayesian inference.

Trains context-conditioned neural approximators (posterior flows and
model-comparison classifiers) over families of power-scaled priors and
simulator variants, then performs near-instant sensitivity analyses over
prior, likelihood, approximator, and data perturbations.
"""

from ._kernels import IMPL as kernel_impl
from .context import (
    ContextPrior,
    ContextVector,
    Family,
    PriorComponent,
    PriorSpec,
    encode_context,
    log_prior_density,
    power_scale_params,
    sample_context,
    sample_prior,
)
from .data import SimulationBatch
from .ensemble import Ensemble, EnsemblePrediction, closed_vs_open_report, ensemble_predict, train_ensemble
from .errors import AbisensError, IntegrityError, NumericError, SimulationError, TrainingError, UsageError
from .sensitivity import (
    DivergenceResult,
    RobustnessResult,
    SensitivityReport,
    bootstrap_variants,
    kl_categorical,
    loo_variants,
    mmd_hypothesis_test,
    mmd_squared_unbiased,
    qualitative_robustness,
    run_sensitivity_grid,
)

__version__ = "0.1.0"
