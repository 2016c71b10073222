"""Forward models: SIR outbreak reporting, evidence-accumulation decision
models, and a conjugate Gaussian oracle."""

from .conjugate import analytic_gaussian_posterior, simulate_conjugate
from .decisions import DdmParams, TrialData, sample_alpha_stable, simulate_decisions
from .sir import (
    DEFAULT_POPULATION,
    SirParams,
    integrate_sir,
    sample_negbinomial,
    simulate_sir,
    simulate_sir_batch,
)

__all__ = [
    "DEFAULT_POPULATION",
    "DdmParams",
    "SirParams",
    "TrialData",
    "analytic_gaussian_posterior",
    "integrate_sir",
    "sample_alpha_stable",
    "sample_negbinomial",
    "simulate_conjugate",
    "simulate_decisions",
    "simulate_sir",
    "simulate_sir_batch",
]
