"""Early-outbreak S/I/R model with delayed negative-binomial reporting.

The deterministic compartment system runs on an Euler grid (10 substeps
per day by default); observation noise enters only through the reporting
step, which draws counts around the delayed new-infection rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .._kernels import sir_curves
from ..errors import SimulationError, UsageError

DEFAULT_POPULATION = 83e6  # population behind the outbreak series (Germany)
SUBSTEPS_PER_DAY = 10


@dataclass(frozen=True)
class SirParams:
    """Transmission/recovery rates (1/day), reporting delay (days),
    initial infected count, and reporting noise dispersion."""

    transmission: float
    recovery: float
    delay: float
    i0: float
    dispersion: float

    def __post_init__(self):
        vals = (self.transmission, self.recovery, self.delay, self.i0, self.dispersion)
        if any(v <= 0 or not np.isfinite(v) for v in vals):
            raise UsageError("all SIR parameters must be positive and finite")

    def as_array(self):
        return np.array([self.transmission, self.recovery, self.delay, self.i0, self.dispersion])


def sample_negbinomial(mean, dispersion, rng, size=None):
    """Negative-binomial counts in the mean/dispersion parameterization:
    E = mean and Var = mean + mean^2 / dispersion."""
    mean = np.asarray(mean, dtype=float)
    if np.any(mean < 0):
        raise UsageError("negative-binomial mean must be nonnegative")
    if dispersion <= 0:
        raise UsageError("dispersion must be positive")
    p = dispersion / (dispersion + mean)
    return rng.negative_binomial(dispersion, p, size)


def _delayed_means(inew_days, delay, i0, transmission, horizon):
    """Reporting mean per day 1..horizon: the new-infection rate ``delay``
    days earlier, linearly interpolated; before day 0 falls back to the
    constant early-phase proxy i0 * transmission."""
    t = np.arange(1.0, horizon + 1.0)
    tau = t - delay
    early = tau < 0
    tau_c = np.clip(tau, 0.0, horizon)
    lo = np.floor(tau_c).astype(int)
    hi = np.minimum(lo + 1, horizon)
    frac = tau_c - lo
    means = inew_days[lo] * (1.0 - frac) + inew_days[hi] * frac
    means[early] = i0 * transmission
    return np.maximum(means, 0.0)


def integrate_sir(params: SirParams, horizon_days, population, substeps=SUBSTEPS_PER_DAY):
    """Deterministic part only: per-day new-infection rates plus the full
    substep (S, I, R) trajectory."""
    if horizon_days < 1:
        raise UsageError("horizon must be at least one day")
    if population <= params.i0:
        raise UsageError("population must exceed the initial infected count")
    inew, status, path = sir_curves(
        np.array([params.transmission]),
        np.array([params.recovery]),
        np.array([params.i0]),
        float(population),
        int(horizon_days),
        int(substeps),
        keep_path=True,
    )
    if status[0] >= 0:
        raise SimulationError(f"SIR state became non-finite at substep {int(status[0])}")
    return inew[0], path[0]


def simulate_sir(params: SirParams, horizon_days, population, rng, substeps=SUBSTEPS_PER_DAY):
    """Reported infection counts for days 1..horizon."""
    inew, _ = integrate_sir(params, horizon_days, population, substeps)
    means = _delayed_means(inew, params.delay, params.i0, params.transmission, int(horizon_days))
    return sample_negbinomial(means, params.dispersion, rng)


def simulate_sir_batch(param_matrix, horizon_days, population, rngs, substeps=SUBSTEPS_PER_DAY):
    """Batch counterpart: rows of (transmission, recovery, delay, i0,
    dispersion), one independent random stream per row."""
    pm = np.atleast_2d(np.asarray(param_matrix, dtype=float))
    if pm.shape[1] != 5:
        raise UsageError("parameter matrix must have 5 columns")
    if np.any(pm <= 0):
        raise UsageError("all SIR parameters must be positive")
    if np.any(pm[:, 3] >= population):
        raise UsageError("population must exceed every initial infected count")
    horizon = int(horizon_days)
    inew, status, _ = sir_curves(
        np.ascontiguousarray(pm[:, 0]),
        np.ascontiguousarray(pm[:, 1]),
        np.ascontiguousarray(pm[:, 3]),
        float(population),
        horizon,
        int(substeps),
    )
    bad = np.flatnonzero(status >= 0)
    if bad.size:
        raise SimulationError(f"SIR state became non-finite (row {int(bad[0])}, substep {int(status[bad[0]])})")
    counts = np.empty((pm.shape[0], horizon), dtype=np.int64)
    for b in range(pm.shape[0]):
        means = _delayed_means(inew[b], pm[b, 2], pm[b, 3], pm[b, 0], horizon)
        counts[b] = sample_negbinomial(means, pm[b, 4], rngs[b])
    return counts
