"""Conjugate Gaussian location model: exact posteriors for validating the
neural approximators end to end.

Observations are unit-noise Gaussians around an unknown mean whose prior
is a (power-scaled) normal, so the posterior under any scaling exponent is
available in closed form.
"""

from __future__ import annotations

import numpy as np

from ..errors import UsageError


def simulate_conjugate(theta, n_obs, rng):
    """n_obs unit-noise observations around theta; (n_obs, D) for vector
    theta, (n_obs,) for scalar."""
    if n_obs < 0:
        raise UsageError("number of observations must be nonnegative")
    theta = np.asarray(theta, dtype=float)
    if theta.ndim == 0:
        return theta + rng.standard_normal(n_obs)
    return theta[None, :] + rng.standard_normal((n_obs, theta.shape[0]))


def analytic_gaussian_posterior(data, prior_mean, prior_sd, gamma):
    """Exact posterior mean/sd under the power-scaled prior.

    Scaling sharpens the prior to sd / sqrt(gamma); with unit observation
    noise the posterior precision is gamma / sd^2 + n. With no data the
    scaled prior itself is returned. Vectorizes over independent parameter
    dimensions when ``data`` has a second axis.
    """
    prior_mean = np.asarray(prior_mean, dtype=float)
    prior_sd = np.asarray(prior_sd, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if np.any(prior_sd <= 0):
        raise UsageError("prior sd must be positive")
    if np.any(gamma <= 0):
        raise UsageError("scaling exponent must be positive")
    data = np.asarray(data, dtype=float)
    n = data.shape[0] if data.size else 0
    total = data.sum(axis=0) if n else np.zeros_like(prior_mean, dtype=float)
    precision = gamma / prior_sd**2 + n
    mean = (gamma * prior_mean / prior_sd**2 + total) / precision
    return mean, 1.0 / np.sqrt(precision)
