"""First-passage samplers for the two evidence-accumulation models.

Both walk an Euler-Maruyama path between an absorbing lower boundary at 0
and an upper boundary at the decision threshold. The diffusion variant
uses Gaussian steps; the heavy-tailed variant replaces them with symmetric
alpha-stable increments, which permits large accumulation jumps.

Random numbers are consumed in fixed-size blocks of 1024 steps per trial
attempt, so results are reproducible regardless of where a trial ends and
identical between the compiled and fallback scan kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .._kernels import first_passage_scan
from ..errors import SimulationError, UsageError

NOISE_BLOCK = 1024
TRIAL_CAP_SECONDS = 10.0
_MAX_RESAMPLES = 1000
_STABLE_SCALE = 1.0 / math.sqrt(2.0)


@dataclass(frozen=True)
class DdmParams:
    """Drift rate, decision threshold, relative start point, non-decision
    time, and (for the heavy-tailed model) the stability index."""

    drift: float
    threshold: float
    start: float
    t0: float
    alpha: float | None = None

    def __post_init__(self):
        if self.threshold <= 0:
            raise UsageError("decision threshold must be positive")
        if not 0 < self.start < 1:
            raise UsageError("relative start point must lie in (0, 1)")
        if self.t0 < 0:
            raise UsageError("non-decision time must be nonnegative")
        if self.alpha is not None and not 1 < self.alpha <= 2:
            raise UsageError("stability index must lie in (1, 2]")


@dataclass
class TrialData:
    """Signed response times (negative = lower boundary) plus resampling
    bookkeeping for capped trials."""

    rt: np.ndarray
    n_resampled: int = 0
    trials_capped: int = 0
    degenerate_warning: bool = False


def sample_alpha_stable(alpha, scale, rng, size=None):
    """Symmetric alpha-stable draws via the Chambers-Mallows-Stuck
    transform; alpha = 2 recovers a normal with variance 2 * scale^2."""
    if not 1 < alpha <= 2:
        raise UsageError("stability index must lie in (1, 2]")
    if scale <= 0:
        raise UsageError("scale must be positive")
    u = rng.random(size)
    w = rng.standard_exponential(size)
    angle = math.pi * (u - 0.5)
    with np.errstate(divide="ignore", over="ignore"):
        value = (
            np.sin(alpha * angle)
            / np.cos(angle) ** (1.0 / alpha)
            * (np.cos(angle - alpha * angle) / w) ** ((1.0 - alpha) / alpha)
        )
    return scale * value


def _ddm_increments(rng, n, drift_dt, sqrt_dt):
    return drift_dt + rng.standard_normal(n) * sqrt_dt


def _stable_increments(rng, n, drift_dt, alpha, noise_scale):
    return drift_dt + sample_alpha_stable(alpha, 1.0, rng, n) * noise_scale


def simulate_decisions(params: DdmParams, n_trials, dt, model_kind, rng) -> TrialData:
    """First-passage simulation of ``n_trials`` decisions.

    model_kind is "ddm" (Gaussian noise) or "lfm" (alpha-stable noise;
    requires ``params.alpha``). Trials that fail to terminate within the
    10 s cap are resampled, and a degenerate-parameter warning is attached
    when more than 1% of trials needed that.
    """
    if model_kind not in ("ddm", "lfm"):
        raise UsageError(f"unknown decision model {model_kind!r}")
    if model_kind == "lfm" and params.alpha is None:
        raise UsageError("the heavy-tailed model needs a stability index")
    if not 0 < dt <= 0.01:
        raise UsageError("step size must lie in (0, 0.01]")
    if n_trials < 1:
        raise UsageError("need at least one trial")

    drift_dt = params.drift * dt
    start = params.start * params.threshold
    max_steps = int(round(TRIAL_CAP_SECONDS / dt))
    if model_kind == "ddm":
        sqrt_dt = math.sqrt(dt)
        draw = lambda n: _ddm_increments(rng, n, drift_dt, sqrt_dt)
    else:
        noise_scale = _STABLE_SCALE * dt ** (1.0 / params.alpha)
        draw = lambda n: _stable_increments(rng, n, drift_dt, params.alpha, noise_scale)

    rts = np.empty(n_trials)
    n_resampled = 0
    trials_capped = 0
    for trial in range(n_trials):
        capped = False
        attempts = 0
        while True:
            x = start
            consumed = 0
            hit = 0
            while consumed < max_steps:
                block = min(NOISE_BLOCK, max_steps - consumed)
                inc = draw(block)
                k, hit, x = first_passage_scan(x, params.threshold, inc)
                consumed += k
                if hit:
                    break
            if hit:
                rt = params.t0 + consumed * dt
                rts[trial] = rt if hit == 2 else -rt
                break
            attempts += 1
            n_resampled += 1
            capped = True
            if attempts >= _MAX_RESAMPLES:
                raise SimulationError(f"trial {trial} failed to terminate after {attempts} resamples")
        if capped:
            trials_capped += 1
    return TrialData(
        rt=rts,
        n_resampled=n_resampled,
        trials_capped=trials_capped,
        degenerate_warning=trials_capped > 0.01 * n_trials,
    )
