"""Concrete experiment definitions: priors, context distributions, data
featurization, and batch simulation for the three built-in tasks.

Simulation fans out over per-row random streams spawned from the root
seed, so batches are reproducible and row-level parallelizable.
"""

from __future__ import annotations

import numpy as np

from .context import (
    ContextPrior,
    ContextVector,
    Family,
    PriorComponent,
    PriorSpec,
    sample_prior,
    sample_scaled_component,
)
from .data import SimulationBatch
from .errors import UsageError
from .nnet.amortizer import default_architecture
from .simulators import (
    DEFAULT_POPULATION,
    DdmParams,
    SirParams,
    simulate_conjugate,
    simulate_decisions,
    simulate_sir,
    simulate_sir_batch,
)


def _spawned_rngs(seed, n):
    children = np.random.SeedSequence(entropy=seed).spawn(n)
    return [np.random.default_rng(c) for c in children]


class ConjugateExperiment:
    """Gaussian location model with unit observation noise; every posterior
    has a closed form, which makes this the end-to-end validation task."""

    name = "conjugate"
    kind = "pe"

    def __init__(self, dim=2, n_obs=10, prior_mean=0.0, prior_sd=1.0,
                 gamma_low=0.5, gamma_high=2.0):
        self.dim = int(dim)
        self.n_obs = int(n_obs)
        if self.dim < 1 or self.n_obs < 1:
            raise UsageError("conjugate task needs dim >= 1 and n_obs >= 1")
        self.prior_mean = float(prior_mean)
        self.prior_sd = float(prior_sd)
        self.prior_spec = PriorSpec(
            tuple(
                PriorComponent(f"theta_{k}", Family.NORMAL, (self.prior_mean, self.prior_sd))
                for k in range(self.dim)
            )
        )
        self.context_prior = ContextPrior(
            np.full(self.dim, np.log(gamma_low)), np.full(self.dim, np.log(gamma_high))
        )
        self.param_names = self.prior_spec.names

    def default_arch(self, **overrides):
        base = dict(
            summary="deepset",
            summary_dim=8,
            summary_hidden=64,
            theta_dim_raw=self.dim,
            n_pad=max(0, 2 - self.dim),
            log_theta=[False] * self.dim,
            flow_blocks=6,
            subnet_hidden=64,
        )
        base.update(overrides)
        return default_architecture("pe", x_dim=self.dim, context_dim=self.context_prior.encoded_dim, **base)

    def simulate_batch(self, n, seed) -> SimulationBatch:
        master = np.random.default_rng(np.random.SeedSequence(entropy=seed))
        u = master.uniform(self.context_prior.log_lower, self.context_prior.log_upper, size=(n, self.dim))
        gamma = np.exp(u)
        theta = self.prior_mean + (self.prior_sd / np.sqrt(gamma)) * master.standard_normal((n, self.dim))
        x = theta[:, None, :] + master.standard_normal((n, self.n_obs, self.dim))
        return SimulationBatch(
            x=x, gamma=gamma, likelihood_choice=np.zeros(n, dtype=int),
            theta=theta, param_names=self.param_names,
        )

    def make_simulator(self, context: ContextVector):
        def simulate(theta, rng):
            return simulate_conjugate(np.atleast_1d(theta), self.n_obs, rng)

        return simulate

    def features_from_raw(self, raw):
        x = np.asarray(raw, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[1] != self.dim:
            raise UsageError(f"observed data must have {self.dim} columns")
        return x

    def context(self, gamma) -> ContextVector:
        return ContextVector(np.broadcast_to(np.asarray(gamma, dtype=float), (self.dim,)).copy())


class SirExperiment:
    """Early-outbreak reported-infection counts; five positive parameters
    under power-scalable priors, observed as a day-indexed count series."""

    name = "sir"
    kind = "pe"

    def __init__(self, horizon_days=14, population=DEFAULT_POPULATION,
                 gamma_low=0.5, gamma_high=2.0):
        self.horizon_days = int(horizon_days)
        self.population = float(population)
        self.prior_spec = PriorSpec((
            PriorComponent("transmission", Family.LOGNORMAL, (np.log(0.4), 0.5)),
            PriorComponent("recovery", Family.LOGNORMAL, (np.log(1.0 / 8.0), 0.2)),
            PriorComponent("delay", Family.LOGNORMAL, (np.log(8.0), 0.2)),
            PriorComponent("i0", Family.GAMMA, (2.0, 20.0)),
            PriorComponent("dispersion", Family.EXPONENTIAL, (5.0,)),
        ))
        k = len(self.prior_spec.components)
        self.context_prior = ContextPrior(np.full(k, np.log(gamma_low)), np.full(k, np.log(gamma_high)))
        self.param_names = self.prior_spec.names

    def default_arch(self, **overrides):
        base = dict(
            summary="recurrent",
            summary_dim=8,
            summary_hidden=32,
            theta_dim_raw=5,
            n_pad=0,
            log_theta=[True] * 5,
            flow_blocks=6,
            subnet_hidden=64,
        )
        base.update(overrides)
        return default_architecture("pe", x_dim=1, context_dim=self.context_prior.encoded_dim, **base)

    def simulate_batch(self, n, seed) -> SimulationBatch:
        rngs = _spawned_rngs(seed, n + 1)
        master = rngs[0]
        k = self.context_prior.n_gamma
        gamma = np.exp(master.uniform(self.context_prior.log_lower, self.context_prior.log_upper, size=(n, k)))
        theta = np.stack([sample_prior(self.prior_spec, gamma[i], master) for i in range(n)])
        # keep the initial count strictly below the population size
        np.minimum(theta[:, 3], 0.5 * self.population, out=theta[:, 3])
        counts = simulate_sir_batch(theta, self.horizon_days, self.population, rngs[1:])
        return SimulationBatch(
            x=np.log1p(counts.astype(float))[:, :, None],
            gamma=gamma, likelihood_choice=np.zeros(n, dtype=int),
            theta=theta, param_names=self.param_names,
        )

    def make_simulator(self, context: ContextVector):
        def simulate(theta, rng):
            params = SirParams(*np.asarray(theta, dtype=float))
            counts = simulate_sir(params, self.horizon_days, self.population, rng)
            return np.log1p(counts.astype(float))[:, None]

        return simulate

    def simulate_counts(self, theta, rng):
        params = SirParams(*np.asarray(theta, dtype=float))
        return simulate_sir(params, self.horizon_days, self.population, rng)

    def features_from_raw(self, raw):
        counts = np.asarray(raw, dtype=float)
        if counts.ndim == 2 and counts.shape[1] == 1:
            counts = counts[:, 0]
        if counts.ndim != 1:
            raise UsageError("observed SIR data must be a single count column")
        if np.any(counts < 0):
            raise UsageError("reported counts must be nonnegative")
        return np.log1p(counts)[:, None]

    def context(self, gamma) -> ContextVector:
        k = self.context_prior.n_gamma
        return ContextVector(np.broadcast_to(np.asarray(gamma, dtype=float), (k,)).copy())


class DecisionExperiment:
    """Model comparison between the Gaussian-noise and heavy-tailed
    evidence-accumulation models on signed response times.

    The scalable context components temper the two hyperpriors behind the
    stability index; the shared decision parameters keep fixed priors.
    """

    name = "decisions"
    kind = "bmc"
    model_names = ("ddm", "lfm")

    def __init__(self, n_trials=50, dt=1e-3, gamma_low=0.1, gamma_high=10.0):
        self.n_trials = int(n_trials)
        self.dt = float(dt)
        self.base_prior = PriorSpec((
            PriorComponent("drift", Family.NORMAL, (0.0, 2.0), scalable=False),
            PriorComponent("threshold", Family.GAMMA, (5.0, 0.3), scalable=False),
            PriorComponent("start", Family.UNIFORM, (0.3, 0.7), scalable=False),
            PriorComponent("t0", Family.UNIFORM, (0.1, 0.5), scalable=False),
        ))
        self.hyper_prior = PriorSpec((
            PriorComponent("alpha_location", Family.NORMAL, (1.65, 0.15)),
            PriorComponent("alpha_scale", Family.TRUNCATED_NORMAL, (0.3, 0.1, 0.0, 5.0)),
        ))
        self.context_prior = ContextPrior(
            np.full(2, np.log(gamma_low)), np.full(2, np.log(gamma_high))
        )
        self.param_names = []

    def default_arch(self, **overrides):
        base = dict(
            summary="deepset",
            summary_dim=16,
            summary_hidden=64,
            n_models=2,
            head_hidden=64,
        )
        base.update(overrides)
        return default_architecture("bmc", x_dim=1, context_dim=self.context_prior.encoded_dim, **base)

    def _draw_alpha(self, gamma, rng):
        mu = float(sample_scaled_component(self.hyper_prior.components[0], gamma[0], rng))
        sd = float(sample_scaled_component(self.hyper_prior.components[1], gamma[1], rng))
        sd = max(sd, 1e-6)
        a = (1.0 - mu) / sd
        b = (2.0 - mu) / sd
        from scipy.special import ndtr, ndtri

        lo, hi = float(ndtr(a)), float(ndtr(b))
        u = rng.random()
        alpha = mu + sd * float(ndtri(lo + u * (hi - lo)))
        return float(np.clip(alpha, 1.0 + 1e-9, 2.0))

    def _draw_trial_params(self, label, gamma, rng) -> DdmParams:
        base = sample_prior(self.base_prior, np.empty(0), rng)
        alpha = self._draw_alpha(gamma, rng) if label == 1 else None
        return DdmParams(drift=base[0], threshold=base[1], start=base[2], t0=base[3], alpha=alpha)

    def simulate_batch(self, n, seed) -> SimulationBatch:
        rngs = _spawned_rngs(seed, n + 1)
        master = rngs[0]
        gamma = np.exp(master.uniform(self.context_prior.log_lower, self.context_prior.log_upper, size=(n, 2)))
        labels = master.integers(0, 2, size=n)  # uniform model prior
        x = np.empty((n, self.n_trials, 1))
        for i in range(n):
            params = self._draw_trial_params(int(labels[i]), gamma[i], rngs[i + 1])
            kind = self.model_names[int(labels[i])]
            trial = simulate_decisions(params, self.n_trials, self.dt, kind, rngs[i + 1])
            x[i, :, 0] = trial.rt
        return SimulationBatch(
            x=x, gamma=gamma, likelihood_choice=np.zeros(n, dtype=int),
            labels=labels, param_names=[],
        )

    def features_from_raw(self, raw):
        rt = np.asarray(raw, dtype=float)
        if rt.ndim == 2 and rt.shape[1] == 1:
            rt = rt[:, 0]
        if rt.ndim != 1:
            raise UsageError("observed decision data must be a single response-time column")
        return rt[:, None]

    def context(self, gamma) -> ContextVector:
        return ContextVector(np.broadcast_to(np.asarray(gamma, dtype=float), (2,)).copy())


EXPERIMENTS = {
    "conjugate": ConjugateExperiment,
    "sir": SirExperiment,
    "decisions": DecisionExperiment,
}


def make_experiment(name, **params):
    if name not in EXPERIMENTS:
        raise UsageError(f"unknown experiment {name!r}; choose from {sorted(EXPERIMENTS)}")
    return EXPERIMENTS[name](**params)
