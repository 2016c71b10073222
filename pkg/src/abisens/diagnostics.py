"""Closed-world validation metrics and typical-set OOD detection.

Covers posterior-error (MAE), rank-based calibration (SBC-derived ECE),
posterior contraction, classifier scores (accuracy / Brier / binned ECE),
and a kernel-density typicality check of observed summaries against the
simulated summary distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .context import PriorSpec, sample_prior, scaled_prior_variance
from .data import SimulationBatch
from .errors import UsageError
from .nnet.amortizer import Checkpoint, checkpoint_summaries, predict_model_probs_batch, sample_posterior_batch

SBC_LEVELS = np.linspace(0.005, 0.995, 20)  # central-interval masses, 0.5%..99.5%


@dataclass
class ValidationScores:
    mae: float
    ece: float
    contraction: float
    accuracy: float | None = None
    brier: float | None = None
    per_parameter: dict = field(default_factory=dict)


def mae(draw_sets, truths) -> float:
    """Absolute value of the mean signed deviation, averaged over test sets
    and then over parameters.

    Note this is |mean(draws) - truth| per set (symmetric posterior errors
    cancel), not the mean absolute deviation of single draws; see
    ``mean_absolute_deviation`` for that alternative.
    """
    return float(mae_per_parameter(draw_sets, truths).mean())


def mae_per_parameter(draw_sets, truths) -> np.ndarray:
    draw_sets, truths = _check_sets(draw_sets, truths)
    return np.abs(draw_sets.mean(axis=1) - truths).mean(axis=0)


def mean_absolute_deviation(draw_sets, truths) -> float:
    """Mean |draw - truth| over draws, sets, and parameters."""
    draw_sets, truths = _check_sets(draw_sets, truths)
    return float(np.abs(draw_sets - truths[:, None, :]).mean())


def _check_sets(draw_sets, truths):
    draw_sets = np.asarray(draw_sets, dtype=float)
    truths = np.asarray(truths, dtype=float)
    if draw_sets.ndim == 2:
        draw_sets = draw_sets[None, :, :]
    if truths.ndim == 1:
        truths = truths.reshape(draw_sets.shape[0], -1)
    if draw_sets.ndim != 3 or truths.shape != (draw_sets.shape[0], draw_sets.shape[2]):
        raise UsageError("expected (J, S, D) draw sets with (J, D) truths")
    return draw_sets, truths


def sbc_ranks(sampler, prior_spec: PriorSpec, simulator, n_sims, n_draws, gamma, rng,
              context=None) -> np.ndarray:
    """Rank of each true parameter among its posterior draws.

    ``sampler`` is a PE checkpoint or a callable (x, n_draws, rng) ->
    draws; ``simulator`` maps (theta, rng) -> data. Ranks of an exactly
    calibrated posterior are uniform on {0..n_draws}.
    """
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    thetas = sample_prior(prior_spec, gamma, rng, size=n_sims)
    xs = [simulator(thetas[j], rng) for j in range(n_sims)]
    if isinstance(sampler, Checkpoint):
        if context is None:
            raise UsageError("checkpoint-based SBC needs the evaluation context")
        from .context import encode_context

        enc = np.repeat(encode_context(context)[None, :], n_sims, axis=0)
        x_arr = np.asarray(xs, dtype=float)
        if x_arr.ndim == 2:
            x_arr = x_arr[:, :, None]
        draws = sample_posterior_batch(sampler, x_arr, enc, n_draws, rng)
    else:
        draws = np.stack([sampler(xs[j], n_draws, rng) for j in range(n_sims)])
    draws = draws.reshape(n_sims, n_draws, -1)
    return (draws < thetas[:, None, :]).sum(axis=1)


def ece_from_ranks(ranks, n_draws) -> np.ndarray:
    """Per-dimension calibration error: median absolute deviation between
    empirical and nominal central-interval coverage over the 20 levels."""
    ranks = np.atleast_2d(np.asarray(ranks))
    u = (ranks + 0.5) / (n_draws + 1.0)
    out = np.empty(ranks.shape[1])
    for d in range(ranks.shape[1]):
        dev = np.abs(u[:, d] - 0.5)
        emp = np.array([(dev <= q / 2).mean() for q in SBC_LEVELS])
        out[d] = np.median(np.abs(emp - SBC_LEVELS))
    return out


def sbc_ece(sampler, prior_spec, simulator, n_sims, n_draws, gamma, rng, context=None) -> float:
    """Simulation-based calibration error: median over levels per
    dimension, then mean over dimensions."""
    if n_sims < 100:
        raise UsageError("SBC needs at least 100 simulations")
    ranks = sbc_ranks(sampler, prior_spec, simulator, n_sims, n_draws, gamma, rng, context)
    return float(ece_from_ranks(ranks, n_draws).mean())


def posterior_contraction(draws, prior_spec: PriorSpec, gamma) -> float:
    """1 - Var(posterior) / Var(power-scaled prior), per dimension.

    Accepts one (S, D) draw set or (J, S, D) sets; multiple sets are
    median-aggregated per dimension before averaging over dimensions.
    """
    prior_var = scaled_prior_variance(prior_spec, gamma)
    if np.any(prior_var <= 0):
        raise UsageError("prior variance must be positive")
    draws = np.asarray(draws, dtype=float)
    single = draws.ndim == 2
    if single:
        draws = draws[None, :, :]
    if draws.shape[2] != prior_var.shape[0]:
        raise UsageError("draw dimension does not match the prior")
    per_set = 1.0 - draws.var(axis=1) / prior_var[None, :]
    per_dim = per_set[0] if single else np.median(per_set, axis=0)
    return float(per_dim.mean())


@dataclass
class ClassifierScores:
    accuracy: float
    brier: float
    ece: float
    mae: float


def classification_scores(probs, labels, n_bins=10) -> ClassifierScores:
    """Accuracy, Brier score, binned calibration error on the top-class
    confidence, and the mean true-class probability error."""
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    labels = np.asarray(labels, dtype=int)
    if probs.shape[0] != labels.shape[0]:
        raise UsageError("probabilities and labels must align")
    n, j = probs.shape
    onehot = np.zeros((n, j))
    onehot[np.arange(n), labels] = 1.0
    pred = probs.argmax(axis=1)
    accuracy = float((pred == labels).mean())
    brier = float(((probs - onehot) ** 2).sum(axis=1).mean())
    confidence = probs.max(axis=1)
    correct = (pred == labels).astype(float)
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    ece = 0.0
    for b in range(n_bins):
        if b == n_bins - 1:
            mask = (confidence >= edges[b]) & (confidence <= edges[b + 1])
        else:
            mask = (confidence >= edges[b]) & (confidence < edges[b + 1])
        if mask.any():
            ece += mask.mean() * abs(correct[mask].mean() - confidence[mask].mean())
    true_prob_err = float(np.abs(probs[np.arange(n), labels] - 1.0).mean())
    return ClassifierScores(accuracy=accuracy, brier=brier, ece=float(ece), mae=true_prob_err)


def classifier_metrics(checkpoint: Checkpoint, testset: SimulationBatch, n_bins=10) -> ClassifierScores:
    if testset.labels is None or len(testset) == 0:
        raise UsageError("classifier metrics need a labeled, nonempty test set")
    probs = predict_model_probs_batch(checkpoint, testset.x, testset.context_matrix())
    return classification_scores(probs, testset.labels, n_bins)


@dataclass
class OodResult:
    """Typicality score of the observed summary against the simulated
    summary distribution."""

    score: float
    interval: tuple
    flagged: bool
    below_lower: bool
    per_member: list | None = None

    def __post_init__(self):
        lo, hi = self.interval
        self.flagged = bool(self.score < lo or self.score > hi)
        self.below_lower = bool(self.score < lo)


def _kde_scores(summaries, query, level_alpha):
    """Leave-one-out KDE log-densities of the reference summaries (the
    typical set) and the plain KDE log-density of the query point."""
    n, d = summaries.shape
    sd = np.maximum(summaries.std(axis=0), 1e-8)
    h = sd * n ** (-1.0 / (d + 4))  # Scott's rule, diagonal bandwidth
    log_norm = -np.log(h).sum() - 0.5 * d * math.log(2.0 * math.pi)
    u = summaries / h
    d2 = cdist(u, u, "sqeuclidean")
    np.fill_diagonal(d2, np.inf)
    loo = logsumexp(-0.5 * d2, axis=1) - math.log(n - 1) + log_norm
    dq = cdist(np.atleast_2d(query) / h, u, "sqeuclidean")[0]
    score = float(logsumexp(-0.5 * dq) - math.log(n) + log_norm)
    lo = float(np.quantile(loo, level_alpha / 2))
    hi = float(np.quantile(loo, 1.0 - level_alpha / 2))
    return score, (lo, hi)


def typical_set_ood(approximator, sim_dataset, x_obs, level_alpha=0.05) -> OodResult:
    """Flag an observation whose learned-summary log-density falls outside
    the central typicality interval of the simulated summaries.

    ``approximator`` is a checkpoint or an ensemble; for ensembles each
    member is tested in its own summary space and the headline result is
    the member median with a majority-vote flag.
    """
    if not 0 < level_alpha < 1:
        raise UsageError("the typicality level must lie in (0, 1)")
    x_sims = sim_dataset.x if isinstance(sim_dataset, SimulationBatch) else np.asarray(sim_dataset, dtype=float)
    if x_sims.ndim == 2:
        x_sims = x_sims[:, :, None]
    if x_sims.shape[0] < 500:
        raise UsageError("typicality estimation needs at least 500 simulations")
    x_obs = np.asarray(x_obs, dtype=float)
    if x_obs.ndim == 1:
        x_obs = x_obs[:, None]

    members = approximator.members if hasattr(approximator, "members") else [approximator]
    results = []
    for member in members:
        summaries = checkpoint_summaries(member, x_sims)
        query = checkpoint_summaries(member, x_obs[None, :, :])[0]
        score, interval = _kde_scores(summaries, query, level_alpha)
        results.append(OodResult(score=score, interval=interval, flagged=False, below_lower=False))
    if len(results) == 1:
        return results[0]
    scores = np.array([r.score for r in results])
    lows = np.array([r.interval[0] for r in results])
    highs = np.array([r.interval[1] for r in results])
    flags = sum(r.flagged for r in results)
    headline = OodResult(
        score=float(np.median(scores)),
        interval=(float(np.median(lows)), float(np.median(highs))),
        flagged=False,
        below_lower=False,
        per_member=results,
    )
    # majority vote overrides the median-score comparison when they differ
    headline.flagged = flags * 2 >= len(results)
    headline.below_lower = bool(np.median(scores) < np.median(lows))
    return headline


def validation_scores(checkpoint: Checkpoint, testset: SimulationBatch, prior_spec: PriorSpec,
                      n_draws=250, seed=0) -> ValidationScores:
    """One-stop closed-world scores for a PE checkpoint on held-out
    simulations (each scored under its own stored context)."""
    if checkpoint.kind != "pe":
        raise UsageError("validation_scores expects a parameter-estimation checkpoint")
    if len(testset) == 0:
        raise UsageError("need a nonempty test set")
    rng = np.random.default_rng(seed)
    draws = sample_posterior_batch(checkpoint, testset.x, testset.context_matrix(), n_draws, rng)
    ranks = (draws < testset.theta[:, None, :]).sum(axis=1)
    ece_dims = ece_from_ranks(ranks, n_draws)
    mae_dims = mae_per_parameter(draws, testset.theta)
    # contraction under each simulation's own exponents, median-aggregated
    pvar = np.stack([scaled_prior_variance(prior_spec, g) for g in testset.gamma])
    per_set = 1.0 - draws.var(axis=1) / pvar
    pc_dims = np.median(per_set, axis=0)
    names = testset.param_names or [f"param_{k}" for k in range(draws.shape[2])]
    return ValidationScores(
        mae=float(mae_dims.mean()),
        ece=float(ece_dims.mean()),
        contraction=float(pc_dims.mean()),
        per_parameter={
            "mae": dict(zip(names, mae_dims.tolist())),
            "ece": dict(zip(names, ece_dims.tolist())),
            "contraction": dict(zip(names, pc_dims.tolist())),
        },
    )
