"""Deep ensembles over a shared simulation set.

Members are identically configured networks that differ only in their
initialization/shuffling seed; training data is simulated once and reused,
so across-member spread isolates the approximation uncertainty. Open-world
disagreement far above the closed-world (simulated) level indicates a
simulation gap.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import SimulationBatch
from .errors import TrainingError, UsageError
from .nnet.amortizer import (
    Checkpoint,
    predict_model_probs_batch,
    sample_posterior_batch,
)
from .nnet.training import TrainConfig, train


class EnsembleTrainingError(TrainingError):
    """Raised when some members fail; carries the failing indices."""

    def __init__(self, failed_members, causes):
        self.failed_members = list(failed_members)
        self.causes = causes
        super().__init__(f"training failed for ensemble members {self.failed_members}")


@dataclass
class Ensemble:
    members: list[Checkpoint]
    dataset_hash: str
    member_seeds: list[int]

    def __post_init__(self):
        if len(self.members) < 2:
            raise UsageError("an ensemble needs at least two members")
        arch0 = self.members[0].architecture
        for m in self.members[1:]:
            if m.architecture != arch0:
                raise UsageError("ensemble members must share one architecture")
            if m.dataset_hash != self.dataset_hash:
                raise UsageError("ensemble member was trained on a different dataset")
        if self.members[0].dataset_hash != self.dataset_hash:
            raise UsageError("ensemble member was trained on a different dataset")
        if len(set(self.member_seeds)) != len(self.member_seeds):
            raise UsageError("member seeds must be pairwise distinct")

    def __len__(self):
        return len(self.members)

    @property
    def kind(self) -> str:
        return self.members[0].kind


@dataclass
class EnsemblePrediction:
    """Per-member outputs plus their equal-weight mixture and spread."""

    per_member: np.ndarray
    mixture: np.ndarray
    disagreement: np.ndarray
    disagreement_max: float


def member_seeds_from_root(root_seed, n_members):
    seeds = [int(s) for s in np.random.SeedSequence(root_seed).generate_state(n_members)]
    if len(set(seeds)) != len(seeds):  # astronomically unlikely
        seeds = [s + k for k, s in enumerate(seeds)]
    return seeds


def train_ensemble(config: TrainConfig, dataset: SimulationBatch, n_members, root_seed,
                   architecture, val_data=None) -> Ensemble:
    """Train ``n_members`` runs that differ only in their seed.

    The dataset is shared (hash recorded per member); any member failure
    aborts with a report listing the failed indices.
    """
    if n_members < 2:
        raise UsageError("an ensemble needs at least two members")
    dataset_hash = dataset.content_hash()
    seeds = member_seeds_from_root(root_seed, n_members)
    members, failed, causes = [], [], {}
    for k, seed in enumerate(seeds):
        try:
            members.append(
                train(replace(config, seed=seed), dataset, architecture,
                      val_data=val_data, dataset_hash=dataset_hash)
            )
        except TrainingError as exc:
            failed.append(k)
            causes[k] = exc
    if failed:
        raise EnsembleTrainingError(failed, causes)
    return Ensemble(members=members, dataset_hash=dataset_hash, member_seeds=seeds)


def ensemble_predict(ensemble: Ensemble, x_obs, context, n_draws_per_member, rng) -> EnsemblePrediction:
    """Query every member on one dataset.

    Parameter estimation pools the member draws and reports the
    per-dimension standard deviation of member posterior means; model
    comparison averages the simplices and reports the per-model standard
    deviation of member probabilities.
    """
    if ensemble.kind == "pe":
        draws = np.stack([
            sample_posterior_batch(m, _ensure_batch(x_obs), _enc(m, context), n_draws_per_member, rng)[0]
            for m in ensemble.members
        ])
        means = draws.mean(axis=1)
        spread = means.std(axis=0)
        return EnsemblePrediction(
            per_member=draws,
            mixture=draws.reshape(-1, draws.shape[-1]),
            disagreement=spread,
            disagreement_max=float(spread.max()),
        )
    probs = np.stack([
        predict_model_probs_batch(m, _ensure_batch(x_obs), _enc(m, context))[0]
        for m in ensemble.members
    ])
    spread = probs.std(axis=0)
    return EnsemblePrediction(
        per_member=probs,
        mixture=probs.mean(axis=0),
        disagreement=spread,
        disagreement_max=float(spread.max()),
    )


def _ensure_batch(x_obs):
    x = np.asarray(x_obs, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim == 2:
        x = x[None, :, :]
    return x


def _enc(member, context):
    from .nnet.amortizer import _encoded_context

    return _encoded_context(member, context)[None, :]


@dataclass
class GapReport:
    """Closed-world vs open-world comparison for simulation-gap detection."""

    member_metric: list[float]
    member_metric_sd: float
    closed_disagreement: float
    open_disagreement: float
    ratio: float
    threshold: float
    flagged: bool
    kind: str = "pe"
    closed_disagreements: np.ndarray = field(default=None, repr=False)


def closed_vs_open_report(ensemble: Ensemble, sim_testset: SimulationBatch, x_obs, context,
                          n_eval=100, n_draws=100, seed=0, threshold=3.0) -> GapReport:
    """Contrast across-member disagreement on held-out simulations with the
    disagreement on an observed dataset.

    The closed-world reference is the median per-simulation disagreement
    (each simulation scored under its own stored context); a ratio above
    ``threshold`` flags a simulation gap. Per-member closed-world accuracy
    (BMC) or posterior-mean error (PE) is reported alongside.
    """
    if len(sim_testset) == 0:
        raise UsageError("need a nonempty held-out simulation set")
    n_eval = min(n_eval, len(sim_testset))
    subset = sim_testset.subset(np.arange(n_eval))
    ctx_rows = subset.context_matrix()
    rng = np.random.default_rng(seed)

    if ensemble.kind == "pe":
        member_means = []
        member_metric = []
        for m in ensemble.members:
            draws = sample_posterior_batch(m, subset.x, ctx_rows, n_draws, rng)
            means = draws.mean(axis=1)
            member_means.append(means)
            member_metric.append(float(np.mean(np.abs(means - subset.theta))))
        member_means = np.stack(member_means)  # (M, n_eval, D)
        per_sim = member_means.std(axis=0).max(axis=1)  # (n_eval,)
    else:
        member_probs = []
        member_metric = []
        for m in ensemble.members:
            probs = predict_model_probs_batch(m, subset.x, ctx_rows)
            member_probs.append(probs)
            member_metric.append(float(np.mean(probs.argmax(axis=1) == subset.labels)))
        member_probs = np.stack(member_probs)  # (M, n_eval, J)
        per_sim = member_probs.std(axis=0).max(axis=1)

    closed = float(np.median(per_sim))
    open_dis = ensemble_predict(ensemble, x_obs, context, n_draws, rng).disagreement_max
    if closed > 0:
        ratio = open_dis / closed
    else:
        ratio = float("inf") if open_dis > 0 else 1.0
    return GapReport(
        member_metric=member_metric,
        member_metric_sd=float(np.std(member_metric)),
        closed_disagreement=closed,
        open_disagreement=float(open_dis),
        ratio=float(ratio),
        threshold=threshold,
        flagged=bool(ratio > threshold),
        kind=ensemble.kind,
        closed_disagreements=per_sim,
    )
