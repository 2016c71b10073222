"""Checkpoints and amortized inference on trained approximators.

A checkpoint bundles the architecture description, flat weights, the data
standardization statistics, and training metadata. Posterior sampling and
model-probability prediction are read-only feed-forward passes and safe
for concurrent callers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..context import ContextVector, encode_context
from ..errors import UsageError
from .flow import CouplingFlow
from .layers import Classifier, DeepSetSummary, RecurrentSummary


def default_architecture(kind, x_dim, context_dim, **overrides) -> dict:
    """Desk-scale architecture defaults; override per experiment config."""
    arch = {
        "kind": kind,
        "summary": "deepset",
        "x_dim": x_dim,
        "summary_dim": 8,
        "summary_hidden": 64,
        "context_dim": context_dim,
    }
    if kind == "pe":
        arch.update(
            theta_dim_raw=1,
            n_pad=0,
            log_theta=None,
            flow_blocks=6,
            subnet_hidden=64,
            clamp=1.9,
        )
    elif kind == "bmc":
        arch.update(n_models=2, head_hidden=64)
    else:
        raise UsageError(f"unknown approximator kind {kind!r}")
    arch.update(overrides)
    if kind == "pe" and arch["log_theta"] is None:
        arch["log_theta"] = [False] * arch["theta_dim_raw"]
    return arch


def theta_dim_total(arch) -> int:
    return arch["theta_dim_raw"] + arch["n_pad"]


def build_networks(arch, rng):
    """Instantiate (summary_net, head) for an architecture description."""
    summary_cls = {"deepset": DeepSetSummary, "recurrent": RecurrentSummary}.get(arch["summary"])
    if summary_cls is None:
        raise UsageError(f"unknown summary kind {arch['summary']!r}")
    summary_net = summary_cls(arch["x_dim"], arch["summary_dim"], arch["summary_hidden"], rng)
    cond_dim = arch["summary_dim"] + arch["context_dim"]
    if arch["kind"] == "pe":
        head = CouplingFlow(
            theta_dim_total(arch),
            cond_dim,
            n_blocks=arch["flow_blocks"],
            hidden=arch["subnet_hidden"],
            clamp=arch["clamp"],
            rng=rng,
        )
    else:
        head = Classifier(cond_dim, arch["n_models"], arch["head_hidden"], rng)
    return summary_net, head


@dataclass
class Checkpoint:
    """Weights + architecture + training metadata of one approximator."""

    kind: str
    architecture: dict
    weights: dict
    stats: dict
    context_layout: dict
    train_config: dict
    epoch_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    dataset_hash: str | None = None
    seed: int = 0
    param_names: list = field(default_factory=list)
    _nets: tuple | None = field(default=None, repr=False, compare=False)

    def networks(self):
        """Rebuild (summary_net, head) with the stored weights; cached."""
        if self._nets is None:
            summary_net, head = build_networks(self.architecture, np.random.default_rng(0))
            named = dict(summary_net.named_params("summary.") + head.named_params("head."))
            if set(named) != set(self.weights):
                raise UsageError("checkpoint weights do not match the architecture")
            for name, param in named.items():
                param.value = np.array(self.weights[name], dtype=float)
            self._nets = (summary_net, head)
        return self._nets

    @property
    def n_params_raw(self) -> int:
        return self.architecture["theta_dim_raw"]


def standardize_x(stats, x):
    return (x - stats["x_mean"]) / stats["x_sd"]


def transform_theta(arch, theta):
    """Raw-scale parameters -> unconstrained training scale (before pads)."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    out = theta.copy()
    for k, logged in enumerate(arch["log_theta"]):
        if logged:
            if np.any(theta[:, k] <= 0):
                raise UsageError(f"parameter {k} must be positive for its log transform")
            out[:, k] = np.log(theta[:, k])
    return out


def untransform_theta(arch, theta_t):
    out = theta_t.copy()
    for k, logged in enumerate(arch["log_theta"]):
        if logged:
            out[:, k] = np.exp(theta_t[:, k])
    return out


def _encoded_context(checkpoint, context) -> np.ndarray:
    layout = checkpoint.context_layout
    if isinstance(context, ContextVector):
        if context.n_likelihoods != layout["n_likelihoods"] or context.gamma.shape[0] != layout["n_gamma"]:
            raise UsageError("context shape does not match the checkpoint's layout")
        return encode_context(context)
    enc = np.asarray(context, dtype=float).ravel()
    expected = layout["n_gamma"] + (layout["n_likelihoods"] if layout["n_likelihoods"] > 1 else 0)
    if enc.shape[0] != expected:
        raise UsageError(f"encoded context must have length {expected}")
    return enc


def _as_batch(x_obs) -> np.ndarray:
    x = np.asarray(x_obs, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim == 2:
        x = x[None, :, :]
    return x


def summarize(net, x):
    """Learned summary statistics for raw (already standardized) inputs."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 3 or x.shape[1] == 0 or x.shape[2] != net.in_dim:
        raise UsageError("input shape does not match the summary network")
    return net.apply(x)


def checkpoint_summaries(checkpoint, x_batch) -> np.ndarray:
    """(J, summary_dim) learned summaries for a batch of raw datasets."""
    summary_net, _ = checkpoint.networks()
    x = np.asarray(x_batch, dtype=float)
    if x.ndim == 2:
        x = x[:, :, None]
    return summarize(summary_net, standardize_x(checkpoint.stats, x))


def _conditions(checkpoint, x_batch, encoded_contexts) -> np.ndarray:
    summaries = checkpoint_summaries(checkpoint, x_batch)
    return np.concatenate([summaries, encoded_contexts], axis=1)


def sample_posterior(checkpoint, x_obs, context, n_draws, rng) -> np.ndarray:
    """Draw from the amortized posterior for one observed dataset.

    Returns an (n_draws, D) matrix on the original parameter scale with
    padding dimensions removed.
    """
    if checkpoint.kind != "pe":
        raise UsageError("posterior sampling needs a parameter-estimation checkpoint")
    enc = _encoded_context(checkpoint, context)
    return sample_posterior_batch(checkpoint, _as_batch(x_obs), enc[None, :], n_draws, rng)[0]


def sample_posterior_batch(checkpoint, x_batch, encoded_contexts, n_draws, rng) -> np.ndarray:
    """Vectorized posterior draws: (J, n_draws, D) for J datasets."""
    if checkpoint.kind != "pe":
        raise UsageError("posterior sampling needs a parameter-estimation checkpoint")
    arch = checkpoint.architecture
    _, flow = checkpoint.networks()
    conds = _conditions(checkpoint, x_batch, np.atleast_2d(encoded_contexts))
    n_sets = conds.shape[0]
    dim = theta_dim_total(arch)
    z = rng.standard_normal((n_sets * n_draws, dim))
    cond_rep = np.repeat(conds, n_draws, axis=0)
    theta_std = flow.inverse(z, cond_rep)
    theta_t = theta_std * checkpoint.stats["theta_sd"] + checkpoint.stats["theta_mean"]
    theta = untransform_theta(arch, theta_t[:, : arch["theta_dim_raw"]])
    return theta.reshape(n_sets, n_draws, arch["theta_dim_raw"])


def posterior_log_density(checkpoint, theta, x_obs, context) -> np.ndarray:
    """Log density of raw-scale parameter vectors under the trained flow
    (includes the standardization and log-transform Jacobians)."""
    if checkpoint.kind != "pe":
        raise UsageError("density evaluation needs a parameter-estimation checkpoint")
    arch = checkpoint.architecture
    if arch["n_pad"] > 0:
        raise UsageError("density evaluation is unavailable for padded parameter spaces")
    _, flow = checkpoint.networks()
    enc = _encoded_context(checkpoint, context)
    cond = _conditions(checkpoint, _as_batch(x_obs), enc[None, :])
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    theta_t = transform_theta(arch, theta)
    theta_std = (theta_t - checkpoint.stats["theta_mean"]) / checkpoint.stats["theta_sd"]
    logq = flow.log_density(theta_std, np.repeat(cond, theta.shape[0], axis=0))
    logq = logq - np.log(checkpoint.stats["theta_sd"]).sum()
    for k, logged in enumerate(arch["log_theta"]):
        if logged:
            logq = logq - np.log(theta[:, k])
    return logq


def predict_model_probs(checkpoint, x_obs, context) -> np.ndarray:
    """Posterior model probabilities (length-J simplex) for one dataset."""
    if checkpoint.kind != "bmc":
        raise UsageError("model probabilities need a model-comparison checkpoint")
    enc = _encoded_context(checkpoint, context)
    return predict_model_probs_batch(checkpoint, _as_batch(x_obs), enc[None, :])[0]


def predict_model_probs_batch(checkpoint, x_batch, encoded_contexts) -> np.ndarray:
    if checkpoint.kind != "bmc":
        raise UsageError("model probabilities need a model-comparison checkpoint")
    _, classifier = checkpoint.networks()
    conds = _conditions(checkpoint, x_batch, np.atleast_2d(encoded_contexts))
    return classifier.probabilities(conds)
