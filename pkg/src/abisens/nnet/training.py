"""Training loop: context-aware losses, Adam with cosine decay, gradient
clipping, and deterministic checkpoint production.

Contexts vary per row of the training set, so plain mini-batch descent on
the per-row negative log-posterior (or cross-entropy) realizes the outer
expectation over the context distribution by Monte Carlo.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..data import SimulationBatch
from ..errors import TrainingError, UsageError
from .amortizer import Checkpoint, build_networks, theta_dim_total, transform_theta
from .tape import Tape

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class TrainConfig:
    epochs: int = 75
    batch_size: int = 128
    learning_rate: float = 5e-4
    cosine_decay: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    clip_norm: float = 5.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise UsageError("epochs and batch size must be positive")
        if self.learning_rate < 0 or self.eps <= 0 or self.clip_norm <= 0:
            raise UsageError("learning rate, eps, and clip norm must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise UsageError("Adam moment factors must lie in [0, 1)")


def cosine_lr(base, step, total_steps):
    """Cosine decay from ``base`` at step 0 to 0 at the final step."""
    if total_steps <= 1:
        return base
    return base * 0.5 * (1.0 + math.cos(math.pi * step / (total_steps - 1)))


class Adam:
    def __init__(self, params, beta1, beta2, eps):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]
        self.t = 0

    def step(self, grads, lr):
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value -= lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def _clip_global(grads, max_norm):
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if total > max_norm and total > 0:
        factor = max_norm / total
        grads = [g * factor for g in grads]
    return grads


def _pe_loss_node(t: Tape, summary_net, flow, x, theta, ctx):
    summary = summary_net.forward(t, x)
    cond = t.concat([summary, t.leaf(ctx)], axis=1)
    z, log_det = flow.forward(t, t.leaf(theta), cond)
    half_sq = t.mul(t.sum(t.square(z), axis=1), 0.5)
    per_row = t.sub(half_sq, log_det)
    dim = theta.shape[1]
    return t.add(t.mean(per_row), 0.5 * dim * _LOG_2PI)


def _bmc_loss_node(t: Tape, summary_net, classifier, x, onehot, ctx):
    summary = summary_net.forward(t, x)
    cond = t.concat([summary, t.leaf(ctx)], axis=1)
    logits = classifier.forward(t, cond)
    picked = t.sum(t.mul(t.log_softmax(logits), onehot), axis=1)
    return t.neg(t.mean(picked))


def npe_loss(flow, summary_net, batch: SimulationBatch) -> float:
    """Mean negative log-posterior of the batch under the flow (no data
    standardization; operates on the arrays as given)."""
    t = Tape()
    summary_net.bind(t)
    flow.bind(t)
    node = _pe_loss_node(t, summary_net, flow, batch.x, batch.theta, batch.context_matrix())
    value = float(node.value)
    if not math.isfinite(value):
        per_row = _per_row_pe(flow, summary_net, batch)
        bad = int(np.flatnonzero(~np.isfinite(per_row))[0])
        raise TrainingError(f"non-finite posterior loss at batch row {bad}")
    return value


def _per_row_pe(flow, summary_net, batch):
    cond = np.concatenate([summary_net.apply(batch.x), batch.context_matrix()], axis=1)
    z, log_det = flow.apply_forward(batch.theta, cond)
    return 0.5 * (z * z).sum(axis=1) - log_det + 0.5 * batch.theta.shape[1] * _LOG_2PI


def bmc_loss(classifier, summary_net, batch: SimulationBatch) -> float:
    """Mean cross-entropy of true model indices under the classifier."""
    t = Tape()
    summary_net.bind(t)
    classifier.bind(t)
    onehot = np.zeros((len(batch), classifier.n_models))
    onehot[np.arange(len(batch)), batch.labels] = 1.0
    node = _bmc_loss_node(t, summary_net, classifier, batch.x, onehot, batch.context_matrix())
    value = float(node.value)
    if not math.isfinite(value):
        raise TrainingError("non-finite cross-entropy loss")
    return value


def _fit_stats(arch, data: SimulationBatch, pads):
    flat = data.x.reshape(-1, data.x.shape[2])
    x_mean = flat.mean(axis=0)
    x_sd = np.maximum(flat.std(axis=0), 1e-8)
    stats = {"x_mean": x_mean, "x_sd": x_sd}
    if arch["kind"] == "pe":
        theta_t = transform_theta(arch, data.theta)
        if pads is not None:
            theta_t = np.concatenate([theta_t, pads], axis=1)
        stats["theta_mean"] = theta_t.mean(axis=0)
        stats["theta_sd"] = np.maximum(theta_t.std(axis=0), 1e-8)
        return stats, theta_t
    return stats, None


def train(config: TrainConfig, dataset: SimulationBatch, architecture: dict,
          val_data: SimulationBatch | None = None, dataset_hash: str | None = None) -> Checkpoint:
    """Run the full training loop; deterministic given ``config.seed``.

    The returned checkpoint carries per-epoch loss trajectories and the
    dataset content hash (computed here when not supplied).
    """
    arch = dict(architecture)
    if arch["kind"] != dataset.kind:
        raise UsageError(f"architecture kind {arch['kind']!r} does not match dataset kind {dataset.kind!r}")
    if arch["x_dim"] != dataset.x.shape[2]:
        raise UsageError("architecture x_dim does not match the dataset")
    if arch["context_dim"] != dataset.context_dim:
        raise UsageError("architecture context_dim does not match the dataset")
    if len(dataset) == 0:
        raise UsageError("cannot train on an empty dataset")

    rng = np.random.default_rng(config.seed)
    summary_net, head = build_networks(arch, rng)
    modules = [summary_net, head]
    named = summary_net.named_params("summary.") + head.named_params("head.")
    params = [p for _, p in named]

    pads = None
    val_pads = None
    if arch["kind"] == "pe" and arch["n_pad"] > 0:
        pads = rng.standard_normal((len(dataset), arch["n_pad"]))
        if val_data is not None:
            val_pads = rng.standard_normal((len(val_data), arch["n_pad"]))
    stats, theta_t = _fit_stats(arch, dataset, pads)

    x_std = (dataset.x - stats["x_mean"]) / stats["x_sd"]
    ctx = dataset.context_matrix()
    if arch["kind"] == "pe":
        target = (theta_t - stats["theta_mean"]) / stats["theta_sd"]
        if target.shape[1] != theta_dim_total(arch):
            raise UsageError("theta dimension does not match the architecture")
    else:
        if arch["n_models"] <= int(dataset.labels.max()):
            raise UsageError("label outside the architecture's model set")
        target = np.zeros((len(dataset), arch["n_models"]))
        target[np.arange(len(dataset)), dataset.labels] = 1.0

    if val_data is not None:
        val_x = (val_data.x - stats["x_mean"]) / stats["x_sd"]
        val_ctx = val_data.context_matrix()
        if arch["kind"] == "pe":
            val_t = transform_theta(arch, val_data.theta)
            if val_pads is not None:
                val_t = np.concatenate([val_t, val_pads], axis=1)
            val_target = (val_t - stats["theta_mean"]) / stats["theta_sd"]
        else:
            val_target = np.zeros((len(val_data), arch["n_models"]))
            val_target[np.arange(len(val_data)), val_data.labels] = 1.0

    adam = Adam(params, config.beta1, config.beta2, config.eps)
    n = len(dataset)
    n_batches = max(1, (n + config.batch_size - 1) // config.batch_size)
    total_steps = config.epochs * n_batches
    strikes = 0
    gstep = 0
    epoch_losses, val_losses = [], []

    def batch_loss(idx, record_tape):
        t = Tape()
        for m in modules:
            m.bind(t)
        if arch["kind"] == "pe":
            node = _pe_loss_node(t, summary_net, head, x_std[idx], target[idx], ctx[idx])
        else:
            node = _bmc_loss_node(t, summary_net, head, x_std[idx], target[idx], ctx[idx])
        return (t, node) if record_tape else (None, node)

    for _ in range(config.epochs):
        perm = rng.permutation(n)
        running = []
        for b in range(n_batches):
            idx = perm[b * config.batch_size : (b + 1) * config.batch_size]
            if idx.size == 0:
                continue
            t, node = batch_loss(idx, record_tape=True)
            value = float(node.value)
            if not math.isfinite(value):
                strikes += 1
                if strikes >= 3:
                    raise TrainingError(
                        f"loss non-finite for 3 consecutive batches (step {gstep}, last value {value})"
                    )
                gstep += 1
                continue
            strikes = 0
            running.append(value)
            t.backward(node)
            grads = [p.node.grad if p.node.grad is not None else np.zeros_like(p.value) for p in params]
            grads = _clip_global(grads, config.clip_norm)
            lr = cosine_lr(config.learning_rate, gstep, total_steps) if config.cosine_decay else config.learning_rate
            adam.step(grads, lr)
            gstep += 1
        epoch_losses.append(float(np.mean(running)) if running else math.nan)
        if val_data is not None:
            if arch["kind"] == "pe":
                cond = np.concatenate([summary_net.apply(val_x), val_ctx], axis=1)
                z, log_det = head.apply_forward(val_target, cond)
                vl = float((0.5 * (z * z).sum(axis=1) - log_det).mean() + 0.5 * val_target.shape[1] * _LOG_2PI)
            else:
                probs = head.probabilities(np.concatenate([summary_net.apply(val_x), val_ctx], axis=1))
                picked = probs[np.arange(len(val_data)), val_data.labels]
                vl = float(-np.log(np.maximum(picked, 1e-300)).mean())
            val_losses.append(vl)

    weights = {name: p.value.copy() for name, p in named}
    return Checkpoint(
        kind=arch["kind"],
        architecture=arch,
        weights=weights,
        stats=stats,
        context_layout={"n_gamma": dataset.n_gamma, "n_likelihoods": dataset.n_likelihoods},
        train_config=asdict(config),
        epoch_losses=epoch_losses,
        val_losses=val_losses,
        dataset_hash=dataset_hash if dataset_hash is not None else dataset.content_hash(),
        seed=config.seed,
        param_names=list(dataset.param_names),
    )
