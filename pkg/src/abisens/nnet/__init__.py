"""Autodiff tape, network blocks, the coupling flow, and training."""

from .amortizer import (
    Checkpoint,
    build_networks,
    checkpoint_summaries,
    default_architecture,
    posterior_log_density,
    predict_model_probs,
    predict_model_probs_batch,
    sample_posterior,
    sample_posterior_batch,
)
from .flow import CouplingBlock, CouplingFlow
from .layers import GRU, MLP, Classifier, DeepSetSummary, Linear, Param, RecurrentSummary
from .tape import Node, Tape
from .training import Adam, TrainConfig, bmc_loss, cosine_lr, npe_loss, train

__all__ = [
    "Adam",
    "Checkpoint",
    "Classifier",
    "CouplingBlock",
    "CouplingFlow",
    "DeepSetSummary",
    "GRU",
    "Linear",
    "MLP",
    "Node",
    "Param",
    "RecurrentSummary",
    "Tape",
    "TrainConfig",
    "bmc_loss",
    "build_networks",
    "checkpoint_summaries",
    "cosine_lr",
    "default_architecture",
    "npe_loss",
    "posterior_log_density",
    "predict_model_probs",
    "predict_model_probs_batch",
    "sample_posterior",
    "sample_posterior_batch",
    "train",
]
