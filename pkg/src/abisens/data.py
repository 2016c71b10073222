"""In-memory simulation batches and their canonical content hash.

The hash is computed over the exact little-endian float32/int32 payload
bytes that the on-disk dataset format stores, so an in-memory batch and
its persisted form always agree.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError


def _f32(a):
    return np.ascontiguousarray(np.asarray(a), dtype="<f4")


def _i32(a):
    return np.ascontiguousarray(np.asarray(a), dtype="<i4")


@dataclass
class SimulationBatch:
    """Aligned records of simulated data, contexts, and targets.

    ``theta`` is set for parameter-estimation batches, ``labels`` (model
    indices) for model-comparison batches; exactly one must be present.
    """

    x: np.ndarray
    gamma: np.ndarray
    likelihood_choice: np.ndarray
    n_likelihoods: int = 1
    theta: np.ndarray | None = None
    labels: np.ndarray | None = None
    param_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if self.x.ndim == 2:
            self.x = self.x[:, :, None]
        self.gamma = np.atleast_2d(np.asarray(self.gamma, dtype=float))
        self.likelihood_choice = np.asarray(self.likelihood_choice, dtype=int)
        if (self.theta is None) == (self.labels is None):
            raise UsageError("batch needs exactly one of theta or labels")
        if self.theta is not None:
            self.theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
            if self.theta.shape[0] != len(self):
                raise UsageError("theta rows must match x rows")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=int)
            if self.labels.shape[0] != len(self):
                raise UsageError("label rows must match x rows")
        if self.gamma.shape[0] != len(self) or self.likelihood_choice.shape[0] != len(self):
            raise UsageError("context rows must match x rows")

    def __len__(self):
        return self.x.shape[0]

    @property
    def kind(self) -> str:
        return "pe" if self.theta is not None else "bmc"

    @property
    def n_gamma(self) -> int:
        return self.gamma.shape[1]

    def context_matrix(self) -> np.ndarray:
        """(N, C) conditioning block: log-exponents plus one-hot choice."""
        parts = [np.log(self.gamma)]
        if self.n_likelihoods > 1:
            onehot = np.zeros((len(self), self.n_likelihoods))
            onehot[np.arange(len(self)), self.likelihood_choice] = 1.0
            parts.append(onehot)
        return np.concatenate(parts, axis=1)

    @property
    def context_dim(self) -> int:
        return self.n_gamma + (self.n_likelihoods if self.n_likelihoods > 1 else 0)

    def payload_arrays(self) -> dict[str, np.ndarray]:
        """Storage-dtype arrays in canonical order (drives the hash)."""
        out = {"x": _f32(self.x), "gamma": _f32(self.gamma), "likelihood_choice": _i32(self.likelihood_choice)}
        if self.theta is not None:
            out["theta"] = _f32(self.theta)
        if self.labels is not None:
            out["labels"] = _i32(self.labels)
        return out

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for name, arr in self.payload_arrays().items():
            h.update(name.encode())
            h.update(arr.tobytes())
        return h.hexdigest()

    def subset(self, idx) -> "SimulationBatch":
        return SimulationBatch(
            x=self.x[idx],
            gamma=self.gamma[idx],
            likelihood_choice=self.likelihood_choice[idx],
            n_likelihoods=self.n_likelihoods,
            theta=None if self.theta is None else self.theta[idx],
            labels=None if self.labels is None else self.labels[idx],
            param_names=list(self.param_names),
        )
