"""Experiment configuration files (JSON) and derived objects.

A config pins the experiment, simulation budget, architecture and training
hyperparameters, and all seeds; runs are reconstructible from the snapshot
embedded in every output artifact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import UsageError
from .experiments import make_experiment
from .nnet.training import TrainConfig

_DEFAULTS = {
    "name": None,
    "experiment": None,
    "experiment_params": {},
    "seed": 0,
    "budget": 4096,
    "validation_fraction": 0.1,
    "architecture": {},
    "train": {},
    "sensitivity": {"n_draws": 100, "gap_threshold": 3.0, "reference_sims": 1000},
}


@dataclass
class ExperimentConfig:
    raw: dict = field(default_factory=dict)

    def __post_init__(self):
        merged = {**_DEFAULTS, **self.raw}
        merged["experiment_params"] = {**self.raw.get("experiment_params", {})}
        merged["architecture"] = {**self.raw.get("architecture", {})}
        merged["train"] = {**self.raw.get("train", {})}
        merged["sensitivity"] = {**_DEFAULTS["sensitivity"], **self.raw.get("sensitivity", {})}
        if not merged["experiment"]:
            raise UsageError("config needs an 'experiment' field")
        if merged["name"] is None:
            merged["name"] = merged["experiment"]
        if merged["budget"] < 1:
            raise UsageError("budget must be positive")
        if not 0 <= merged["validation_fraction"] < 1:
            raise UsageError("validation fraction must lie in [0, 1)")
        self.raw = merged

    @property
    def name(self) -> str:
        return self.raw["name"]

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def budget(self) -> int:
        return int(self.raw["budget"])

    @property
    def validation_fraction(self) -> float:
        return float(self.raw["validation_fraction"])

    @property
    def sensitivity_params(self) -> dict:
        return self.raw["sensitivity"]

    def experiment(self):
        return make_experiment(self.raw["experiment"], **self.raw["experiment_params"])

    def architecture(self, experiment=None) -> dict:
        exp = experiment if experiment is not None else self.experiment()
        return exp.default_arch(**self.raw["architecture"])

    def train_config(self, seed=None) -> TrainConfig:
        params = dict(self.raw["train"])
        if seed is not None:
            params["seed"] = int(seed)
        elif "seed" not in params:
            params["seed"] = self.seed
        return TrainConfig(**params)

    def snapshot(self) -> dict:
        return json.loads(json.dumps(self.raw))


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file {path} does not exist")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
    return ExperimentConfig(raw)


def config_from_snapshot(snapshot) -> ExperimentConfig:
    if snapshot is None:
        raise UsageError("this artifact carries no config snapshot")
    return ExperimentConfig(dict(snapshot))


def parse_grid_spec(spec: str) -> np.ndarray:
    """Parse one axis spec "lo:hi:n log|lin" into grid values."""
    parts = spec.strip().split()
    if len(parts) not in (1, 2):
        raise UsageError(f"bad grid spec {spec!r}; expected 'lo:hi:n log|lin'")
    scale = parts[1] if len(parts) == 2 else "log"
    if scale not in ("log", "lin"):
        raise UsageError(f"grid scale must be 'log' or 'lin', got {scale!r}")
    nums = parts[0].split(":")
    if len(nums) != 3:
        raise UsageError(f"bad grid spec {spec!r}; expected 'lo:hi:n log|lin'")
    lo, hi, n = float(nums[0]), float(nums[1]), int(nums[2])
    if n < 1:
        raise UsageError("grid needs at least one point")
    if n == 1:
        return np.array([lo])
    if scale == "log":
        if lo <= 0 or hi <= 0:
            raise UsageError("log-spaced grids need positive bounds")
        return np.geomspace(lo, hi, n)
    return np.linspace(lo, hi, n)


def build_gamma_grid(specs, n_gamma, fill_value=1.0) -> np.ndarray:
    """Cross product of per-component grids; unspecified components stay at
    ``fill_value``."""
    if len(specs) > n_gamma:
        raise UsageError(f"got {len(specs)} grid specs for {n_gamma} scalable components")
    axes = [parse_grid_spec(s) for s in specs]
    axes += [np.array([fill_value])] * (n_gamma - len(axes))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)
