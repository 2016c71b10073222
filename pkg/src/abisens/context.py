"""Prior families with closed-form power-scaling and training-time contexts.

A prior is a product of independent univariate components. Power-scaling
tempers each scalable component's density with an exponent gamma > 0
(gamma < 1 widens, gamma > 1 sharpens) and stays inside the family, so no
quadrature is ever needed at training time. Contexts bundle the scaling
exponents with a categorical simulator choice and encode both as a flat
conditioning vector for the networks.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, ndtr, ndtri

from .errors import UsageError

_LOG_2PI = math.log(2.0 * math.pi)


class Family(str, enum.Enum):
    LOGNORMAL = "lognormal"
    GAMMA = "gamma"
    EXPONENTIAL = "exponential"
    NORMAL = "normal"
    TRUNCATED_NORMAL = "truncated_normal"
    UNIFORM = "uniform"


_ARITY = {
    Family.LOGNORMAL: 2,
    Family.GAMMA: 2,
    Family.EXPONENTIAL: 1,
    Family.NORMAL: 2,
    Family.TRUNCATED_NORMAL: 4,
    Family.UNIFORM: 2,
}


def _validate_params(family: Family, params: tuple[float, ...]) -> None:
    if len(params) != _ARITY[family]:
        raise UsageError(f"{family.value} takes {_ARITY[family]} parameters, got {len(params)}")
    if family in (Family.LOGNORMAL, Family.NORMAL) and params[1] <= 0:
        raise UsageError(f"{family.value} scale must be positive")
    elif family is Family.GAMMA and (params[0] <= 0 or params[1] <= 0):
        raise UsageError("gamma shape and scale must be positive")
    elif family is Family.EXPONENTIAL and params[0] <= 0:
        raise UsageError("exponential scale must be positive")
    elif family is Family.TRUNCATED_NORMAL:
        if params[1] <= 0:
            raise UsageError("truncated normal scale must be positive")
        if params[2] >= params[3]:
            raise UsageError("truncated normal needs low < high")
    elif family is Family.UNIFORM and params[0] >= params[1]:
        raise UsageError("uniform needs low < high")


@dataclass(frozen=True)
class PriorComponent:
    name: str
    family: Family
    params: tuple[float, ...]
    scalable: bool = True

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        _validate_params(self.family, self.params)


@dataclass(frozen=True)
class PriorSpec:
    """Ordered product of independent univariate prior components."""

    components: tuple[PriorComponent, ...]

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if not self.components:
            raise UsageError("prior needs at least one component")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.components]

    @property
    def n_scalable(self) -> int:
        return sum(c.scalable for c in self.components)

    def expand_gamma(self, gamma_vector) -> np.ndarray:
        """Per-component exponents: scalable components consume the vector
        in order, fixed components get 1."""
        gamma_vector = np.atleast_1d(np.asarray(gamma_vector, dtype=float))
        if gamma_vector.shape[0] != self.n_scalable:
            raise UsageError(
                f"expected {self.n_scalable} scaling exponents, got {gamma_vector.shape[0]}"
            )
        out = np.ones(len(self.components))
        it = iter(gamma_vector)
        for k, comp in enumerate(self.components):
            if comp.scalable:
                out[k] = next(it)
        return out


@dataclass
class ContextVector:
    """One realization of the training context: scaling exponents plus a
    categorical simulator choice."""

    gamma: np.ndarray
    likelihood_choice: int = 0
    n_likelihoods: int = 1

    def __post_init__(self):
        self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        if np.any(self.gamma <= 0) or not np.all(np.isfinite(self.gamma)):
            raise UsageError("scaling exponents must be positive and finite")
        if not 0 <= self.likelihood_choice < self.n_likelihoods:
            raise UsageError("likelihood choice out of range")

    @property
    def encoded(self) -> np.ndarray:
        return encode_context(self)


@dataclass
class ContextPrior:
    """Training distribution over contexts: log-uniform exponents and a
    categorical over simulator variants."""

    log_lower: np.ndarray
    log_upper: np.ndarray
    likelihood_weights: np.ndarray = field(default_factory=lambda: np.array([1.0]))

    def __post_init__(self):
        self.log_lower = np.atleast_1d(np.asarray(self.log_lower, dtype=float))
        self.log_upper = np.atleast_1d(np.asarray(self.log_upper, dtype=float))
        self.likelihood_weights = np.atleast_1d(np.asarray(self.likelihood_weights, dtype=float))
        if self.log_lower.shape != self.log_upper.shape:
            raise UsageError("context bounds must have matching shapes")
        if np.any(self.log_lower > self.log_upper):
            raise UsageError("context bounds need log_lower <= log_upper")
        if np.any(self.likelihood_weights < 0) or not math.isclose(
            float(self.likelihood_weights.sum()), 1.0, rel_tol=0, abs_tol=1e-9
        ):
            raise UsageError("likelihood weights must form a probability vector")

    @property
    def n_gamma(self) -> int:
        return self.log_lower.shape[0]

    @property
    def n_likelihoods(self) -> int:
        return self.likelihood_weights.shape[0]

    @property
    def encoded_dim(self) -> int:
        return self.n_gamma + (self.n_likelihoods if self.n_likelihoods > 1 else 0)


def power_scale_params(family: Family, params, gamma: float) -> tuple[float, ...]:
    """Parameters of the renormalized density p^gamma within the family.

    The lognormal rule tempers the underlying normal on the log scale,
    which keeps the location fixed; all other families temper the density
    itself.
    """
    family = Family(family)
    params = tuple(float(p) for p in params)
    _validate_params(family, params)
    gamma = float(gamma)
    if not math.isfinite(gamma) or gamma <= 0:
        raise UsageError(f"scaling exponent must be positive, got {gamma}")
    root = math.sqrt(gamma)
    if family is Family.LOGNORMAL:
        return (params[0], params[1] / root)
    if family is Family.NORMAL:
        return (params[0], params[1] / root)
    if family is Family.GAMMA:
        shape = gamma * (params[0] - 1.0) + 1.0
        if shape <= 0:
            raise UsageError(
                f"power-scaled gamma shape {shape} is not normalizable (shape "
                f"{params[0]}, exponent {gamma})"
            )
        return (shape, params[1] / gamma)
    if family is Family.EXPONENTIAL:
        return (params[0] / gamma,)
    if family is Family.TRUNCATED_NORMAL:
        return (params[0], params[1] / root, params[2], params[3])
    return params  # uniform is a fixed point


def _log_pdf(family: Family, params: tuple[float, ...], x: float) -> float:
    if family is Family.LOGNORMAL:
        m, s = params
        if x <= 0:
            return -math.inf
        lx = math.log(x)
        return -lx - math.log(s) - 0.5 * _LOG_2PI - 0.5 * ((lx - m) / s) ** 2
    if family is Family.GAMMA:
        a, s = params
        if x <= 0:
            return -math.inf
        return (a - 1.0) * math.log(x) - x / s - a * math.log(s) - float(gammaln(a))
    if family is Family.EXPONENTIAL:
        (s,) = params
        if x < 0:
            return -math.inf
        return -x / s - math.log(s)
    if family is Family.NORMAL:
        m, s = params
        return -math.log(s) - 0.5 * _LOG_2PI - 0.5 * ((x - m) / s) ** 2
    if family is Family.TRUNCATED_NORMAL:
        m, s, lo, hi = params
        if x < lo or x > hi:
            return -math.inf
        z = float(ndtr((hi - m) / s) - ndtr((lo - m) / s))
        return -math.log(s) - 0.5 * _LOG_2PI - 0.5 * ((x - m) / s) ** 2 - math.log(z)
    lo, hi = params
    if x < lo or x > hi:
        return -math.inf
    return -math.log(hi - lo)


def log_prior_density(spec: PriorSpec, theta, gamma_vector) -> float:
    """Sum of power-scaled component log-densities at ``theta``.

    Out-of-support values yield -inf rather than raising.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.shape[0] != len(spec.components):
        raise UsageError(f"theta must have {len(spec.components)} entries")
    per_comp = spec.expand_gamma(gamma_vector)
    total = 0.0
    for comp, g, x in zip(spec.components, per_comp, theta):
        scaled = power_scale_params(comp.family, comp.params, g)
        total += _log_pdf(comp.family, scaled, float(x))
    return total


def sample_scaled_component(comp: PriorComponent, gamma: float, rng, size=None):
    """Draw from one power-scaled component."""
    p = power_scale_params(comp.family, comp.params, gamma)
    if comp.family is Family.LOGNORMAL:
        return rng.lognormal(p[0], p[1], size)
    if comp.family is Family.GAMMA:
        return rng.gamma(p[0], p[1], size)
    if comp.family is Family.EXPONENTIAL:
        return rng.exponential(p[0], size)
    if comp.family is Family.NORMAL:
        return rng.normal(p[0], p[1], size)
    if comp.family is Family.TRUNCATED_NORMAL:
        m, s, lo, hi = p
        a = float(ndtr((lo - m) / s))
        b = float(ndtr((hi - m) / s))
        u = rng.random(size)
        return m + s * ndtri(a + u * (b - a))
    return rng.uniform(p[0], p[1], size)


def sample_prior(spec: PriorSpec, gamma_vector, rng, size: int | None = None) -> np.ndarray:
    """Draw parameter vectors from the power-scaled prior.

    Returns shape (D,) for size None, else (size, D).
    """
    per_comp = spec.expand_gamma(gamma_vector)
    cols = [
        np.atleast_1d(sample_scaled_component(comp, g, rng, size))
        for comp, g in zip(spec.components, per_comp)
    ]
    out = np.column_stack(cols)
    return out[0] if size is None else out


def scaled_prior_variance(spec: PriorSpec, gamma_vector) -> np.ndarray:
    """Closed-form variance of each component under power-scaling."""
    per_comp = spec.expand_gamma(gamma_vector)
    out = np.empty(len(spec.components))
    for k, (comp, g) in enumerate(zip(spec.components, per_comp)):
        p = power_scale_params(comp.family, comp.params, g)
        if comp.family is Family.LOGNORMAL:
            m, s = p
            out[k] = (math.exp(s * s) - 1.0) * math.exp(2.0 * m + s * s)
        elif comp.family is Family.GAMMA:
            out[k] = p[0] * p[1] ** 2
        elif comp.family is Family.EXPONENTIAL:
            out[k] = p[0] ** 2
        elif comp.family is Family.NORMAL:
            out[k] = p[1] ** 2
        elif comp.family is Family.TRUNCATED_NORMAL:
            m, s, lo, hi = p
            al, be = (lo - m) / s, (hi - m) / s
            z = float(ndtr(be) - ndtr(al))
            phi_a = math.exp(-0.5 * al * al) / math.sqrt(2 * math.pi)
            phi_b = math.exp(-0.5 * be * be) / math.sqrt(2 * math.pi)
            out[k] = s * s * (1.0 + (al * phi_a - be * phi_b) / z - ((phi_a - phi_b) / z) ** 2)
        else:
            lo, hi = p
            out[k] = (hi - lo) ** 2 / 12.0
    return out


def sample_context(context_prior: ContextPrior, rng) -> ContextVector:
    """Draw a training context: exponents log-uniform within the bounds,
    simulator choice from the categorical weights."""
    u = rng.uniform(context_prior.log_lower, context_prior.log_upper)
    gamma = np.exp(u)
    if context_prior.n_likelihoods > 1:
        choice = int(rng.choice(context_prior.n_likelihoods, p=context_prior.likelihood_weights))
    else:
        choice = 0
    return ContextVector(gamma, choice, context_prior.n_likelihoods)


def encode_context(context: ContextVector) -> np.ndarray:
    """Flat conditioning vector: log-exponents, then a one-hot block for
    the simulator choice when there is more than one variant."""
    parts = [np.log(context.gamma)]
    if context.n_likelihoods > 1:
        onehot = np.zeros(context.n_likelihoods)
        onehot[context.likelihood_choice] = 1.0
        parts.append(onehot)
    return np.concatenate(parts)
