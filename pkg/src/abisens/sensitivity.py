"""Quantitative and qualitative sensitivity evaluation.

Divergences between posterior approximations under different contexts:
kernel MMD for draw-based posteriors, KL for categorical model posteriors,
a permutation hypothesis test for the MMD, data-perturbation generators,
and the grid orchestrator that sweeps contexts x data variants x ensemble
members in one amortized pass.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist

from .errors import NumericError, UsageError
from .nnet.amortizer import checkpoint_summaries, theta_dim_total

_NEG_TOL = -1e-9


@dataclass
class DivergenceResult:
    kind: str
    value: float
    context_pair: tuple = None
    threshold: float | None = None
    robust: bool | None = None
    raw_value: float | None = None

    def __post_init__(self):
        self.raw_value = self.value if self.raw_value is None else self.raw_value
        self.value = max(self.value, 0.0)
        if self.threshold is not None:
            self.robust = self.value < self.threshold


@dataclass
class RobustnessResult:
    decision_i: str
    decision_j: str
    indicator: int

    def __post_init__(self):
        self.indicator = int(self.decision_i == self.decision_j)


def _as_draws(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise UsageError("draw sets must be (n, d) matrices")
    return x


def median_bandwidth(pooled) -> float:
    """Median pairwise Euclidean distance; falls back to 1 when degenerate."""
    d = pdist(_as_draws(pooled))
    med = float(np.median(d)) if d.size else 0.0
    return med if med > 0 else 1.0


def mmd_squared_unbiased(x, y, bandwidth=None) -> float:
    """U-statistic estimate of squared MMD with a Gaussian kernel.

    May be slightly negative for close samples; the default bandwidth is
    the median pairwise distance of the pooled draws.
    """
    from ._kernels import mmd_terms

    x, y = _as_draws(x), _as_draws(y)
    n, m = x.shape[0], y.shape[0]
    if n < 2 or m < 2:
        raise UsageError("need at least two draws per sample")
    if x.shape[1] != y.shape[1]:
        raise UsageError("draw sets must share their column dimension")
    if bandwidth is None:
        bandwidth = median_bandwidth(np.vstack([x, y]))
    sxx, syy, sxy = mmd_terms(np.ascontiguousarray(x), np.ascontiguousarray(y), float(bandwidth))
    return sxx / (n * (n - 1)) + syy / (m * (m - 1)) - 2.0 * sxy / (n * m)


def _pooled_gram(pooled, bandwidth):
    sq = np.sum(pooled * pooled, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (pooled @ pooled.T)
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-d2 / (2.0 * bandwidth * bandwidth))


def _stat_from_selection(gram, diag, row_sums, total, d_total, select, n, m):
    """Unbiased MMD^2 for a 0/1 selection vector over the pooled Gram."""
    ks = gram @ select
    a = select @ ks
    s_diag = select @ diag
    s_rows = select @ row_sums
    term_xx = (a - s_diag) / (n * (n - 1))
    term_yy = (total - 2.0 * s_rows + a - (d_total - s_diag)) / (m * (m - 1))
    term_xy = (s_rows - a) / (n * m)
    return term_xx + term_yy - 2.0 * term_xy


def mmd_hypothesis_test(x, y, n_resamples=500, type1_rate=0.05, rng=None, bandwidth=None):
    """Permutation test of the zero-difference null.

    Pools the samples, re-splits preserving sizes, and recomputes the
    statistic; the critical value is the (1 - rate) quantile of the null
    draws and the p-value the fraction of null draws at or above the
    observed statistic. Returns (statistic, critical_value, p_value,
    reject).
    """
    if n_resamples < 100:
        raise UsageError("need at least 100 permutation resamples")
    if not 0 < type1_rate <= 1:
        raise UsageError("the Type I error rate must lie in (0, 1]")
    x, y = _as_draws(x), _as_draws(y)
    if x.shape[1] != y.shape[1]:
        raise UsageError("draw sets must share their column dimension")
    n, m = x.shape[0], y.shape[0]
    if n < 2 or m < 2:
        raise UsageError("need at least two draws per sample")
    rng = np.random.default_rng() if rng is None else rng

    pooled = np.vstack([x, y])
    if bandwidth is None:
        bandwidth = median_bandwidth(pooled)
    gram = _pooled_gram(pooled, bandwidth)
    diag = np.diag(gram).copy()
    row_sums = gram.sum(axis=1)
    total = float(gram.sum())
    d_total = float(diag.sum())

    base = np.zeros(n + m)
    base[:n] = 1.0
    observed = float(_stat_from_selection(gram, diag, row_sums, total, d_total, base, n, m))

    selections = np.zeros((n + m, n_resamples))
    for r in range(n_resamples):
        selections[rng.permutation(n + m)[:n], r] = 1.0
    ks = gram @ selections
    a = np.einsum("ir,ir->r", selections, ks)
    s_diag = selections.T @ diag
    s_rows = selections.T @ row_sums
    null = (
        (a - s_diag) / (n * (n - 1))
        + (total - 2.0 * s_rows + a - (d_total - s_diag)) / (m * (m - 1))
        - 2.0 * (s_rows - a) / (n * m)
    )
    critical = float(np.quantile(null, 1.0 - type1_rate, method="higher"))
    p_value = float(np.mean(null >= observed))
    reject = p_value <= type1_rate
    return observed, critical, p_value, reject


def _check_simplex(p, name):
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise UsageError(f"{name} must be a probability vector")
    if np.any(p < 0) or abs(float(p.sum()) - 1.0) > 1e-9:
        raise UsageError(f"{name} must be nonnegative and sum to one")
    return p


def kl_categorical(p, q) -> float:
    """KL(p || q) for categorical distributions, with 0 log 0 = 0.

    Returns +inf when q has a zero where p has mass.
    """
    p = _check_simplex(p, "p")
    q = _check_simplex(q, "q")
    if p.shape != q.shape:
        raise UsageError("distributions must have equal length")
    mask = p > 0
    if np.any(q[mask] == 0):
        return math.inf
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


# -- decision rules -------------------------------------------------------


@dataclass(frozen=True)
class ArgmaxModelRule:
    """Select the model with the highest posterior probability."""

    name: str = "argmax"
    applies_to: str = "bmc"

    def __call__(self, posterior) -> str:
        p = np.asarray(posterior, dtype=float)
        if p.ndim != 1:
            raise UsageError("the argmax rule needs a categorical model posterior")
        return f"model_{int(p.argmax())}"


@dataclass(frozen=True)
class HdiContainsRule:
    """Does the highest-density interval contain a reference value?"""

    reference: float
    mass: float = 0.95
    param_index: int = 0
    name: str = "hdi"
    applies_to: str = "pe"

    def __call__(self, posterior) -> str:
        draws = _as_draws(posterior)
        lo, hi = highest_density_interval(draws[:, self.param_index], self.mass)
        return "contains" if lo <= self.reference <= hi else "excludes"


@dataclass(frozen=True)
class MeanSignRule:
    """Sign of the posterior mean of one coordinate."""

    param_index: int = 0
    name: str = "mean_sign"
    applies_to: str = "pe"

    def __call__(self, posterior) -> str:
        draws = _as_draws(posterior)
        return "nonnegative" if draws[:, self.param_index].mean() >= 0 else "negative"


def make_decision_rule(name, theta0=None, hdi_mass=0.95, param_index=0):
    if name == "argmax":
        return ArgmaxModelRule()
    if name == "hdi":
        if theta0 is None:
            raise UsageError("the HDI rule needs a reference value")
        return HdiContainsRule(reference=float(theta0), mass=float(hdi_mass), param_index=param_index)
    if name == "mean_sign":
        return MeanSignRule(param_index=param_index)
    raise UsageError(f"unknown decision rule {name!r}")


def highest_density_interval(draws, mass):
    draws = np.sort(np.asarray(draws, dtype=float))
    n = draws.shape[0]
    k = max(int(math.ceil(mass * n)), 2)
    k = min(k, n)
    widths = draws[k - 1 :] - draws[: n - k + 1]
    j = int(np.argmin(widths))
    return float(draws[j]), float(draws[j + k - 1])


def _posterior_kind(posterior):
    p = np.asarray(posterior, dtype=float)
    return "bmc" if p.ndim == 1 else "pe"


def qualitative_robustness(posterior_i, posterior_j, decision_rule) -> RobustnessResult:
    """Apply a decision rule to two posteriors; indicator 1 iff the
    resulting actions coincide."""
    for p in (posterior_i, posterior_j):
        if _posterior_kind(p) != decision_rule.applies_to:
            raise UsageError(
                f"rule {decision_rule.name!r} applies to {decision_rule.applies_to} posteriors"
            )
    return RobustnessResult(decision_rule(posterior_i), decision_rule(posterior_j), 0)


# -- data perturbations ---------------------------------------------------


def bootstrap_variants(data, n_variants, rng):
    """Row-level bootstrap resamples, each the size of the original."""
    data = np.asarray(data)
    if data.shape[0] < 2:
        raise UsageError("need at least two rows to perturb")
    return [data[rng.integers(0, data.shape[0], data.shape[0])] for _ in range(n_variants)]


def loo_variants(data):
    """All leave-one-out folds (N datasets of N - 1 rows)."""
    data = np.asarray(data)
    if data.shape[0] < 2:
        raise UsageError("need at least two rows to perturb")
    return [np.delete(data, k, axis=0) for k in range(data.shape[0])]


# -- grid orchestration ---------------------------------------------------


@dataclass
class CellResult:
    member: int
    gamma_index: int
    likelihood_index: int
    data_index: int
    gamma: tuple
    likelihood_choice: int
    divergence_kind: str
    divergence: float | None
    raw_divergence: float | None
    decision: str | None
    indicator: int | None
    disagreement: float | None
    status: str
    summary: dict = field(default_factory=dict)
    robust: bool | None = None


@dataclass
class SensitivityReport:
    axes: dict
    cells: list
    baseline: dict
    decision_rule: str
    threshold: float | None = None

    @property
    def cell_count(self) -> int:
        return len(self.cells)

    @property
    def expected_cells(self) -> int:
        out = 1
        for vals in self.axes.values():
            out *= len(vals)
        return out

    @property
    def n_failed(self) -> int:
        return sum(c.status != "ok" for c in self.cells)

    def robustness_fraction(self) -> float:
        scored = [c.indicator for c in self.cells if c.indicator is not None]
        return float(np.mean(scored)) if scored else float("nan")


def _encode_rows(gamma_grid, like_choices, n_likelihoods):
    rows = []
    for g in gamma_grid:
        for l in like_choices:
            parts = [np.log(np.asarray(g, dtype=float))]
            if n_likelihoods > 1:
                onehot = np.zeros(n_likelihoods)
                onehot[l] = 1.0
                parts.append(onehot)
            rows.append(np.concatenate(parts))
    return np.asarray(rows)


def _mmd_many(cell_draws, base, bandwidth):
    """Unbiased squared MMD of each (n, d) cell draw set against a fixed
    baseline set, all with one bandwidth."""
    c, n, d = cell_draws.shape
    m = base.shape[0]
    inv = 1.0 / (2.0 * bandwidth * bandwidth)
    sq_c = np.einsum("cnd,cnd->cn", cell_draws, cell_draws)
    d2_xx = sq_c[:, :, None] + sq_c[:, None, :] - 2.0 * np.einsum("cnd,cmd->cnm", cell_draws, cell_draws)
    np.maximum(d2_xx, 0.0, out=d2_xx)
    kxx = np.exp(-inv * d2_xx)
    sxx = kxx.sum(axis=(1, 2)) - np.einsum("cnn->c", kxx)
    sq_b = np.einsum("md,md->m", base, base)
    d2_xy = sq_c[:, :, None] + sq_b[None, None, :] - 2.0 * np.einsum("cnd,md->cnm", cell_draws, base)
    np.maximum(d2_xy, 0.0, out=d2_xy)
    sxy = np.exp(-inv * d2_xy).sum(axis=(1, 2))
    d2_yy = sq_b[:, None] + sq_b[None, :] - 2.0 * (base @ base.T)
    np.maximum(d2_yy, 0.0, out=d2_yy)
    kyy = np.exp(-inv * d2_yy)
    syy = kyy.sum() - np.trace(kyy)
    return sxx / (n * (n - 1)) + syy / (m * (m - 1)) - 2.0 * sxy / (n * m)


def _safe_inverse(flow, z, cond):
    """Flow inversion that isolates failures per row instead of raising."""
    try:
        return flow.inverse(z, cond), None
    except NumericError:
        out = np.full((z.shape[0], z.shape[1]), np.nan)
        failed = np.zeros(z.shape[0], dtype=bool)
        for i in range(z.shape[0]):
            try:
                out[i] = flow.inverse(z[i : i + 1], cond[i : i + 1])[0]
            except NumericError:
                failed[i] = True
        return out, failed


def run_sensitivity_grid(ensemble, x_obs, gamma_grid=None, likelihood_choices=None,
                         data_variants=None, decision_rule=None, baseline=None,
                         n_draws=100, seed=0, threshold=None, kl_reverse=False,
                         projection=None) -> SensitivityReport:
    """Amortized sweep over (scaling exponents) x (simulator choices) x
    (data variants) x (ensemble members).

    Every cell holds one inference call, its divergence against the
    same-member baseline cell (MMD on draws for parameter estimation,
    with one bandwidth per member taken from its baseline draws for
    cross-cell comparability; KL(baseline || cell) for model comparison),
    the decision under ``decision_rule``, and the robustness indicator
    versus the baseline decision. Across-member disagreement is attached
    per context/data cell. Failed cells are marked and skipped rather
    than aborting the grid; results are deterministic given ``seed``.
    """
    members = ensemble.members
    layout = members[0].context_layout
    n_gamma, n_like = layout["n_gamma"], layout["n_likelihoods"]

    if gamma_grid is None:
        gamma_grid = np.ones((1, n_gamma))
    gamma_grid = np.atleast_2d(np.asarray(gamma_grid, dtype=float))
    if gamma_grid.shape[1] != n_gamma:
        raise UsageError(f"gamma grid must have {n_gamma} columns")
    if likelihood_choices is None:
        likelihood_choices = [0]
    x_obs = np.asarray(x_obs, dtype=float)
    if x_obs.ndim == 1:
        x_obs = x_obs[:, None]
    if data_variants is None:
        data_variants = [x_obs]
    variants = [np.asarray(v, dtype=float) for v in data_variants]
    variants = [v[:, None] if v.ndim == 1 else v for v in variants]

    if baseline is None:
        baseline = {}
    base_gamma = np.asarray(baseline.get("gamma", np.ones(n_gamma)), dtype=float)
    matches = np.flatnonzero(np.all(np.isclose(gamma_grid, base_gamma[None, :]), axis=1))
    if matches.size == 0:
        raise UsageError("the baseline exponent vector must be part of the gamma grid")
    gb = int(matches[0])
    lb = int(baseline.get("likelihood_index", 0))
    vb = int(baseline.get("data_index", 0))
    if not (0 <= lb < len(likelihood_choices) and 0 <= vb < len(variants)):
        raise UsageError("baseline indices fall outside the grid")

    if decision_rule is None:
        decision_rule = ArgmaxModelRule() if ensemble.kind == "bmc" else MeanSignRule()
    if decision_rule.applies_to != ensemble.kind:
        raise UsageError(f"rule {decision_rule.name!r} does not apply to {ensemble.kind} posteriors")

    n_g, n_l, n_v = gamma_grid.shape[0], len(likelihood_choices), len(variants)
    n_m = len(members)
    ctx_rows = _encode_rows(gamma_grid, likelihood_choices, n_like)  # (G*L, C)
    cell_index = {
        (gi, li, vi): k
        for k, (gi, li, vi) in enumerate(itertools.product(range(n_g), range(n_l), range(n_v)))
    }
    n_cells = len(cell_index)
    base_flat = cell_index[(gb, lb, vb)]

    def project(draws_block):
        if projection is None:
            return draws_block
        if callable(projection):
            return np.stack([_as_draws(projection(d)) for d in draws_block])
        return draws_block[:, :, list(projection)]

    all_cells = {}
    payloads = {}  # (cell_flat, member) -> posterior mean vector or prob simplex

    for mi, member in enumerate(members):
        if ensemble.kind == "pe":
            draws_all, failed = _member_pe_draws(member, variants, ctx_rows, cell_index,
                                                 n_l, n_draws, seed, mi)
            base_ok = not failed[base_flat]
            base_draws = draws_all[base_flat] if base_ok else None
            base_decision = decision_rule(base_draws) if base_ok else None
            bw = median_bandwidth(project(draws_all[base_flat][None])[0]) if base_ok else 1.0
            raw_div = np.full(n_cells, np.nan)
            ok_idx = np.flatnonzero(~failed)
            if base_ok and ok_idx.size:
                proj_base = project(draws_all[base_flat][None])[0]
                for lo in range(0, ok_idx.size, 256):
                    sel = ok_idx[lo : lo + 256]
                    raw_div[sel] = _mmd_many(project(draws_all[sel]), proj_base, bw)
                raw_div[base_flat] = 0.0  # self-divergence is exactly zero
            for (gi, li, vi), flat in cell_index.items():
                if failed[flat]:
                    all_cells[(gi, li, vi, mi)] = _failed_cell(mi, gi, li, vi, gamma_grid,
                                                               likelihood_choices, "mmd")
                    continue
                draws = draws_all[flat]
                payloads[(flat, mi)] = draws.mean(axis=0)
                decision = decision_rule(draws)
                indicator = None if base_decision is None else int(decision == base_decision)
                raw = None if not base_ok else float(raw_div[flat])
                all_cells[(gi, li, vi, mi)] = _ok_cell(
                    mi, gi, li, vi, gamma_grid, likelihood_choices, "mmd", raw, decision,
                    indicator, threshold,
                    summary={"posterior_mean": draws.mean(axis=0).tolist(),
                             "posterior_sd": draws.std(axis=0).tolist()},
                )
        else:
            probs_all = _member_bmc_probs(member, variants, ctx_rows, cell_index, n_l)
            base_probs = probs_all[base_flat]
            base_decision = decision_rule(base_probs)
            for (gi, li, vi), flat in cell_index.items():
                probs = probs_all[flat]
                payloads[(flat, mi)] = probs
                if flat == base_flat:
                    raw = 0.0
                elif kl_reverse:
                    raw = kl_categorical(probs, base_probs)
                else:
                    raw = kl_categorical(base_probs, probs)
                decision = decision_rule(probs)
                indicator = int(decision == base_decision)
                all_cells[(gi, li, vi, mi)] = _ok_cell(
                    mi, gi, li, vi, gamma_grid, likelihood_choices, "kl", raw, decision,
                    indicator, threshold, summary={"model_probs": probs.tolist()},
                )

    for (gi, li, vi), flat in cell_index.items():
        stack = [payloads[(flat, mi)] for mi in range(n_m) if (flat, mi) in payloads]
        dis = float(np.std(np.stack(stack), axis=0).max()) if len(stack) >= 2 else None
        for mi in range(n_m):
            all_cells[(gi, li, vi, mi)].disagreement = dis

    ordered = [
        all_cells[(gi, li, vi, mi)]
        for gi, li, vi, mi in itertools.product(range(n_g), range(n_l), range(n_v), range(n_m))
    ]
    return SensitivityReport(
        axes={
            "gamma": [tuple(g) for g in gamma_grid],
            "likelihood": list(likelihood_choices),
            "data_variant": list(range(n_v)),
            "member": list(range(n_m)),
        },
        cells=ordered,
        baseline={"gamma_index": gb, "likelihood_index": lb, "data_index": vb,
                  "gamma": tuple(gamma_grid[gb])},
        decision_rule=decision_rule.name,
        threshold=threshold,
    )


def _member_pe_draws(member, variants, ctx_rows, cell_index, n_l, n_draws, seed, mi):
    """All posterior draw sets of one member over the grid, batched through
    the flow in chunks. Returns ((n_cells, n_draws, D) raw-scale draws,
    (n_cells,) failure mask)."""
    from .nnet.amortizer import untransform_theta

    arch = member.architecture
    dim = theta_dim_total(arch)
    if _same_shape(variants):
        summaries = checkpoint_summaries(member, np.stack(variants))
    else:
        summaries = np.concatenate([checkpoint_summaries(member, v[None]) for v in variants])
    n_cells = len(cell_index)
    cond_dim = summaries.shape[1] + ctx_rows.shape[1]
    conds = np.empty((n_cells, cond_dim))
    for (gi, li, vi), flat in cell_index.items():
        conds[flat, : summaries.shape[1]] = summaries[vi]
        conds[flat, summaries.shape[1] :] = ctx_rows[gi * n_l + li]

    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(mi,)))
    z = rng.standard_normal((n_cells * n_draws, dim))
    cond_rep = np.repeat(conds, n_draws, axis=0)
    _, flow = member.networks()

    rows = np.empty((n_cells * n_draws, dim))
    failed_rows = np.zeros(n_cells * n_draws, dtype=bool)
    chunk = 131072
    for lo in range(0, rows.shape[0], chunk):
        hi = min(lo + chunk, rows.shape[0])
        block, failed = _safe_inverse(flow, z[lo:hi], cond_rep[lo:hi])
        rows[lo:hi] = block
        if failed is not None:
            failed_rows[lo:hi] = failed
    theta_t = rows * member.stats["theta_sd"] + member.stats["theta_mean"]
    raw = theta_t[:, : arch["theta_dim_raw"]]
    with np.errstate(over="ignore"):
        raw = untransform_theta(arch, raw)
    bad = failed_rows | ~np.isfinite(raw).all(axis=1)
    draws_all = raw.reshape(n_cells, n_draws, arch["theta_dim_raw"])
    return draws_all, bad.reshape(n_cells, n_draws).any(axis=1)


def _member_bmc_probs(member, variants, ctx_rows, cell_index, n_l):
    """(n_cells, J) model posteriors of one member over the grid."""
    from .nnet.amortizer import predict_model_probs_batch

    n_cells = len(cell_index)
    probs_all = np.empty((n_cells, member.architecture["n_models"]))
    for vi, variant in enumerate(variants):
        rows = predict_model_probs_batch(
            member, np.repeat(variant[None, :, :], ctx_rows.shape[0], axis=0), ctx_rows
        )
        for (gi, li, v_k), flat in cell_index.items():
            if v_k == vi:
                probs_all[flat] = rows[gi * n_l + li]
    return probs_all


def _same_shape(variants):
    return all(v.shape == variants[0].shape for v in variants)


def _failed_cell(mi, gi, li, vi, gamma_grid, like_choices, kind):
    return CellResult(
        member=mi, gamma_index=gi, likelihood_index=li, data_index=vi,
        gamma=tuple(gamma_grid[gi]), likelihood_choice=like_choices[li],
        divergence_kind=kind, divergence=None, raw_divergence=None,
        decision=None, indicator=None, disagreement=None, status="failed",
    )


def _ok_cell(mi, gi, li, vi, gamma_grid, like_choices, kind, raw, decision, indicator,
             threshold, summary):
    value = None if raw is None else max(raw, 0.0)
    robust = None
    if value is not None and threshold is not None:
        robust = value < threshold
    return CellResult(
        member=mi, gamma_index=gi, likelihood_index=li, data_index=vi,
        gamma=tuple(gamma_grid[gi]), likelihood_choice=like_choices[li],
        divergence_kind=kind, divergence=value, raw_divergence=raw,
        decision=decision, indicator=indicator, disagreement=None, status="ok",
        summary=summary, robust=robust,
    )
