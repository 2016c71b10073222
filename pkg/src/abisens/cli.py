"""Command-line entry point.

Subcommands: simulate, train, validate, infer, sensitivity. Exit codes:
0 success, 1 usage error, 2 data-integrity failure, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import diagnostics, io
from .config import build_gamma_grid, config_from_snapshot, load_config
from .ensemble import Ensemble, closed_vs_open_report, ensemble_predict, train_ensemble
from .errors import AbisensError, IntegrityError, NumericError, UsageError
from .nnet.amortizer import predict_model_probs, sample_posterior
from .nnet.training import train
from .sensitivity import bootstrap_variants, loo_variants, make_decision_rule, run_sensitivity_grid


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def read_observed_csv(path) -> np.ndarray:
    """Numeric CSV, one row per observation/trial; a non-numeric first row
    is treated as a header."""
    path = Path(path)
    if not path.exists():
        raise UsageError(f"observed data file {path} does not exist")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise UsageError(f"{path} is empty")
    try:
        [float(v) for v in rows[0]]
    except ValueError:
        rows = rows[1:]
    if not rows:
        raise UsageError(f"{path} has no data rows")
    try:
        data = np.array([[float(v) for v in r] for r in rows])
    except ValueError as exc:
        raise UsageError(f"non-numeric value in {path}: {exc}") from exc
    return data


def _parse_float_list(text) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise UsageError(f"expected a comma-separated float list, got {text!r}") from exc


def _split_validation(batch, fraction):
    n = len(batch)
    n_val = int(n * fraction)
    if n_val == 0:
        return batch, None
    return batch.subset(np.arange(n - n_val)), batch.subset(np.arange(n - n_val, n))


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.raw["seed"] = args.seed
    if args.budget is not None:
        cfg.raw["budget"] = args.budget
    exp = cfg.experiment()
    batch = exp.simulate_batch(cfg.budget, cfg.seed)
    out = Path(args.out) / f"{cfg.name}.dataset"
    content_hash = io.save_dataset(batch, out, config=cfg.snapshot())
    print(f"wrote {len(batch)} rows to {out}")
    print(f"content hash: {content_hash}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    batch, manifest = io.load_dataset(args.dataset)
    exp = cfg.experiment()
    arch = cfg.architecture(exp)
    train_data, val_data = _split_validation(batch, cfg.validation_fraction)
    dataset_hash = manifest["content_hash"]
    seed = args.seed if args.seed is not None else cfg.seed
    if args.ensemble > 1:
        ens = train_ensemble(cfg.train_config(), train_data, args.ensemble, seed, arch, val_data=val_data)
        out = Path(args.out) / f"{cfg.name}.ensemble"
        io.save_ensemble(ens, out, config=cfg.snapshot())
        for k, member in enumerate(ens.members):
            print(f"member {k}: final loss {member.epoch_losses[-1]:.4f}")
        print(f"wrote ensemble manifest to {out / 'ensemble.json'}")
    else:
        ckpt = train(cfg.train_config(seed=seed), train_data, arch, val_data=val_data,
                     dataset_hash=dataset_hash)
        out = Path(args.out) / f"{cfg.name}.checkpoint"
        io.save_checkpoint(ckpt, out, config=cfg.snapshot())
        print(f"final loss {ckpt.epoch_losses[-1]:.4f}")
        print(f"wrote checkpoint to {out}")
    return 0


def _load_members(path):
    approx, snapshot = io.load_approximator(path)
    members = approx.members if isinstance(approx, Ensemble) else [approx]
    return approx, members, snapshot


def cmd_validate(args) -> int:
    approx, members, snapshot = _load_members(args.approximator)
    testset, _ = io.load_dataset(args.testset)
    if len(testset) == 0:
        raise UsageError("empty test set")
    cfg = config_from_snapshot(snapshot)
    exp = cfg.experiment()
    rows = []
    if members[0].kind == "pe":
        header = ["member", "mae", "ece", "contraction"]
        for k, member in enumerate(members):
            scores = diagnostics.validation_scores(member, testset, exp.prior_spec, seed=cfg.seed)
            rows.append([k, scores.mae, scores.ece, scores.contraction])
    else:
        header = ["member", "accuracy", "brier", "ece", "mae"]
        for k, member in enumerate(members):
            scores = diagnostics.classifier_metrics(member, testset)
            rows.append([k, scores.accuracy, scores.brier, scores.ece, scores.mae])
    values = np.array([r[1:] for r in rows], dtype=float)
    rows.append(["mean"] + values.mean(axis=0).tolist())
    rows.append(["sd"] + values.std(axis=0).tolist())
    out = Path(args.out) / "scores.csv"
    Path(args.out).mkdir(parents=True, exist_ok=True)
    io.write_csv(out, header, rows)
    for row in rows:
        print(", ".join(f"{h}={io._fmt(v)}" for h, v in zip(header, row)))
    print(f"wrote {out}")
    return 0


def cmd_infer(args) -> int:
    approx, members, snapshot = _load_members(args.approximator)
    cfg = config_from_snapshot(snapshot)
    exp = cfg.experiment()
    x_obs = exp.features_from_raw(read_observed_csv(args.data))
    gamma = _parse_float_list(args.gamma) if args.gamma else np.ones(members[0].context_layout["n_gamma"])
    context = exp.context(gamma)
    rng = np.random.default_rng(args.seed)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    if members[0].kind == "pe":
        if isinstance(approx, Ensemble):
            pred = ensemble_predict(approx, x_obs, context, args.draws, rng)
            draws = pred.mixture
        else:
            draws = sample_posterior(members[0], x_obs, context, args.draws, rng)
        names = members[0].param_names or [f"param_{k}" for k in range(draws.shape[1])]
        out = Path(args.out) / "draws.csv"
        io.write_csv(out, names, draws.tolist())
    else:
        if isinstance(approx, Ensemble):
            pred = ensemble_predict(approx, x_obs, context, 0, rng)
            probs = pred.mixture
        else:
            probs = predict_model_probs(members[0], x_obs, context)
        out = Path(args.out) / "model_probs.csv"
        io.write_csv(out, [f"model_{j}" for j in range(probs.shape[0])], [probs.tolist()])
    print(f"wrote {out}")
    return 0


def cmd_sensitivity(args) -> int:
    approx, members, snapshot = _load_members(args.approximator)
    if not isinstance(approx, Ensemble):
        raise UsageError("sensitivity analysis needs a trained ensemble manifest")
    cfg = config_from_snapshot(snapshot)
    exp = cfg.experiment()
    sens_cfg = cfg.sensitivity_params
    x_obs = exp.features_from_raw(read_observed_csv(args.data))
    n_gamma = members[0].context_layout["n_gamma"]

    baseline_gamma = _parse_float_list(args.baseline_gamma) if args.baseline_gamma else np.ones(n_gamma)
    if baseline_gamma.shape[0] == 1 and n_gamma > 1:
        baseline_gamma = np.full(n_gamma, baseline_gamma[0])
    gamma_grid = build_gamma_grid(args.gamma_grid or [], n_gamma)
    if not np.any(np.all(np.isclose(gamma_grid, baseline_gamma[None, :]), axis=1)):
        gamma_grid = np.vstack([baseline_gamma[None, :], gamma_grid]) if args.gamma_grid else baseline_gamma[None, :]

    rng = np.random.default_rng(args.seed)
    variants = [x_obs]
    if args.loo:
        variants += loo_variants(x_obs)
    elif args.bootstrap > 0:
        variants += bootstrap_variants(x_obs, args.bootstrap, rng)

    rule = make_decision_rule(args.decision_rule, theta0=args.theta0, hdi_mass=args.hdi_mass,
                              param_index=args.param_index)
    report = run_sensitivity_grid(
        approx, x_obs,
        gamma_grid=gamma_grid,
        data_variants=variants,
        decision_rule=rule,
        baseline={"gamma": baseline_gamma},
        n_draws=args.draws if args.draws else sens_cfg["n_draws"],
        seed=args.seed,
        threshold=args.threshold,
    )

    ref_seed = np.random.SeedSequence(entropy=args.seed, spawn_key=(9999,)).generate_state(1)[0]
    reference = exp.simulate_batch(int(sens_cfg["reference_sims"]), int(ref_seed))
    ood = diagnostics.typical_set_ood(approx, reference, x_obs, level_alpha=args.alpha_level)
    gap = closed_vs_open_report(approx, reference, x_obs, exp.context(baseline_gamma),
                                seed=args.seed, threshold=sens_cfg["gap_threshold"])

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    io.write_cells_csv(report, out_dir / "cells.csv")
    io.write_conclusions(out_dir / "conclusions.txt", report, ood_result=ood, gap_report=gap)
    ood_lines = [
        f"score: {ood.score!r}",
        f"interval: [{ood.interval[0]!r}, {ood.interval[1]!r}]",
        f"flagged: {ood.flagged}",
        f"below_lower: {ood.below_lower}",
    ]
    if ood.per_member:
        for k, r in enumerate(ood.per_member):
            ood_lines.append(f"member {k}: score {r.score!r} interval [{r.interval[0]!r}, {r.interval[1]!r}] flagged {r.flagged}")
    io._atomic_write_text(out_dir / "ood.txt", "\n".join(ood_lines) + "\n")
    print(f"cells: {report.cell_count} ({report.n_failed} failed)")
    print(f"wrote {out_dir / 'cells.csv'}")

    if report.n_failed > 0.01 * report.cell_count:
        print("more than 1% of cells failed", file=sys.stderr)
        return 3
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="abisens", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a training or test dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--budget", type=int, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train a single approximator or an ensemble")
    p.add_argument("--config", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ensemble", type=int, default=1, metavar="M")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("validate", help="closed-world validation scores")
    p.add_argument("--approximator", required=True, help="checkpoint dir or ensemble dir")
    p.add_argument("--testset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("infer", help="amortized inference on observed data")
    p.add_argument("--approximator", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gamma", default=None, help="comma-separated scaling exponents")
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("sensitivity", help="full sensitivity grid over contexts, data, and members")
    p.add_argument("--approximator", required=True, help="ensemble dir")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gamma-grid", action="append", default=None, metavar="SPEC",
                   help="per-component axis 'lo:hi:n log|lin'; repeat per component")
    p.add_argument("--baseline-gamma", default=None, metavar="LIST")
    p.add_argument("--bootstrap", type=int, default=0, metavar="B")
    p.add_argument("--loo", action="store_true")
    p.add_argument("--decision-rule", default="mean_sign",
                   choices=["mean_sign", "hdi", "argmax"])
    p.add_argument("--theta0", type=float, default=None)
    p.add_argument("--hdi-mass", type=float, default=0.95)
    p.add_argument("--param-index", type=int, default=0)
    p.add_argument("--alpha-level", type=float, default=0.05)
    p.add_argument("--threshold", type=float, default=None, help="divergence bound for the robust flag")
    p.add_argument("--draws", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sensitivity)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return int(args.func(args) or 0)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except AbisensError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
