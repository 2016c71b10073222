"""Persistence: dataset files, checkpoint files, ensemble manifests, and
report emission.

All artifacts pair a human-readable JSON manifest with a raw little-endian
binary payload; every payload carries a SHA-256 hash that is enforced on
load, and writes are atomic (write-temp-then-rename).
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .data import SimulationBatch
from .ensemble import Ensemble
from .errors import IntegrityError, UsageError
from .nnet.amortizer import Checkpoint

SCHEMA_VERSION = 1


def _atomic_write_bytes(path: Path, blob: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def _atomic_write_text(path: Path, text: str) -> None:
    _atomic_write_bytes(path, text.encode())


def _dump_manifest(manifest: dict) -> str:
    return json.dumps(manifest, indent=1)


def _pack_arrays(arrays: dict) -> tuple[bytes, list]:
    index = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        blob = arr.tobytes()
        index.append({
            "name": name,
            "dtype": arr.dtype.str,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(blob),
        })
        chunks.append(blob)
        offset += len(blob)
    return b"".join(chunks), index


def _unpack_arrays(blob: bytes, index: list) -> dict:
    out = {}
    for entry in index:
        lo = entry["offset"]
        hi = lo + entry["nbytes"]
        arr = np.frombuffer(blob[lo:hi], dtype=np.dtype(entry["dtype"]))
        out[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return out


def _payload_hash(blob: bytes) -> str:
    return hashlib.sha256(blob).hexdigest()


# -- datasets --------------------------------------------------------------


def save_dataset(batch: SimulationBatch, path, config=None) -> str:
    """Write a dataset directory (manifest.json + payload.bin); returns the
    content hash."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    arrays = batch.payload_arrays()
    blob, index = _pack_arrays(arrays)
    content_hash = batch.content_hash()
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "artifact": "dataset",
        "kind": batch.kind,
        "counts": {"rows": len(batch)},
        "context": {"n_gamma": batch.n_gamma, "n_likelihoods": batch.n_likelihoods},
        "param_names": list(batch.param_names),
        "arrays": index,
        "content_hash": content_hash,
        "payload_hash": _payload_hash(blob),
        "config": config,
    }
    _atomic_write_bytes(path / "payload.bin", blob)
    _atomic_write_text(path / "manifest.json", _dump_manifest(manifest))
    return content_hash


def load_dataset(path) -> tuple[SimulationBatch, dict]:
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise UsageError(f"no dataset manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    blob = (path / "payload.bin").read_bytes()
    if _payload_hash(blob) != manifest["payload_hash"]:
        raise IntegrityError(f"payload hash mismatch in {path}")
    arrays = _unpack_arrays(blob, manifest["arrays"])
    batch = SimulationBatch(
        x=arrays["x"],
        gamma=arrays["gamma"],
        likelihood_choice=arrays["likelihood_choice"],
        n_likelihoods=manifest["context"]["n_likelihoods"],
        theta=arrays.get("theta"),
        labels=arrays.get("labels"),
        param_names=list(manifest.get("param_names") or []),
    )
    if batch.content_hash() != manifest["content_hash"]:
        raise IntegrityError(f"content hash mismatch in {path}")
    return batch, manifest


# -- checkpoints -----------------------------------------------------------


def save_checkpoint(ckpt: Checkpoint, path, config=None) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    arrays = {f"weights.{k}": np.ascontiguousarray(v, dtype="<f8") for k, v in ckpt.weights.items()}
    arrays.update({f"stats.{k}": np.ascontiguousarray(v, dtype="<f8") for k, v in ckpt.stats.items()})
    blob, index = _pack_arrays(arrays)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "artifact": "checkpoint",
        "kind": ckpt.kind,
        "architecture": ckpt.architecture,
        "context_layout": ckpt.context_layout,
        "train_config": ckpt.train_config,
        "epoch_losses": ckpt.epoch_losses,
        "val_losses": ckpt.val_losses,
        "dataset_hash": ckpt.dataset_hash,
        "seed": ckpt.seed,
        "param_names": list(ckpt.param_names),
        "arrays": index,
        "payload_hash": _payload_hash(blob),
        "config": config,
    }
    _atomic_write_bytes(path / "weights.bin", blob)
    _atomic_write_text(path / "manifest.json", _dump_manifest(manifest))


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise UsageError(f"no checkpoint manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    blob = (path / "weights.bin").read_bytes()
    if _payload_hash(blob) != manifest["payload_hash"]:
        raise IntegrityError(f"payload hash mismatch in {path}")
    arrays = _unpack_arrays(blob, manifest["arrays"])
    weights = {k[len("weights."):]: v for k, v in arrays.items() if k.startswith("weights.")}
    stats = {k[len("stats."):]: v for k, v in arrays.items() if k.startswith("stats.")}
    return Checkpoint(
        kind=manifest["kind"],
        architecture=manifest["architecture"],
        weights=weights,
        stats=stats,
        context_layout=manifest["context_layout"],
        train_config=manifest["train_config"],
        epoch_losses=manifest["epoch_losses"],
        val_losses=manifest["val_losses"],
        dataset_hash=manifest["dataset_hash"],
        seed=manifest["seed"],
        param_names=list(manifest.get("param_names") or []),
    )


# -- ensembles -------------------------------------------------------------


def save_ensemble(ensemble: Ensemble, path, config=None) -> None:
    """Write member checkpoints plus the ensemble manifest under one
    directory."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    member_dirs = []
    for k, member in enumerate(ensemble.members):
        rel = f"member_{k:02d}"
        save_checkpoint(member, path / rel, config=config)
        member_dirs.append(rel)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "artifact": "ensemble",
        "dataset_hash": ensemble.dataset_hash,
        "member_seeds": ensemble.member_seeds,
        "members": member_dirs,
        "config": config,
    }
    _atomic_write_text(path / "ensemble.json", _dump_manifest(manifest))


def load_ensemble(path) -> tuple[Ensemble, dict]:
    path = Path(path)
    if path.is_dir():
        path = path / "ensemble.json"
    if not path.exists():
        raise UsageError(f"no ensemble manifest at {path}")
    manifest = json.loads(path.read_text())
    members = [load_checkpoint(path.parent / rel) for rel in manifest["members"]]
    for member in members:
        if member.dataset_hash != manifest["dataset_hash"]:
            raise IntegrityError("ensemble member was trained on a different dataset")
    ensemble = Ensemble(
        members=members,
        dataset_hash=manifest["dataset_hash"],
        member_seeds=list(manifest["member_seeds"]),
    )
    return ensemble, manifest


def load_approximator(path):
    """Load either a single checkpoint or an ensemble manifest; returns
    (ensemble_or_checkpoint, manifest_config)."""
    path = Path(path)
    if (path / "ensemble.json").exists() or path.name == "ensemble.json":
        ens, manifest = load_ensemble(path)
        return ens, manifest.get("config")
    ckpt = load_checkpoint(path)
    manifest = json.loads((Path(path) / "manifest.json").read_text())
    return ckpt, manifest.get("config")


# -- reports ---------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    _atomic_write_text(Path(path), "\n".join(lines) + "\n")


def write_cells_csv(report, path) -> None:
    header = [
        "member", "gamma_index", "likelihood_index", "data_variant", "gamma",
        "likelihood_choice", "divergence_kind", "divergence", "raw_divergence",
        "decision", "indicator", "robust", "disagreement", "status",
    ]
    rows = []
    for c in report.cells:
        rows.append([
            c.member, c.gamma_index, c.likelihood_index, c.data_index,
            ";".join(repr(g) for g in c.gamma), c.likelihood_choice,
            c.divergence_kind, c.divergence, c.raw_divergence, c.decision,
            c.indicator, c.robust, c.disagreement, c.status,
        ])
    write_csv(path, header, rows)


def write_conclusions(path, report, ood_result=None, gap_report=None) -> None:
    lines = ["sensitivity analysis summary", "============================", ""]
    base = report.baseline
    base_cells = [
        c for c in report.cells
        if (c.gamma_index, c.likelihood_index, c.data_index) ==
           (base["gamma_index"], base["likelihood_index"], base["data_index"])
    ]
    decisions = sorted({c.decision for c in base_cells if c.decision is not None})
    lines.append(f"baseline exponents: {base['gamma']}")
    lines.append(f"baseline decision(s) across members: {decisions}")
    lines.append(f"cells: {report.cell_count} ({report.n_failed} failed)")
    frac = report.robustness_fraction()
    lines.append(f"robustness fraction (same decision as baseline): {frac:.4f}")
    divs = [c.divergence for c in report.cells if c.divergence is not None]
    if divs:
        lines.append(
            "divergence vs baseline: median {:.6g}, max {:.6g}".format(
                float(np.median(divs)), float(np.max(divs))
            )
        )
    if report.threshold is not None:
        robust = [c.robust for c in report.cells if c.robust is not None]
        lines.append(f"cells under the divergence bound: {np.mean(robust):.4f}")
    if gap_report is not None:
        lines.append("")
        lines.append(
            "approximator check: closed-world disagreement {:.6g}, open-world {:.6g}, ratio {:.3g}".format(
                gap_report.closed_disagreement, gap_report.open_disagreement, gap_report.ratio
            )
        )
        lines.append("simulation gap flagged" if gap_report.flagged else "no simulation gap flagged")
    if ood_result is not None:
        lines.append("")
        lines.append(
            "typicality: score {:.6g}, interval [{:.6g}, {:.6g}]".format(
                ood_result.score, ood_result.interval[0], ood_result.interval[1]
            )
        )
        status = "OUT of the typical set" + (" (below lower bound)" if ood_result.below_lower else "")
        lines.append(status if ood_result.flagged else "observation lies inside the typical set")
    _atomic_write_text(Path(path), "\n".join(lines) + "\n")
