"""Checkpoint directory layout: a JSON manifest plus one parameter blob per
named module group, and a loss-curve CSV.

    <dir>/manifest.json   schema version, stage, provenance chain, parameter
                          group index (file, per-tensor shapes), config echo,
                          RNG states, optional metrics
    <dir>/<group>.pt      torch state_dict per group
    <dir>/losses.csv      step,stage,loss_name,value

Every load validates the stored shapes against both the manifest and the
receiving module before any parameter is copied.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import torch

SCHEMA_VERSION = 1
LOSS_COLUMNS = ("step", "stage", "loss_name", "value")


def state_fingerprint(modules: dict[str, torch.nn.Module]) -> str:
    """Deterministic digest of every parameter and buffer byte."""
    h = hashlib.sha256()
    for group in sorted(modules):
        sd = modules[group].state_dict()
        for name in sorted(sd):
            t = sd[name]
            h.update(f"{group}/{name}/{tuple(t.shape)}/{t.dtype}".encode())
            h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def save_checkpoint(
    out_dir: str | Path,
    *,
    stage: int,
    modules: dict[str, torch.nn.Module],
    config: dict,
    provenance: list[str] | None = None,
    metrics: dict | None = None,
    rng: dict | None = None,
) -> dict:
    """Write manifest + per-group blobs; returns the manifest dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    groups = {}
    for group, module in modules.items():
        sd = module.state_dict()
        blob = f"{group}.pt"
        torch.save(sd, out / blob)
        groups[group] = {
            "file": blob,
            "shapes": {k: list(v.shape) for k, v in sd.items()},
        }
    fingerprint = state_fingerprint(modules)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "stage": stage,
        "fingerprint": fingerprint,
        "provenance": list(provenance or []) + [f"stage{stage}:{fingerprint}"],
        "groups": groups,
        "config": config,
        # Caller-supplied RNG record (seeds / generator states); kept
        # caller-defined so identical runs produce identical manifests.
        "rng": rng or {},
        "metrics": metrics or {},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_manifest(ckpt_dir: str | Path) -> dict:
    path = Path(ckpt_dir) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no checkpoint manifest at {path}")
    manifest = json.loads(path.read_text())
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(
            f"{path}: unsupported schema version {manifest.get('schema_version')!r}"
        )
    for key in ("stage", "provenance", "groups", "config"):
        if key not in manifest:
            raise ValueError(f"{path}: manifest missing field {key!r}")
    return manifest


def load_modules(
    ckpt_dir: str | Path,
    modules: dict[str, torch.nn.Module],
    *,
    strict_groups: bool = True,
) -> dict:
    """Load state into the given modules, validating shapes first.

    Returns the manifest. With strict_groups, every requested group must be
    present in the checkpoint.
    """
    ckpt = Path(ckpt_dir)
    manifest = load_manifest(ckpt)
    staged: list[tuple[torch.nn.Module, dict]] = []
    for group, module in modules.items():
        entry = manifest["groups"].get(group)
        if entry is None:
            if strict_groups:
                raise ValueError(
                    f"checkpoint {ckpt} has no parameter group {group!r}; "
                    f"available: {sorted(manifest['groups'])}"
                )
            continue
        blob = ckpt / entry["file"]
        if not blob.exists():
            raise FileNotFoundError(f"missing parameter blob {blob}")
        sd = torch.load(blob, weights_only=True)
        want = {k: tuple(v.shape) for k, v in module.state_dict().items()}
        stored = {k: tuple(v.shape) for k, v in sd.items()}
        recorded = {k: tuple(v) for k, v in entry["shapes"].items()}
        if stored != recorded:
            raise ValueError(
                f"{blob}: blob shapes disagree with manifest for group {group!r}"
            )
        if stored != want:
            missing = sorted(set(want) - set(stored))
            extra = sorted(set(stored) - set(want))
            mismatched = sorted(
                k for k in set(want) & set(stored) if want[k] != stored[k]
            )
            raise ValueError(
                f"group {group!r} incompatible with module: "
                f"missing={missing} extra={extra} shape-mismatch={mismatched}"
            )
        staged.append((module, sd))
    # All groups validated; only now mutate any module.
    for module, sd in staged:
        module.load_state_dict(sd)
    return manifest


def require_stage(manifest: dict, stage: int) -> None:
    if manifest["stage"] != stage:
        raise ValueError(
            f"expected a stage-{stage} checkpoint, got stage {manifest['stage']}"
        )


def append_losses(ckpt_dir: str | Path, rows: list[tuple[int, int, str, float]]) -> None:
    """Append (step, stage, loss_name, value) rows to the loss-curve CSV."""
    path = Path(ckpt_dir) / "losses.csv"
    new = not path.exists()
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", newline="") as f:
        w = csv.writer(f)
        if new:
            w.writerow(LOSS_COLUMNS)
        for step, stage, name, value in rows:
            w.writerow([step, stage, name, f"{value:.8g}"])


def read_losses(ckpt_dir: str | Path) -> list[dict]:
    path = Path(ckpt_dir) / "losses.csv"
    if not path.exists():
        raise FileNotFoundError(f"no loss curves at {path}")
    with path.open(newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != LOSS_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        out = []
        for i, row in enumerate(reader, start=2):
            try:
                out.append(
                    {
                        "step": int(row["step"]),
                        "stage": int(row["stage"]),
                        "loss_name": row["loss_name"],
                        "value": float(row["value"]),
                    }
                )
            except (TypeError, ValueError) as e:
                raise ValueError(f"{path}: malformed row at line {i}: {e}") from e
    return out
