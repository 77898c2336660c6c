"""Ablation sweeps: train/evaluate a grid along one axis and emit a CSV plus
one line plot per metric.

Axes:
  rounds      refinement rounds K at inference (shared checkpoint)
  horizon     rollout horizon T_w in frames at inference; 0 severs world->action
  tokens      resampler output tokens M (retrains per point)
  coupling    full / no_world_to_action / no_action_to_world (shared checkpoint)
  components  architecture presets base / +resampler / +predictor / +interactive
              (retrains per point)
"""

from __future__ import annotations

import csv
from dataclasses import asdict, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from ..training import DeskDataset
from .config import ExperimentConfig, config_fingerprint, with_seed
from .metrics import METRIC_COLUMNS
from .pipeline import evaluate_checkpoint, holdout_indices, train_pipeline

AXES = ("rounds", "horizon", "tokens", "coupling", "components")
COUPLING_GRID = ("full", "no_world_to_action", "no_action_to_world")
COMPONENTS_GRID = ("base", "+resampler", "+predictor", "+interactive")
ABLATION_COLUMNS = ("axis", "value") + METRIC_COLUMNS

_PLOT_METRICS = ("l2_avg", "col_avg", "latency_ms")


def parse_grid(axis: str, grid: str | Sequence | None) -> list:
    """Normalize a grid argument (comma string or sequence) for an axis."""
    if axis not in AXES:
        raise ValueError(f"unknown ablation axis {axis!r}; known: {AXES}")
    if isinstance(grid, str):
        grid = [g.strip() for g in grid.split(",") if g.strip()]
    if axis == "coupling":
        grid = list(grid) if grid else list(COUPLING_GRID)
        if tuple(grid) != COUPLING_GRID:
            raise ValueError(f"coupling grid is fixed to {COUPLING_GRID}, got {grid}")
        return grid
    if axis == "components":
        grid = list(grid) if grid else list(COMPONENTS_GRID)
        bad = [g for g in grid if g not in COMPONENTS_GRID]
        if bad:
            raise ValueError(f"unknown component presets {bad}; known: {COMPONENTS_GRID}")
        return grid
    if not grid:
        raise ValueError(f"axis {axis!r} needs an explicit grid")
    try:
        values = [int(g) for g in grid]
    except (TypeError, ValueError):
        raise ValueError(f"axis {axis!r} takes integer grid values, got {grid!r}")
    if any(v < 0 for v in values):
        raise ValueError(f"axis {axis!r} grid must be non-negative, got {values}")
    return values


def component_config(cfg: ExperimentConfig, preset: str) -> ExperimentConfig:
    """Architecture/training preset for the components progression."""
    if preset == "+interactive":
        return cfg
    if preset == "+predictor":
        # One-way coupling: the rollout informs refinement, but is produced
        # without action conditioning, in training and at inference alike.
        return replace(
            cfg,
            stage4=replace(cfg.stage4, refine_rounds=1, action_to_world=False),
            eval=replace(cfg.eval, rounds=1, action_to_world=False),
        )
    no_refine = replace(cfg.stage4, refine_rounds=0)
    no_rollout = replace(
        cfg.eval, rounds=0, t_w=0, world_to_action=False, action_to_world=False
    )
    if preset == "+resampler":
        return replace(
            cfg,
            model=replace(cfg.model, use_predictor=False),
            stage4=no_refine,
            eval=no_rollout,
        )
    if preset == "base":
        enc = cfg.model.encoder
        return replace(
            cfg,
            model=replace(
                cfg.model,
                use_resampler=False,
                use_predictor=False,
                denoiser=replace(
                    cfg.model.denoiser, d_latent=enc.d_e, m_tokens=enc.n_tokens
                ),
            ),
            stage4=no_refine,
            eval=no_rollout,
        )
    raise ValueError(f"unknown component preset {preset!r}; known: {COMPONENTS_GRID}")


def point_config(cfg: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    """Full experiment config for one grid point (training and eval semantics)."""
    if axis == "rounds":
        return replace(cfg, eval=replace(cfg.eval, rounds=int(value)))
    if axis == "horizon":
        return replace(cfg, eval=replace(cfg.eval, t_w=int(value)))
    if axis == "coupling":
        flags = {
            "full": {},
            "no_world_to_action": {"world_to_action": False},
            "no_action_to_world": {"action_to_world": False},
        }[value]
        return replace(cfg, eval=replace(cfg.eval, **flags))
    if axis == "tokens":
        v = int(value)
        return replace(
            cfg,
            model=replace(
                cfg.model,
                resampler=replace(cfg.model.resampler, m_tokens=v),
                predictor=replace(cfg.model.predictor, m_tokens=v),
                denoiser=replace(cfg.model.denoiser, m_tokens=v),
            ),
        )
    if axis == "components":
        return component_config(cfg, value)
    raise ValueError(f"unknown ablation axis {axis!r}; known: {AXES}")


def _format(v) -> str:
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def write_ablation_csv(path: str | Path, rows: Sequence[dict]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(ABLATION_COLUMNS)
        for row in rows:
            w.writerow([_format(row[c]) for c in ABLATION_COLUMNS])
    return path


def read_ablation_csv(path: str | Path) -> list[dict]:
    """Typed ablation rows; malformed content names the file and line."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no ablation CSV at {path}")
    with path.open(newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != ABLATION_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        out = []
        for i, row in enumerate(reader, start=2):
            try:
                if any(v is None for v in row.values()) or None in row:
                    raise ValueError("wrong number of fields")
                typed = {
                    "axis": row["axis"],
                    "value": row["value"],
                    "config_fingerprint": row["config_fingerprint"],
                    "seed": int(row["seed"]),
                }
                for c in METRIC_COLUMNS[2:]:
                    typed[c] = float(row[c])
                out.append(typed)
            except ValueError as e:
                raise ValueError(f"{path}: malformed row at line {i}: {e}") from e
    return out


def plot_ablation(rows: Sequence[dict], axis: str, out_dir: str | Path) -> list[Path]:
    """One line plot per metric: per-seed points plus the cross-seed mean."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    values = list(dict.fromkeys(r["value"] for r in rows))
    numeric = all(str(v).lstrip("-").isdigit() for v in values)
    xs = [int(v) for v in values] if numeric else list(range(len(values)))
    paths = []
    for metric in _PLOT_METRICS:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        means = []
        for v, x in zip(values, xs):
            ys = [r[metric] for r in rows if r["value"] == v]
            means.append(float(np.mean(ys)))
            ax.plot([x] * len(ys), ys, "o", color="tab:gray", ms=4, alpha=0.6)
        ax.plot(xs, means, "-o", color="tab:blue", label="mean over seeds")
        if not numeric:
            ax.set_xticks(xs)
            ax.set_xticklabels([str(v) for v in values], rotation=20)
        ax.set_xlabel(axis)
        ax.set_ylabel(metric)
        ax.set_title(f"{axis} sweep: {metric}")
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = out_dir / f"ablation_{axis}_{metric}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths


def run_ablation(
    axis: str,
    grid,
    cfg: ExperimentConfig,
    dataset: DeskDataset,
    out_dir: str | Path,
    *,
    eval_dataset: DeskDataset | None = None,
    seeds: Sequence[int] = (0,),
    work_dir: str | Path | None = None,
) -> dict:
    """Train/evaluate every grid point and emit CSV + plots.

    Grid points sharing a training signature (inference-only axes) reuse one
    checkpoint per seed. Without a separate eval dataset, evaluation runs on
    the final stage's held-out episodes of the training dataset.
    """
    grid = parse_grid(axis, grid)
    if not grid:
        raise ValueError("grid must be non-empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    work = Path(work_dir) if work_dir is not None else out / "checkpoints"

    rows = []
    for value in grid:
        for seed in seeds:
            point = with_seed(point_config(cfg, axis, value), seed)
            ckpt = train_pipeline(point, dataset, work)
            if eval_dataset is not None:
                eval_ds, indices = eval_dataset, None
            else:
                eval_ds, indices = dataset, holdout_indices(point, dataset)
            rec = evaluate_checkpoint(
                ckpt,
                eval_ds,
                eval_override=point.eval,
                indices=indices,
                fingerprint=config_fingerprint(point),
            )
            rows.append({"axis": axis, "value": value, **asdict(rec)})

    csv_path = write_ablation_csv(out / f"ablation_{axis}.csv", rows)
    plots = plot_ablation(rows, axis, out)
    return {"csv": csv_path, "plots": plots, "rows": rows}
