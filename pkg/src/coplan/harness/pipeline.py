"""End-to-end orchestration: train the stage chain a config calls for and
evaluate the resulting planner. Training runs are cached by config signature
so sweeps that only change inference settings share one checkpoint."""

from __future__ import annotations

import shutil
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..training import DeskDataset, load_manifest, run_stage, split_indices
from .config import (
    CONFIG_FILE,
    ExperimentConfig,
    build_models,
    config_fingerprint,
    load_planner,
    save_config,
    train_signature,
    validate_experiment,
)
from .metrics import MetricsRecord, evaluate_planner


def stage_chain(cfg: ExperimentConfig, *, include_stage1: bool = False) -> tuple[int, ...]:
    """Stages the configured components require (encoder pretraining optional)."""
    head = (1,) if include_stage1 else ()
    if cfg.model.use_predictor:
        return head + (2, 3, 4)
    if cfg.model.use_resampler:
        return head + (2, 4)
    return head + (4,)


def train_pipeline(
    cfg: ExperimentConfig,
    dataset: DeskDataset,
    work_dir: str | Path,
    *,
    include_stage1: bool = False,
    force: bool = False,
) -> Path:
    """Run the config's stage chain; returns the final checkpoint directory.

    The run directory is keyed by the training signature, and a finished run
    (final manifest present) is reused as-is. A partial run is discarded and
    retrained from scratch, keeping every emitted checkpoint internally
    consistent.
    """
    validate_experiment(cfg)
    chain = stage_chain(cfg, include_stage1=include_stage1)
    sig = train_signature(cfg)
    run_dir = Path(work_dir) / f"train_{sig[:12]}"
    final_dir = run_dir / f"s{chain[-1]}"
    if not force and (final_dir / "manifest.json").exists():
        return final_dir
    if run_dir.exists():
        shutil.rmtree(run_dir)

    models = build_models(cfg.model)
    prev: Path | None = None
    for stage in chain:
        out = run_dir / f"s{stage}"
        run_stage(getattr(cfg, f"stage{stage}"), models, dataset, out, ckpt_in=prev)
        save_config(cfg, out / CONFIG_FILE)
        prev = out
    return final_dir


def holdout_indices(cfg: ExperimentConfig, dataset: DeskDataset) -> np.ndarray:
    """Episodes the final training stage held out (never trained on)."""
    _, holdout = split_indices(len(dataset), cfg.stage4.holdout_fraction, cfg.seed)
    return holdout


def evaluate_checkpoint(
    ckpt_dir: str | Path,
    dataset: DeskDataset,
    *,
    eval_override=None,
    indices: np.ndarray | None = None,
    fingerprint: str | None = None,
) -> MetricsRecord:
    """Load a trained planner and score it. `eval_override`, when given,
    replaces the checkpoint config's eval section."""
    models, cfg, _ = load_planner(ckpt_dir)
    if eval_override is not None:
        cfg = replace(cfg, eval=eval_override)
    return evaluate_planner(
        models,
        dataset,
        cfg.eval.interaction(),
        indices=indices,
        batch_size=cfg.eval.batch_size,
        seed=cfg.seed,
        config_fingerprint=(
            fingerprint if fingerprint is not None else config_fingerprint(cfg)
        ),
        prompt_sigma=cfg.stage4.prompt_sigma,
    )


def untrained_baseline(
    cfg: ExperimentConfig,
    dataset: DeskDataset,
    *,
    indices: np.ndarray | None = None,
) -> MetricsRecord:
    """Metrics of the freshly initialized planner (no training), the frozen
    random baseline trained models are compared against."""
    models = build_models(cfg.model).eval_mode()
    return evaluate_planner(
        models,
        dataset,
        cfg.eval.interaction(),
        indices=indices,
        batch_size=cfg.eval.batch_size,
        seed=cfg.seed,
        config_fingerprint=config_fingerprint(cfg) + ":untrained",
        prompt_sigma=cfg.stage4.prompt_sigma,
    )
