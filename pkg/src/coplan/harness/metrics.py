"""Planner evaluation: displacement error at 1/2/3 s, cumulative collision
rate against the scripted agents, inference latency, and the pinned metrics
CSV schema."""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from ..geometry import to_world_frame
from ..interact import InteractionConfig, PlannerModels, infer_batch
from ..synthworld import Trajectory, collision_check
from ..training import DeskDataset, seed_from

METRIC_COLUMNS = (
    "config_fingerprint",
    "seed",
    "l2_1s",
    "l2_2s",
    "l2_3s",
    "l2_avg",
    "col_1s",
    "col_2s",
    "col_3s",
    "col_avg",
    "latency_ms",
)

HORIZON_SECONDS = (1, 2, 3)
# Poses arrive at 0.5 s spacing: pose index i sits at (i + 1) * 0.5 s.
POSE_INDEX = {1: 1, 2: 3, 3: 5}


@dataclass(frozen=True)
class MetricsRecord:
    config_fingerprint: str
    seed: int
    l2_1s: float
    l2_2s: float
    l2_3s: float
    l2_avg: float
    col_1s: float
    col_2s: float
    col_3s: float
    col_avg: float
    latency_ms: float

    def __post_init__(self) -> None:
        for name in ("l2_1s", "l2_2s", "l2_3s", "l2_avg", "latency_ms"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        for name in ("col_1s", "col_2s", "col_3s", "col_avg"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


def displacement_errors(pred: np.ndarray, expert: np.ndarray) -> dict[str, float]:
    """Mean Euclidean position error at each horizon plus their average.

    pred, expert: (B, H, 3) ego-frame poses at world scale, H >= 6.
    """
    pred = np.asarray(pred, dtype=np.float64)
    expert = np.asarray(expert, dtype=np.float64)
    if pred.shape != expert.shape or pred.ndim != 3 or pred.shape[-1] != 3:
        raise ValueError(f"pose arrays disagree: {pred.shape} vs {expert.shape}")
    if pred.shape[1] <= max(POSE_INDEX.values()):
        raise ValueError(
            f"trajectory horizon {pred.shape[1]} too short for a "
            f"{max(HORIZON_SECONDS)} s evaluation"
        )
    out = {}
    for sec in HORIZON_SECONDS:
        i = POSE_INDEX[sec]
        err = np.linalg.norm(pred[:, i, :2] - expert[:, i, :2], axis=-1)
        out[f"l2_{sec}s"] = float(err.mean())
    out["l2_avg"] = float(np.mean([out[f"l2_{s}s"] for s in HORIZON_SECONDS]))
    return out


def collision_table(
    dataset: DeskDataset, indices: np.ndarray, traj_ego: np.ndarray
) -> np.ndarray:
    """(B, H) per-step collision flags for ego-frame trajectories, checked in
    the world frame against the scripted agents' ground-truth future."""
    traj_ego = np.asarray(traj_ego, dtype=np.float64)
    ego_radius = float(dataset.manifest["config"]["ego_radius"])
    flags = np.zeros(traj_ego.shape[:2], dtype=bool)
    for row, i in enumerate(np.asarray(indices)):
        ep = dataset.episodes[int(i)]
        world = to_world_frame(ep.current.ego.pose(), traj_ego[row])
        agents = [snap.agents for snap in ep.future]
        flags[row] = collision_check(Trajectory(world), agents, ego_radius)
    return flags


def collision_rates(flags: np.ndarray) -> dict[str, float]:
    """Fraction of episodes colliding at or before each horizon, plus average."""
    out = {}
    for sec in HORIZON_SECONDS:
        i = POSE_INDEX[sec]
        out[f"col_{sec}s"] = float(flags[:, : i + 1].any(axis=1).mean())
    out["col_avg"] = float(np.mean([out[f"col_{s}s"] for s in HORIZON_SECONDS]))
    return out


def _eval_prompt(
    expert_norm: torch.Tensor, sigma: float, generator: torch.Generator
) -> torch.Tensor:
    noise = torch.randn(expert_norm.shape, generator=generator, dtype=expert_norm.dtype)
    return expert_norm + sigma * noise


def evaluate_planner(
    models: PlannerModels,
    dataset: DeskDataset,
    icfg: InteractionConfig,
    *,
    indices: np.ndarray | None = None,
    batch_size: int = 64,
    seed: int = 0,
    config_fingerprint: str = "",
    prompt_sigma: float = 0.1,
) -> MetricsRecord:
    """Infer a trajectory per episode and score it against the expert.

    Evaluation noise is drawn from a fixed stream per batch, so identical
    seeds and configs reproduce the planning metrics exactly; latency_ms is
    measured wall time (informational, not reproducible).
    """
    if indices is None:
        indices = np.arange(len(dataset))
    indices = np.asarray(indices, dtype=np.int64)
    if len(indices) < 1:
        raise ValueError("evaluation needs at least one episode")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")

    preds, col_rows = [], []
    infer_seconds = 0.0
    with torch.no_grad():
        for start in range(0, len(indices), batch_size):
            bidx = indices[start : start + batch_size]
            batch = dataset.planning_batch(bidx)
            gen = torch.Generator().manual_seed(seed_from(seed, 0xE7A7, start))
            prompt = None
            if icfg.mode == "refine_prompt":
                prompt = _eval_prompt(batch.expert_norm, prompt_sigma, gen)
            t0 = time.perf_counter()
            out = infer_batch(
                models, batch.obs, batch.command, batch.speed, icfg,
                prompt=prompt, generator=gen,
            )
            infer_seconds += time.perf_counter() - t0
            traj = out["trajectory"].numpy()
            preds.append(traj)
            col_rows.append(collision_table(dataset, bidx, traj))

    pred = np.concatenate(preds)
    expert = dataset.expert_ego[indices]
    l2 = displacement_errors(pred, expert)
    col = collision_rates(np.concatenate(col_rows))
    return MetricsRecord(
        config_fingerprint=config_fingerprint,
        seed=seed,
        latency_ms=1000.0 * infer_seconds / len(indices),
        **l2,
        **col,
    )


def measure_latency(
    models: PlannerModels,
    dataset: DeskDataset,
    icfg: InteractionConfig,
    *,
    trials: int = 10,
    warmup: int = 2,
    seed: int = 0,
) -> dict[str, float]:
    """Median/mean single-episode planning latency over repeated trials."""
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    batch = dataset.planning_batch(np.array([0]))
    times = []
    with torch.no_grad():
        for trial in range(warmup + trials):
            gen = torch.Generator().manual_seed(seed_from(seed, 0x7A7, trial))
            t0 = time.perf_counter()
            infer_batch(
                models, batch.obs, batch.command, batch.speed, icfg, generator=gen
            )
            dt = time.perf_counter() - t0
            if trial >= warmup:
                times.append(dt * 1000.0)
    arr = np.array(times)
    return {
        "median_ms": float(np.median(arr)),
        "mean_ms": float(arr.mean()),
        "min_ms": float(arr.min()),
        "max_ms": float(arr.max()),
        "trials": float(trials),
    }


def _format(v) -> str:
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def write_metrics(
    path: str | Path, records: Sequence[MetricsRecord], *, append: bool = False
) -> Path:
    path = Path(path)
    fresh = not (append and path.exists())
    with path.open("a" if not fresh else "w", newline="") as f:
        w = csv.writer(f)
        if fresh:
            w.writerow(METRIC_COLUMNS)
        for rec in records:
            d = asdict(rec)
            w.writerow([_format(d[c]) for c in METRIC_COLUMNS])
    return path


def read_metrics(path: str | Path) -> list[MetricsRecord]:
    """Parse a metrics CSV; malformed content names the file and line."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no metrics file at {path}")
    with path.open(newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != METRIC_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        out = []
        for i, row in enumerate(reader, start=2):
            try:
                if any(v is None for v in row.values()) or None in row:
                    raise ValueError("wrong number of fields")
                out.append(
                    MetricsRecord(
                        config_fingerprint=row["config_fingerprint"],
                        seed=int(row["seed"]),
                        **{
                            c: float(row[c])
                            for c in METRIC_COLUMNS[2:]
                        },
                    )
                )
            except ValueError as e:
                raise ValueError(f"{path}: malformed row at line {i}: {e}") from e
    return out
