"""Training-side dataset preparation.

Each 12-snapshot episode yields 9 overlapping 4-frame windows: window j
covers snapshots [j, j+4). Window 0 is the planning observation (its last
frame is the decision instant); windows 1..8 are the future observations the
teacher branch encodes into rollout targets. Every window is rendered in its
own ego frame (reference = the window's last snapshot), like a camera rigid
with the ego.

Rendered binary frames are bit-packed to disk once per (dataset, render
config) pair and memory-mapped thereafter; planning targets (command, speed,
expert poses in the current ego frame, normalized) are precomputed in memory.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..diffusion import normalize_poses
from ..geometry import to_ego_frame
from ..synthworld.dataset import load_dataset
from ..synthworld.render import RenderConfig, render_observation
from ..synthworld.types import T_FUTURE, T_OBS, Episode

N_WINDOWS = T_FUTURE + 1  # window j = snapshots[j : j + T_OBS], j in [0, T_FUTURE]

CACHE_VERSION = 1


def render_fingerprint(cfg: RenderConfig, dataset_manifest: dict) -> str:
    """Cache key: render parameters + the dataset's content fingerprint."""
    payload = {
        "cache_version": CACHE_VERSION,
        "px": cfg.px,
        "extent": cfg.extent,
        "t_obs": cfg.t_obs,
        "ego_radius": cfg.ego_radius,
        "n_windows": N_WINDOWS,
        "dataset": {
            "episode_count": dataset_manifest["episode_count"],
            "seed": dataset_manifest["seed"],
            "config": dataset_manifest["config"],
        },
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def render_episode_windows(episode: Episode, cfg: RenderConfig) -> np.ndarray:
    """All N_WINDOWS observations of one episode, (W, T_obs, px, px, 3)."""
    out = np.empty((N_WINDOWS, cfg.t_obs, cfg.px, cfg.px, 3), dtype=np.float32)
    for j in range(N_WINDOWS):
        window = episode.snapshots[j : j + T_OBS]
        out[j] = render_observation(list(window), cfg).grid
    return out


def build_render_cache(
    episodes: list[Episode], cfg: RenderConfig, path: Path, fingerprint: str
) -> None:
    """Render every window of every episode and bit-pack to one .npz file."""
    n = len(episodes)
    shape = (n, N_WINDOWS, cfg.t_obs, cfg.px, cfg.px, 3)
    packed = np.empty((n,) + _packed_tail(shape[1:]), dtype=np.uint8)
    for i, ep in enumerate(episodes):
        frames = render_episode_windows(ep, cfg)
        packed[i] = np.packbits(frames.astype(np.uint8), axis=-1)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(
        path, packed=packed, shape=np.asarray(shape), fingerprint=np.frombuffer(
            fingerprint.encode(), dtype=np.uint8
        )
    )


def _packed_tail(tail_shape: tuple[int, ...]) -> tuple[int, ...]:
    *lead, last = tail_shape
    return tuple(lead) + ((last + 7) // 8,)


def load_render_cache(path: Path, fingerprint: str) -> tuple[np.ndarray, tuple[int, ...]]:
    with np.load(path) as z:
        stored = z["fingerprint"].tobytes().decode()
        if stored != fingerprint:
            raise ValueError(
                f"render cache {path} was built for a different dataset or "
                f"render config (fingerprint mismatch)"
            )
        return z["packed"], tuple(int(s) for s in z["shape"])


@dataclass
class PlanningBatch:
    obs: torch.Tensor  # (B, T_obs, px, px, 3) float32
    command: torch.Tensor  # (B,) long
    speed: torch.Tensor  # (B,) float32
    expert_norm: torch.Tensor  # (B, H, 3) float32, ego frame, normalized
    indices: np.ndarray  # episode indices into the split


class DeskDataset:
    """Episodes + rendered windows + precomputed planning targets."""

    def __init__(
        self,
        dataset_dir: str | Path,
        render_cfg: RenderConfig | None = None,
        cache_dir: str | Path | None = None,
    ):
        dataset_dir = Path(dataset_dir)
        self.render_cfg = render_cfg or RenderConfig()
        self.episodes, self.manifest = load_dataset(dataset_dir)
        self.fingerprint = render_fingerprint(self.render_cfg, self.manifest)

        cache_dir = Path(cache_dir) if cache_dir is not None else dataset_dir
        cache_path = cache_dir / f"render_cache_{self.fingerprint[:16]}.npz"
        if not cache_path.exists():
            build_render_cache(self.episodes, self.render_cfg, cache_path, self.fingerprint)
        self._packed, self._shape = load_render_cache(cache_path, self.fingerprint)
        if self._shape[0] != len(self.episodes):
            raise ValueError(
                f"render cache holds {self._shape[0]} episodes, "
                f"dataset has {len(self.episodes)}"
            )

        n = len(self.episodes)
        self.command = np.array([int(ep.command) for ep in self.episodes], dtype=np.int64)
        self.speed = np.array(
            [ep.current.ego.v for ep in self.episodes], dtype=np.float32
        )
        expert_ego = np.stack(
            [
                to_ego_frame(ep.current.ego.pose(), ep.expert.poses)
                for ep in self.episodes
            ]
        ).astype(np.float32)
        self.expert_ego = expert_ego  # (N, H, 3) world-scale, ego frame
        self.expert_norm = (
            normalize_poses(torch.from_numpy(expert_ego)).numpy().astype(np.float32)
        )
        assert self.expert_norm.shape == (n, T_FUTURE, 3)

    def __len__(self) -> int:
        return len(self.episodes)

    def observations(self, idx: np.ndarray, window: int) -> torch.Tensor:
        """Unpack rendered window `window` for the given episodes."""
        if not 0 <= window < N_WINDOWS:
            raise ValueError(f"window must lie in [0, {N_WINDOWS - 1}], got {window}")
        _, _, t, h, w, c = self._shape
        packed = self._packed[idx, window]
        bits = np.unpackbits(packed, axis=-1, count=c)
        return torch.from_numpy(bits.reshape(len(idx), t, h, w, c).astype(np.float32))

    def all_windows(self, idx: np.ndarray) -> torch.Tensor:
        """(B, N_WINDOWS, T_obs, px, px, 3) for latent precomputation."""
        _, nw, t, h, w, c = self._shape
        packed = self._packed[idx]
        bits = np.unpackbits(packed, axis=-1, count=c)
        return torch.from_numpy(bits.reshape(len(idx), nw, t, h, w, c).astype(np.float32))

    def planning_batch(self, idx: np.ndarray) -> PlanningBatch:
        return PlanningBatch(
            obs=self.observations(idx, window=0),
            command=torch.from_numpy(self.command[idx]),
            speed=torch.from_numpy(self.speed[idx]),
            expert_norm=torch.from_numpy(self.expert_norm[idx]),
            indices=idx,
        )


def split_indices(
    n: int, holdout_fraction: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic train/holdout split of [0, n)."""
    if not 0.0 < holdout_fraction < 1.0:
        raise ValueError(f"holdout_fraction must be in (0, 1), got {holdout_fraction}")
    if n < 2:
        raise ValueError(f"need at least 2 episodes to split, got {n}")
    rng = np.random.default_rng([seed, 0xD5])
    perm = rng.permutation(n)
    k = max(1, int(round(n * holdout_fraction)))
    if k >= n:
        k = n - 1
    return np.sort(perm[k:]), np.sort(perm[:k])


def iter_batches(
    indices: np.ndarray, batch_size: int, rng: np.random.Generator, *, shuffle: bool = True
):
    """Yield index batches covering `indices` once (last batch may be short)."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = rng.permutation(indices) if shuffle else np.asarray(indices)
    for start in range(0, len(order), batch_size):
        yield order[start : start + batch_size]
