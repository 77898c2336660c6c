"""Ego-centric binary raster rendering of world snapshots.

A rendered observation is a (T_obs, px, px, 3) float32 grid with binary
channels (drivable area, agents, ego footprint). All T_obs frames share one
reference frame: the ego pose of the *last* history snapshot. Relative
coordinates are computed before rasterizing, so translating the whole world
leaves the raster unchanged.

Grid convention: row index i maps to the forward offset
x_rel = (i + 0.5) * res - extent / 2 and column j to the leftward offset
y_rel likewise, with res = extent / px.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .types import DT, EgoState, Observation, RoadSpec, WorldSnapshot

_TIME_TOL = 1e-6


@dataclass(frozen=True)
class RenderConfig:
    px: int = 64
    extent: float = 32.0  # meters spanned by each grid edge
    t_obs: int = 4
    ego_radius: float = 0.8

    @property
    def resolution(self) -> float:
        return self.extent / self.px


def _pixel_centers(cfg: RenderConfig) -> np.ndarray:
    """(px*px, 2) array of (x_rel, y_rel) pixel-center coordinates."""
    coords = (np.arange(cfg.px) + 0.5) * cfg.resolution - cfg.extent / 2.0
    xx, yy = np.meshgrid(coords, coords, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel()], axis=1)


def _to_ref_frame(points: np.ndarray, ref: EgoState) -> np.ndarray:
    """World points (N, 2) -> reference (ego) frame."""
    rel = points - np.array([ref.x, ref.y])
    c, s = math.cos(-ref.yaw), math.sin(-ref.yaw)
    rot = np.array([[c, -s], [s, c]])
    return rel @ rot.T


def rasterize_road(road: RoadSpec, ref: EgoState, cfg: RenderConfig) -> np.ndarray:
    """(px, px) bool mask of drivable area in the reference frame."""
    pts = _to_ref_frame(road.centerline, ref)
    starts = pts[:-1]
    ends = pts[1:]
    # Cull segments that cannot reach the grid: their inflated bounding box
    # must intersect the [-extent/2, extent/2]^2 pixel-center square.
    reach = cfg.extent / 2.0 + road.half_width
    lo = np.minimum(starts, ends)
    hi = np.maximum(starts, ends)
    keep = np.all(lo <= reach, axis=1) & np.all(hi >= -reach, axis=1)
    if not np.any(keep):
        return np.zeros((cfg.px, cfg.px), dtype=bool)
    starts = starts[keep]
    vecs = ends[keep] - starts
    lens2 = np.sum(vecs**2, axis=1)
    grid = _pixel_centers(cfg)  # (P, 2)
    # Distance from each pixel center to each centerline segment.
    diff = grid[:, None, :] - starts[None, :, :]  # (P, S, 2)
    t = np.clip(np.einsum("psi,si->ps", diff, vecs) / lens2[None, :], 0.0, 1.0)
    dx = diff[..., 0] - t * vecs[None, :, 0]
    dy = diff[..., 1] - t * vecs[None, :, 1]
    d2 = dx * dx + dy * dy
    mask = d2.min(axis=1) <= road.half_width**2
    return mask.reshape(cfg.px, cfg.px)


def _rasterize_discs(
    centers: np.ndarray, radii: np.ndarray, cfg: RenderConfig
) -> np.ndarray:
    """(px, px) bool union of discs given in the reference frame."""
    mask = np.zeros(cfg.px * cfg.px, dtype=bool)
    if len(centers) == 0:
        return mask.reshape(cfg.px, cfg.px)
    grid = _pixel_centers(cfg)
    d2 = np.sum((grid[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    mask = np.any(d2 <= radii[None, :] ** 2, axis=1)
    return mask.reshape(cfg.px, cfg.px)


def render_observation(
    history: Sequence[WorldSnapshot],
    cfg: RenderConfig | None = None,
    road_mask: np.ndarray | None = None,
) -> Observation:
    """Render a history clip into an Observation.

    history must hold exactly cfg.t_obs snapshots at DT spacing; the last
    one defines the reference frame. road_mask optionally injects a
    precomputed rasterize_road result for that reference frame (the road is
    static, so all frames of one clip share it).
    """
    cfg = cfg or RenderConfig()
    if len(history) != cfg.t_obs:
        raise ValueError(f"history must have {cfg.t_obs} snapshots, got {len(history)}")
    for a, b in zip(history, history[1:]):
        if abs((b.time - a.time) - DT) > _TIME_TOL:
            raise ValueError(
                f"history snapshots must be DT-spaced, got times "
                f"{[s.time for s in history]}"
            )
    ref = history[-1].ego
    road = history[-1].road
    if road_mask is None:
        road_mask = rasterize_road(road, ref, cfg)

    frames = np.zeros((cfg.t_obs, cfg.px, cfg.px, 3), dtype=np.float32)
    for k, snap in enumerate(history):
        frames[k, :, :, 0] = road_mask
        if snap.agents:
            centers = _to_ref_frame(
                np.array([[a.x, a.y] for a in snap.agents]), ref
            )
            radii = np.array([a.radius for a in snap.agents])
            frames[k, :, :, 1] = _rasterize_discs(centers, radii, cfg)
        ego_center = _to_ref_frame(np.array([[snap.ego.x, snap.ego.y]]), ref)
        frames[k, :, :, 2] = _rasterize_discs(
            ego_center, np.array([cfg.ego_radius]), cfg
        )
    return Observation(grid=frames)
