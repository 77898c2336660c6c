"""Pose frame transforms between world and ego-centric coordinates."""

from __future__ import annotations

import math

import numpy as np


def to_ego_frame(ref_pose: np.ndarray, poses: np.ndarray) -> np.ndarray:
    """Express world poses relative to a reference pose.

    ref_pose: (3,) = (x, y, yaw); poses: (..., 3). Positions rotate by
    -ref_yaw after translation; yaw becomes the wrapped difference.
    """
    ref = np.asarray(ref_pose, dtype=np.float64)
    p = np.asarray(poses, dtype=np.float64)
    if ref.shape != (3,) or p.shape[-1] != 3:
        raise ValueError(f"bad shapes ref {ref.shape}, poses {p.shape}")
    c, s = math.cos(-ref[2]), math.sin(-ref[2])
    dx = p[..., 0] - ref[0]
    dy = p[..., 1] - ref[1]
    out = np.empty_like(p)
    out[..., 0] = c * dx - s * dy
    out[..., 1] = s * dx + c * dy
    dyaw = p[..., 2] - ref[2]
    out[..., 2] = np.arctan2(np.sin(dyaw), np.cos(dyaw))
    return out


def to_world_frame(ref_pose: np.ndarray, rel_poses: np.ndarray) -> np.ndarray:
    """Inverse of to_ego_frame."""
    ref = np.asarray(ref_pose, dtype=np.float64)
    p = np.asarray(rel_poses, dtype=np.float64)
    if ref.shape != (3,) or p.shape[-1] != 3:
        raise ValueError(f"bad shapes ref {ref.shape}, poses {p.shape}")
    c, s = math.cos(ref[2]), math.sin(ref[2])
    out = np.empty_like(p)
    out[..., 0] = ref[0] + c * p[..., 0] - s * p[..., 1]
    out[..., 1] = ref[1] + s * p[..., 0] + c * p[..., 1]
    yaw = p[..., 2] + ref[2]
    out[..., 2] = np.arctan2(np.sin(yaw), np.cos(yaw))
    return out
