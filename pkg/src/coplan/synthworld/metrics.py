"""Collision test between a planned trajectory and scripted agents."""

from __future__ import annotations

import math
from typing import Sequence

from .types import AgentState, Trajectory


def collision_check(
    traj: Trajectory,
    agents_over_time: Sequence[Sequence[AgentState]],
    ego_radius: float,
) -> list[bool]:
    """Per-step disc overlap flags.

    agents_over_time[k] holds the agent states at the same instant as
    traj.poses[k]. Overlap uses a strict inequality: exact tangency does not
    count as a collision.
    """
    if ego_radius <= 0.0:
        raise ValueError(f"ego_radius must be positive, got {ego_radius}")
    if len(agents_over_time) != traj.horizon:
        raise ValueError(
            f"agents_over_time has {len(agents_over_time)} steps, "
            f"trajectory has {traj.horizon}"
        )
    flags = []
    for pose, agents in zip(traj.poses, agents_over_time):
        hit = any(
            math.hypot(pose[0] - a.x, pose[1] - a.y) < ego_radius + a.radius
            for a in agents
        )
        flags.append(hit)
    return flags
