"""Pure-pursuit expert controller with time-headway speed control.

The expert tracks the route centerline with a pure-pursuit steering law
(curvature = 2*sin(alpha)/L_d toward a lookahead point) and chooses speed as
the minimum of the cruise target and a time-headway cap against the nearest
in-corridor leading agent. A STOP command sets the cruise target to zero.

Agents follow their lane at constant speed, so their future is a pure
function of the snapshot; the controller predicts them with the same
advance_agents helper the episode generator uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import ACCEL_LIMIT, YAW_RATE_LIMIT, step_dynamics
from .roads import point_at_arclength, project_to_centerline, route_for_command
from .types import (
    DT,
    AgentState,
    Command,
    EgoState,
    RoadSpec,
    Trajectory,
    WorldSnapshot,
    wrap_angle,
)


@dataclass(frozen=True)
class ExpertParams:
    lookahead_min: float = 2.0
    lookahead_gain: float = 1.0  # L_d = max(lookahead_min, gain * v)
    headway: float = 2.0  # time headway for the speed cap (s)
    standoff: float = 0.5  # extra bumper-to-bumper margin (m)
    ego_radius: float = 0.8
    lead_window: float = 40.0  # leader search range along the route (m)


def advance_agents(
    road: RoadSpec, agents: tuple[AgentState, ...], dt: float
) -> tuple[AgentState, ...]:
    """Advance lane-following agents by dt. Stopped agents stay put exactly."""
    out = []
    for a in agents:
        if a.v == 0.0:
            out.append(a)
            continue
        s, lateral, _ = project_to_centerline(road, (a.x, a.y))
        s_next = s + a.v * dt
        center, heading = point_at_arclength(road, s_next)
        normal = np.array([-math.sin(heading), math.cos(heading)])
        xy = center + lateral * normal
        out.append(
            AgentState(
                agent_id=a.agent_id,
                x=float(xy[0]),
                y=float(xy[1]),
                yaw=heading,
                v=a.v,
                radius=a.radius,
            )
        )
    return tuple(out)


def _leader_gap(
    route: RoadSpec,
    s_ego: float,
    ego: EgoState,
    agents: tuple[AgentState, ...],
    params: ExpertParams,
) -> float | None:
    """Clear gap (m) to the nearest in-corridor agent ahead, or None."""
    best = None
    for a in agents:
        s_a, lat_a, _ = project_to_centerline(route, (a.x, a.y))
        if abs(lat_a) > route.half_width:
            continue
        ds = s_a - s_ego
        if ds <= 0.0 or ds > params.lead_window:
            continue
        gap = ds - a.radius - params.ego_radius - params.standoff
        if best is None or gap < best:
            best = gap
    return best


def _control(
    route: RoadSpec,
    ego: EgoState,
    agents: tuple[AgentState, ...],
    cruise: float,
    params: ExpertParams,
) -> tuple[float, float]:
    """One control decision: (accel, yaw_rate), both inside the limits."""
    s_ego, _, _ = project_to_centerline(route, (ego.x, ego.y))

    v_cmd = cruise
    gap = _leader_gap(route, s_ego, ego, agents, params)
    if gap is not None:
        v_cmd = min(v_cmd, max(gap, 0.0) / params.headway)
    accel = min(max((v_cmd - ego.v) / DT, -ACCEL_LIMIT), ACCEL_LIMIT)

    lookahead = max(params.lookahead_min, params.lookahead_gain * ego.v)
    target, _ = point_at_arclength(route, s_ego + lookahead)
    alpha = wrap_angle(math.atan2(target[1] - ego.y, target[0] - ego.x) - ego.yaw)
    curvature = 2.0 * math.sin(alpha) / lookahead
    yaw_rate = min(max(ego.v * curvature, -YAW_RATE_LIMIT), YAW_RATE_LIMIT)
    return accel, yaw_rate


def expert_states(
    snapshot: WorldSnapshot,
    command: Command,
    horizon: int,
    params: ExpertParams | None = None,
) -> list[EgoState]:
    """Roll the expert controller forward; returns the next `horizon` ego states.

    Raises InfeasibleCommandError when the command has no route on the road.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    params = params or ExpertParams()
    route = route_for_command(snapshot.road, command)
    cruise = 0.0 if command == Command.STOP else snapshot.ego.v

    ego = snapshot.ego
    agents = snapshot.agents
    states = []
    for _ in range(horizon):
        accel, yaw_rate = _control(route, ego, agents, cruise, params)
        ego = step_dynamics(ego, accel, yaw_rate, DT)
        agents = advance_agents(snapshot.road, agents, DT)
        states.append(ego)
    return states


def expert_rollout(
    snapshot: WorldSnapshot,
    command: Command,
    horizon: int,
    params: ExpertParams | None = None,
) -> Trajectory:
    """Expert future poses (world frame) as a Trajectory."""
    states = expert_states(snapshot, command, horizon, params)
    poses = np.array([[s.x, s.y, s.yaw] for s in states], dtype=np.float64)
    return Trajectory(poses=poses, dt=DT)
