"""Episode sampling: roads, traffic and expert-driven rollouts.

An episode is 12 snapshots on the DT grid: 4 history snapshots (ego driven
by the same expert controller that later produces the label) followed by 8
future snapshots, plus the expert trajectory from the decision instant.
Episodes whose expert plan collides with the scripted agents are rejected
and resampled from the same RNG stream, so sampling stays deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import step_dynamics
from .expert import ExpertParams, advance_agents, expert_states, _control
from .metrics import collision_check
from .roads import arc_road, point_at_arclength, route_for_command
from .types import (
    DT,
    T_FUTURE,
    T_OBS,
    AgentState,
    Command,
    EgoState,
    Episode,
    RoadSpec,
    Trajectory,
    WorldSnapshot,
)


@dataclass(frozen=True)
class ScenarioConfig:
    v0_range: tuple[float, float] = (1.0, 5.0)
    half_width_range: tuple[float, float] = (2.5, 3.5)
    straight_len_range: tuple[float, float] = (6.0, 12.0)
    curvature_range: tuple[float, float] = (0.04, 0.12)
    arc_angle_range: tuple[float, float] = (0.5, 1.3)
    post_len: float = 30.0
    n_agents_max: int = 4
    agent_radius_range: tuple[float, float] = (0.6, 1.0)
    agent_s_range: tuple[float, float] = (6.0, 34.0)
    p_stopped_agent: float = 0.35
    p_in_lane_agent: float = 0.6
    ego_radius: float = 0.8
    command_weights: tuple[float, float, float, float] = (0.4, 0.2, 0.2, 0.2)
    max_resample: int = 100
    expert: ExpertParams = field(default_factory=ExpertParams)


def _sample_road(rng: np.random.Generator, cfg: ScenarioConfig, command: Command) -> RoadSpec:
    hw = float(rng.uniform(*cfg.half_width_range))
    straight = float(rng.uniform(*cfg.straight_len_range))
    if command in (Command.TURN_LEFT, Command.TURN_RIGHT):
        kappa = float(rng.uniform(*cfg.curvature_range))
        angle = float(rng.uniform(*cfg.arc_angle_range))
        if command == Command.TURN_RIGHT:
            kappa, angle = -kappa, -angle
        return arc_road(straight, kappa, angle, cfg.post_len, hw)
    if rng.random() < 0.5:
        return arc_road(straight, 0.0, 0.0, cfg.post_len, hw)
    # Gentle drift road; FOLLOW/STOP are feasible on any geometry.
    kappa = float(rng.uniform(0.02, 0.06)) * (1.0 if rng.random() < 0.5 else -1.0)
    angle = math.copysign(float(rng.uniform(0.2, 0.6)), kappa)
    return arc_road(straight, kappa, angle, cfg.post_len, hw)


def _sample_agents(
    rng: np.random.Generator,
    cfg: ScenarioConfig,
    road: RoadSpec,
    ego: EgoState,
    s_ego: float,
    v0: float,
) -> tuple[AgentState, ...]:
    n = int(rng.integers(0, cfg.n_agents_max + 1))
    agents: list[AgentState] = []
    for idx in range(n):
        for _ in range(20):
            radius = float(rng.uniform(*cfg.agent_radius_range))
            s = s_ego + float(rng.uniform(*cfg.agent_s_range))
            if rng.random() < cfg.p_in_lane_agent:
                lateral = float(rng.uniform(-0.8, 0.8))
            else:
                margin = road.half_width - radius - 0.2
                lateral = float(rng.uniform(-margin, margin))
            v = 0.0 if rng.random() < cfg.p_stopped_agent else float(rng.uniform(0.5, v0))
            center, heading = point_at_arclength(road, s)
            normal = np.array([-math.sin(heading), math.cos(heading)])
            xy = center + lateral * normal
            cand = AgentState(
                agent_id=idx,
                x=float(xy[0]),
                y=float(xy[1]),
                yaw=heading,
                v=v,
                radius=radius,
            )
            dist_ego = math.hypot(cand.x - ego.x, cand.y - ego.y)
            if dist_ego < radius + cfg.ego_radius + 1.0:
                continue
            clear = all(
                math.hypot(cand.x - a.x, cand.y - a.y) > radius + a.radius + 0.3
                for a in agents
            )
            if clear:
                agents.append(cand)
                break
    return tuple(agents)


def _try_sample(rng: np.random.Generator, cfg: ScenarioConfig) -> Episode | None:
    command = Command(
        int(rng.choice(4, p=np.asarray(cfg.command_weights) / sum(cfg.command_weights)))
    )
    road = _sample_road(rng, cfg, command)
    v0 = float(rng.uniform(*cfg.v0_range))
    s0 = 1.0
    xy, heading = point_at_arclength(road, s0)
    ego = EgoState(x=float(xy[0]), y=float(xy[1]), yaw=heading, v=v0)
    agents = _sample_agents(rng, cfg, road, ego, s0, v0)

    route = route_for_command(road, command)
    cruise = 0.0 if command == Command.STOP else v0

    # History: drive the same controller for T_OBS - 1 steps.
    snapshots = [WorldSnapshot(time=0.0, ego=ego, agents=agents, road=road)]
    for k in range(1, T_OBS):
        accel, yaw_rate = _control(route, ego, agents, cruise, cfg.expert)
        ego = step_dynamics(ego, accel, yaw_rate, DT)
        agents = advance_agents(road, agents, DT)
        snapshots.append(WorldSnapshot(time=k * DT, ego=ego, agents=agents, road=road))

    current = snapshots[-1]
    # Future: the stored label is exactly expert_rollout(current snapshot).
    states = expert_states(current, command, T_FUTURE, cfg.expert)
    fut_agents = current.agents
    for k, st in enumerate(states, start=1):
        fut_agents = advance_agents(road, fut_agents, DT)
        snapshots.append(
            WorldSnapshot(time=current.time + k * DT, ego=st, agents=fut_agents, road=road)
        )

    expert_traj = Trajectory(
        poses=np.array([[s.x, s.y, s.yaw] for s in states], dtype=np.float64), dt=DT
    )

    # Reject episodes where the plan (or the driven history) collides.
    agents_over_time = [snap.agents for snap in snapshots[T_OBS:]]
    if any(collision_check(expert_traj, agents_over_time, cfg.ego_radius)):
        return None
    for snap in snapshots[:T_OBS]:
        for a in snap.agents:
            if math.hypot(a.x - snap.ego.x, a.y - snap.ego.y) < a.radius + cfg.ego_radius:
                return None
    return Episode(snapshots=tuple(snapshots), command=command, expert=expert_traj)


def sample_episode(rng: np.random.Generator, cfg: ScenarioConfig | None = None) -> Episode:
    """Draw one feasible episode; resamples from the same stream on rejection."""
    cfg = cfg or ScenarioConfig()
    for _ in range(cfg.max_resample):
        ep = _try_sample(rng, cfg)
        if ep is not None:
            return ep
    raise RuntimeError(f"failed to sample a feasible episode in {cfg.max_resample} tries")
