from .types import (
    DT,
    AgentState,
    Command,
    EgoState,
    Episode,
    Observation,
    RoadSpec,
    Trajectory,
    WorldSnapshot,
    wrap_angle,
)
from .dynamics import ACCEL_LIMIT, YAW_RATE_LIMIT, step_dynamics
from .roads import (
    InfeasibleCommandError,
    arc_road,
    curve_heading_change,
    point_at_arclength,
    project_to_centerline,
    route_for_command,
)
from .expert import ExpertParams, advance_agents, expert_rollout, expert_states
from .scenario import ScenarioConfig, sample_episode
from .render import RenderConfig, render_observation, rasterize_road
from .metrics import collision_check
from .dataset import (
    DatasetConfig,
    generate_dataset,
    load_dataset,
    load_episode_record,
    read_manifest,
)

__all__ = [
    "ACCEL_LIMIT",
    "AgentState",
    "Command",
    "DT",
    "DatasetConfig",
    "EgoState",
    "Episode",
    "ExpertParams",
    "InfeasibleCommandError",
    "Observation",
    "RenderConfig",
    "RoadSpec",
    "ScenarioConfig",
    "Trajectory",
    "WorldSnapshot",
    "YAW_RATE_LIMIT",
    "advance_agents",
    "arc_road",
    "collision_check",
    "curve_heading_change",
    "expert_rollout",
    "expert_states",
    "generate_dataset",
    "load_dataset",
    "load_episode_record",
    "point_at_arclength",
    "project_to_centerline",
    "rasterize_road",
    "read_manifest",
    "render_observation",
    "route_for_command",
    "sample_episode",
    "step_dynamics",
    "wrap_angle",
]
