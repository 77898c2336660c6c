"""Core value types for the synthetic 2D driving world.

All geometry lives in a flat 2D plane. Poses are (x, y, yaw) with yaw in
radians wrapped to (-pi, pi]. Time advances in fixed steps of DT seconds.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

# Simulation timestep in seconds. Snapshots, expert poses and rendered
# history frames all live on this grid.
DT = 0.5

# Episode layout: T_OBS history snapshots (the last one is "now") followed
# by T_FUTURE future snapshots; the expert trajectory has one pose per
# future snapshot.
T_OBS = 4
T_FUTURE = 8

_TIME_TOL = 1e-6


def wrap_angle(theta: float) -> float:
    """Wrap an angle to the half-open interval (-pi, pi]."""
    wrapped = math.remainder(theta, 2.0 * math.pi)
    # math.remainder returns [-pi, pi]; move the open end to -pi.
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


def _require_finite(name: str, *values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"{name} must be finite, got {v!r}")


@dataclass(frozen=True)
class EgoState:
    """Ego vehicle state: position (m), heading (rad), forward speed (m/s)."""

    x: float
    y: float
    yaw: float
    v: float

    def __post_init__(self) -> None:
        _require_finite("EgoState", self.x, self.y, self.yaw, self.v)
        if self.v < 0.0:
            raise ValueError(f"ego speed must be non-negative, got {self.v}")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    def pose(self) -> np.ndarray:
        return np.array([self.x, self.y, self.yaw], dtype=np.float64)


@dataclass(frozen=True)
class AgentState:
    """Non-ego traffic agent, modeled as a disc following its lane."""

    agent_id: int
    x: float
    y: float
    yaw: float
    v: float
    radius: float

    def __post_init__(self) -> None:
        _require_finite("AgentState", self.x, self.y, self.yaw, self.v, self.radius)
        if self.radius <= 0.0:
            raise ValueError(f"agent radius must be positive, got {self.radius}")
        if self.v < 0.0:
            raise ValueError(f"agent speed must be non-negative, got {self.v}")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))


@dataclass(frozen=True)
class RoadSpec:
    """Drivable corridor: a polyline centerline with constant half width."""

    centerline: np.ndarray  # (N, 2) float64 waypoints, consecutive points distinct
    half_width: float

    def __post_init__(self) -> None:
        pts = np.asarray(self.centerline, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ValueError(f"centerline must be (N>=2, 2), got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("centerline contains non-finite values")
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seg_len <= 1e-9):
            raise ValueError("centerline has duplicate consecutive waypoints")
        if not (self.half_width > 0.0 and math.isfinite(self.half_width)):
            raise ValueError(f"half_width must be positive, got {self.half_width}")
        pts.setflags(write=False)
        object.__setattr__(self, "centerline", pts)

    @property
    def cumulative_lengths(self) -> np.ndarray:
        seg = np.diff(self.centerline, axis=0)
        return np.concatenate([[0.0], np.cumsum(np.hypot(seg[:, 0], seg[:, 1]))])

    @property
    def length(self) -> float:
        return float(self.cumulative_lengths[-1])


class Command(enum.IntEnum):
    FOLLOW = 0
    TURN_LEFT = 1
    TURN_RIGHT = 2
    STOP = 3


@dataclass(frozen=True)
class WorldSnapshot:
    """Full world state at one instant on the DT grid."""

    time: float
    ego: EgoState
    agents: tuple[AgentState, ...]
    road: RoadSpec

    def __post_init__(self) -> None:
        _require_finite("WorldSnapshot.time", self.time)
        steps = self.time / DT
        if abs(steps - round(steps)) > _TIME_TOL:
            raise ValueError(f"snapshot time {self.time} is not a multiple of DT={DT}")
        ids = [a.agent_id for a in self.agents]
        if len(ids) != len(set(ids)):
            raise ValueError(f"duplicate agent ids in snapshot: {ids}")
        object.__setattr__(self, "agents", tuple(self.agents))


@dataclass(frozen=True)
class Trajectory:
    """A sequence of future ego poses at DT spacing, world frame unless noted."""

    poses: np.ndarray  # (H, 3) float64 rows of (x, y, yaw)
    dt: float = DT

    def __post_init__(self) -> None:
        arr = np.asarray(self.poses, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 3 or arr.shape[0] < 1:
            raise ValueError(f"poses must be (H>=1, 3), got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("trajectory contains non-finite values")
        if self.dt <= 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        arr.setflags(write=False)
        object.__setattr__(self, "poses", arr)

    @property
    def horizon(self) -> int:
        return int(self.poses.shape[0])


@dataclass(frozen=True)
class Observation:
    """Rendered ego-centric history clip: (T_obs, H_px, W_px, C) float32 in {0, 1}."""

    grid: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.grid, dtype=np.float32)
        if arr.ndim != 4:
            raise ValueError(f"observation grid must be 4D (T,H,W,C), got {arr.shape}")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("observation values must lie in [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "grid", arr)


@dataclass(frozen=True)
class Episode:
    """One logged scene: T_OBS + T_FUTURE snapshots plus the expert plan.

    snapshots[T_OBS - 1] is the decision instant; expert.poses[k] matches
    snapshots[T_OBS + k].ego for every future step k.
    """

    snapshots: tuple[WorldSnapshot, ...]
    command: Command
    expert: Trajectory
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.snapshots) != T_OBS + T_FUTURE:
            raise ValueError(
                f"episode needs {T_OBS + T_FUTURE} snapshots, got {len(self.snapshots)}"
            )
        times = [s.time for s in self.snapshots]
        for a, b in zip(times, times[1:]):
            if abs((b - a) - DT) > _TIME_TOL:
                raise ValueError(f"snapshot times not DT-spaced: {times}")
        if self.expert.horizon != T_FUTURE:
            raise ValueError(
                f"expert horizon {self.expert.horizon} != T_FUTURE {T_FUTURE}"
            )
        object.__setattr__(self, "snapshots", tuple(self.snapshots))

    @property
    def current(self) -> WorldSnapshot:
        return self.snapshots[T_OBS - 1]

    @property
    def history(self) -> tuple[WorldSnapshot, ...]:
        return self.snapshots[:T_OBS]

    @property
    def future(self) -> tuple[WorldSnapshot, ...]:
        return self.snapshots[T_OBS:]
