"""Unicycle dynamics for the ego vehicle.

One Euler step of the standard unicycle model:

    x'   = x + v * cos(yaw) * dt
    y'   = y + v * sin(yaw) * dt
    yaw' = wrap(yaw + yaw_rate * dt)
    v'   = max(v + accel * dt, 0)

Controls are saturated at fixed physical limits; callers that pass controls
beyond the limits get a ValueError rather than silent clamping, so limit
handling stays the controller's job.
"""

from __future__ import annotations

import math

from .types import EgoState, wrap_angle

ACCEL_LIMIT = 3.0  # m/s^2
YAW_RATE_LIMIT = 1.0  # rad/s

_LIMIT_TOL = 1e-9


def step_dynamics(state: EgoState, accel: float, yaw_rate: float, dt: float) -> EgoState:
    """Advance the ego state by one Euler step.

    Raises ValueError on non-finite inputs, non-positive dt, or controls
    outside the physical limits.
    """
    for name, val in (("accel", accel), ("yaw_rate", yaw_rate), ("dt", dt)):
        if not math.isfinite(val):
            raise ValueError(f"{name} must be finite, got {val!r}")
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if abs(accel) > ACCEL_LIMIT + _LIMIT_TOL:
        raise ValueError(f"|accel|={abs(accel)} exceeds limit {ACCEL_LIMIT}")
    if abs(yaw_rate) > YAW_RATE_LIMIT + _LIMIT_TOL:
        raise ValueError(f"|yaw_rate|={abs(yaw_rate)} exceeds limit {YAW_RATE_LIMIT}")

    x = state.x + state.v * math.cos(state.yaw) * dt
    y = state.y + state.v * math.sin(state.yaw) * dt
    yaw = wrap_angle(state.yaw + yaw_rate * dt)
    v = max(state.v + accel * dt, 0.0)
    return EgoState(x=x, y=y, yaw=yaw, v=v)
