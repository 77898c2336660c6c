import math

import pytest
from hypothesis import given, strategies as st

from coplan.synthworld import ACCEL_LIMIT, YAW_RATE_LIMIT, EgoState, step_dynamics


class TestStepDynamics:
    def test_straight_line_step(self):
        s = EgoState(x=0.0, y=0.0, yaw=0.0, v=2.0)
        n = step_dynamics(s, accel=0.0, yaw_rate=0.0, dt=0.5)
        assert n.x == pytest.approx(1.0, abs=0.0)
        assert n.y == 0.0
        assert n.yaw == 0.0
        assert n.v == 2.0

    def test_heading_affects_direction(self):
        s = EgoState(x=0.0, y=0.0, yaw=math.pi / 2, v=2.0)
        n = step_dynamics(s, 0.0, 0.0, 0.5)
        assert n.x == pytest.approx(0.0, abs=1e-12)
        assert n.y == pytest.approx(1.0)

    def test_speed_clamped_at_zero(self):
        s = EgoState(x=0.0, y=0.0, yaw=0.0, v=0.5)
        n = step_dynamics(s, accel=-3.0, yaw_rate=0.0, dt=0.5)
        assert n.v == 0.0

    def test_yaw_wraps(self):
        s = EgoState(x=0.0, y=0.0, yaw=math.pi - 0.1, v=0.0)
        n = step_dynamics(s, 0.0, yaw_rate=0.4, dt=0.5)
        assert n.yaw == pytest.approx(-math.pi + 0.1)

    def test_rejects_controls_beyond_limits(self):
        s = EgoState(x=0.0, y=0.0, yaw=0.0, v=1.0)
        with pytest.raises(ValueError):
            step_dynamics(s, accel=ACCEL_LIMIT + 0.01, yaw_rate=0.0, dt=0.5)
        with pytest.raises(ValueError):
            step_dynamics(s, accel=0.0, yaw_rate=-(YAW_RATE_LIMIT + 0.01), dt=0.5)

    def test_rejects_bad_dt_and_nonfinite(self):
        s = EgoState(x=0.0, y=0.0, yaw=0.0, v=1.0)
        with pytest.raises(ValueError):
            step_dynamics(s, 0.0, 0.0, dt=0.0)
        with pytest.raises(ValueError):
            step_dynamics(s, float("nan"), 0.0, dt=0.5)

    @given(
        x=st.floats(-100, 100),
        y=st.floats(-100, 100),
        yaw=st.floats(-math.pi + 1e-9, math.pi),
        v=st.floats(0, 10),
        accel=st.floats(-ACCEL_LIMIT, ACCEL_LIMIT),
        yaw_rate=st.floats(-YAW_RATE_LIMIT, YAW_RATE_LIMIT),
    )
    def test_invariants(self, x, y, yaw, v, accel, yaw_rate):
        s = EgoState(x=x, y=y, yaw=yaw, v=v)
        n = step_dynamics(s, accel, yaw_rate, dt=0.5)
        assert n.v >= 0.0
        assert -math.pi < n.yaw <= math.pi + 1e-12
        assert all(math.isfinite(u) for u in (n.x, n.y, n.yaw, n.v))
        # Displacement magnitude is exactly v * dt.
        assert math.hypot(n.x - x, n.y - y) == pytest.approx(v * 0.5, abs=1e-9)
