"""Road construction and centerline geometry helpers.

Roads are single corridors: a polyline centerline plus a constant half
width. Commands do not select between branches; a TURN command is only
feasible when the road itself bends the matching way within the episode's
reach, otherwise route_for_command raises InfeasibleCommandError.
"""

from __future__ import annotations

import math

import numpy as np

from .types import Command, RoadSpec, wrap_angle

# Minimum total |heading change| (rad) for a road to support a TURN command.
MIN_TURN_HEADING = 0.3


class InfeasibleCommandError(ValueError):
    """Raised when a command has no matching route on the road."""


def arc_road(
    straight_len: float = 8.0,
    curvature: float = 0.0,
    arc_angle: float = 0.0,
    post_len: float = 20.0,
    half_width: float = 3.0,
    spacing: float = 1.0,
) -> RoadSpec:
    """Build a road that runs straight, optionally arcs, then runs straight again.

    The centerline starts at the origin heading +x. curvature > 0 bends left.
    With curvature == 0 or arc_angle == 0 the road is a straight segment of
    length straight_len + post_len.
    """
    if spacing <= 0.0:
        raise ValueError(f"spacing must be positive, got {spacing}")
    pts = [np.array([0.0, 0.0])]
    heading = 0.0

    def _advance_straight(length: float) -> None:
        nonlocal heading
        n = max(int(math.ceil(length / spacing)), 1)
        step = length / n
        for _ in range(n):
            last = pts[-1]
            pts.append(last + step * np.array([math.cos(heading), math.sin(heading)]))

    _advance_straight(straight_len)
    if curvature != 0.0 and arc_angle != 0.0:
        if (curvature > 0.0) != (arc_angle > 0.0):
            raise ValueError("curvature and arc_angle must share a sign")
        radius = 1.0 / abs(curvature)
        arc_len = abs(arc_angle) * radius
        n = max(int(math.ceil(arc_len / spacing)), 2)
        dtheta = arc_angle / n
        chord = 2.0 * radius * math.sin(abs(dtheta) / 2.0)
        for _ in range(n):
            mid_heading = heading + dtheta / 2.0
            last = pts[-1]
            pts.append(
                last + chord * np.array([math.cos(mid_heading), math.sin(mid_heading)])
            )
            heading += dtheta
    if post_len > 0.0:
        _advance_straight(post_len)
    return RoadSpec(centerline=np.array(pts), half_width=half_width)


def _segments(road: RoadSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    pts = road.centerline
    starts = pts[:-1]
    vecs = pts[1:] - starts
    lens = np.hypot(vecs[:, 0], vecs[:, 1])
    return starts, vecs, lens


def project_to_centerline(road: RoadSpec, xy) -> tuple[float, float, float]:
    """Project a point onto the centerline.

    Returns (s, lateral, heading): arclength of the closest point, signed
    lateral offset (positive to the left of travel), and the tangent heading
    of the closest segment.
    """
    p = np.asarray(xy, dtype=np.float64)
    if p.shape != (2,):
        raise ValueError(f"xy must be a 2-vector, got shape {p.shape}")
    starts, vecs, lens = _segments(road)
    t = np.einsum("ij,ij->i", p[None, :] - starts, vecs) / (lens**2)
    t = np.clip(t, 0.0, 1.0)
    closest = starts + t[:, None] * vecs
    d2 = np.sum((closest - p[None, :]) ** 2, axis=1)
    i = int(np.argmin(d2))
    cum = road.cumulative_lengths
    s = float(cum[i] + t[i] * lens[i])
    tangent = vecs[i] / lens[i]
    rel = p - closest[i]
    # Signed distance: magnitude is the true gap even when the closest point
    # clamps to a vertex; the sign comes from the tangent cross product.
    cross = float(tangent[0] * rel[1] - tangent[1] * rel[0])
    dist = float(math.sqrt(d2[i]))
    lateral = math.copysign(dist, cross) if dist > 0.0 else 0.0
    heading = float(math.atan2(tangent[1], tangent[0]))
    return s, lateral, heading


def point_at_arclength(road: RoadSpec, s: float) -> tuple[np.ndarray, float]:
    """Return (xy, heading) at arclength s.

    s beyond either end extrapolates along the end tangent, so lookahead
    targets remain defined near the road boundary.
    """
    if not math.isfinite(s):
        raise ValueError(f"s must be finite, got {s!r}")
    pts = road.centerline
    cum = road.cumulative_lengths
    starts, vecs, lens = _segments(road)
    if s <= 0.0:
        tangent = vecs[0] / lens[0]
        xy = pts[0] + s * tangent
    elif s >= cum[-1]:
        tangent = vecs[-1] / lens[-1]
        xy = pts[-1] + (s - cum[-1]) * tangent
    else:
        i = int(np.searchsorted(cum, s, side="right") - 1)
        i = min(i, len(lens) - 1)
        frac = (s - cum[i]) / lens[i]
        xy = starts[i] + frac * vecs[i]
        tangent = vecs[i] / lens[i]
    heading = float(math.atan2(tangent[1], tangent[0]))
    return np.asarray(xy, dtype=np.float64), heading


def curve_heading_change(road: RoadSpec) -> float:
    """Signed total heading change along the centerline (left positive)."""
    _, vecs, _ = _segments(road)
    headings = np.arctan2(vecs[:, 1], vecs[:, 0])
    total = 0.0
    for a, b in zip(headings, headings[1:]):
        total += wrap_angle(float(b - a))
    return total


def route_for_command(road: RoadSpec, command: Command) -> RoadSpec:
    """Return the centerline route matching the command.

    FOLLOW and STOP track the road as-is. TURN_LEFT / TURN_RIGHT require the
    road to bend the matching way by at least MIN_TURN_HEADING radians.
    """
    if command in (Command.FOLLOW, Command.STOP):
        return road
    change = curve_heading_change(road)
    if command == Command.TURN_LEFT:
        if change < MIN_TURN_HEADING:
            raise InfeasibleCommandError(
                f"infeasible command TURN_LEFT: road heading change {change:.3f} rad"
            )
        return road
    if command == Command.TURN_RIGHT:
        if change > -MIN_TURN_HEADING:
            raise InfeasibleCommandError(
                f"infeasible command TURN_RIGHT: road heading change {change:.3f} rad"
            )
        return road
    raise ValueError(f"unknown command {command!r}")
