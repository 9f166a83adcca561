"""Planar poses, body-frame displacements, and angle utilities.

Conventions used throughout the package:

* yaw is stored wrapped to (-pi, pi], radians, counterclockwise positive
* the body-frame forward axis is +y: a robot at yaw theta heads along the
  world vector (-sin theta, cos theta)
* a PoseDelta is the displacement of a future pose expressed in the body
  frame of the pose at planning time t (cumulative, not per-step)

All types here are immutable values and safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]. Rejects NaN."""
    if math.isnan(theta):
        raise ValueError("wrap_angle: angle is NaN")
    w = theta % TWO_PI
    if w > math.pi:
        w -= TWO_PI
    return w


def wrap_angles(theta: np.ndarray) -> np.ndarray:
    """Vectorized wrap_angle. NaNs propagate (callers validate upstream)."""
    w = np.mod(theta, TWO_PI)
    return np.where(w > math.pi, w - TWO_PI, w)


@dataclass(frozen=True)
class Pose2:
    """Planar kinematic configuration: x, y in meters, yaw in radians."""

    x: float
    y: float
    yaw: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.yaw)):
            raise ValueError(f"Pose2 components must be finite, got {(self.x, self.y, self.yaw)}")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.yaw], dtype=np.float64)


@dataclass(frozen=True)
class PoseDelta:
    """Displacement relative to a base pose, expressed in its body frame."""

    dx: float
    dy: float
    dyaw: float

    def __post_init__(self):
        if not (math.isfinite(self.dx) and math.isfinite(self.dy) and math.isfinite(self.dyaw)):
            raise ValueError(f"PoseDelta components must be finite, got {(self.dx, self.dy, self.dyaw)}")
        object.__setattr__(self, "dyaw", wrap_angle(self.dyaw))

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dyaw], dtype=np.float64)


@dataclass(frozen=True)
class Action:
    """Robot command. The simulated car uses angular velocity only."""

    angular_velocity: float
    linear_velocity: float | None = None


@dataclass(frozen=True)
class HeadingGoal:
    """Goal given as a relative angle to the goal region, radians."""

    angle: float

    def __post_init__(self):
        object.__setattr__(self, "angle", wrap_angle(self.angle))


@dataclass(frozen=True)
class PointGoal:
    """Goal given as a point in the body frame of the planning pose."""

    x: float
    y: float


Goal = HeadingGoal | PointGoal | None


def compose(base: Pose2, delta: PoseDelta) -> Pose2:
    """Advance ``base`` by ``delta`` expressed in base's body frame.

    Body +y maps to the world heading (-sin yaw, cos yaw), body +x to
    (cos yaw, sin yaw).
    """
    c, s = math.cos(base.yaw), math.sin(base.yaw)
    return Pose2(
        base.x + c * delta.dx - s * delta.dy,
        base.y + s * delta.dx + c * delta.dy,
        base.yaw + delta.dyaw,
    )


def bearing_angle(delta: PoseDelta | tuple[float, float], goal: PointGoal) -> float:
    """Unsigned angle in [0, pi] between a displacement and a goal vector.

    Both vectors are taken at the origin of the same body frame. A
    zero-length displacement falls back to the forward axis (0, 1) so the
    planner never sees a NaN for a stay-in-place candidate. A zero goal
    vector (already at the goal) yields 0.
    """
    if isinstance(delta, PoseDelta):
        dx, dy = delta.dx, delta.dy
    else:
        dx, dy = delta
    gx, gy = goal.x, goal.y
    dn = math.hypot(dx, dy)
    if dn == 0.0:
        dx, dy, dn = 0.0, 1.0, 1.0
    gn = math.hypot(gx, gy)
    if gn == 0.0:
        return 0.0
    cosang = (dx * gx + dy * gy) / (dn * gn)
    return math.acos(min(1.0, max(-1.0, cosang)))


def bearing_angles(dxy: np.ndarray, goal: PointGoal) -> np.ndarray:
    """Vectorized bearing_angle over an (..., 2) array of displacements."""
    gx, gy = goal.x, goal.y
    gn = math.hypot(gx, gy)
    if gn == 0.0:
        return np.zeros(dxy.shape[:-1], dtype=np.float64)
    dx = dxy[..., 0]
    dy = dxy[..., 1]
    dn = np.hypot(dx, dy)
    zero = dn == 0.0
    dx = np.where(zero, 0.0, dx)
    dy = np.where(zero, 1.0, dy)
    dn = np.where(zero, 1.0, dn)
    cosang = (dx * gx + dy * gy) / (dn * gn)
    return np.arccos(np.clip(cosang, -1.0, 1.0))


def heading_to(pose: Pose2, x: float, y: float) -> float:
    """Signed relative angle from ``pose``'s heading to the point (x, y).

    Positive means the point lies to the left (counterclockwise). This is
    the scalar goal fed to the heading-difference reward.
    """
    world = math.atan2(-(x - pose.x), y - pose.y)
    return wrap_angle(world - pose.yaw)


def point_in_body_frame(pose: Pose2, x: float, y: float) -> PointGoal:
    """Express a world point in ``pose``'s body frame."""
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    rx, ry = x - pose.x, y - pose.y
    return PointGoal(c * rx + s * ry, -s * rx + c * ry)


def deltas_from_poses(poses: np.ndarray, start: int, horizon: int) -> np.ndarray:
    """Cumulative body-frame displacement labels from a pose log.

    ``poses`` is an (N, 3) array of world poses; entry ``start`` is the
    planning-time pose. Returns an (horizon, 3) array whose row h is the
    pose ``start + h + 1`` expressed in the body frame at ``start``. When
    the log is shorter than the horizon the last available pose is held
    (termination is absorbing). dyaw is accumulated from per-step wrapped
    increments so it stays continuous past +/-pi.
    """
    n = poses.shape[0]
    if not 0 <= start < n:
        raise ValueError(f"start {start} outside pose log of length {n}")
    base = poses[start]
    c, s = math.cos(base[2]), math.sin(base[2])
    steps = np.minimum(start + 1 + np.arange(horizon), n - 1)
    rel = poses[steps, :2] - base[:2]
    out = np.empty((horizon, 3), dtype=np.float64)
    out[:, 0] = c * rel[:, 0] + s * rel[:, 1]
    out[:, 1] = -s * rel[:, 0] + c * rel[:, 1]
    inc = wrap_angles(np.diff(poses[:, 2]))
    cyaw = np.concatenate([[0.0], np.cumsum(inc)])
    out[:, 2] = cyaw[steps] - cyaw[start]
    return out


def ensure_horizon(arr: np.ndarray, horizon: int, name: str, axis: int = 0) -> np.ndarray:
    """Validate that a sequence array has exactly ``horizon`` steps on ``axis``."""
    a = np.asarray(arr, dtype=np.float64)
    if a.shape[axis] != horizon:
        raise ValueError(f"{name}: expected horizon {horizon}, got {a.shape[axis]} (shape {a.shape})")
    return a
