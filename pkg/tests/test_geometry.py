import math

import numpy as np
import pytest

from intnav.geometry import (
    HeadingGoal,
    PointGoal,
    Pose2,
    PoseDelta,
    bearing_angle,
    bearing_angles,
    compose,
    deltas_from_poses,
    heading_to,
    point_in_body_frame,
    wrap_angle,
    wrap_angles,
)


def compose_oracle(base, delta):
    """Independent 2x2 rotation-matrix composition."""
    rot = np.array(
        [[math.cos(base.yaw), -math.sin(base.yaw)], [math.sin(base.yaw), math.cos(base.yaw)]]
    )
    xy = np.array([base.x, base.y]) + rot @ np.array([delta.dx, delta.dy])
    return xy[0], xy[1], wrap_angle(base.yaw + delta.dyaw)


def test_compose_identity():
    p = Pose2(0.0, 0.0, 0.0)
    assert compose(p, PoseDelta(0.0, 0.0, 0.0)) == p


def test_compose_forward_is_plus_y():
    assert compose(Pose2(0, 0, 0), PoseDelta(0, 1, 0)) == Pose2(0.0, 1.0, 0.0)


def test_compose_rotated_frame():
    # at yaw pi/2 body-forward points along world -x
    out = compose(Pose2(1, 2, math.pi / 2), PoseDelta(0, 1, 0))
    assert out.x == pytest.approx(0.0, abs=1e-15)
    assert out.y == pytest.approx(2.0, abs=1e-15)
    assert out.yaw == math.pi / 2


def test_compose_zero_delta_is_identity_for_all_poses():
    rng = np.random.default_rng(0)
    zero = PoseDelta(0.0, 0.0, 0.0)
    for _ in range(200):
        p = Pose2(*rng.uniform(-10, 10, 2), rng.uniform(-np.pi, np.pi))
        assert compose(p, zero) == p


def test_compose_matches_rotation_matrix_oracle():
    rng = np.random.default_rng(1)
    for _ in range(10_000):
        base = Pose2(*rng.uniform(-5, 5, 2), rng.uniform(-np.pi, np.pi))
        delta = PoseDelta(*rng.uniform(-2, 2, 2), rng.uniform(-np.pi, np.pi))
        got = compose(base, delta)
        ex, ey, eyaw = compose_oracle(base, delta)
        assert abs(got.x - ex) < 1e-12
        assert abs(got.y - ey) < 1e-12
        assert abs(got.yaw - eyaw) < 1e-12


def test_wrap_angle_basics():
    assert wrap_angle(0.0) == 0.0
    assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == math.pi  # half-open interval (-pi, pi]
    assert wrap_angle(math.pi) == math.pi


def test_wrap_angle_idempotent_and_in_range():
    rng = np.random.default_rng(2)
    for theta in rng.uniform(-50, 50, 2000):
        w = wrap_angle(theta)
        assert -math.pi < w <= math.pi
        assert wrap_angle(w) == w


def test_wrap_angle_rejects_nan():
    with pytest.raises(ValueError):
        wrap_angle(float("nan"))


def test_wrap_angles_matches_scalar():
    rng = np.random.default_rng(3)
    thetas = rng.uniform(-30, 30, 500)
    batch = wrap_angles(thetas)
    for t, w in zip(thetas, batch):
        assert w == pytest.approx(wrap_angle(t), abs=1e-12)


def test_pose_rejects_nonfinite():
    with pytest.raises(ValueError):
        Pose2(float("inf"), 0.0, 0.0)
    with pytest.raises(ValueError):
        PoseDelta(0.0, float("nan"), 0.0)


def test_yaw_stored_wrapped():
    assert Pose2(0, 0, 3 * math.pi).yaw == pytest.approx(math.pi)
    assert PoseDelta(0, 0, -3 * math.pi).dyaw == pytest.approx(math.pi)


def test_bearing_collinear_and_orthogonal():
    assert bearing_angle(PoseDelta(0, 1, 0), PointGoal(0, 5)) == 0.0
    assert bearing_angle(PoseDelta(0, 1, 0), PointGoal(5, 0)) == pytest.approx(math.pi / 2)


def test_bearing_45_degrees():
    # arccos of the normalized dot product: (1,1).(0,1)/sqrt(2) -> pi/4
    got = bearing_angle(PoseDelta(1, 1, 0), PointGoal(0, 1))
    dot = (1 * 0 + 1 * 1) / (math.sqrt(2.0) * 1.0)
    assert got == pytest.approx(math.acos(dot), abs=1e-12)
    assert got == pytest.approx(math.pi / 4, abs=1e-12)


def test_bearing_scale_invariance():
    rng = np.random.default_rng(4)
    for _ in range(500):
        d = rng.uniform(-3, 3, 2)
        g = rng.uniform(-3, 3, 2)
        if np.hypot(*d) < 1e-6 or np.hypot(*g) < 1e-6:
            continue
        s1, s2 = rng.uniform(0.1, 10, 2)
        a = bearing_angle((d[0], d[1]), PointGoal(*g))
        b = bearing_angle((s1 * d[0], s1 * d[1]), PointGoal(s2 * g[0], s2 * g[1]))
        assert a == pytest.approx(b, abs=1e-9)


def test_bearing_zero_displacement_uses_forward_axis():
    # zero-length displacement falls back to (0, 1)
    assert bearing_angle(PoseDelta(0, 0, 0), PointGoal(0, 2)) == 0.0
    assert bearing_angle(PoseDelta(0, 0, 0), PointGoal(3, 0)) == pytest.approx(math.pi / 2)


def test_bearing_batch_matches_scalar():
    rng = np.random.default_rng(5)
    goal = PointGoal(1.0, 2.0)
    d = rng.uniform(-2, 2, (100, 2))
    batch = bearing_angles(d, goal)
    for row, b in zip(d, batch):
        assert b == pytest.approx(bearing_angle((row[0], row[1]), goal), abs=1e-12)


def test_heading_to_signs():
    # goal straight ahead -> 0; to the left (-x at yaw 0 ... no: +x is right)
    p = Pose2(0, 0, 0)
    assert heading_to(p, 0.0, 5.0) == 0.0
    assert heading_to(p, -1.0, 0.0) == pytest.approx(math.pi / 2)  # left
    assert heading_to(p, 1.0, 0.0) == pytest.approx(-math.pi / 2)  # right


def test_point_in_body_frame_roundtrip():
    rng = np.random.default_rng(6)
    for _ in range(200):
        p = Pose2(*rng.uniform(-5, 5, 2), rng.uniform(-np.pi, np.pi))
        gx, gy = rng.uniform(-5, 5, 2)
        local = point_in_body_frame(p, gx, gy)
        back = compose(p, PoseDelta(local.x, local.y, 0))
        assert back.x == pytest.approx(gx, abs=1e-12)
        assert back.y == pytest.approx(gy, abs=1e-12)


def test_deltas_from_poses_recompose():
    rng = np.random.default_rng(7)
    yaw_steps = rng.uniform(-0.5, 0.5, 30)
    poses = [np.array([0.0, 0.0, 0.3])]
    for dy in yaw_steps:
        x, y, yaw = poses[-1]
        yaw = yaw + dy
        poses.append(np.array([x + 0.25 * -math.sin(yaw), y + 0.25 * math.cos(yaw), yaw]))
    poses = np.array(poses)
    for start in (0, 5, 20):
        d = deltas_from_poses(poses, start, 6)
        base = Pose2(*poses[start])
        for h in range(6):
            target = poses[min(start + 1 + h, len(poses) - 1)]
            back = compose(base, PoseDelta(d[h, 0], d[h, 1], wrap_angle(d[h, 2])))
            assert back.x == pytest.approx(target[0], abs=1e-12)
            assert back.y == pytest.approx(target[1], abs=1e-12)


def test_deltas_hold_last_pose_past_end():
    poses = np.array([[0.0, 0.0, 0.0], [0.0, 0.25, 0.0], [0.0, 0.5, 0.0]])
    d = deltas_from_poses(poses, 1, 4)
    assert np.allclose(d[0], [0.0, 0.25, 0.0])
    for h in range(1, 4):
        assert np.allclose(d[h], d[0])


def test_heading_goal_wraps():
    assert HeadingGoal(3 * math.pi).angle == pytest.approx(math.pi)
