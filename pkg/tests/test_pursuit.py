import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gradcheck import numeric_grad, relative_error
from ptnet import autodiff as ad
from ptnet.geometry import Polyline, Trajectory, Vec2
from ptnet.metrics import violation_flags
from ptnet.pursuit import (ACCEL_LIMIT, AccelProfile, CertificateError, NoIntersection, PathBatch,
                           PursuitConfig, TrackingState, curvature_from_goal, find_goal_point, rollout,
                           rollout_batch, rollout_feasibility_certificate)


def circle_path(radius, length=400.0, step=0.5):
    phi = np.arange(0.0, length / radius, step / radius)
    return Polyline(np.column_stack([radius - radius * np.cos(phi), radius * np.sin(phi)]))


def random_path(rng, n=8):
    heading = 0.0
    pts = [np.zeros(2)]
    for _ in range(n):
        heading += rng.uniform(-0.6, 0.6)
        pts.append(pts[-1] + rng.uniform(5, 20) * np.array([math.sin(heading), math.cos(heading)]))
    return Polyline(np.array(pts))


def test_default_constants():
    cfg = PursuitConfig()
    assert (cfg.lookahead, cfg.max_curvature) == (10.0, 0.3)
    assert ACCEL_LIMIT == 8.0


def test_goal_point_on_vertical_line():
    path = Polyline(np.array([[6.0, -20.0], [6.0, 50.0]]))
    g = find_goal_point(TrackingState(Vec2(0, 0), 0.0, 0.0), path, 10.0)
    assert (g.x, g.y) == pytest.approx((6.0, 8.0), abs=1e-12)


def test_goal_point_prefers_farthest_arc_length():
    # a U-shaped path crosses the circle several times; the last crossing wins
    path = Polyline(np.array([[0.0, 0.0], [0.0, 20.0], [4.0, 20.0], [4.0, -20.0]]))
    g = find_goal_point(TrackingState(Vec2(0, 0), 0.0, 0.0), path, 10.0)
    assert (g.x, g.y) == pytest.approx((4.0, -math.sqrt(84.0)), abs=1e-9)


def test_no_intersection():
    path = Polyline(np.array([[20.0, 0.0], [20.0, 10.0]]))
    with pytest.raises(NoIntersection):
        find_goal_point(TrackingState(Vec2(0, 0), 0.0, 0.0), path, 10.0)


@pytest.mark.parametrize("x_g, L, expected", [(5.0, 10.0, 0.1), (10.0, 8.0, 0.3), (-10.0, 8.0, -0.3)])
def test_curvature_formula(x_g, L, expected):
    assert curvature_from_goal((x_g, 0.0), L, 0.3) == pytest.approx(expected, abs=1e-12)


def test_constant_acceleration_kinematics():
    cfg = PursuitConfig(horizon=30)
    path = Polyline(np.array([[0.0, 0.0], [0.0, 500.0]]))
    t = rollout(TrackingState(Vec2(0, 0), 0.0, 0.0), path, AccelProfile(np.full(30, 2.0)), cfg)
    k = np.arange(1, 31)
    np.testing.assert_allclose(t.speeds, 0.2 * k, atol=1e-12)
    np.testing.assert_allclose(t.positions[:, 1], np.cumsum(0.2 * (k - 1) * 0.1), atol=1e-12)
    np.testing.assert_allclose(t.positions[:, 0], 0.0, atol=1e-12)


def test_speed_never_negative():
    cfg = PursuitConfig(horizon=40)
    path = Polyline(np.array([[0.0, 0.0], [0.0, 500.0]]))
    t = rollout(TrackingState(Vec2(0, 0), 3.0, 0.0), path, AccelProfile(np.full(40, -8.0)), cfg)
    assert t.speeds.min() == 0.0
    assert np.all(np.diff(t.positions[:, 1]) >= 0)


def test_accel_profile_bounds():
    with pytest.raises(ValueError):
        AccelProfile(np.array([0.0, 8.5]))


def steady_curvature(dt, speed=5.0, seconds=18.0):
    cfg = PursuitConfig(dt=dt, horizon=int(round(seconds / dt)))
    t = rollout(TrackingState(Vec2(0, 0), speed, 0.0), circle_path(20.0, 118.0, 0.2),
                AccelProfile(np.zeros(cfg.horizon)), cfg)
    # the path stays under one lap so the lookahead circle cannot meet a later loop
    tail = slice(len(t) // 2, None)
    return float(np.mean(np.diff(np.unwrap(t.headings))[tail] / (speed * dt)))


def test_circle_tracking_matches_fine_reference():
    coarse, fine = steady_curvature(0.1), steady_curvature(0.001)
    assert abs(coarse - 1 / 20) <= 0.15 / 20
    assert abs(coarse - fine) <= 0.15 * fine


def test_tape_and_numpy_rollouts_agree(rng):
    paths = PathBatch([random_path(rng) for _ in range(3)])
    accel = rng.uniform(-3, 3, size=(3, 20))
    cfg = PursuitConfig(horizon=20)
    plain = rollout_batch(paths, accel, cfg, np.array([5.0, 8.0, 12.0])).positions()
    tape = ad.Tape()
    taped = rollout_batch(paths, tape.leaf(accel), cfg, np.array([5.0, 8.0, 12.0])).positions()
    np.testing.assert_allclose(taped, plain, rtol=0, atol=1e-12)


def test_rollout_gradient_matches_finite_differences(rng):
    path = PathBatch([random_path(rng)])
    cfg = PursuitConfig(horizon=15, max_curvature=5.0)
    accel = rng.uniform(-1, 1, size=(1, 15))
    w = rng.normal(size=(1, 15))

    def loss(a_var):
        res = rollout_batch(path, a_var, cfg, np.array([9.0]))
        fwd, lat = res.stacked()
        return ad.sum_reduce(ad.add(ad.mul(fwd, w), ad.square(lat)))

    tape = ad.Tape()
    a = tape.leaf(accel)
    (g,) = tape.backward(loss(a), [a])
    num = numeric_grad(lambda z: float(loss(ad.Tape().leaf(z)).value), accel)
    assert relative_error(g, num) < 1e-5


@given(st.integers(0, 2 ** 32 - 1))
def test_random_rollouts_are_certified(seed):
    rng = np.random.default_rng(seed)
    cfg = PursuitConfig()
    path = random_path(rng)
    accel = AccelProfile(rng.uniform(-ACCEL_LIMIT, ACCEL_LIMIT, size=cfg.horizon))
    state = TrackingState(Vec2(*rng.uniform(-2, 2, 2)), rng.uniform(0, 25), rng.uniform(-0.5, 0.5))
    traj = rollout(state, path, accel, cfg)
    cert = rollout_feasibility_certificate(traj, cfg)
    assert cert.max_abs_curvature <= cfg.max_curvature + 1e-6
    flags = violation_flags(traj)
    assert not (flags["curvature"] or flags["min_traversal_accel"] or flags["max_traversal_accel"])


def test_certificate_rejects_right_angle_jump():
    pos = np.array([[0.0, 1.0], [0.0, 2.0], [1.0, 2.0], [2.0, 2.0]])
    traj = Trajectory(0.1, pos, [0.0, 0.0, math.pi / 2, math.pi / 2], [10.0] * 4)
    with pytest.raises(CertificateError):
        rollout_feasibility_certificate(traj, PursuitConfig())


def test_shape_checked():
    paths = PathBatch([Polyline(np.array([[0.0, 0.0], [0.0, 50.0]]))])
    with pytest.raises(ad.ShapeError):
        rollout_batch(paths, np.zeros((1, 5)), PursuitConfig(horizon=6), np.zeros(1))
