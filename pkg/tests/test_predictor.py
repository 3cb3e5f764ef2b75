import math

import numpy as np
import pytest

from ptnet import autodiff as ad
from ptnet.geometry import ActorState, Polyline, Trajectory
from ptnet.model import Model, ModelConfig, make_batch
from ptnet.paths import GoalPath
from ptnet.predictor import (ModeSet, PredictorWeights, accel_profiles, compute_loss, joint_log_probs,
                             label_goals, loss_terms, predict_modes, spatial_targets, wta_targets)
from ptnet.pursuit import PursuitConfig


def straight_traj(n=60, dt=0.1, speed=10.0, x=0.0):
    pos = np.column_stack([np.full(n, x), speed * dt * np.arange(1, n + 1)])
    return Trajectory(dt, pos, np.zeros(n), np.full(n, speed))


def test_cross_entropy_two_matching_goals():
    gt = straight_traj()
    modes = ModeSet([[gt], [gt]], np.array([[0.5], [0.5]]))
    assert compute_loss(modes, [0, 1], gt) == pytest.approx(math.log(2.0), abs=1e-9)


def test_non_matching_goal_adds_no_regression():
    gt = straight_traj()
    far = straight_traj(x=30.0)
    modes = ModeSet([[gt], [far]], np.array([[0.25], [0.75]]))
    assert compute_loss(modes, [0], gt) == pytest.approx(-math.log(0.25), abs=1e-12)


def test_spatial_targets_split_mass():
    t = spatial_targets(np.array([0, 0, 0, 1]), np.array([True, False, True, True]), 2)
    np.testing.assert_allclose(t, [0.5, 0.5, 0, 0, 0.5, 0.5, 1, 1])


def test_wta_picks_smallest_l1_and_lower_index_on_ties():
    gt = np.zeros((4, 3, 2))
    pred = np.zeros((4, 3, 2))
    pred[0] += 1.0
    pred[1] += 0.5
    pred[2] += 0.2
    pred[3] += 0.2
    targets = wta_targets(pred, gt, np.array([0, 0, 1, 1]), np.array([True, True]))
    np.testing.assert_array_equal(targets, [0, 1, 1, 0])


def test_losing_heads_get_zero_gradient():
    tape = ad.Tape()
    gt = np.zeros((3, 4, 2))
    x = tape.leaf(np.array([[0.1] * 4, [2.0] * 4, [3.0] * 4]))
    y = tape.leaf(np.zeros((3, 4)))
    log_p = tape.leaf(np.log(np.full(3, 1 / 3)))
    targets = wta_targets(np.stack([x.value, y.value], -1), gt, np.zeros(3, int), np.array([True]))
    cls, reg = loss_terms(log_p, x, y, gt, targets, np.zeros(3, int), 1)
    gx, _, glp = tape.backward(ad.sum_reduce(ad.add(cls, reg)), [x, y, log_p])
    assert gx[0].any()
    assert not gx[1:].any()
    np.testing.assert_array_equal(glp, [-1.0, 0.0, 0.0])


def test_model_losing_head_parameters_get_zero_gradient(small_samples):
    sample = next(s for s in small_samples if len(s.matching) == 1)
    model = Model.init(ModelConfig(modes=2, hidden=8))
    batch = make_batch([sample], 2)
    tape = ad.Tape()
    loss, _ = model.loss(tape, batch)
    out = model.forward(ad.Tape(), batch)
    pred = np.stack([out.x.value, out.y.value], -1)
    winner = int(np.argmax(wta_targets(pred, batch.gt, batch.rollout_goal, batch.matching))) % 2
    tape.backward(loss)
    for n, head in enumerate(model.predictor.accel_heads):
        touched = any(p.grad.any() for p in head.parameters)
        assert touched == (n == winner)


def test_smooth_l1_transition():
    tape = ad.Tape()
    y = ad.smooth_l1(tape.leaf([0.5, 1.0, 3.0]), 1.0).value
    np.testing.assert_allclose(y, [0.125, 0.5, 2.5])


def test_accelerations_bounded_and_probabilities_normalized(rng):
    w = PredictorWeights.init(rng, hidden=8, modes=3, horizon=10)
    for p in w.parameters:
        p.values = p.values * 50.0  # saturate the tanh
    tape = ad.Tape()
    e = tape.leaf(rng.normal(size=(5, 8)))
    a = accel_profiles(tape, e, w).value
    assert a.shape == (15, 10) and np.all(np.abs(a) <= 8.0)
    lp = joint_log_probs(tape, e, np.array([0, 0, 1, 1, 1]), 2, w).value
    np.testing.assert_allclose(np.bincount(np.repeat([0, 0, 1, 1, 1], 3), np.exp(lp)), [1.0, 1.0])


def test_label_goals_prefers_followed_path():
    gt = straight_traj()
    near = GoalPath(Polyline(np.array([[1.0, -5.0], [1.0, 120.0]])), "map_based")
    far = GoalPath(Polyline(np.array([[0.0, 0.0], [80.0, 60.0]])), "map_based")
    assert label_goals([far, near], gt) == [1]
    # nothing within tolerance: fall back to the closest path
    assert label_goals([far], gt) == [0]


def test_predict_modes_layout(rng):
    w = PredictorWeights.init(rng, hidden=8, modes=2, horizon=60)
    actor = ActorState.create((0, 0), 0.0, 6.0, 0.0)
    paths = [GoalPath(Polyline(np.array([[0.0, -5.0], [0.0, 120.0]])), "map_free"),
             GoalPath(Polyline(np.array([[0.0, -5.0], [0.0, 10.0], [30.0, 100.0]])), "map_based")]
    modes = predict_modes(rng.normal(size=(2, 8)), actor, paths, w, PursuitConfig())
    assert (modes.num_goals, modes.num_modes) == (2, 2)
    assert modes.probs.sum() == pytest.approx(1.0)
    assert all(len(t) == 60 for t in modes.flat())
    assert modes.most_probable() is modes.flat()[int(np.argmax(modes.probs))]
