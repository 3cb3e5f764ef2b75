import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ptnet import autodiff as ad
from ptnet.encoder import (ACTOR_DIM, EDGE_DIM, GOAL_DIM, EncoderWeights, FeatureConfig, build_actor_graph,
                           build_edge_features, build_goal_features, encode, gnn_forward, path_curvature,
                           sign_distance, zero_jerk_distance)
from ptnet.geometry import ActorState, Polyline, Vec2
from ptnet.paths import GoalPath, Lane, LaneGraph, Sign, build_goal_paths


def straight_goal(length=120.0):
    return GoalPath(Polyline(np.array([[0.0, -5.0], [0.0, length]])), "map_based", ("A",),
                    ActorState.create((0, 0), 0.0, 0.0, 0.0).pose)


def test_two_layer_depth():
    w = EncoderWeights.init(np.random.default_rng(0))
    assert w.layers == 2
    for mlp in w.phi_e + w.phi_v:
        assert len(mlp.parameters) == 4  # two affine layers


def test_zero_jerk_closed_form():
    assert zero_jerk_distance(10.0, -2.0, 4.0) == pytest.approx(40.0 - 16.0)
    # the actor halts at t = 5 s and stays put rather than reversing
    assert zero_jerk_distance(10.0, -2.0, 6.0) == pytest.approx(25.0)
    assert zero_jerk_distance(10.0, 1.0, 6.0) == pytest.approx(78.0)
    np.testing.assert_allclose(zero_jerk_distance(2.0, -2.0, [0.5, 1.0, 3.0]), [0.75, 1.0, 1.0])


def test_arc_curvature_samples():
    R = 50.0
    phi = np.linspace(0, 100 / R, 2001)
    arc = Polyline(np.column_stack([R - R * np.cos(phi), R * np.sin(phi)]))
    k = path_curvature(arc, np.linspace(10, 90, 9))
    np.testing.assert_allclose(k, 1 / R, rtol=1e-4)
    mirrored = Polyline(arc.points * [-1, 1])
    np.testing.assert_allclose(path_curvature(mirrored, [50.0]), -1 / R, rtol=1e-4)


def test_feature_dimensions(small_samples):
    s = small_samples[0]
    assert s.actor_x.shape == (ACTOR_DIM,)
    assert s.goal_x.shape == (s.num_goals, GOAL_DIM)
    assert s.edge_x.shape == (s.num_goals, EDGE_DIM)


def test_sign_distance():
    lane_ = Lane("A", Polyline(np.array([[0.0, -5.0], [0.0, 120.0]])), 10.0,
                 (Sign(Vec2(2.0, 40.0)), Sign(Vec2(9.0, 20.0)), Sign(Vec2(0.0, -3.0))))
    g = LaneGraph((lane_,))
    assert sign_distance(straight_goal(), g, 120.0) == pytest.approx(40.0)
    assert sign_distance(straight_goal(), LaneGraph(), 120.0) == 120.0


def test_goal_and_edge_features_on_straight_path():
    goal = straight_goal()
    gf = build_goal_features(goal)
    pts = gf[:30].reshape(10, 3)
    np.testing.assert_allclose(pts[:, 0], 0.0)
    np.testing.assert_allclose(pts[:, 2], 0.0)
    assert gf[-1] == 0.0
    actor = ActorState.create((0, 0), 0.0, 5.0, 1.0)
    ef = build_edge_features(actor, goal, FeatureConfig())
    s = zero_jerk_distance(5.0, 1.0, np.arange(1, 7))
    np.testing.assert_allclose(ef[:12].reshape(6, 2), np.column_stack([np.zeros(6), s]), atol=1e-12)
    assert ef[-1] == pytest.approx(0.0)


def random_graph(rng, n_goals):
    return (rng.normal(size=(1, ACTOR_DIM)), rng.normal(size=(n_goals, GOAL_DIM)),
            rng.normal(size=(n_goals, EDGE_DIM)))


WEIGHTS = EncoderWeights.init(np.random.default_rng(7), hidden=16)


@given(st.integers(1, 16), st.integers(0, 2 ** 31))
def test_permutation_invariance_and_equivariance(n_goals, seed):
    rng = np.random.default_rng(seed)
    a, g, e = random_graph(rng, n_goals)
    perm = rng.permutation(n_goals)
    zeros = np.zeros(n_goals, dtype=int)
    e1, v1 = encode(ad.Tape(), a, g, e, zeros, WEIGHTS)
    e2, v2 = encode(ad.Tape(), a, g[perm], e[perm], zeros, WEIGHTS)
    assert np.array_equal(v1.value, v2.value)
    assert np.array_equal(e1.value[perm], e2.value)


def test_duplicate_goal_keeps_actor_embedding(rng):
    a, g, e = random_graph(rng, 3)
    _, v1 = encode(ad.Tape(), a, g, e, np.zeros(3, dtype=int), WEIGHTS)
    g2, e2 = np.vstack([g, g]), np.vstack([e, e])
    _, v2 = encode(ad.Tape(), a, g2, e2, np.zeros(6, dtype=int), WEIGHTS)
    np.testing.assert_allclose(v1.value, v2.value, rtol=1e-12, atol=1e-14)


def test_batched_encoding_matches_single_graphs(rng):
    graphs = [random_graph(rng, k) for k in (2, 5, 1)]
    a = np.vstack([x[0] for x in graphs])
    g = np.vstack([x[1] for x in graphs])
    e = np.vstack([x[2] for x in graphs])
    owner = np.repeat(np.arange(3), [2, 5, 1])
    eb, vb = encode(ad.Tape(), a, g, e, owner, WEIGHTS)
    for i, (ai, gi, ei) in enumerate(graphs):
        es, vs = encode(ad.Tape(), ai, gi, ei, np.zeros(len(gi), dtype=int), WEIGHTS)
        np.testing.assert_allclose(vb.value[i], vs.value[0], rtol=1e-12)
        np.testing.assert_allclose(eb.value[owner == i], es.value, rtol=1e-12)


def test_gnn_forward_shapes(small_scenarios):
    sc = small_scenarios[0]
    actor = sc.actors[0]
    graph = build_actor_graph(actor, build_goal_paths(sc.lane_graph, actor), sc.lane_graph)
    e, v = gnn_forward(graph, WEIGHTS)
    assert e.shape == (graph.num_goals, 16) and v.shape == (16,)


def test_shape_errors():
    with pytest.raises(ad.ShapeError):
        encode(ad.Tape(), np.zeros((1, 3)), np.zeros((1, GOAL_DIM)), np.zeros((1, EDGE_DIM)), [0], WEIGHTS)
