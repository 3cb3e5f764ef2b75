import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ptnet.geometry import ActorState, Polyline, Vec2
from ptnet.paths import (Lane, LaneGraph, PathConfig, Sign, build_goal_paths, circle_intersects,
                         concat_centerlines, extend_straight, query_nearby_lanes, rollout_paths)
from ptnet.synth import MAP_KINDS, generate_actors, generate_map


def lane(lane_id, pts, limit=10.0, signs=()):
    return Lane(lane_id, Polyline(np.asarray(pts, dtype=float)), limit, signs)


def fork_graph():
    return LaneGraph((lane("A", [[0, 0], [0, 50]]), lane("B", [[0, 50], [-20, 100]]),
                      lane("C", [[0, 50], [20, 100]])), (("A", "B"), ("A", "C")))


class ChainGraph:
    """Duck-typed graph for traversal tests: every lane is 10 m long."""

    def __init__(self, edges):
        self.edges = edges

    def successors(self, lane_id):
        return [b for a, b in self.edges if a == lane_id]

    def lane(self, lane_id):
        return lane(lane_id, [[0, 0], [0, 10]])


def brute_force_sequences(graph, starts, horizon):
    """All simple lane walks from each start that stop exactly when the rules say."""
    nodes = sorted({n for e in graph.edges for n in e} | set(starts))
    out = []
    for start in starts:
        for k in range(len(nodes)):
            for rest in itertools.permutations([n for n in nodes if n != start], k):
                seq = [start, *rest]
                if any(b not in graph.successors(a) for a, b in zip(seq, seq[1:])):
                    continue
                lengths = np.cumsum([10.0] * len(seq))
                if np.any(lengths[:-1] >= horizon):
                    continue  # would have stopped earlier
                free = [s for s in graph.successors(seq[-1]) if s not in seq]
                if lengths[-1] >= horizon or not free:
                    if seq not in out:
                        out.append(seq)
    return out


def test_linear_chain():
    g = ChainGraph([("A", "B"), ("B", "C")])
    assert rollout_paths(g, ["A"], 100.0) == [["A", "B", "C"]]


def test_fork_branches():
    assert rollout_paths(fork_graph(), ["A"], 500.0) == [["A", "B"], ["A", "C"]]


def test_cycle_terminates():
    g = ChainGraph([("A", "B"), ("B", "C"), ("C", "A")])
    assert rollout_paths(g, ["A"], 1000.0) == [["A", "B", "C"]]


edge_lists = st.lists(st.tuples(st.sampled_from("ABCDE"), st.sampled_from("ABCDE")), max_size=8)


@given(edge_lists, st.lists(st.sampled_from("ABCDE"), min_size=1, max_size=3, unique=True),
       st.sampled_from([5.0, 15.0, 25.0, 1000.0]))
def test_traversal_matches_brute_force(edges, starts, horizon):
    edges = sorted({e for e in edges if e[0] != e[1]})
    g = ChainGraph(edges)
    got = rollout_paths(g, starts, horizon)
    assert sorted(got) == sorted(brute_force_sequences(g, starts, horizon))
    assert len({tuple(s) for s in got}) == len(got)


def test_nearby_lanes_ordering():
    g = LaneGraph((lane("far", [[1.5, -10], [1.5, 10]]), lane("near", [[-1.0, -10], [-1.0, 10]]),
                   lane("out", [[3.0, -10], [3.0, 10]])))
    assert query_nearby_lanes(g, (0.0, 0.0), 2.0) == ["near", "far"]
    assert query_nearby_lanes(g, Vec2(0.0, 30.0), 2.0) == []
    with pytest.raises(ValueError):
        query_nearby_lanes(g, (0.0, 0.0), 0.0)


def test_lane_graph_validation():
    with pytest.raises(ValueError):
        LaneGraph((lane("A", [[0, 0], [0, 1]]), lane("A", [[0, 1], [0, 2]])))
    with pytest.raises(ValueError):
        LaneGraph((lane("A", [[0, 0], [0, 1]]),), (("A", "Z"),))
    with pytest.raises(ValueError):
        LaneGraph((lane("A", [[0, 0], [0, 1]]), lane("B", [[5, 5], [5, 6]])), (("A", "B"),))


def test_concat_drops_junction_point():
    path = concat_centerlines(fork_graph(), ["A", "B"])
    assert len(path) == 3
    assert path.length == pytest.approx(50 + math.hypot(20, 50))


def test_extend_straight():
    p = extend_straight(Polyline(np.array([[0.0, 0.0], [3.0, 4.0]])), 15.0)
    assert p.length == pytest.approx(15.0)
    np.testing.assert_allclose(p.points[-1], [9.0, 12.0])


def test_empty_graph_gives_map_free_only():
    actor = ActorState.create((3.0, 4.0), 0.7, 5.0, 0.0)
    goals = build_goal_paths(LaneGraph(), actor)
    assert len(goals) == 1 and goals[0].is_map_free and goals[0].lane_ids == ()
    np.testing.assert_allclose(goals[0].path.points, [[0, 0], [0, 120]])


def test_aligned_straight_lane_matches_map_free():
    g = LaneGraph((lane("A", [[0, -50], [0, 300]]),))
    actor = ActorState.create((0.0, 0.0), 0.0, 5.0, 0.0)
    cfg = PathConfig()
    mb, mf = build_goal_paths(g, actor, cfg)
    assert mb.lane_ids == ("A",)
    np.testing.assert_allclose(mb.path.points[0], [0.0, -cfg.tail], atol=1e-12)
    np.testing.assert_allclose(mb.path.points[-1], mf.path.points[-1], atol=1e-12)
    assert np.allclose(mb.path.points[:, 0], 0.0)


def test_fork_gives_three_paths():
    actor = ActorState.create((0.0, 10.0), 0.0, 5.0, 0.0)
    goals = build_goal_paths(fork_graph(), actor)
    assert [g.lane_ids for g in goals] == [("A", "B"), ("A", "C"), ()]


def test_opposing_lane_is_not_a_start():
    g = LaneGraph((lane("up", [[0, -50], [0, 50]]), lane("down", [[1.0, 50], [1.0, -50]])))
    actor = ActorState.create((0.0, 0.0), 0.0, 5.0, 0.0)
    assert [p.lane_ids for p in build_goal_paths(g, actor)] == [("up",), ()]


def test_map_paths_capped():
    n = 20
    lanes = [lane("root", [[0, 0], [0, 10]])] + [lane(f"b{k}", [[0, 10], [k - n / 2, 200]]) for k in range(n)]
    g = LaneGraph(tuple(lanes), tuple(("root", f"b{k}") for k in range(n)))
    goals = build_goal_paths(g, ActorState.create((0.0, 1.0), 0.0, 5.0, 0.0))
    assert len(goals) == PathConfig().max_map_paths + 1


def test_signs_collected():
    g = LaneGraph((lane("A", [[0, 0], [0, 10]], signs=(Sign(Vec2(1, 9)),)),))
    assert g.signs == [Sign(Vec2(1, 9))]


@pytest.mark.parametrize("kind", MAP_KINDS)
def test_generated_goal_paths_meet_lookahead_circle(kind):
    for seed in range(4):
        g = generate_map(seed, kind)
        for actor, _ in generate_actors(g, seed, 2):
            goals = build_goal_paths(g, actor)
            assert goals[-1].is_map_free
            for goal in goals:
                assert circle_intersects(goal.path, 10.0)
                assert goal.path.length >= PathConfig().horizon_length


def test_circle_intersects_cases():
    assert circle_intersects(Polyline(np.array([[0.0, -20.0], [0.0, 20.0]])), 10.0)
    assert not circle_intersects(Polyline(np.array([[20.0, -20.0], [20.0, 20.0]])), 10.0)
    assert not circle_intersects(Polyline(np.array([[0.0, 0.0], [0.0, 5.0]])), 10.0)
