"""Per-actor graph construction and the two-layer graph network.

The graph has one actor node and one goal node per goal path, with a
goal -> actor edge for each. Edge embeddings and the actor embedding are
updated twice; goal features stay fixed because goal nodes have no incoming
edges.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .geometry import HISTORY_LEN, ActorState, Polyline, project_point, project_points, transform_to_frame
from .paths import GoalPath, LaneGraph

NUM_PATH_SAMPLES = 10
NUM_EDGE_SAMPLES = 6
SIGN_LATERAL_REACH = 3.5
CURVATURE_BASELINE = 2.0

ACTOR_DIM = 2 + 2 * HISTORY_LEN
GOAL_DIM = 3 * NUM_PATH_SAMPLES + 2
EDGE_DIM = 2 * NUM_EDGE_SAMPLES + 1


@dataclass(frozen=True)
class FeatureConfig:
    horizon_length: float = 120.0
    horizon_time: float = 6.0
    path_samples: int = NUM_PATH_SAMPLES
    edge_samples: int = NUM_EDGE_SAMPLES


def build_actor_features(actor: ActorState) -> np.ndarray:
    """``[speed, acceleration, history offsets in the actor frame...]``."""
    hist = transform_to_frame(actor.history, actor.pose)
    return np.concatenate([[actor.speed, actor.acceleration], hist.ravel()])


def path_curvature(path: Polyline, s, baseline: float = CURVATURE_BASELINE) -> np.ndarray:
    """Signed three-point curvature at arc lengths ``s`` (positive turns right).

    Uses the circle through the points ``baseline`` metres before and after
    each sample, shrunk at the path ends.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    s0 = np.clip(s - baseline, 0.0, path.length)
    s2 = np.clip(s + baseline, 0.0, path.length)
    s1 = 0.5 * (s0 + s2)
    p0, p1, p2 = path.point_at(s0), path.point_at(s1), path.point_at(s2)
    a, b = p1 - p0, p2 - p1
    cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    denom = np.hypot(*a.T) * np.hypot(*b.T) * np.hypot(*(p2 - p0).T)
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.where(denom > 1e-12, -2.0 * cross / denom, 0.0)
    return k


def sign_distance(goal: GoalPath, graph: LaneGraph | None, cap: float) -> float:
    """Arc length from the actor to the nearest sign beside the path, capped.

    Every sign of the map counts, not only those attached to the path's
    lanes: a path that starts on a connector still passes the stop line at
    the end of the approach lane the actor is leaving.
    """
    if graph is None or goal.frame is None:
        return cap
    signs = graph.signs
    if not signs:
        return cap
    pts = transform_to_frame(np.array([s.position.as_array() for s in signs]), goal.frame)
    s_sign, lat = project_points(pts, goal.path)
    s_actor, _ = project_point((0.0, 0.0), goal.path)
    ahead = (np.abs(lat) <= SIGN_LATERAL_REACH) & (s_sign >= s_actor)
    if not ahead.any():
        return cap
    return float(min(cap, np.min(s_sign[ahead] - s_actor)))


def build_goal_features(goal: GoalPath, graph: LaneGraph | None = None,
                        config: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Path samples ``(x, y, curvature)`` at equal arc-length fractions,
    then the sign distance and the map-free flag."""
    path = goal.path
    s = np.linspace(0.0, path.length, config.path_samples)
    pts = path.point_at(s)
    k = path_curvature(path, s)
    samples = np.column_stack([pts, k]).ravel()
    return np.concatenate([samples, [sign_distance(goal, graph, config.horizon_length),
                                     1.0 if goal.is_map_free else 0.0]])


def zero_jerk_distance(v0: float, a0: float, t) -> np.ndarray:
    """Constant-acceleration distance travelled by time ``t``, stopping at rest."""
    t = np.asarray(t, dtype=float)
    s = v0 * t + 0.5 * a0 * t * t
    if a0 < 0:
        t_stop = v0 / -a0
        s = np.where(t >= t_stop, v0 * v0 / (-2.0 * a0), s)
    return np.maximum(s, 0.0)


def build_edge_features(actor: ActorState, goal: GoalPath,
                        config: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Zero-jerk rollout sampled on the path plus its terminal lateral offset."""
    path = goal.path
    s_actor, _ = project_point((0.0, 0.0), path)
    times = config.horizon_time * np.arange(1, config.edge_samples + 1) / config.edge_samples
    s = zero_jerk_distance(actor.speed, actor.acceleration, times)
    on_path = path.point_at(np.minimum(s_actor + s, path.length))
    _, lateral = project_point((0.0, s[-1]), path)
    return np.concatenate([on_path.ravel(), [lateral]])


@dataclass(frozen=True)
class ActorGraph:
    actor_features: np.ndarray  # (D_v,)
    goal_features: np.ndarray  # (G, D_g)
    edge_features: np.ndarray  # (G, D_e)

    def __post_init__(self):
        g = np.atleast_2d(self.goal_features)
        e = np.atleast_2d(self.edge_features)
        if len(g) < 1 or len(g) != len(e):
            raise ad.ShapeError("need one edge per goal and at least one goal")
        object.__setattr__(self, "goal_features", g)
        object.__setattr__(self, "edge_features", e)

    @property
    def num_goals(self) -> int:
        return len(self.goal_features)


def build_actor_graph(actor: ActorState, goals: Sequence[GoalPath], graph: LaneGraph | None = None,
                      config: FeatureConfig = FeatureConfig()) -> ActorGraph:
    return ActorGraph(build_actor_features(actor),
                      np.stack([build_goal_features(g, graph, config) for g in goals]),
                      np.stack([build_edge_features(actor, g, config) for g in goals]))


# Fixed input scaling so the raw metre and m/s features reach the MLPs at
# roughly unit magnitude.
def _feature_scales() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    actor = np.concatenate([[0.1, 0.25], np.full(2 * HISTORY_LEN, 0.1)])
    goal = np.concatenate([np.tile([0.02, 0.02, 10.0], NUM_PATH_SAMPLES), [1.0 / 120.0, 1.0]])
    edge = np.concatenate([np.full(2 * NUM_EDGE_SAMPLES, 0.02), [0.2]])
    return actor, goal, edge


ACTOR_SCALE, GOAL_SCALE, EDGE_SCALE = _feature_scales()


@dataclass
class MLP:
    """Two affine layers with a ReLU between them and a linear output."""

    W1: ad.Parameter
    b1: ad.Parameter
    W2: ad.Parameter
    b2: ad.Parameter

    @classmethod
    def init(cls, name: str, n_in: int, n_hidden: int, n_out: int,
             rng: np.random.Generator) -> "MLP":
        def uni(shape, fan_in):
            bound = 1.0 / math.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        return cls(ad.Parameter(f"{name}.W1", uni((n_hidden, n_in), n_in)),
                   ad.Parameter(f"{name}.b1", uni((n_hidden,), n_in)),
                   ad.Parameter(f"{name}.W2", uni((n_out, n_hidden), n_hidden)),
                   ad.Parameter(f"{name}.b2", uni((n_out,), n_hidden)))

    @property
    def parameters(self) -> list[ad.Parameter]:
        return [self.W1, self.b1, self.W2, self.b2]

    def __call__(self, tape: ad.Tape, x: ad.Var) -> ad.Var:
        h = ad.relu(ad.vecadd(ad.matvec(tape.param(self.W1), x), tape.param(self.b1)))
        return ad.vecadd(ad.matvec(tape.param(self.W2), h), tape.param(self.b2))


@dataclass
class EncoderWeights:
    """One (phi_e, phi_v) pair per graph-network layer."""

    phi_e: list[MLP]
    phi_v: list[MLP]
    hidden: int = 64

    @classmethod
    def init(cls, rng: np.random.Generator, hidden: int = 64, layers: int = 2) -> "EncoderWeights":
        phi_e, phi_v = [], []
        dv, de = ACTOR_DIM, EDGE_DIM
        for ell in range(layers):
            phi_e.append(MLP.init(f"encoder.phi_e{ell}", dv + de + GOAL_DIM, hidden, hidden, rng))
            phi_v.append(MLP.init(f"encoder.phi_v{ell}", dv + de, hidden, hidden, rng))
            dv, de = hidden, hidden
        return cls(phi_e, phi_v, hidden)

    @property
    def layers(self) -> int:
        return len(self.phi_e)

    @property
    def parameters(self) -> list[ad.Parameter]:
        return [p for pair in zip(self.phi_e, self.phi_v) for m in pair for p in m.parameters]


def encode(tape: ad.Tape, actor_x: np.ndarray, goal_x: np.ndarray, edge_x: np.ndarray,
           goal_actor: np.ndarray, weights: EncoderWeights) -> tuple[ad.Var, ad.Var]:
    """Batched graph network over many actor graphs.

    ``actor_x`` is (A, D_v); ``goal_x`` and ``edge_x`` are (G, .) with
    ``goal_actor`` giving each goal's actor. Returns edge embeddings (G, H)
    and actor embeddings (A, H). The edge mean uses an order-independent
    summation so permuting goals never changes an actor embedding.
    """
    actor_x = np.asarray(actor_x, dtype=float)
    goal_x = np.asarray(goal_x, dtype=float)
    edge_x = np.asarray(edge_x, dtype=float)
    if actor_x.shape[1:] != (ACTOR_DIM,) or goal_x.shape[1:] != (GOAL_DIM,) \
            or edge_x.shape[1:] != (EDGE_DIM,) or len(goal_x) != len(edge_x):
        raise ad.ShapeError(f"feature shapes {actor_x.shape}, {goal_x.shape}, {edge_x.shape}")
    goal_actor = np.asarray(goal_actor, dtype=int)
    n_actors = len(actor_x)
    g = goal_x * GOAL_SCALE
    v = tape.leaf(actor_x * ACTOR_SCALE)
    e = tape.leaf(edge_x * EDGE_SCALE)
    for phi_e, phi_v in zip(weights.phi_e, weights.phi_v):
        e_new = phi_e(tape, ad.concat([ad.take(v, goal_actor), e, g], axis=1))
        pooled = ad.segment_mean(e, goal_actor, n_actors, canonical=True)
        v = phi_v(tape, ad.concat([v, pooled], axis=1))
        e = e_new
    return e, v


def gnn_forward(graph: ActorGraph, weights: EncoderWeights) -> tuple[np.ndarray, np.ndarray]:
    """Final per-goal edge embeddings (G, H) and actor embedding (H,) for one graph."""
    tape = ad.Tape()
    e, v = encode(tape, graph.actor_features[None], graph.goal_features, graph.edge_features,
                  np.zeros(graph.num_goals, dtype=int), weights)
    return e.value, v.value[0]
