"""Acceleration-profile heads, mode probabilities, goal labels and the loss.

Rollouts of one actor are laid out goal-major: the rollout for goal ``j`` and
temporal mode ``n`` sits at index ``j * N + n``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .encoder import MLP
from .geometry import ActorState, Trajectory, project_points
from .paths import GoalPath
from .pursuit import ACCEL_LIMIT, PathBatch, PursuitConfig, rollout_batch

ENDPOINT_MATCH = 3.5
MEAN_MATCH = 2.0
SMOOTH_L1_BETA = 1.0
REGRESSION_SCALE = 10.0


@dataclass
class PredictorWeights:
    accel_heads: list[MLP]
    mode_head: MLP
    goal_head: MLP

    @classmethod
    def init(cls, rng: np.random.Generator, hidden: int = 64, modes: int = 1,
             horizon: int = 60, outputs_per_step: int = 1) -> "PredictorWeights":
        if modes < 1:
            raise ValueError("need at least one temporal mode")
        heads = [MLP.init(f"predictor.head{n}", hidden, hidden, outputs_per_step * horizon, rng)
                 for n in range(modes)]
        return cls(heads, MLP.init("predictor.mode", hidden, hidden, modes, rng),
                   MLP.init("predictor.goal", hidden, hidden, 1, rng))

    @property
    def modes(self) -> int:
        return len(self.accel_heads)

    @property
    def parameters(self) -> list[ad.Parameter]:
        ps = [p for h in self.accel_heads for p in h.parameters]
        return ps + self.mode_head.parameters + self.goal_head.parameters


def accel_profiles(tape: ad.Tape, edges: ad.Var, weights: PredictorWeights) -> ad.Var:
    """(G * N, T) acceleration profiles, each bounded by the scaled tanh."""
    G = edges.value.shape[0]
    outs = [ad.tanh(head(tape, edges)) * ACCEL_LIMIT for head in weights.accel_heads]
    stacked = ad.stack(outs, axis=1)
    return ad.reshape(stacked, (G * weights.modes, -1))


def joint_log_probs(tape: ad.Tape, edges: ad.Var, goal_actor: np.ndarray, n_actors: int,
                    weights: PredictorWeights) -> ad.Var:
    """(G * N,) log of goal softmax (per actor) times mode softmax (per goal)."""
    G, N = edges.value.shape[0], weights.modes
    goal_lp = ad.segment_log_softmax(ad.reshape(weights.goal_head(tape, edges), (G,)),
                                     goal_actor, n_actors)
    mode_lp = ad.log_softmax(weights.mode_head(tape, edges))
    joint = ad.add(ad.stack([goal_lp] * N, axis=1), mode_lp)
    return ad.reshape(joint, (G * N,))


@dataclass(frozen=True)
class ModeSet:
    """Predicted trajectories ``trajectories[j][n]`` with joint probabilities ``probs[j, n]``."""

    trajectories: list[list[Trajectory]]
    probs: np.ndarray

    @property
    def num_goals(self) -> int:
        return self.probs.shape[0]

    @property
    def num_modes(self) -> int:
        return self.probs.shape[1]

    def flat(self) -> list[Trajectory]:
        return [t for row in self.trajectories for t in row]

    def most_probable(self) -> Trajectory:
        j, n = np.unravel_index(int(np.argmax(self.probs)), self.probs.shape)
        return self.trajectories[j][n]


def predict_modes(embeddings: np.ndarray, actor: ActorState, paths: Sequence[GoalPath],
                  weights: PredictorWeights, config: PursuitConfig = PursuitConfig()) -> ModeSet:
    """Roll every (goal, temporal mode) profile along its goal path."""
    tape = ad.Tape()
    e = tape.leaf(np.atleast_2d(embeddings))
    G, N = len(paths), weights.modes
    if e.value.shape[0] != G:
        raise ad.ShapeError(f"{e.value.shape[0]} embeddings for {G} paths")
    accel = accel_profiles(tape, e, weights).value
    logp = joint_log_probs(tape, e, np.zeros(G, dtype=int), 1, weights).value
    batch = PathBatch([p.path for p in paths]).select(np.repeat(np.arange(G), N))
    res = rollout_batch(batch, accel, config, np.full(G * N, actor.speed))
    trajs = res.trajectories()
    probs = np.exp(logp).reshape(G, N)
    return ModeSet([trajs[j * N:(j + 1) * N] for j in range(G)], probs)


def label_goals(paths: Sequence[GoalPath], ground_truth: Trajectory,
                endpoint_tol: float = ENDPOINT_MATCH, mean_tol: float = MEAN_MATCH) -> list[int]:
    """Indices of goal paths that the ground truth follows (never empty)."""
    if not paths:
        raise ValueError("need at least one goal path")
    mean_off = np.empty(len(paths))
    end_off = np.empty(len(paths))
    for j, g in enumerate(paths):
        _, lat = project_points(ground_truth.positions, g.path)
        mean_off[j] = np.mean(np.abs(lat))
        end_off[j] = abs(lat[-1])
    match = [j for j in range(len(paths)) if end_off[j] <= endpoint_tol and mean_off[j] <= mean_tol]
    return match or [int(np.argmin(mean_off))]


def wta_targets(pred: np.ndarray, gt: np.ndarray, goal_of: np.ndarray, matching: np.ndarray) -> np.ndarray:
    """Temporal one-hot targets: 1 on the winning rollout of each matching goal.

    ``pred`` is (R, T, 2) and ``gt`` (R, T, 2) the ground truth each rollout
    is compared against; ``goal_of`` maps rollouts to goal ids and
    ``matching`` is a per-goal boolean. The winner has the smallest summed L1
    error, with ties going to the lower index.
    """
    l1 = np.abs(pred - gt).sum(axis=(1, 2))
    p = np.zeros(len(pred))
    goal_of = np.asarray(goal_of, dtype=int)
    matching = np.asarray(matching, dtype=bool)
    for j in np.flatnonzero(matching):
        rows = np.flatnonzero(goal_of == j)
        if len(rows):
            p[rows[int(np.argmin(l1[rows]))]] = 1.0
    return p


def loss_terms(log_p: ad.Var, pred_x: ad.Var, pred_y: ad.Var, gt: np.ndarray,
               targets: np.ndarray, actor_of: np.ndarray, n_actors: int,
               beta: float = SMOOTH_L1_BETA) -> tuple[ad.Var, ad.Var]:
    """Per-actor classification and trajectory terms, both (A,) Vars.

    ``pred_x``/``pred_y`` are (R, T) actor-frame coordinates, ``gt`` is the
    (R, T, 2) ground truth aligned with each rollout, ``targets`` the (R,)
    target probabilities.
    """
    err = ad.sum_reduce(ad.add(ad.smooth_l1(ad.sub(pred_x, gt[..., 0]), beta),
                               ad.smooth_l1(ad.sub(pred_y, gt[..., 1]), beta)), axis=1)
    cls = ad.segment_sum(ad.mul(log_p, -targets), actor_of, n_actors)
    reg = ad.segment_sum(ad.mul(err, targets), actor_of, n_actors)
    return cls, reg


def spatial_targets(goal_actor: np.ndarray, matching: np.ndarray, modes: int) -> np.ndarray:
    """Per-rollout spatial mass 1/|G*| for rollouts of matching goals."""
    goal_actor = np.asarray(goal_actor, dtype=int)
    matching = np.asarray(matching, dtype=bool)
    counts = np.bincount(goal_actor[matching], minlength=goal_actor.max() + 1)
    per_goal = np.where(matching, 1.0 / np.maximum(counts[goal_actor], 1), 0.0)
    return np.repeat(per_goal, modes)


def compute_loss(modes: ModeSet, matching: Sequence[int], ground_truth: Trajectory,
                 beta: float = SMOOTH_L1_BETA) -> float:
    """Classification plus winner-takes-all trajectory loss for one actor."""
    G, N = modes.probs.shape
    tape = ad.Tape()
    pos = np.stack([t.positions for t in modes.flat()])
    log_p = tape.leaf(np.log(np.maximum(modes.probs.ravel(), np.finfo(float).tiny)))
    px, py = tape.leaf(pos[..., 0]), tape.leaf(pos[..., 1])
    is_match = np.zeros(G, dtype=bool)
    is_match[list(matching)] = True
    goal_of = np.repeat(np.arange(G), N)
    gt = np.broadcast_to(ground_truth.positions, pos.shape)
    targets = wta_targets(pos, gt, goal_of, is_match) * spatial_targets(np.zeros(G, dtype=int), is_match, N)
    cls, reg = loss_terms(log_p, px, py, gt, targets, np.zeros(G * N, dtype=int), 1, beta)
    return float(cls.value[0] + reg.value[0])


def regression_positions(tape: ad.Tape, edges: ad.Var, weights: PredictorWeights) -> tuple[ad.Var, ad.Var]:
    """Direct waypoint regression: (G * N, T) x and y in the actor frame."""
    G, N = edges.value.shape[0], weights.modes
    outs = [head(tape, edges) * REGRESSION_SCALE for head in weights.accel_heads]
    flat = ad.reshape(ad.stack(outs, axis=1), (G * N, -1))
    T = flat.value.shape[1] // 2
    xy = ad.reshape(flat, (G * N * T, 2))
    return (ad.reshape(ad.column(xy, 0), (G * N, T)), ad.reshape(ad.column(xy, 1), (G * N, T)))
