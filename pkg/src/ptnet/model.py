"""PTNet composition: encoder, predictor heads and the Pure Pursuit layer.

``kind="regression"`` swaps the Pure Pursuit layer for direct waypoint
regression on the same encoder; it is the unconstrained ablation.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .encoder import EncoderWeights, FeatureConfig, build_actor_graph, encode
from .geometry import ActorState, Trajectory
from .paths import GoalPath, PathConfig, build_goal_paths
from .predictor import (ModeSet, PredictorWeights, accel_profiles, joint_log_probs, label_goals,
                        loss_terms, regression_positions, spatial_targets, wta_targets)
from .pursuit import PathBatch, PursuitConfig, rollout_batch

MODEL_KINDS = ("ptnet", "regression")


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "ptnet"
    modes: int = 1
    hidden: int = 64
    seed: int = 0
    pursuit: PursuitConfig = field(default_factory=PursuitConfig)
    paths: PathConfig = field(default_factory=PathConfig)

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.modes < 1 or self.hidden < 1:
            raise ValueError("modes and hidden must be positive")

    @property
    def features(self) -> FeatureConfig:
        return FeatureConfig(self.paths.horizon_length, self.pursuit.dt * self.pursuit.horizon)

    @property
    def name(self) -> str:
        return f"PTNet-{self.modes}T" if self.kind == "ptnet" else f"Regression-{self.modes}T"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["pursuit"] = PursuitConfig(**d.get("pursuit", {}))
        d["paths"] = PathConfig(**d.get("paths", {}))
        return cls(**d)


@dataclass
class ActorSample:
    """Everything the model needs about one actor, in its own frame."""

    scenario_id: str
    actor_index: int
    actor: ActorState
    goals: list[GoalPath]
    actor_x: np.ndarray
    goal_x: np.ndarray
    edge_x: np.ndarray
    ground_truth: Trajectory  # actor frame
    matching: list[int]

    @property
    def num_goals(self) -> int:
        return len(self.goals)


def prepare_samples(scenarios, config: ModelConfig = ModelConfig()) -> list[ActorSample]:
    out = []
    for sc in scenarios:
        for k, (actor, gt) in enumerate(zip(sc.actors, sc.ground_truth)):
            goals = build_goal_paths(sc.lane_graph, actor, config.paths)
            graph = build_actor_graph(actor, goals, sc.lane_graph, config.features)
            local = gt.transformed(to_frame=actor.pose)
            out.append(ActorSample(sc.id, k, actor, goals, graph.actor_features, graph.goal_features,
                                   graph.edge_features, local, label_goals(goals, local)))
    return out


@dataclass
class Batch:
    samples: list[ActorSample]
    actor_x: np.ndarray  # (A, D_v)
    goal_x: np.ndarray  # (G, D_g)
    edge_x: np.ndarray  # (G, D_e)
    goal_actor: np.ndarray  # (G,)
    matching: np.ndarray  # (G,) bool
    paths: PathBatch  # one row per rollout, goal-major
    speed0: np.ndarray  # (R,)
    gt: np.ndarray  # (R, T, 2) ground truth of each rollout's actor
    rollout_actor: np.ndarray  # (R,)
    rollout_goal: np.ndarray  # (R,)
    modes: int

    @property
    def num_actors(self) -> int:
        return len(self.samples)


def make_batch(samples: Sequence[ActorSample], modes: int) -> Batch:
    samples = list(samples)
    goal_actor = np.concatenate([np.full(s.num_goals, i) for i, s in enumerate(samples)])
    matching = np.concatenate([np.isin(np.arange(s.num_goals), s.matching) for s in samples])
    rollout_goal = np.repeat(np.arange(len(goal_actor)), modes)
    rollout_actor = goal_actor[rollout_goal]
    paths = PathBatch([g.path for s in samples for g in s.goals]).select(rollout_goal)
    return Batch(samples,
                 np.stack([s.actor_x for s in samples]),
                 np.concatenate([s.goal_x for s in samples]),
                 np.concatenate([s.edge_x for s in samples]),
                 goal_actor, matching, paths,
                 np.array([samples[a].actor.speed for a in rollout_actor]),
                 np.stack([samples[a].ground_truth.positions for a in rollout_actor]),
                 rollout_actor, rollout_goal, modes)


@dataclass
class Forward:
    log_p: ad.Var  # (R,)
    x: ad.Var  # (R, T) actor-frame lateral
    y: ad.Var  # (R, T) actor-frame forward
    headings: np.ndarray | None  # (R, T); None when only positions are predicted
    speeds: np.ndarray | None


class Model:
    def __init__(self, config: ModelConfig, encoder: EncoderWeights, predictor: PredictorWeights):
        self.config = config
        self.encoder = encoder
        self.predictor = predictor

    @classmethod
    def init(cls, config: ModelConfig = ModelConfig()) -> "Model":
        rng = np.random.default_rng(config.seed)
        enc = EncoderWeights.init(rng, config.hidden)
        per_step = 1 if config.kind == "ptnet" else 2
        pred = PredictorWeights.init(rng, config.hidden, config.modes, config.pursuit.horizon, per_step)
        return cls(config, enc, pred)

    @property
    def parameters(self) -> list[ad.Parameter]:
        return self.encoder.parameters + self.predictor.parameters

    def forward(self, tape: ad.Tape, batch: Batch) -> Forward:
        edges, _ = encode(tape, batch.actor_x, batch.goal_x, batch.edge_x, batch.goal_actor, self.encoder)
        log_p = joint_log_probs(tape, edges, batch.goal_actor, batch.num_actors, self.predictor)
        if self.config.kind == "regression":
            x, y = regression_positions(tape, edges, self.predictor)
            return Forward(log_p, x, y, None, None)
        accel = accel_profiles(tape, edges, self.predictor)
        res = rollout_batch(batch.paths, accel, self.config.pursuit, batch.speed0)
        fwd, lat = res.stacked()
        return Forward(log_p, lat, fwd, res._values(res.heading), res._values(res.speed))

    def loss(self, tape: ad.Tape, batch: Batch) -> tuple[ad.Var, ad.Var]:
        """Mean loss over the batch's actors, plus the (A,) per-actor losses."""
        out = self.forward(tape, batch)
        pred = np.stack([out.x.value, out.y.value], axis=-1)
        targets = wta_targets(pred, batch.gt, batch.rollout_goal, batch.matching) \
            * spatial_targets(batch.goal_actor, batch.matching, batch.modes)
        cls, reg = loss_terms(out.log_p, out.x, out.y, batch.gt, targets,
                              batch.rollout_actor, batch.num_actors)
        per_actor = ad.add(cls, reg)
        return ad.mean_reduce(per_actor), per_actor

    def predict(self, samples: Sequence[ActorSample]) -> list[ModeSet]:
        if not samples:
            return []
        batch = make_batch(samples, self.config.modes)
        out = self.forward(ad.Tape(), batch)
        xs, ys, logp = out.x.value, out.y.value, out.log_p.value
        dt = self.config.pursuit.dt
        N = self.config.modes
        result = []
        for i, s in enumerate(samples):
            rows = np.flatnonzero(batch.rollout_actor == i)
            trajs = []
            for r in rows:
                pos = np.stack([xs[r], ys[r]], axis=-1)
                if out.headings is None:
                    trajs.append(Trajectory.from_positions(dt, pos))
                else:
                    trajs.append(Trajectory(dt, pos, out.headings[r], out.speeds[r]))
            probs = np.exp(logp[rows]).reshape(s.num_goals, N)
            result.append(ModeSet([trajs[j * N:(j + 1) * N] for j in range(s.num_goals)], probs))
        return result

    def save(self, path, extra: dict | None = None) -> None:
        meta = {"model": self.config.to_dict()}
        if extra:
            meta.update(extra)
        ad.save_parameters(path, self.parameters, meta)

    @classmethod
    def load(cls, path) -> "Model":
        arrays, meta = ad.load_parameters(path)
        model = cls.init(ModelConfig.from_dict(meta["model"]))
        names = {p.name for p in model.parameters}
        if names != set(arrays):
            raise ValueError(f"{path}: parameter names do not match the model configuration")
        for p in model.parameters:
            if arrays[p.name].shape != p.shape:
                raise ValueError(f"{path}: {p.name} has shape {arrays[p.name].shape}, expected {p.shape}")
            p.values = arrays[p.name].copy()
        return model
