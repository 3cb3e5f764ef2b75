"""Trajectory prediction with a differentiable Pure Pursuit layer.

Predicted trajectories are rolled out by a path-tracking controller along
candidate goal paths, so curvature and acceleration limits hold by
construction.
"""
from .geometry import ActorState, Polyline, Pose, Trajectory, Vec2
from .model import Model, ModelConfig, prepare_samples
from .pursuit import PursuitConfig
from .trainer import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = ["ActorState", "Model", "ModelConfig", "Polyline", "Pose", "PursuitConfig", "TrainConfig",
           "Trajectory", "Vec2", "evaluate", "prepare_samples", "train"]
