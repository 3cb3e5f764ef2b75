"""Lane graph and goal-path generation.

Each actor gets one map-based path per lane sequence reachable from the lanes
near it, plus a straight map-free path along its heading. All goal paths are
expressed in the actor frame.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import ActorState, Polyline, Pose, Vec2, normalize_angle, project_point, transform_to_frame

log = logging.getLogger(__name__)

JUNCTION_TOL = 1e-6
SUCCESSOR_GAP = 0.5


@dataclass(frozen=True)
class Sign:
    position: Vec2
    kind: str = "stop"


@dataclass(frozen=True)
class Lane:
    id: str
    centerline: Polyline
    speed_limit: float
    signs: tuple[Sign, ...] = ()


@dataclass(frozen=True)
class LaneGraph:
    lanes: tuple[Lane, ...] = ()
    edges: tuple[tuple[str, str], ...] = ()
    _by_id: dict = field(init=False, repr=False, compare=False)
    _succ: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        by_id = {}
        for lane in self.lanes:
            if lane.id in by_id:
                raise ValueError(f"duplicate lane id {lane.id!r}")
            by_id[lane.id] = lane
        succ: dict[str, list[str]] = {lane.id: [] for lane in self.lanes}
        for a, b in self.edges:
            if a not in by_id or b not in by_id:
                raise ValueError(f"edge ({a!r}, {b!r}) references an unknown lane")
            gap = np.hypot(*(by_id[b].centerline.points[0] - by_id[a].centerline.points[-1]))
            if gap > SUCCESSOR_GAP:
                raise ValueError(f"lane {b!r} starts {gap:.2f} m from the end of {a!r}")
            succ[a].append(b)
        object.__setattr__(self, "_by_id", by_id)
        object.__setattr__(self, "_succ", succ)

    def lane(self, lane_id: str) -> Lane:
        return self._by_id[lane_id]

    def successors(self, lane_id: str) -> list[str]:
        return self._succ[lane_id]

    def predecessors(self, lane_id: str) -> list[str]:
        return [a for a, b in self.edges if b == lane_id]

    @property
    def signs(self) -> list[Sign]:
        return [s for lane in self.lanes for s in lane.signs]


@dataclass(frozen=True)
class PathConfig:
    query_radius: float = 2.0
    horizon_length: float = 120.0
    tail: float = 5.0
    max_map_paths: int = 16
    lookahead: float = 10.0
    max_heading_offset: float = math.pi / 2


@dataclass(frozen=True)
class GoalPath:
    path: Polyline  # actor frame
    source: str  # "map_based" | "map_free"
    lane_ids: tuple[str, ...] = ()
    frame: Pose | None = None

    @property
    def is_map_free(self) -> bool:
        return self.source == "map_free"


def query_nearby_lanes(graph: LaneGraph, position, radius: float = 2.0) -> list[str]:
    """Lanes whose centerline passes within ``radius``, nearest first."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    p = np.asarray(position.as_array() if isinstance(position, Vec2) else position, dtype=float)
    hits = []
    for order, lane in enumerate(graph.lanes):
        s, _ = project_point(p, lane.centerline)
        d = float(np.hypot(*(lane.centerline.point_at(s) - p)))
        if d <= radius:
            hits.append((d, order, lane.id))
    return [lane_id for _, _, lane_id in sorted(hits)]


def lane_heading_offset(centerline: Polyline, position, heading: float) -> float:
    """Angle between the lane direction at the projection of ``position`` and ``heading``."""
    s, _ = project_point(position, centerline)
    d = centerline.point_at(min(s + 0.5, centerline.length)) - centerline.point_at(max(s - 0.5, 0.0))
    return float(normalize_angle(math.atan2(d[0], d[1]) - heading))


def rollout_paths(graph: LaneGraph, start_lanes: Sequence[str], horizon_length: float,
                  consumed: dict[str, float] | None = None) -> list[list[str]]:
    """Depth-first lane sequences from each start lane.

    A branch ends once its centerline length reaches ``horizon_length``, at a
    sink, or when every successor would revisit a lane already in the branch.
    ``consumed`` optionally discounts the part of a start lane already behind
    the actor.
    """
    if horizon_length <= 0:
        raise ValueError("horizon_length must be positive")
    consumed = consumed or {}
    out: list[list[str]] = []
    seen: set[tuple[str, ...]] = set()

    def emit(seq):
        key = tuple(seq)
        if key not in seen:
            seen.add(key)
            out.append(list(seq))

    def walk(seq, length):
        if length >= horizon_length:
            emit(seq)
            return
        nxt = [s for s in graph.successors(seq[-1]) if s not in seq]
        if not nxt:
            emit(seq)
            return
        for s in nxt:
            walk(seq + [s], length + graph.lane(s).centerline.length)

    for lane_id in start_lanes:
        walk([lane_id], graph.lane(lane_id).centerline.length - consumed.get(lane_id, 0.0))
    return out


def concat_centerlines(graph: LaneGraph, lane_ids: Sequence[str]) -> Polyline:
    pts = [graph.lane(lane_ids[0]).centerline.points]
    for lane_id in lane_ids[1:]:
        nxt = graph.lane(lane_id).centerline.points
        if np.hypot(*(nxt[0] - pts[-1][-1])) <= JUNCTION_TOL:
            nxt = nxt[1:]
        pts.append(nxt)
    return Polyline(np.vstack(pts))


def extend_straight(path: Polyline, length: float) -> Polyline:
    """Continue the last segment as a straight line until ``length`` is reached."""
    if path.length >= length:
        return path
    d = path.points[-1] - path.points[-2]
    d = d / np.hypot(*d)
    return Polyline(np.vstack([path.points, path.points[-1] + (length - path.length) * d]))


def map_free_path(config: PathConfig) -> Polyline:
    return Polyline([[0.0, 0.0], [0.0, config.horizon_length]])


def build_goal_paths(graph: LaneGraph, actor: ActorState,
                     config: PathConfig = PathConfig()) -> list[GoalPath]:
    """Map-based goal paths (nearest lanes first) followed by the map-free path."""
    pos = actor.pose.position.as_array()
    frame = actor.pose
    starts = [lane_id for lane_id in query_nearby_lanes(graph, pos, config.query_radius)
              if abs(lane_heading_offset(graph.lane(lane_id).centerline, pos, frame.heading))
              <= config.max_heading_offset]
    consumed = {lane_id: project_point(pos, graph.lane(lane_id).centerline)[0] for lane_id in starts}
    sequences = rollout_paths(graph, starts, config.horizon_length, consumed)
    if len(sequences) > config.max_map_paths:
        log.debug("capping %d lane sequences at %d", len(sequences), config.max_map_paths)
        sequences = sequences[: config.max_map_paths]

    goals = []
    for seq in sequences:
        world = concat_centerlines(graph, seq)
        s_actor, _ = project_point(pos, world)
        world = extend_straight(world, s_actor + config.horizon_length)
        trimmed = world.sub_path(s_actor - config.tail, s_actor + config.horizon_length)
        goals.append(GoalPath(Polyline(transform_to_frame(trimmed.points, frame)),
                              "map_based", tuple(seq), frame))
    goals.append(GoalPath(map_free_path(config), "map_free", (), frame))
    return goals


def circle_intersects(path: Polyline, radius: float) -> bool:
    """Whether the circle of ``radius`` about the origin crosses the path."""
    r = np.hypot(path.points[:, 0], path.points[:, 1])
    if np.any(np.isclose(r, radius)):
        return True
    inside = r < radius
    if inside.all():
        return False
    if inside.any():
        return True
    # every vertex outside: a segment may still dip inside the circle
    A, B = path.points[:-1], path.points[1:]
    D = B - A
    t = np.clip(-(A * D).sum(axis=1) / (D * D).sum(axis=1), 0.0, 1.0)
    closest = np.hypot(*(A + t[:, None] * D).T)
    return bool(np.any(closest <= radius))


__all__ = [
    "Sign", "Lane", "LaneGraph", "PathConfig", "GoalPath",
    "query_nearby_lanes", "rollout_paths", "build_goal_paths",
    "concat_centerlines", "extend_straight", "map_free_path", "circle_intersects",
]
