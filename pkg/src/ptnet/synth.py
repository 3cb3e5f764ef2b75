"""Synthetic lane graphs, oracle-driven actors and the scenario file format.

Ground truth is produced by the same Pure Pursuit tracker the model uses,
driven by a smooth acceleration profile from a simple speed controller, so
every ground-truth trajectory is kinematically feasible by construction.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .encoder import path_curvature, sign_distance
from .geometry import HISTORY_LEN, ActorState, Polyline, Pose, Trajectory, Vec2, heading_of, project_point
from .metrics import MetricConfig, violation_flags
from .paths import Lane, LaneGraph, PathConfig, Sign, build_goal_paths, concat_centerlines
from .pursuit import PathBatch, PursuitConfig, rollout_batch

log = logging.getLogger(__name__)

MAP_KINDS = ("straight", "curve", "fork", "merge", "grid")
FORMAT_VERSION = 1
SCENARIO_SUFFIX = ".jsonl"
MAX_ATTEMPTS = 20
LANE_SPACING = 2.0


class ParseError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


# ---------------------------------------------------------------------------
# map construction


def _fwd(h: float) -> np.ndarray:
    return np.array([math.sin(h), math.cos(h)])


def _right(h: float) -> np.ndarray:
    return np.array([math.cos(h), -math.sin(h)])


def straight_points(p0, heading: float, length: float) -> np.ndarray:
    n = max(1, math.ceil(length / LANE_SPACING))
    t = np.linspace(0.0, length, n + 1)
    return np.asarray(p0, dtype=float) + t[:, None] * _fwd(heading)


def arc_points(p0, heading: float, radius: float, turn: float) -> np.ndarray:
    """Circular arc from ``p0`` turning by ``turn`` radians (positive = right)."""
    sigma = 1.0 if turn >= 0 else -1.0
    centre = np.asarray(p0, dtype=float) + sigma * radius * _right(heading)
    n = max(2, math.ceil(radius * abs(turn) / LANE_SPACING))
    psi = np.linspace(0.0, turn, n + 1)
    rights = np.stack([np.cos(heading + psi), -np.sin(heading + psi)], axis=1)
    return centre - sigma * radius * rights


def _join(*parts: np.ndarray) -> np.ndarray:
    out = [parts[0]]
    for p in parts[1:]:
        out.append(p[1:])
    return np.vstack(out)


def _lane(lane_id: str, pts, limit: float, signs=()) -> Lane:
    return Lane(lane_id, Polyline(pts), float(limit), tuple(signs))


def _map_straight(rng):
    h = rng.uniform(-math.pi, math.pi)
    pts = straight_points((0.0, 0.0), h, rng.uniform(50, 150))
    return [_lane("L0", pts, rng.uniform(5, 20))], []


def _map_curve(rng):
    h = rng.uniform(-math.pi, math.pi)
    limit = rng.uniform(5, 20)
    a = straight_points((0.0, 0.0), h, rng.uniform(50, 150))
    turn = rng.uniform(math.radians(30), math.radians(90)) * rng.choice([-1.0, 1.0])
    b = arc_points(a[-1], h, rng.uniform(15, 100), turn)
    c = straight_points(b[-1], h + turn, rng.uniform(50, 150))
    lanes = [_lane("L0", a, limit), _lane("L1", b, limit), _lane("L2", c, limit)]
    return lanes, [("L0", "L1"), ("L1", "L2")]


def _map_fork(rng):
    h = rng.uniform(-math.pi, math.pi)
    limit = rng.uniform(5, 20)
    a = straight_points((0.0, 0.0), h, rng.uniform(50, 150))
    b = straight_points(a[-1], h, rng.uniform(50, 150))
    angle = rng.uniform(math.radians(15), math.radians(45)) * rng.choice([-1.0, 1.0])
    radius = rng.uniform(15, 100)
    arc = arc_points(a[-1], h, radius, angle)
    rest = max(rng.uniform(50, 150) - radius * abs(angle), LANE_SPACING)
    c = _join(arc, straight_points(arc[-1], h + angle, rest))
    lanes = [_lane("L0", a, limit), _lane("L1", b, limit), _lane("L2", c, limit)]
    return lanes, [("L0", "L1"), ("L0", "L2")]


def _map_merge(rng):
    h = rng.uniform(-math.pi, math.pi)
    limit = rng.uniform(5, 20)
    a = straight_points((0.0, 0.0), h, rng.uniform(50, 150))
    junction = a[-1]
    out = straight_points(junction, h, rng.uniform(50, 150))
    # the merging lane is built backwards from the junction and then reversed
    angle = rng.uniform(math.radians(15), math.radians(45)) * rng.choice([-1.0, 1.0])
    radius = rng.uniform(15, 100)
    arc = arc_points(junction, h + math.pi, radius, angle)
    rest = max(rng.uniform(50, 150) - radius * abs(angle), LANE_SPACING)
    back = _join(arc, straight_points(arc[-1], h + math.pi + angle, rest))
    lanes = [_lane("L0", a, limit), _lane("L1", back[::-1], limit), _lane("L2", out, limit)]
    return lanes, [("L0", "L2"), ("L1", "L2")]


def _map_grid(rng):
    w = rng.uniform(17.0, 25.0)
    limit = rng.uniform(5, 20)
    centre = np.zeros(2)
    all_way = rng.random() < 0.5
    stop_pair = int(rng.integers(0, 2))
    lanes, edges = [], []
    for k in range(4):
        h = k * math.pi / 2
        f, r = _fwd(h), _right(h)
        entry = centre - w * f + 2.0 * r
        length = rng.uniform(50, 100)
        in_pts = straight_points(entry - length * f, h, length)
        signs = (Sign(Vec2.of(entry), "stop"),) if all_way or k % 2 == stop_pair else ()
        lanes.append(_lane(f"in{k}", in_pts, limit, signs))
        lanes.append(_lane(f"c{k}s", straight_points(entry, h, 2.0 * w), limit))
        lanes.append(_lane(f"c{k}r", arc_points(entry, h, w - 2.0, math.pi / 2), limit))
        lanes.append(_lane(f"c{k}l", arc_points(entry, h, w + 2.0, -math.pi / 2), limit))
        edges += [(f"in{k}", f"c{k}s"), (f"in{k}", f"c{k}r"), (f"in{k}", f"c{k}l"),
                  (f"c{k}s", f"out{k}"), (f"c{k}r", f"out{(k + 1) % 4}"),
                  (f"c{k}l", f"out{(k + 3) % 4}")]
    for k in range(4):
        h = k * math.pi / 2
        start = centre + w * _fwd(h) + 2.0 * _right(h)
        lanes.append(_lane(f"out{k}", straight_points(start, h, rng.uniform(50, 100)), limit))
    return lanes, edges


_BUILDERS = {"straight": _map_straight, "curve": _map_curve, "fork": _map_fork,
             "merge": _map_merge, "grid": _map_grid}


def generate_map(seed, kind: str) -> LaneGraph:
    if kind not in _BUILDERS:
        raise ValueError(f"unknown map kind {kind!r}; choose from {', '.join(MAP_KINDS)}")
    rng = np.random.default_rng(seed)
    lanes, edges = _BUILDERS[kind](rng)
    return LaneGraph(tuple(lanes), tuple(edges))


# ---------------------------------------------------------------------------
# oracle driver


@dataclass(frozen=True)
class DriverConfig:
    """Speed controller that generates ground-truth acceleration profiles."""

    accel_bounds: tuple[float, float] = (-4.0, 4.0)
    max_jerk: float = 4.0
    knot_interval: float = 1.0
    gain: float = 0.8
    comfort_brake: float = 2.5
    comfort_accel: float = 2.0
    lateral_accel: float = 2.5
    stop_margin: float = 2.0
    knot_noise: float = 0.1
    max_lateral_offset: float = 0.5
    heading_noise: float = 0.02
    min_speed: float = 2.0


def _curve_speed(kmax: float, lateral_accel: float) -> float:
    return math.inf if kmax < 1e-9 else math.sqrt(lateral_accel / kmax)


def driver_profile(path: Polyline, s_start: float, v0: float, a0: float, stop_at: float | None,
                   rng: np.random.Generator, pursuit: PursuitConfig, cfg: DriverConfig) -> np.ndarray:
    """Piecewise-linear acceleration profile (T values) for a cruise-at-v0 driver.

    The driver holds its initial speed, slows for curvature ahead and stops
    before a sign. Knots are spaced ``knot_interval`` apart; consecutive knots
    differ by at most ``max_jerk * knot_interval``.
    """
    lo, hi = cfg.accel_bounds
    duration = pursuit.dt * pursuit.horizon
    n_knots = int(math.ceil(duration / cfg.knot_interval)) + 1
    ks = np.linspace(0.0, path.length, max(2, int(path.length / 1.0)))
    kappa = np.abs(path_curvature(path, ks))
    knots = [float(np.clip(a0, lo, hi))]
    s, v = s_start, v0
    for _ in range(1, n_knots):
        a_prev = knots[-1]
        # advance one interval assuming the interval's mean acceleration
        a_mid = a_prev
        dtk = cfg.knot_interval
        v_next = max(0.0, v + a_mid * dtk)
        s += 0.5 * (v + v_next) * dtk
        v = v_next
        window = (ks >= s) & (ks <= s + max(3.0 * v, 10.0))
        v_des = min(v0, _curve_speed(float(kappa[window].max()) if window.any() else 0.0,
                                     cfg.lateral_accel))
        if stop_at is not None:
            gap = stop_at - cfg.stop_margin - s
            v_des = min(v_des, math.sqrt(2.0 * cfg.comfort_brake * max(gap, 0.0)))
        a_des = float(np.clip(cfg.gain * (v_des - v), -cfg.comfort_brake * 1.6, cfg.comfort_accel))
        step = cfg.max_jerk * dtk
        a_new = a_prev + float(np.clip(a_des - a_prev + rng.normal(0.0, cfg.knot_noise), -step, step))
        knots.append(float(np.clip(a_new, lo, hi)))
    t_knots = np.arange(n_knots) * cfg.knot_interval
    t = np.arange(pursuit.horizon) * pursuit.dt
    return np.interp(t, t_knots, np.asarray(knots))


def _backfill_history(graph: LaneGraph, lane_id: str, s0: float, lateral: float,
                      speed: float, accel: float, dt: float) -> np.ndarray:
    """Past positions from reversing constant-acceleration motion along the lane."""
    chain = [lane_id]
    back = 0.0
    while back < 60.0:
        preds = [p for p in graph.predecessors(chain[0]) if p not in chain]
        if not preds:
            break
        chain.insert(0, preds[0])
        back += graph.lane(preds[0]).centerline.length
    line = concat_centerlines(graph, chain)
    s_now = (line.length - graph.lane(lane_id).centerline.length) + s0
    tau = dt * np.arange(HISTORY_LEN, 0, -1)
    dist = speed * tau - 0.5 * accel * tau * tau
    if accel > 0:
        dist = np.where(speed - accel * tau < 0, speed * speed / (2.0 * accel), dist)
    s = s_now - np.maximum(dist, 0.0)
    pts = np.empty((HISTORY_LEN, 2))
    first_dir = line.points[1] - line.points[0]
    first_dir = first_dir / np.hypot(*first_dir)
    for i, si in enumerate(s):
        if si < 0:
            p = line.points[0] + si * first_dir
            d = first_dir
        else:
            p = line.point_at(si)
            d = line.point_at(min(si + 0.5, line.length)) - line.point_at(max(si - 0.5, 0.0))
            d = d / np.hypot(*d)
        pts[i] = p + lateral * np.array([d[1], -d[0]])
    return pts


@dataclass(frozen=True)
class _Proposal:
    lane_id: str
    s0: float
    lateral: float
    position: np.ndarray
    heading: float
    route: Polyline
    speed: float
    accel0: float
    profile: np.ndarray


@dataclass
class _ActorJob:
    """Actors still to be placed on one map, with their own random stream."""

    graph: LaneGraph
    rng: np.random.Generator
    slots: list
    attempts: list

    @property
    def open_slots(self) -> list[int]:
        return [k for k, r in enumerate(self.slots) if r is None and self.attempts[k] < MAX_ATTEMPTS]


def _propose(graph, rng, pursuit, paths, driver) -> _Proposal | None:
    lengths = np.array([lane.centerline.length for lane in graph.lanes])
    lane = graph.lanes[int(rng.choice(len(graph.lanes), p=lengths / lengths.sum()))]
    line = lane.centerline
    s0 = rng.uniform(0.0, line.length)
    ahead = line.point_at(min(s0 + 0.5, line.length)) - line.point_at(max(s0 - 0.5, 0.0))
    tangent = heading_of(ahead)
    lateral = rng.uniform(-driver.max_lateral_offset, driver.max_lateral_offset)
    position = line.point_at(s0) + lateral * _right(tangent)
    heading = tangent + float(np.clip(rng.normal(0.0, driver.heading_noise), -0.05, 0.05))
    probe = ActorState.create(position, heading, 0.0, 0.0)
    goals = [g for g in build_goal_paths(graph, probe, paths) if g.lane_ids[:1] == (lane.id,)]
    if not goals:
        return None
    goal = goals[int(rng.integers(len(goals)))]
    route = goal.path

    s_actor, _ = project_point((0.0, 0.0), route)
    stop = sign_distance(goal, graph, math.inf)
    stop_at = None if not math.isfinite(stop) else s_actor + stop
    ks = np.linspace(s_actor, min(s_actor + 30.0, route.length), 16)
    kmax = float(np.abs(path_curvature(route, ks)).max())
    v0 = rng.uniform(driver.min_speed, lane.speed_limit)
    v0 = min(v0, _curve_speed(kmax, driver.lateral_accel))
    if stop_at is not None:
        v0 = min(v0, math.sqrt(2.0 * driver.comfort_brake * max(stop_at - driver.stop_margin - s_actor, 0.0)))
    a0 = rng.uniform(-1.0, 1.0)
    if v0 < 0.5:
        v0, a0 = 0.0, 0.0
    profile = driver_profile(route, s_actor, v0, a0, stop_at, rng, pursuit, driver)
    return _Proposal(lane.id, s0, lateral, position, heading, route, v0, a0, profile)


def _drive(jobs: Sequence[_ActorJob], pursuit: PursuitConfig, paths: PathConfig,
           driver: DriverConfig, metric: MetricConfig) -> None:
    """Fill every job's slots, rolling all pending proposals out as one batch per round."""
    while True:
        pending = []
        for job in jobs:
            for k in job.open_slots:
                job.attempts[k] += 1
                prop = _propose(job.graph, job.rng, pursuit, paths, driver)
                if prop is not None:
                    pending.append((job, k, prop))
        if not pending:
            if any(job.open_slots for job in jobs):
                continue
            break
        batch = PathBatch([p.route for _, _, p in pending])
        res = rollout_batch(batch, np.stack([p.profile for _, _, p in pending]), pursuit,
                            np.array([p.speed for _, _, p in pending]))
        for (job, k, p), local in zip(pending, res.trajectories()):
            history = _backfill_history(job.graph, p.lane_id, p.s0, p.lateral, p.speed, p.accel0, pursuit.dt)
            actor = ActorState.create(p.position, p.heading, p.speed, p.accel0, history)
            gt = local.transformed(from_frame=actor.pose)
            if not any(violation_flags(gt, metric).values()):
                job.slots[k] = (actor, gt)
    for job in jobs:
        for k, r in enumerate(job.slots):
            if r is None:
                log.warning("skipping actor %d: no feasible placement in %d attempts", k, MAX_ATTEMPTS)


def generate_actors(graph: LaneGraph, seed, n: int, pursuit: PursuitConfig = PursuitConfig(),
                    paths: PathConfig = PathConfig(), driver: DriverConfig = DriverConfig(),
                    metric: MetricConfig = MetricConfig()) -> list[tuple[ActorState, Trajectory]]:
    """Place ``n`` actors and drive each along a random route with the oracle driver.

    A placement whose ground truth fails any feasibility metric is retried,
    up to ``MAX_ATTEMPTS`` times per actor.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if not graph.lanes:
        raise ValueError("cannot place actors on an empty lane graph")
    job = _ActorJob(graph, np.random.default_rng(seed), [None] * n, [0] * n)
    _drive([job], pursuit, paths, driver, metric)
    return [r for r in job.slots if r is not None]


# ---------------------------------------------------------------------------
# scenarios


@dataclass(frozen=True)
class Scenario:
    id: str
    lane_graph: LaneGraph
    actors: tuple[ActorState, ...]
    ground_truth: tuple[Trajectory, ...]
    kind: str = ""

    def __post_init__(self):
        if len(self.actors) != len(self.ground_truth):
            raise ValueError("one ground-truth trajectory per actor is required")


@dataclass
class ScenarioSet:
    scenarios: list[Scenario]
    split: str = "train"
    seed: int = 0

    def __len__(self) -> int:
        return len(self.scenarios)

    def __iter__(self):
        return iter(self.scenarios)


def scenario_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed), int(index)])


def generate_scenarios(seed: int, count: int, kinds: Sequence[str] = MAP_KINDS,
                       actors: tuple[int, int] = (1, 2), pursuit: PursuitConfig = PursuitConfig(),
                       paths: PathConfig = PathConfig(), driver: DriverConfig = DriverConfig(),
                       metric: MetricConfig = MetricConfig()) -> list[Scenario]:
    """``count`` scenarios cycling through ``kinds``, each with its own derived seed.

    Each scenario equals what ``generate_map`` and ``generate_actors`` give
    for its derived seeds; the rollouts of all scenarios are just batched.
    """
    for k in kinds:
        if k not in _BUILDERS:
            raise ValueError(f"unknown map kind {k!r}")
    jobs, meta = [], []
    for i in range(count):
        kind = kinds[i % len(kinds)]
        map_seq, actor_seq, count_seq = scenario_seed(seed, i).spawn(3)
        graph = generate_map(map_seq, kind)
        n = int(np.random.default_rng(count_seq).integers(actors[0], actors[1] + 1))
        jobs.append(_ActorJob(graph, np.random.default_rng(actor_seq), [None] * n, [0] * n))
        meta.append((i, kind))
    _drive(jobs, pursuit, paths, driver, metric)
    out = []
    for job, (i, kind) in zip(jobs, meta):
        pairs = [r for r in job.slots if r is not None]
        if not pairs:
            log.warning("scenario %d has no feasible actors; skipped", i)
            continue
        out.append(Scenario(f"{kind}-{seed}-{i:05d}", job.graph, tuple(a for a, _ in pairs),
                            tuple(t for _, t in pairs), kind))
    return out


def id_hash(key: str) -> float:
    """Stable hash of a string onto [0, 1)."""
    digest = hashlib.sha256(key.encode()).digest()
    return int.from_bytes(digest[:8], "big") / 2.0 ** 64


def split_by_hash(scenarios: Sequence[Scenario], ratios=(0.7, 0.1, 0.2)) -> dict[str, list[Scenario]]:
    """Deterministic train/val/test split: rank ids by hash, then cut by ratio."""
    if not math.isclose(sum(ratios), 1.0) or min(ratios) < 0:
        raise ValueError("split ratios must be non-negative and sum to 1")
    ranked = sorted(scenarios, key=lambda s: (id_hash(s.id), s.id))
    n = len(ranked)
    c1 = int(round(ratios[0] * n))
    c2 = int(round((ratios[0] + ratios[1]) * n))
    return {"train": ranked[:c1], "val": ranked[c1:c2], "test": ranked[c2:]}


def subsample(scenarios: Sequence[Scenario], fraction: float, seed: int) -> list[Scenario]:
    """The first ``fraction`` of scenarios ranked by a seeded id hash.

    For a fixed seed the subsets are nested as the fraction grows.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    ranked = sorted(scenarios, key=lambda s: (id_hash(f"{seed}:{s.id}"), s.id))
    return ranked[: max(1, int(math.ceil(fraction * len(ranked))))]


# ---------------------------------------------------------------------------
# file format


def _pts(a) -> list:
    return [[float(x), float(y)] for x, y in np.asarray(a)]


def trajectory_to_dict(t: Trajectory) -> dict:
    return {"dt": t.dt, "positions": _pts(t.positions),
            "headings": [float(h) for h in t.headings],
            "speeds": [float(v) for v in t.speeds], "heading_source": t.heading_source}


def trajectory_from_dict(d: dict) -> Trajectory:
    if "headings" not in d or "speeds" not in d:
        return Trajectory.from_positions(float(d["dt"]), d["positions"])
    return Trajectory(float(d["dt"]), np.array(d["positions"], dtype=float).reshape(-1, 2),
                      d["headings"], d["speeds"], d.get("heading_source", "bbox"))


def scenario_to_dict(s: Scenario) -> dict:
    g = s.lane_graph
    return {
        "format_version": FORMAT_VERSION,
        "id": s.id,
        "kind": s.kind,
        "lanes": [{"id": lane.id, "points": _pts(lane.centerline.points),
                   "speed_limit": lane.speed_limit,
                   "signs": [{"position": [sg.position.x, sg.position.y], "kind": sg.kind}
                             for sg in lane.signs]} for lane in g.lanes],
        "edges": [list(e) for e in g.edges],
        "actors": [{"position": [a.pose.position.x, a.pose.position.y], "heading": a.pose.heading,
                    "speed": a.speed, "acceleration": a.acceleration, "history": _pts(a.history)}
                   for a in s.actors],
        "ground_truth": [trajectory_to_dict(t) for t in s.ground_truth],
    }


_SCENARIO_KEYS = {"format_version", "id", "kind", "lanes", "edges", "actors", "ground_truth"}


def scenario_from_dict(d: dict) -> Scenario:
    unknown = set(d) - _SCENARIO_KEYS
    if unknown:
        log.warning("ignoring unknown scenario fields: %s", ", ".join(sorted(unknown)))
    lanes = tuple(Lane(l["id"], Polyline(l["points"]), float(l["speed_limit"]),
                       tuple(Sign(Vec2.of(sg["position"]), sg.get("kind", "stop")) for sg in l.get("signs", ())))
                  for l in d["lanes"])
    graph = LaneGraph(lanes, tuple((a, b) for a, b in d["edges"]))
    actors = tuple(ActorState(Pose(Vec2.of(a["position"]), float(a["heading"])), float(a["speed"]),
                              float(a["acceleration"]), np.array(a["history"], dtype=float))
                   for a in d["actors"])
    gts = tuple(trajectory_from_dict(t) for t in d["ground_truth"])
    return Scenario(str(d["id"]), graph, actors, gts, str(d.get("kind", "")))


def _read_jsonl(path, parse) -> list:
    out = []
    with open(path) as fh:
        for no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                if not isinstance(doc, dict):
                    raise ValueError("expected an object")
                version = doc.get("format_version")
                if version != FORMAT_VERSION:
                    raise ValueError(f"unsupported format_version {version!r}")
                out.append(parse(doc))
            except (ValueError, KeyError, TypeError, IndexError) as exc:
                raise ParseError(no, str(exc)) from exc
    return out


def write_scenarios(path, scenarios: Iterable[Scenario]) -> None:
    with open(path, "w") as fh:
        for s in scenarios:
            fh.write(json.dumps(scenario_to_dict(s)) + "\n")


def read_scenarios(path) -> list[Scenario]:
    return _read_jsonl(path, scenario_from_dict)


def write_trajectories(path, trajectories: Iterable[Trajectory], ids: Iterable[str] | None = None) -> None:
    ids = iter(ids) if ids is not None else None
    with open(path, "w") as fh:
        for i, t in enumerate(trajectories):
            doc = {"format_version": FORMAT_VERSION, "id": next(ids) if ids else str(i)}
            doc.update(trajectory_to_dict(t))
            fh.write(json.dumps(doc) + "\n")


def read_trajectories(path) -> list[Trajectory]:
    return _read_jsonl(path, trajectory_from_dict)
