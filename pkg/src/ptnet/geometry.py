"""Geometric and kinematic value types shared by every module.

Frame convention: a pose heading is a compass-style bearing, measured
clockwise from +y. In an actor frame the actor sits at the origin facing
+y and +x points to its right, so the Pure Pursuit lateral offset of a goal
point is simply its x coordinate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi
DUPLICATE_TOL = 1e-9
HISTORY_LEN = 10


class DegeneratePath(ValueError):
    """Raised when a polyline collapses to fewer than two distinct points."""


def normalize_angle(theta):
    """Map an angle (scalar or array) into [-pi, pi).

    Values already in range are returned untouched so the map is exactly
    idempotent.
    """
    if np.ndim(theta) == 0:
        t = float(theta)
        if -math.pi <= t < math.pi:
            return t
        r = math.fmod(t + math.pi, TWO_PI)
        if r < 0.0:
            r += TWO_PI
        r -= math.pi
        if r >= math.pi:
            r -= TWO_PI
        return r
    t = np.asarray(theta, dtype=float)
    inside = (t >= -math.pi) & (t < math.pi)
    r = np.mod(t + math.pi, TWO_PI) - math.pi
    r = np.where(r >= math.pi, r - TWO_PI, r)
    return np.where(inside, t, r)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Vec2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite Vec2 ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @classmethod
    def of(cls, p) -> "Vec2":
        return cls(float(p[0]), float(p[1]))


@dataclass(frozen=True)
class Pose:
    position: Vec2
    heading: float

    def __post_init__(self):
        object.__setattr__(self, "heading", normalize_angle(self.heading))

    @property
    def forward(self) -> np.ndarray:
        return np.array([math.sin(self.heading), math.cos(self.heading)])

    @property
    def right(self) -> np.ndarray:
        return np.array([math.cos(self.heading), -math.sin(self.heading)])


def heading_of(direction) -> float:
    """Compass heading of a direction vector (clockwise from +y)."""
    return normalize_angle(math.atan2(direction[0], direction[1]))


def transform_to_frame(p, frame: Pose) -> np.ndarray:
    """Express world point(s) ``p`` (shape (2,) or (n, 2)) in ``frame``."""
    p = np.asarray(p, dtype=float)
    d = p - frame.position.as_array()
    c, s = math.cos(frame.heading), math.sin(frame.heading)
    x = d[..., 0] * c - d[..., 1] * s
    y = d[..., 0] * s + d[..., 1] * c
    return np.stack([x, y], axis=-1)


def transform_from_frame(p, frame: Pose) -> np.ndarray:
    """Inverse of :func:`transform_to_frame`."""
    p = np.asarray(p, dtype=float)
    c, s = math.cos(frame.heading), math.sin(frame.heading)
    x = p[..., 0] * c + p[..., 1] * s
    y = -p[..., 0] * s + p[..., 1] * c
    o = frame.position.as_array()
    return np.stack([x + o[0], y + o[1]], axis=-1)


@dataclass(frozen=True)
class ActorState:
    pose: Pose
    speed: float
    acceleration: float
    history: np.ndarray  # (H, 2) world positions, oldest first

    def __post_init__(self):
        if self.speed < 0 or not math.isfinite(self.speed):
            raise ValueError(f"invalid speed {self.speed}")
        h = np.asarray(self.history, dtype=float).reshape(-1, 2)
        if len(h) != HISTORY_LEN:
            raise ValueError(f"history must hold {HISTORY_LEN} positions, got {len(h)}")
        object.__setattr__(self, "history", _frozen(h))

    @classmethod
    def create(cls, position, heading: float, speed: float, acceleration: float,
               history: Sequence = ()) -> "ActorState":
        """Build a state, padding a short history by repeating its oldest entry."""
        h = np.asarray(history, dtype=float).reshape(-1, 2)
        if len(h) == 0:
            h = np.asarray(position, dtype=float).reshape(1, 2)
        if len(h) > HISTORY_LEN:
            h = h[-HISTORY_LEN:]
        if len(h) < HISTORY_LEN:
            pad = np.repeat(h[:1], HISTORY_LEN - len(h), axis=0)
            h = np.concatenate([pad, h])
        return cls(Pose(Vec2.of(position), heading), float(speed), float(acceleration), h)


def _dedupe(points: np.ndarray) -> np.ndarray:
    keep = [0]
    for k in range(1, len(points)):
        if np.hypot(*(points[k] - points[keep[-1]])) > DUPLICATE_TOL:
            keep.append(k)
    return points[keep]


@dataclass(frozen=True)
class Polyline:
    points: np.ndarray
    cumulative_arclength: np.ndarray = field(init=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(pts)):
            raise ValueError("polyline points must be finite")
        pts = _dedupe(pts)
        if len(pts) < 2:
            raise DegeneratePath("polyline needs at least two distinct points")
        seg = np.hypot(*np.diff(pts, axis=0).T)
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "cumulative_arclength",
                           _frozen(np.concatenate([[0.0], np.cumsum(seg)])))

    @property
    def length(self) -> float:
        return float(self.cumulative_arclength[-1])

    def __len__(self) -> int:
        return len(self.points)

    def point_at(self, s) -> np.ndarray:
        """Interpolated point(s) at arc length ``s`` (clamped to the path)."""
        s = np.clip(s, 0.0, self.length)
        cum = self.cumulative_arclength
        return np.stack([np.interp(s, cum, self.points[:, 0]),
                         np.interp(s, cum, self.points[:, 1])], axis=-1)

    def sub_path(self, s0: float, s1: float) -> "Polyline":
        """The portion of the path between arc lengths ``s0`` and ``s1``."""
        s0 = max(0.0, s0)
        s1 = min(self.length, s1)
        cum = self.cumulative_arclength
        inner = self.points[(cum > s0) & (cum < s1)]
        return Polyline(np.vstack([self.point_at(s0), inner, self.point_at(s1)]))


def resample_polyline(p: Polyline, resolution: float) -> Polyline:
    """Resample at a fixed arc-length spacing, keeping the final point."""
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    total = p.length
    n = int(math.floor(total / resolution + 1e-9))
    s = np.arange(n + 1) * resolution
    if total - s[-1] > DUPLICATE_TOL:
        s = np.append(s, total)
    else:
        s[-1] = total
    return Polyline(p.point_at(s))


def project_points(points, path: Polyline, extend: bool = False):
    """Project points onto ``path``.

    Returns ``(arclength, lateral_offset)`` arrays. The offset is positive on
    the left of the direction of travel. Ties go to the smaller arc length.
    Points past either end clamp to that end; with ``extend`` the end segments
    are treated as infinite rays instead, so arc length keeps growing (or goes
    negative) beyond the path.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    A = path.points[:-1]
    D = path.points[1:] - A
    seg_len = np.diff(path.cumulative_arclength)
    a = seg_len ** 2
    W = P[:, None, :] - A[None, :, :]
    t_raw = (W[..., 0] * D[:, 0] + W[..., 1] * D[:, 1]) / a
    t = np.clip(t_raw, 0.0, 1.0)
    foot = A[None] + t[..., None] * D[None]
    dist2 = np.sum((P[:, None, :] - foot) ** 2, axis=-1)
    k = np.argmin(dist2, axis=1)
    rows = np.arange(len(P))
    tk = t[rows, k]
    Dk = D[k] / seg_len[k][:, None]
    rel = P - foot[rows, k]
    cross = Dk[:, 0] * rel[:, 1] - Dk[:, 1] * rel[:, 0]
    dist = np.sqrt(dist2[rows, k])
    s = path.cumulative_arclength[k] + tk * seg_len[k]

    at_start = (k == 0) & (t_raw[rows, k] < 0.0)
    at_end = (k == len(A) - 1) & (t_raw[rows, k] > 1.0)
    past_end = at_start | at_end
    lateral = np.where(past_end, cross, np.where(cross < 0, -dist, dist))
    if extend:
        along = rel[:, 0] * Dk[:, 0] + rel[:, 1] * Dk[:, 1]
        s = np.where(past_end, s + along, s)
    return s, lateral


def project_point(p, path: Polyline, extend: bool = False) -> tuple[float, float]:
    s, d = project_points(np.asarray(p, dtype=float)[None], path, extend)
    return float(s[0]), float(d[0])


@dataclass(frozen=True)
class Trajectory:
    """Uniformly timestamped states; the first state is one ``dt`` after the present.

    ``heading_source`` is "bbox" when headings were observed or produced by a
    tracker and "motion" when they were reconstructed from positions.
    """

    dt: float
    positions: np.ndarray
    headings: np.ndarray
    speeds: np.ndarray
    heading_source: str = "bbox"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        if len(pos) < 1:
            raise ValueError("trajectory needs at least one state")
        hd = normalize_angle(np.asarray(self.headings, dtype=float).reshape(-1))
        sp = np.asarray(self.speeds, dtype=float).reshape(-1)
        if not (len(hd) == len(sp) == len(pos)):
            raise ValueError("positions, headings and speeds differ in length")
        object.__setattr__(self, "positions", _frozen(pos))
        object.__setattr__(self, "headings", _frozen(hd))
        object.__setattr__(self, "speeds", _frozen(sp))

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def states(self) -> Iterator[tuple[Vec2, float, float]]:
        for p, h, v in zip(self.positions, self.headings, self.speeds):
            yield Vec2.of(p), float(h), float(v)

    @classmethod
    def from_positions(cls, dt: float, positions) -> "Trajectory":
        """Build a trajectory from positions only.

        Heading and speed at step t come from the forward displacement to
        t + 1 (motion heading); the last step repeats its predecessor.
        """
        pos = np.asarray(positions, dtype=float).reshape(-1, 2)
        if len(pos) > 1:
            d = np.diff(pos, axis=0)
            d = np.vstack([d, d[-1:]])
        else:
            d = np.zeros((1, 2))
        speeds = np.hypot(d[:, 0], d[:, 1]) / dt
        headings = np.arctan2(d[:, 0], d[:, 1])
        # carry the last valid heading through stationary steps
        for i in range(len(headings)):
            if speeds[i] * dt <= 1e-9:
                headings[i] = headings[i - 1] if i > 0 else 0.0
        return cls(dt, pos, headings, speeds, heading_source="motion")

    def transformed(self, to_frame: Pose | None = None, from_frame: Pose | None = None) -> "Trajectory":
        """Rigidly move the trajectory into or out of a frame."""
        if to_frame is not None:
            pos = transform_to_frame(self.positions, to_frame)
            hd = self.headings - to_frame.heading
        else:
            pos = transform_from_frame(self.positions, from_frame)
            hd = self.headings + from_frame.heading
        return Trajectory(self.dt, pos, hd, self.speeds, self.heading_source)
