"""Feasibility and trajectory-error metrics.

Feasibility metrics decompose finite-difference motion along two frames:
the bounding-box frame (longitudinal/lateral, from the recorded heading) and
the motion frame (traversal/centripetal, from the direction of travel).
A trajectory violates a metric if any evaluated step does; skipped steps
(near-stationary motion, where heading is undefined) never violate.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import DegeneratePath, Polyline, Trajectory, normalize_angle, project_points, resample_polyline

STATIONARY_EPS = 0.01
SPEED_EPS = 0.01
PATH_RESOLUTION = 0.1
# Thresholds are compared with this slack so float rounding in finite
# differences cannot flip a trajectory that sits exactly on a bound.
FEASIBILITY_ATOL = 1e-6

METRIC_NAMES = (
    "curvature",
    "lateral_speed",
    "centripetal_accel",
    "min_traversal_accel",
    "max_traversal_accel",
)
METRIC_TITLES = {
    "curvature": "Curvature",
    "lateral_speed": "Lateral Speed",
    "centripetal_accel": "Centripetal Accel",
    "min_traversal_accel": "Min Traversal Accel",
    "max_traversal_accel": "Max Traversal Accel",
}


@dataclass(frozen=True)
class MetricConfig:
    max_curvature: float = 0.3
    max_lateral_speed: float = 1.0
    max_centripetal_accel: float = 10.0
    traversal_accel_bounds: tuple[float, float] = (-12.0, 8.0)

    def __post_init__(self):
        lo, hi = self.traversal_accel_bounds
        vals = (self.max_curvature, self.max_lateral_speed, self.max_centripetal_accel, lo, hi)
        if not all(math.isfinite(v) for v in vals) or not lo < hi:
            raise ValueError(f"invalid metric bounds {self}")
        if min(self.max_curvature, self.max_lateral_speed, self.max_centripetal_accel) <= 0:
            raise ValueError("metric limits must be positive")

    def threshold(self, metric: str) -> float:
        return {
            "curvature": self.max_curvature,
            "lateral_speed": self.max_lateral_speed,
            "centripetal_accel": self.max_centripetal_accel,
            "min_traversal_accel": self.traversal_accel_bounds[0],
            "max_traversal_accel": self.traversal_accel_bounds[1],
        }[metric]


def chord_curvature(turn_angle, chord):
    """Curvature of the circle tangent to a heading and through a chord.

    ``turn_angle`` is the angle between the tangent and the chord.
    """
    return 2.0 * np.sin(turn_angle) / chord


def _velocities(traj: Trajectory) -> np.ndarray:
    return np.diff(traj.positions, axis=0) / traj.dt


def segment_curvature(traj: Trajectory, eps: float = STATIONARY_EPS) -> np.ndarray:
    """Signed curvature of each waypoint-to-waypoint segment.

    On a circular arc the tangent-chord angle is half the heading change, so
    each segment is scored as ``chord_curvature(dh / 2, dp)``. Segments shorter
    than ``eps`` metres are NaN (skipped).
    """
    if len(traj) < 2:
        return np.zeros(0)
    dp = np.hypot(*np.diff(traj.positions, axis=0).T)
    dh = normalize_angle(np.diff(traj.headings))
    with np.errstate(divide="ignore", invalid="ignore"):
        k = chord_curvature(0.5 * dh, dp)
    return np.where(dp < eps, np.nan, k)


def lateral_longitudinal_speed(traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """Finite-difference velocity split onto the bounding-box heading at each step.

    Returns ``(longitudinal, lateral)``; lateral is positive to the right.
    """
    if len(traj) < 2:
        return np.zeros(0), np.zeros(0)
    v = _velocities(traj)
    h = traj.headings[:-1]
    lon = v[:, 0] * np.sin(h) + v[:, 1] * np.cos(h)
    lat = v[:, 0] * np.cos(h) - v[:, 1] * np.sin(h)
    return lon, lat


def traversal_centripetal_accel(traj: Trajectory, eps: float = SPEED_EPS) -> tuple[np.ndarray, np.ndarray]:
    """Finite-difference acceleration split onto the motion heading.

    The acceleration between consecutive velocity samples lives at their
    shared waypoint, so it is projected on the motion tangent there: the
    bisector of the two adjacent travel directions. Returns
    ``(traversal, centripetal)`` with NaN where either speed is below ``eps``.
    """
    if len(traj) < 3:
        return np.zeros(0), np.zeros(0)
    v = _velocities(traj)
    speed = np.hypot(v[:, 0], v[:, 1])
    acc = np.diff(v, axis=0) / traj.dt
    moving = (speed[:-1] >= eps) & (speed[1:] >= eps)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = v / speed[:, None]
        b = u[:-1] + u[1:]
        nb = np.hypot(b[:, 0], b[:, 1])
        b = np.where((nb > 1e-12)[:, None], b / nb[:, None], u[:-1])
    trav = acc[:, 0] * b[:, 0] + acc[:, 1] * b[:, 1]
    cent = acc[:, 1] * b[:, 0] - acc[:, 0] * b[:, 1]
    return np.where(moving, trav, np.nan), np.where(moving, cent, np.nan)


def violation_flags(traj: Trajectory, config: MetricConfig = MetricConfig()) -> dict[str, bool]:
    tol = FEASIBILITY_ATOL
    kappa = segment_curvature(traj)
    _, lat = lateral_longitudinal_speed(traj)
    trav, cent = traversal_centripetal_accel(traj)
    lo, hi = config.traversal_accel_bounds
    with np.errstate(invalid="ignore"):
        return {
            "curvature": bool(np.any(np.abs(kappa) > config.max_curvature + tol)),
            "lateral_speed": bool(np.any(np.abs(lat) > config.max_lateral_speed + tol)),
            "centripetal_accel": bool(np.any(np.abs(cent) > config.max_centripetal_accel + tol)),
            "min_traversal_accel": bool(np.any(trav < lo - tol)),
            "max_traversal_accel": bool(np.any(trav > hi + tol)),
        }


@dataclass
class FeasibilityReport:
    flags: dict[str, np.ndarray]
    config: MetricConfig = field(default_factory=MetricConfig)
    motion_heading: bool = False

    @property
    def num_trajectories(self) -> int:
        return len(next(iter(self.flags.values()))) if self.flags else 0

    def count(self, metric: str) -> int:
        return int(np.sum(self.flags[metric]))

    def fraction(self, metric: str) -> float:
        n = self.num_trajectories
        return self.count(metric) / n if n else 0.0

    @property
    def fractions(self) -> dict[str, float]:
        return {m: self.fraction(m) for m in METRIC_NAMES}

    def rows(self) -> list[dict]:
        return [{"metric": m, "threshold": self.config.threshold(m),
                 "violation_fraction": self.fraction(m), "count": self.count(m)}
                for m in METRIC_NAMES]

    def summary(self) -> dict:
        return {
            "num_trajectories": self.num_trajectories,
            "motion_heading_substituted": self.motion_heading,
            "metrics": {r["metric"]: {k: r[k] for k in ("threshold", "violation_fraction", "count")}
                        for r in self.rows()},
        }


def feasibility_report(trajectories: Sequence[Trajectory],
                       config: MetricConfig = MetricConfig()) -> FeasibilityReport:
    trajectories = list(trajectories)
    dts = {t.dt for t in trajectories}
    if len(dts) > 1:
        raise ValueError(f"trajectories use different dt values: {sorted(dts)}")
    per = [violation_flags(t, config) for t in trajectories]
    flags = {m: np.array([p[m] for p in per], dtype=bool) for m in METRIC_NAMES}
    motion = any(t.heading_source == "motion" for t in trajectories)
    return FeasibilityReport(flags, config, motion)


CSV_COLUMNS = ("metric", "threshold", "violation_fraction", "count")


def write_report_csv(report: FeasibilityReport, path) -> None:
    """One row per metric, in table order, named by its column title."""
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in report.rows():
            w.writerow({**row, "metric": METRIC_TITLES[row["metric"]]})


def write_report_json(report: FeasibilityReport, path, extra: dict | None = None) -> None:
    doc = report.summary()
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


@dataclass(frozen=True)
class ErrorMetrics:
    avg_de: float
    avg_ate: float
    avg_cte: float
    de: np.ndarray
    ate: np.ndarray
    cte: np.ndarray
    degenerate: bool = False


def error_metrics(predicted: Trajectory, ground_truth: Trajectory,
                  resolution: float = PATH_RESOLUTION) -> ErrorMetrics:
    """Displacement error split into along-track and cross-track parts.

    Both trajectories are projected onto the ground truth resampled as a path;
    the end segments are extended as rays so lag before the start or overshoot
    past the end still shows up as along-track error.
    """
    if len(predicted) != len(ground_truth) or not math.isclose(predicted.dt, ground_truth.dt):
        raise ValueError("trajectories differ in length or dt")
    pp, gp = predicted.positions, ground_truth.positions
    de = np.hypot(*(pp - gp).T)
    try:
        gt_path = Polyline(gp)
        if gt_path.length < resolution:
            raise DegeneratePath("ground truth barely moves")
    except DegeneratePath:
        return ErrorMetrics(float(de.mean()), float(de.mean()), 0.0, de, de.copy(), np.zeros_like(de), True)
    rho = resample_polyline(gt_path, resolution)
    s_gt, _ = project_points(gp, rho, extend=True)
    s_pred, d_pred = project_points(pp, rho, extend=True)
    ate = np.abs(s_pred - s_gt)
    cte = np.abs(d_pred)
    return ErrorMetrics(float(de.mean()), float(ate.mean()), float(cte.mean()), de, ate, cte)
