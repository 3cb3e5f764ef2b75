import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ptnet.geometry import Trajectory
from ptnet.metrics import (CSV_COLUMNS, METRIC_NAMES, MetricConfig, error_metrics, feasibility_report,
                           lateral_longitudinal_speed, segment_curvature, traversal_centripetal_accel,
                           violation_flags, write_report_csv, write_report_json)


def straight(speed=10.0, n=60, dt=0.1, offset=(0.0, 0.0)):
    y = speed * dt * np.arange(1, n + 1)
    pos = np.column_stack([np.full(n, offset[0]), y + offset[1]])
    return Trajectory(dt, pos, np.zeros(n), np.full(n, speed))


def circle(speed, radius, n=60, dt=0.1):
    phi = speed * dt * np.arange(1, n + 1) / radius
    pos = np.column_stack([radius - radius * np.cos(phi), radius * np.sin(phi)])
    return Trajectory(dt, pos, phi, np.full(n, speed))


def test_thresholds_from_feasibility_section():
    cfg = MetricConfig()
    assert cfg.max_curvature == 0.3
    assert cfg.max_lateral_speed == 1.0
    assert cfg.max_centripetal_accel == 10.0
    assert cfg.traversal_accel_bounds == (-12.0, 8.0)


def test_right_angle_heading_jump_violates_curvature():
    t = Trajectory(0.1, [[0, 0], [0, 1]], [0.0, math.pi / 2], [10.0, 10.0])
    k = segment_curvature(t)
    assert k[0] == pytest.approx(2 * math.sin(math.pi / 4))
    assert violation_flags(t)["curvature"]


def test_small_heading_change_is_fine():
    t = Trajectory(0.1, [[0, 0], [0, 1]], [0.0, 0.05], [10.0, 10.0])
    assert segment_curvature(t)[0] == pytest.approx(2 * math.sin(0.025))
    assert not violation_flags(t)["curvature"]


@pytest.mark.parametrize("radius", [4.0, 20.0, 80.0])
def test_curvature_exact_on_circles(radius):
    np.testing.assert_allclose(segment_curvature(circle(5.0, radius)), 1.0 / radius, rtol=1e-9)


def test_lateral_speed_of_crabbing_motion():
    n = 5
    pos = np.column_stack([np.zeros(n), 1.2 * np.arange(n)])
    t = Trajectory(0.1, pos, np.full(n, math.pi / 2), np.full(n, 12.0))
    lon, lat = lateral_longitudinal_speed(t)
    np.testing.assert_allclose(lat, -12.0, atol=1e-9)
    np.testing.assert_allclose(lon, 0.0, atol=1e-9)
    assert violation_flags(t)["lateral_speed"]


def test_centripetal_acceleration_on_fast_circle():
    t = circle(15.0, 20.0)
    _, cent = traversal_centripetal_accel(t)
    dphi = 15.0 * 0.1 / 20.0
    # chord speed 2R sin(dphi/2)/dt turning by dphi: |dv|/dt = 4R sin^2(dphi/2)/dt^2
    discrete = 4 * 20.0 * math.sin(dphi / 2) ** 2 / 0.1 ** 2
    np.testing.assert_allclose(np.abs(cent), discrete, rtol=1e-9)
    assert discrete == pytest.approx(15.0 ** 2 / 20.0, rel=0.01)
    assert violation_flags(t)["centripetal_accel"]


def test_hard_braking_violates_min_traversal():
    v = np.maximum(30.0 - 13.0 * 0.1 * np.arange(1, 21), 1.0)
    pos = np.column_stack([np.zeros(20), np.cumsum(v * 0.1)])
    t = Trajectory(0.1, pos, np.zeros(20), v)
    trav, _ = traversal_centripetal_accel(t)
    assert np.nanmin(trav) == pytest.approx(-13.0)
    flags = violation_flags(t)
    assert flags["min_traversal_accel"] and not flags["max_traversal_accel"]


def test_stationary_steps_are_skipped():
    t = Trajectory(0.1, np.zeros((10, 2)), np.linspace(0, 3, 10), np.zeros(10))
    assert not any(violation_flags(t).values())


def test_threshold_is_inclusive():
    cfg = MetricConfig()
    t = circle(5.0, 1.0 / cfg.max_curvature)
    assert not violation_flags(t, cfg)["curvature"]


def test_ground_truth_rows_are_zero():
    report = feasibility_report([straight(), circle(8.0, 40.0)])
    assert report.fractions == {m: 0.0 for m in METRIC_NAMES}


def test_report_counts_and_csv(tmp_path):
    bad = Trajectory(0.1, [[0, 0], [0, 1], [1, 1]], [0.0, math.pi / 2, math.pi / 2], [10.0] * 3)
    report = feasibility_report([straight(), bad])
    assert report.fraction("curvature") == 0.5
    write_report_csv(report, tmp_path / "r.csv")
    with open(tmp_path / "r.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert [r["metric"] for r in rows] == ["Curvature", "Lateral Speed", "Centripetal Accel",
                                          "Min Traversal Accel", "Max Traversal Accel"]
    assert float(rows[0]["violation_fraction"]) == 0.5 and rows[0]["count"] == "1"
    write_report_json(report, tmp_path / "r.json", {"source": "unit"})
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["num_trajectories"] == 2 and doc["source"] == "unit"


def test_empty_report():
    report = feasibility_report([])
    assert report.num_trajectories == 0
    assert all(v == 0.0 for v in report.fractions.values())


def test_mixed_dt_rejected():
    with pytest.raises(ValueError):
        feasibility_report([straight(dt=0.1), straight(dt=0.2)])


def test_lateral_shift_is_pure_cross_track():
    gt = straight()
    e = error_metrics(straight(offset=(0.5, 0.0)), gt)
    assert e.avg_de == pytest.approx(0.5)
    assert e.avg_ate == pytest.approx(0.0, abs=0.1)
    assert e.avg_cte == pytest.approx(0.5, abs=0.1)


def test_lag_is_pure_along_track():
    gt = straight()
    e = error_metrics(straight(offset=(0.0, -1.0)), gt)
    assert e.avg_de == pytest.approx(1.0)
    assert e.avg_ate == pytest.approx(1.0, abs=0.1)
    assert e.avg_cte == pytest.approx(0.0, abs=0.1)


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_error_components_bounded_by_displacement(dx, dy):
    gt = circle(6.0, 30.0)
    pred = Trajectory(gt.dt, gt.positions + [dx, dy], gt.headings, gt.speeds)
    e = error_metrics(pred, gt)
    assert np.all(e.cte <= e.de + 0.1)
    assert np.all(e.ate <= e.de + 0.1)


def test_stationary_ground_truth_is_degenerate():
    gt = Trajectory(0.1, np.zeros((5, 2)), np.zeros(5), np.zeros(5))
    e = error_metrics(straight(n=5), gt)
    assert e.degenerate and e.avg_cte == 0.0 and e.avg_ate == e.avg_de


def test_error_requires_matching_lengths():
    with pytest.raises(ValueError):
        error_metrics(straight(n=5), straight(n=6))
