import xml.etree.ElementTree as ET

import numpy as np

from ptnet.plotting import plot_horizon, plot_overlay, plot_sample_efficiency
from ptnet.trainer import EvalSummary, SweepResult

SVG = "{http://www.w3.org/2000/svg}"


def summary():
    return EvalSummary(1.0, 0.5, 0.4, 0.8, 0.4, 0.3, [1.0, 2.0, 3.0], [0.1, 0.4, 0.9], [0.1, 0.3, 0.6],
                       [0.05, 0.2, 0.4], {}, 3, 9, model="PTNet-1T")


def test_horizon_plot_is_valid_and_deterministic(tmp_path):
    plot_horizon(summary(), tmp_path / "a.svg")
    plot_horizon(summary(), tmp_path / "b.svg")
    root = ET.parse(tmp_path / "a.svg").getroot()
    assert root.tag == SVG + "svg"
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


def test_sample_efficiency_plot(tmp_path):
    sweep = SweepResult([0.125, 0.25, 0.5, 1.0], [0, 1],
                        {"PTNet-1T": [[1.0, 1.2], [0.9, 0.8], [0.6, 0.7], [0.5, 0.5]]})
    plot_sample_efficiency(sweep, tmp_path / "s.svg")
    assert ET.parse(tmp_path / "s.svg").getroot().tag == SVG + "svg"


def test_overlay_of_perfect_prediction_coincides(tmp_path, small_scenarios):
    sc = small_scenarios[0]
    gt = list(sc.ground_truth)
    plot_overlay(sc.lane_graph, gt, [[t] for t in gt], tmp_path / "o.svg", sc.id)
    paths = [p.get("d") for p in ET.parse(tmp_path / "o.svg").getroot().iter(SVG + "path")]
    # each predicted polyline is drawn a second time as the dashed ground truth
    drawn = [d for d in paths if d and d.count("L") >= len(gt[0].positions) - 1]
    assert len(drawn) >= 2 * len(gt)
    assert any(drawn.count(d) >= 2 for d in drawn)
