"""SVG figures: error against horizon, sample efficiency and trajectory overlays.

Output is byte-for-byte reproducible: the SVG id salt is fixed and no
creation date is written.
"""
from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .geometry import Trajectory  # noqa: E402
from .paths import LaneGraph  # noqa: E402

SVG_SALT = "ptnet"


def _save(fig, path) -> None:
    with matplotlib.rc_context({"svg.hashsalt": SVG_SALT, "svg.fonttype": "path"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_horizon(summary, path) -> None:
    """Best-match DE, ATE and CTE against prediction horizon."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for values, label in ((summary.horizon_de, "DE"), (summary.horizon_ate, "ATE"),
                          (summary.horizon_cte, "CTE")):
        ax.plot(summary.horizon_times, values, marker="o", label=label)
    ax.set_xlabel("prediction horizon [s]")
    ax.set_ylabel("best-match error [m]")
    ax.set_title(summary.model or "model")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def plot_sample_efficiency(sweep, path) -> None:
    """Mean (and spread across seeds) of best-match DE against training fraction."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    pct = [100.0 * f for f in sweep.fractions]
    for name in sweep.errors:
        ax.errorbar(pct, sweep.mean(name), yerr=sweep.std(name), marker="o", capsize=3, label=name)
    ax.set_xscale("log", base=2)
    ax.set_xticks(pct, [f"{p:g}%" for p in pct])
    ax.set_xlabel("training data used")
    ax.set_ylabel("best-match avg DE [m]")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def plot_overlay(graph: LaneGraph, ground_truth: Sequence[Trajectory],
                 predictions: Sequence[Sequence[Trajectory]], path, title: str = "") -> None:
    """Lane centerlines, ground truth (black) and predicted modes (coloured), world frame."""
    fig, ax = plt.subplots(figsize=(5, 5))
    for lane in graph.lanes:
        p = lane.centerline.points
        ax.plot(p[:, 0], p[:, 1], color="0.8", lw=1.0, zorder=1)
    for sign in graph.signs:
        ax.plot(sign.position.x, sign.position.y, "s", color="tab:red", ms=4, zorder=2)
    for k, trajs in enumerate(predictions):
        for t in trajs:
            ax.plot(t.positions[:, 0], t.positions[:, 1], lw=1.2, alpha=0.8, zorder=3,
                    color=f"C{k % 10}", label="prediction" if k == 0 else None)
    for k, t in enumerate(ground_truth):
        ax.plot(t.positions[:, 0], t.positions[:, 1], "k--", lw=1.2, zorder=4,
                label="ground truth" if k == 0 else None)
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    if title:
        ax.set_title(title)
    handles, labels = ax.get_legend_handles_labels()
    if handles:
        ax.legend(loc="best")
    fig.tight_layout()
    _save(fig, path)
