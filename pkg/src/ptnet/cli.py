"""Command-line entry point: ``ptnet <command> [flags]``.

Exit codes: 0 success, 2 usage or I/O error, 3 numeric failure.
The default seed comes from the ``PTNET_SEED`` environment variable (else 0).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .metrics import error_metrics, feasibility_report, write_report_csv, write_report_json
from .synth import (MAP_KINDS, ParseError, generate_scenarios, read_scenarios, read_trajectories,
                    split_by_hash, write_scenarios, write_trajectories)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
SEED_ENV = "PTNET_SEED"

log = logging.getLogger("ptnet")


class UsageError(Exception):
    """Bad input files or flags discovered after argument parsing."""


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV, "0")
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _kinds(text: str) -> list[str]:
    kinds = [k.strip() for k in text.split(",") if k.strip()]
    bad = [k for k in kinds if k not in MAP_KINDS]
    if not kinds or bad:
        raise argparse.ArgumentTypeError(f"kinds must be a comma list from {', '.join(MAP_KINDS)}")
    return kinds


def _fractions(text: str) -> list[float]:
    try:
        out = [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError("fractions must be comma-separated numbers") from None
    if not out or any(not 0 < f <= 1 for f in out):
        raise argparse.ArgumentTypeError("fractions must lie in (0, 1]")
    return out


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated integers") from None


def _read_scenarios(path) -> list:
    if not Path(path).is_file():
        raise UsageError(f"no such data file: {path}")
    return read_scenarios(path)


def _outdir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    seed = args.seed if args.seed is not None else default_seed()
    scenarios = generate_scenarios(seed, args.count, args.kinds, tuple(args.actors))
    parts = split_by_hash(scenarios)
    out = _outdir(args.out)
    for name, items in parts.items():
        write_scenarios(out / f"{name}.jsonl", items)
    print(" ".join(f"{name}={len(items)}" for name, items in parts.items()))
    return EXIT_OK


def _train_config(args):
    from .trainer import TrainConfig

    base = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    overrides = {k: v for k, v in {"seed": args.seed, "epochs": args.epochs, "learning_rate": args.lr,
                                   "batch_size": args.batch_size, "modes": args.modes,
                                   "model": args.model}.items() if v is not None}
    if "seed" not in overrides and not args.config:
        overrides["seed"] = default_seed()
    return TrainConfig(**{**base.__dict__, **overrides})


def cmd_train(args) -> int:
    from .model import prepare_samples
    from .trainer import train

    if args.config and not Path(args.config).is_file():
        raise UsageError(f"no such config file: {args.config}")
    config = _train_config(args)
    scenarios = _read_scenarios(args.data)
    if not scenarios:
        raise UsageError(f"{args.data} holds no scenarios")
    out = _outdir(args.out)
    ckpt_dir = _outdir(out / "checkpoints") if args.keep_checkpoints else None
    samples = prepare_samples(scenarios, config.model_config())
    result = train(samples, config, checkpoint_dir=ckpt_dir,
                   on_epoch=lambda e, loss: print(f"epoch {e} loss {loss:.6f}"))
    result.model.save(out / "model.json", {"train_config": config.__dict__})
    with open(out / "loss.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for e, loss in enumerate(result.loss_curve, start=1):
            w.writerow([e, repr(loss)])
    print(f"wrote {out / 'model.json'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .model import Model, prepare_samples
    from .trainer import evaluate

    if not Path(args.model).is_file():
        raise UsageError(f"no such checkpoint: {args.model}")
    model = Model.load(args.model)
    scenarios = _read_scenarios(args.data)
    samples = prepare_samples(scenarios, model.config)
    if not samples:
        raise UsageError(f"{args.data} holds no actors")
    summary = evaluate(model, samples)
    summary.write_json(args.out)
    if args.report:
        report = feasibility_report([t for m in model.predict(samples) for t in m.flat()])
        write_report_csv(report, args.report)
    if args.predictions:
        trajs, ids = [], []
        for s, modes in zip(samples, model.predict(samples)):
            for k, t in enumerate(modes.flat()):
                trajs.append(t.transformed(from_frame=s.actor.pose))
                ids.append(f"{s.scenario_id}/{s.actor_index}/{k}")
        write_trajectories(args.predictions, trajs, ids)
    print(f"most-probable DE {summary.avg_de:.3f} ATE {summary.avg_ate:.3f} CTE {summary.avg_cte:.3f}; "
          f"best-match DE {summary.best_de:.3f}")
    return EXIT_OK


def cmd_audit(args) -> int:
    if not Path(args.trajectories).is_file():
        raise UsageError(f"no such trajectory file: {args.trajectories}")
    trajs = read_trajectories(args.trajectories)
    report = feasibility_report(trajs)
    write_report_csv(report, args.report)
    extra = {}
    if args.ground_truth:
        gts = read_trajectories(args.ground_truth)
        if len(gts) != len(trajs):
            raise UsageError("prediction and ground-truth files hold different numbers of trajectories")
        errs = [error_metrics(p, g) for p, g in zip(trajs, gts)]
        if errs:
            extra["errors"] = {name: float(np.mean([getattr(e, name) for e in errs]))
                               for name in ("avg_de", "avg_ate", "avg_cte")}
            extra["errors"]["degenerate"] = int(sum(e.degenerate for e in errs))
    if args.json:
        write_report_json(report, args.json, extra)
    for row in report.rows():
        print(f"{row['metric']:<20} {100.0 * row['violation_fraction']:7.2f}%  ({row['count']})")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .trainer import TrainConfig, sample_efficiency_sweep

    train_set = _read_scenarios(args.data)
    test_set = _read_scenarios(args.test)
    if not train_set or not test_set:
        raise UsageError("sweep needs non-empty training and test files")
    config = TrainConfig(epochs=args.epochs, modes=args.modes)
    result = sample_efficiency_sweep(train_set, test_set, args.fractions, args.seeds, config,
                                     ablation=not args.no_ablation,
                                     on_run=lambda n, f, s, de: print(f"{n} fraction {f:g} seed {s}: DE {de:.3f}"))
    Path(args.out).write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n")
    for name in result.errors:
        print(name, " ".join(f"{f:g}:{m:.3f}" for f, m in zip(result.fractions, result.mean(name))))
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plotting import plot_horizon, plot_overlay, plot_sample_efficiency
    from .trainer import EvalSummary, SweepResult

    if not Path(args.eval_summary).is_file():
        raise UsageError(f"no such summary: {args.eval_summary}")
    out = _outdir(args.out)
    written = []
    summary = EvalSummary.read_json(args.eval_summary)
    plot_horizon(summary, out / "horizon.svg")
    written.append("horizon.svg")
    if args.sweep:
        sweep = SweepResult.from_dict(json.loads(Path(args.sweep).read_text()))
        plot_sample_efficiency(sweep, out / "sample_efficiency.svg")
        written.append("sample_efficiency.svg")
    if args.model and args.data:
        from .model import Model, prepare_samples

        model = Model.load(args.model)
        scenarios = _read_scenarios(args.data)[: args.overlays]
        for sc in scenarios:
            samples = prepare_samples([sc], model.config)
            preds = [[t.transformed(from_frame=s.actor.pose) for t in m.flat()]
                     for s, m in zip(samples, model.predict(samples))]
            name = f"overlay_{sc.id}.svg"
            plot_overlay(sc.lane_graph, sc.ground_truth, preds, out / name, sc.id)
            written.append(name)
    print("wrote " + ", ".join(written))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ptnet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    g = sub.add_parser("gen-data", help="generate synthetic scenarios split 70/10/20")
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--kinds", type=_kinds, default=list(MAP_KINDS), help="comma list of map kinds")
    g.add_argument("--count", type=int, default=100)
    g.add_argument("--actors", type=int, nargs=2, default=(1, 2), metavar=("MIN", "MAX"))
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model on a scenario file")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="JSON training config")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--modes", type=int, help="temporal modes per goal (PTNet-NT)")
    t.add_argument("--model", choices=("ptnet", "regression"))
    t.add_argument("--keep-checkpoints", action="store_true", help="write a checkpoint every epoch")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a scenario file")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True, help="evaluation summary (JSON)")
    e.add_argument("--report", help="feasibility CSV over all predicted modes")
    e.add_argument("--predictions", help="write predicted trajectories (world frame)")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("audit", help="feasibility report for a trajectory file")
    a.add_argument("--trajectories", required=True)
    a.add_argument("--report", required=True, help="CSV output")
    a.add_argument("--ground-truth", help="trajectory file paired line by line for DE/ATE/CTE")
    a.add_argument("--json", help="structured summary output")
    a.set_defaults(func=cmd_audit)

    s = sub.add_parser("sweep", help="sample-efficiency sweep")
    s.add_argument("--data", required=True, help="training scenarios")
    s.add_argument("--test", required=True, help="test scenarios")
    s.add_argument("--out", required=True, help="sweep result (JSON)")
    s.add_argument("--fractions", type=_fractions, default=[0.125, 0.25, 0.5, 1.0])
    s.add_argument("--seeds", type=_ints, default=[0, 1, 2, 3])
    s.add_argument("--epochs", type=int, default=50)
    s.add_argument("--modes", type=int, default=1)
    s.add_argument("--no-ablation", action="store_true", help="skip the direct-regression runs")
    s.set_defaults(func=cmd_sweep)

    pl = sub.add_parser("plot", help="write SVG figures")
    pl.add_argument("--eval-summary", required=True)
    pl.add_argument("--out", required=True, help="output directory")
    pl.add_argument("--sweep", help="sweep result for the sample-efficiency figure")
    pl.add_argument("--model", help="checkpoint for trajectory overlays")
    pl.add_argument("--data", help="scenarios for trajectory overlays")
    pl.add_argument("--overlays", type=int, default=3, help="number of overlay figures")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    from .trainer import NonFiniteLoss

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ParseError, OSError, ValueError) as exc:
        print(f"ptnet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NonFiniteLoss, ad.NumericError) as exc:
        print(f"ptnet {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
