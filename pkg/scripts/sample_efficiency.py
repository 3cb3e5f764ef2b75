"""Sample-efficiency sweep: best-match DE against the fraction of training data used."""
import argparse
import json
from pathlib import Path

from ptnet.plotting import plot_sample_efficiency
from ptnet.synth import generate_scenarios
from ptnet.trainer import TrainConfig, sample_efficiency_sweep


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--train-count", type=int, default=200)
    p.add_argument("--test-count", type=int, default=60)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--seeds", type=int, default=4)
    p.add_argument("--out", default="sweep_out", help="output directory")
    args = p.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sweep = sample_efficiency_sweep(
        generate_scenarios(0, args.train_count), generate_scenarios(1, args.test_count),
        (0.125, 0.25, 0.5, 1.0), range(args.seeds), TrainConfig(epochs=args.epochs),
        on_run=lambda n, f, s, de: print(f"{n} fraction {f:g} seed {s}: DE {de:.3f}"))
    (out / "sweep.json").write_text(json.dumps(sweep.to_dict(), indent=2, sort_keys=True) + "\n")
    plot_sample_efficiency(sweep, out / "sample_efficiency.svg")
    for name in sweep.errors:
        print(name, " ".join(f"{f:g}:{m:.3f}" for f, m in zip(sweep.fractions, sweep.mean(name))))


if __name__ == "__main__":
    main()
