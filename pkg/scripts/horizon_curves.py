"""Best-match DE, ATE and CTE at 1-6 s horizons for a trained model, with an SVG plot."""
import argparse
from pathlib import Path

from ptnet.model import prepare_samples
from ptnet.plotting import plot_horizon
from ptnet.synth import generate_scenarios
from ptnet.trainer import TrainConfig, evaluate, train


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--train-count", type=int, default=200)
    p.add_argument("--test-count", type=int, default=60)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--modes", type=int, default=1)
    p.add_argument("--out", default="horizon_out", help="output directory")
    args = p.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = TrainConfig(modes=args.modes, epochs=args.epochs)
    model = train(prepare_samples(generate_scenarios(0, args.train_count), cfg.model_config()), cfg).model
    summary = evaluate(model, prepare_samples(generate_scenarios(1, args.test_count), model.config))
    summary.write_json(out / "eval.json")
    plot_horizon(summary, out / "horizon.svg")
    print("horizon [s]   DE      ATE     CTE")
    for t, de, ate, cte in zip(summary.horizon_times, summary.horizon_de, summary.horizon_ate, summary.horizon_cte):
        print(f"{t:9.1f}  {de:6.3f}  {ate:6.3f}  {cte:6.3f}")


if __name__ == "__main__":
    main()
