"""Violation percentages per model: ground truth, PTNet-1T, PTNet-3T and the regression ablation."""
import argparse

from ptnet.metrics import METRIC_NAMES, METRIC_TITLES, feasibility_report
from ptnet.model import prepare_samples
from ptnet.synth import generate_scenarios
from ptnet.trainer import TrainConfig, evaluate, feasibility_table, train


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--train-count", type=int, default=200)
    p.add_argument("--test-count", type=int, default=60)
    p.add_argument("--epochs", type=int, default=50)
    args = p.parse_args()

    train_set = generate_scenarios(0, args.train_count)
    test_set = generate_scenarios(1, args.test_count)
    gt = feasibility_report([t for s in test_set for t in s.ground_truth])
    rows = [{"model": "Ground truth", **{m: 100.0 * gt.fractions[m] for m in METRIC_NAMES}}]
    summaries = {}
    for kind, modes in (("ptnet", 1), ("ptnet", 3), ("regression", 1)):
        cfg = TrainConfig(model=kind, modes=modes, epochs=args.epochs)
        model = train(prepare_samples(train_set, cfg.model_config()), cfg).model
        summaries[model.config.name] = evaluate(model, prepare_samples(test_set, model.config))
    rows += feasibility_table(summaries)

    print(f"{'model':<16}" + "".join(f"{METRIC_TITLES[m]:>22}" for m in METRIC_NAMES))
    for row in rows:
        print(f"{row['model']:<16}" + "".join(f"{row[m]:21.2f}%" for m in METRIC_NAMES))


if __name__ == "__main__":
    main()
