"""Train PTNet-1T on synthetic scenarios and report loss reduction and held-out DE."""
import argparse
import json

from ptnet.model import prepare_samples
from ptnet.synth import generate_scenarios
from ptnet.trainer import TrainConfig, evaluate, train


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--train-count", type=int, default=200)
    p.add_argument("--test-count", type=int, default=60)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="optional JSON output")
    args = p.parse_args()

    config = TrainConfig(seed=args.seed, epochs=args.epochs)
    result = train(prepare_samples(generate_scenarios(0, args.train_count)), config,
                   on_epoch=lambda e, loss: print(f"epoch {e:3d} loss {loss:.4f}"))
    summary = evaluate(result.model, prepare_samples(generate_scenarios(1, args.test_count)))
    curve = result.loss_curve
    reduction = 1.0 - curve[-1] / curve[0]
    print(f"loss reduction {100 * reduction:.1f}%  held-out best-match DE {summary.best_de:.3f} m")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"loss_curve": curve, "reduction": reduction, "summary": summary.to_dict()}, fh, indent=2)


if __name__ == "__main__":
    main()
