"""Training, evaluation and the sample-efficiency protocol."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .metrics import METRIC_NAMES, error_metrics, feasibility_report
from .model import ActorSample, Model, ModelConfig, make_batch, prepare_samples
from .paths import PathConfig
from .pursuit import PursuitConfig
from .synth import Scenario, subsample

log = logging.getLogger(__name__)

HORIZON_TIMES = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0)


class NonFiniteLoss(ArithmeticError):
    def __init__(self, scenario_id: str, detail: str = ""):
        super().__init__(f"non-finite loss in scenario {scenario_id}" + (f": {detail}" if detail else ""))
        self.scenario_id = scenario_id


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    epochs: int = 50
    learning_rate: float = 1e-3
    batch_size: int = 32
    modes: int = 1
    hidden: int = 64
    model: str = "ptnet"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.modes < 1 or self.hidden < 1:
            raise ValueError("epochs, batch_size, modes and hidden must be positive")
        if self.learning_rate < 0 or not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1 or self.eps <= 0:
            raise ValueError("invalid optimizer hyperparameters")

    def model_config(self, pursuit: PursuitConfig = PursuitConfig(),
                     paths: PathConfig = PathConfig()) -> ModelConfig:
        return ModelConfig(self.model, self.modes, self.hidden, self.seed, pursuit, paths)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        doc = json.loads(Path(path).read_text())
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown training config keys: {', '.join(sorted(unknown))}")
        return cls(**doc)


class Adam:
    """Adaptive-moment optimizer over a fixed parameter list."""

    def __init__(self, params: Sequence[ad.Parameter], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.values = p.values - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


@dataclass
class TrainResult:
    model: Model
    loss_curve: list[float]
    checkpoints: list[Path] = field(default_factory=list)


def _locate_bad_sample(model: Model, samples: Sequence[ActorSample]) -> str:
    for s in samples:
        try:
            loss, _ = model.loss(ad.Tape(), make_batch([s], model.config.modes))
            if not math.isfinite(float(loss.value)):
                return s.scenario_id
        except ad.NumericError:
            return s.scenario_id
    return samples[0].scenario_id


def train(samples: Sequence[ActorSample], config: TrainConfig = TrainConfig(),
          model: Model | None = None, checkpoint_dir=None,
          on_epoch: Callable[[int, float], None] | None = None) -> TrainResult:
    """Mini-batch training; the per-epoch loss is the mean per-actor loss."""
    samples = list(samples)
    if not samples:
        raise ValueError("training set is empty")
    model = model or Model.init(config.model_config())
    opt = Adam(model.parameters, config.learning_rate, config.beta1, config.beta2, config.eps)
    rng = np.random.default_rng(config.seed)
    curve, ckpts = [], []
    for epoch in range(config.epochs):
        order = rng.permutation(len(samples))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            chunk = [samples[i] for i in order[start:start + config.batch_size]]
            batch = make_batch(chunk, model.config.modes)
            opt.zero_grad()
            tape = ad.Tape()
            try:
                loss, per_actor = model.loss(tape, batch)
            except ad.NumericError as exc:
                raise NonFiniteLoss(_locate_bad_sample(model, chunk), str(exc)) from exc
            if not np.all(np.isfinite(per_actor.value)):
                bad = int(np.flatnonzero(~np.isfinite(per_actor.value))[0])
                raise NonFiniteLoss(chunk[bad].scenario_id)
            tape.backward(loss)
            opt.step()
            total += float(np.sum(per_actor.value))
        curve.append(total / len(samples))
        log.info("epoch %d loss %.6g", epoch + 1, curve[-1])
        if on_epoch:
            on_epoch(epoch + 1, curve[-1])
        if checkpoint_dir is not None:
            path = Path(checkpoint_dir) / f"epoch{epoch + 1:03d}.json"
            model.save(path, {"epoch": epoch + 1, "loss": curve[-1]})
            ckpts.append(path)
    return TrainResult(model, curve, ckpts)


def epoch_loss(model: Model, samples: Sequence[ActorSample], batch_size: int = 64) -> float:
    total = 0.0
    for start in range(0, len(samples), batch_size):
        _, per_actor = model.loss(ad.Tape(), make_batch(samples[start:start + batch_size], model.config.modes))
        total += float(np.sum(per_actor.value))
    return total / len(samples)


@dataclass
class EvalSummary:
    avg_de: float
    avg_ate: float
    avg_cte: float
    best_de: float
    best_ate: float
    best_cte: float
    horizon_times: list[float]
    horizon_de: list[float]
    horizon_ate: list[float]
    horizon_cte: list[float]
    feasibility: dict[str, float]
    num_actors: int
    num_trajectories: int
    fraction: float = 1.0
    motion_heading: bool = False
    model: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalSummary":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def read_json(cls, path) -> "EvalSummary":
        return cls.from_dict(json.loads(Path(path).read_text()))


def evaluate(model, samples: Sequence[ActorSample], fraction: float = 1.0,
             batch_size: int = 64) -> EvalSummary:
    """Most-probable and best-match errors, horizon curves and feasibility.

    ``model`` is anything with ``predict(samples) -> list[ModeSet]``.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("evaluation set is empty")
    mp, best, curves, every = [], [], [], []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        for s, modes in zip(chunk, model.predict(chunk)):
            gt = s.ground_truth
            flat = modes.flat()
            errs = [error_metrics(t, gt) for t in flat]
            k_mp = int(np.argmax(modes.probs.ravel()))
            k_best = int(np.argmin([e.avg_de for e in errs]))
            mp.append(errs[k_mp])
            best.append(errs[k_best])
            every.extend(flat)
    dt = every[0].dt
    idx = [int(round(t / dt)) - 1 for t in HORIZON_TIMES]
    idx = [i for i in idx if 0 <= i < len(every[0])]
    report = feasibility_report(every)

    def avg(errs, name):
        return float(np.mean([getattr(e, name) for e in errs]))

    return EvalSummary(
        avg(mp, "avg_de"), avg(mp, "avg_ate"), avg(mp, "avg_cte"),
        avg(best, "avg_de"), avg(best, "avg_ate"), avg(best, "avg_cte"),
        [round((i + 1) * dt, 9) for i in idx],
        [float(np.mean([e.de[i] for e in best])) for i in idx],
        [float(np.mean([e.ate[i] for e in best])) for i in idx],
        [float(np.mean([e.cte[i] for e in best])) for i in idx],
        report.fractions, len(samples), len(every), fraction, report.motion_heading,
        getattr(getattr(model, "config", None), "name", ""))


@dataclass
class SweepResult:
    fractions: list[float]
    seeds: list[int]
    errors: dict[str, list[list[float]]]  # model name -> [fraction][seed] best-match avg DE

    def mean(self, name: str) -> list[float]:
        return [float(np.mean(row)) for row in self.errors[name]]

    def std(self, name: str) -> list[float]:
        return [float(np.std(row)) for row in self.errors[name]]

    def to_dict(self) -> dict:
        return {"fractions": self.fractions, "seeds": self.seeds, "errors": self.errors,
                "mean": {k: self.mean(k) for k in self.errors},
                "std": {k: self.std(k) for k in self.errors}}

    @classmethod
    def from_dict(cls, d: dict) -> "SweepResult":
        return cls(list(d["fractions"]), list(d["seeds"]), {k: v for k, v in d["errors"].items()})


def sample_efficiency_sweep(train_scenarios: Sequence[Scenario], test_scenarios: Sequence[Scenario],
                            fractions: Sequence[float] = (0.125, 0.25, 0.5, 1.0),
                            seeds: Sequence[int] = (0, 1, 2, 3), config: TrainConfig = TrainConfig(),
                            ablation: bool = True,
                            on_run: Callable[[str, float, int, float], None] | None = None) -> SweepResult:
    """Best-match avg DE of models trained on nested fractions of the training scenarios."""
    for f in fractions:
        if not 0.0 < f <= 1.0:
            raise ValueError("fractions must lie in (0, 1]")
    kinds = ["ptnet"] + (["regression"] if ablation else [])
    test_cache: dict[str, list[ActorSample]] = {}
    errors: dict[str, list[list[float]]] = {}
    for kind in kinds:
        cfg = TrainConfig(**{**asdict(config), "model": kind})
        mcfg = cfg.model_config()
        if kind not in test_cache:
            test_cache[kind] = prepare_samples(test_scenarios, mcfg)
        name = mcfg.name
        errors[name] = []
        for f in fractions:
            row = []
            for seed in seeds:
                subset = subsample(train_scenarios, f, seed)
                run_cfg = TrainConfig(**{**asdict(cfg), "seed": seed})
                result = train(prepare_samples(subset, run_cfg.model_config()), run_cfg)
                de = evaluate(result.model, test_cache[kind], fraction=f).best_de
                row.append(de)
                if on_run:
                    on_run(name, f, seed, de)
            errors[name].append(row)
    return SweepResult(list(fractions), list(seeds), errors)


def feasibility_table(summaries: dict[str, EvalSummary]) -> list[dict]:
    """Rows of violation percentages per model, in metric order."""
    return [{"model": name, **{m: 100.0 * s.feasibility[m] for m in METRIC_NAMES}}
            for name, s in summaries.items()]
