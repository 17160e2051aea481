"""Reusable synthetic-world experiment harness: one function builds data,
trains a model under a given sampling + loss configuration, and reports
test metrics next to the oracle scorer's. Used by the experiment scripts
and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .cascade import (
    CascadeConfig,
    WorldConfig,
    attach_teacher_probs,
    generate_synthetic_world,
    split_dataset,
    train_teacher,
)
from .losses import HybridWeights
from .metrics import EvalReport, evaluate_rankings
from .model import ModelConfig, PreRankingModel, fit_bucketizers
from .trainer import TrainConfig, Trainer, eval_labels, evaluate_model


@dataclass(frozen=True)
class ExperimentConfig:
    world: WorldConfig = WorldConfig()
    model: ModelConfig = ModelConfig(heads_user=4, heads_item=4, sub_dim=16, tower_hidden=(64,), reduction_ratio=2)
    train: TrainConfig = TrainConfig(learning_rate=0.003, batch_size=24, eval_interval=200, patience=6, max_steps=1600)
    cascade: CascadeConfig = CascadeConfig()
    weights: HybridWeights = HybridWeights()
    use_teacher: bool = True


@dataclass
class ExperimentResult:
    seed: int
    untrained: EvalReport
    trained: EvalReport
    oracle: EvalReport
    steps: int
    history: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "steps": self.steps,
            "untrained_recall": self.untrained.recall,
            "recall": self.trained.recall,
            "ndcg": self.trained.ndcg,
            "oracle_recall": self.oracle.recall,
            "oracle_ndcg": self.oracle.ndcg,
        }


def run_experiment(config: ExperimentConfig, seed: int) -> ExperimentResult:
    """Generate a world, train under the configured sampling and losses,
    and evaluate train/test behavior against the oracle scorer."""
    world = generate_synthetic_world(config.world, seed)
    splits = split_dataset(world, seed)
    train_rows = splits["train"]
    if config.use_teacher:
        train_imp = [r for r in train_rows if r.stage == "impression"]
        teacher = train_teacher(train_imp, seed)
        train_rows = attach_teacher_probs(train_rows, teacher)

    schema = world.schema()
    bucketizers = fit_bucketizers(schema, train_rows)
    model = PreRankingModel.build(schema, bucketizers, config.model, seed)
    catalog = [(i, world.item_features(i)) for i in range(config.world.n_items)]

    k = config.train.eval_k
    untrained = evaluate_model(model, splits["test"], catalog, k)
    trainer = Trainer(
        model,
        train_rows,
        replace(config.train, seed=seed),
        config.cascade,
        config.weights,
        splits["val"],
        catalog,
    )
    out = trainer.run()
    trained = evaluate_model(model, splits["test"], catalog, k)

    gains, relevant = eval_labels(splits["test"])
    oracle = evaluate_rankings({uid: world.oracle_ranking(uid) for uid in gains}, gains, k, relevant)
    return ExperimentResult(
        seed=seed,
        untrained=untrained,
        trained=trained,
        oracle=oracle,
        steps=out["steps"],
        history=out["history"],
    )


ABLATION_VARIANTS = {
    "full_hybrid": lambda cfg: cfg,
    "impressions_only": lambda cfg: replace(
        cfg, cascade=replace(cfg.cascade, n_candidate=0, n_random=0)
    ),
    "sorting_only": lambda cfg: replace(
        cfg, weights=replace(cfg.weights, distill=0.0, sorting=1.0, ranking=0.0), use_teacher=False
    ),
    "margin_rankmax_only": lambda cfg: replace(
        cfg, weights=replace(cfg.weights, distill=0.0, sorting=0.0, ranking=1.0), use_teacher=False
    ),
}


def run_ablations(base: ExperimentConfig, seeds: list[int], variants: list[str] | None = None) -> dict[str, list[ExperimentResult]]:
    """Train each named variant on each seed; orderings are judged on
    seed-mean metrics by the caller."""
    chosen = variants or list(ABLATION_VARIANTS)
    results: dict[str, list[ExperimentResult]] = {}
    for name in chosen:
        make = ABLATION_VARIANTS[name]
        results[name] = [run_experiment(make(base), seed) for seed in seeds]
    return results


def seed_mean(results: list[ExperimentResult], metric: str) -> float:
    return float(np.mean([getattr(r.trained, metric) for r in results]))


SMALL_WORLD = WorldConfig(
    n_users=60,
    n_items=600,
    recall_size=240,
    prerank_size=80,
    rank_size=30,
    n_impressions=10,
)

SMALL_EXPERIMENT = ExperimentConfig(
    world=SMALL_WORLD,
    model=ModelConfig(heads_user=2, heads_item=2, sub_dim=16, tower_hidden=(48,), reduction_ratio=2),
    train=TrainConfig(learning_rate=0.003, batch_size=16, eval_interval=150, patience=4, max_steps=450, eval_k=100),
)

# full-size world (2000 items, 200 users) with a step budget that converges
# well inside a laptop-scale time box
FULL_EXPERIMENT = ExperimentConfig(
    train=TrainConfig(
        learning_rate=0.003, batch_size=24, eval_interval=150, patience=4, max_steps=600, eval_k=100
    )
)
