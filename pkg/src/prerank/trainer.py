"""Optimization loop over list groups with the hybrid loss: Adam updates,
periodic validation, early stopping on validation NDCG, checkpointing with
bit-exact resume."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import add, mul, no_grad
from .cascade import CascadeConfig, aggregate_hard_label, assemble_list_group, build_user_pools
from .checkpoint import load_checkpoint, save_checkpoint
from .features import Bucketizer, FeatureSchema, Row
from .losses import HybridWeights, hybrid_loss
from .metrics import EvalReport, evaluate_rankings, rank_items
from .model import ModelConfig, PreRankingModel
from .optim import Adam
from .serving import OnlineScorer


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 64
    eval_interval: int = 1000
    patience: int = 5
    max_steps: int = 5000
    eval_k: int = 100
    seed: int = 0

    def validate(self) -> None:
        if self.batch_size < 1 or self.eval_interval < 1 or self.max_steps < 1:
            raise ValueError("batch_size, eval_interval, and max_steps must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be nonnegative")


def eval_labels(rows: list[Row]) -> tuple[dict[int, dict[int, float]], dict[int, set]]:
    """Per-user NDCG gains (aggregated label with exposure) and recall-relevant
    sets (any positive behavior) from impression rows."""
    gains: dict[int, dict[int, float]] = {}
    relevant: dict[int, set] = {}
    for r in rows:
        if r.stage != "impression":
            continue
        y = aggregate_hard_label(r.labels, exposed=True)
        gains.setdefault(r.user_id, {})[r.item_id] = y
        if any(r.labels.values()):
            relevant.setdefault(r.user_id, set()).add(r.item_id)
    return gains, relevant


def evaluate_model(
    model: PreRankingModel,
    eval_rows: list[Row],
    catalog: list[tuple[int, dict]],
    k: int,
    user_features: dict[int, dict] | None = None,
) -> EvalReport:
    """Score every eval user against the full catalog with the current
    parameters and report Recall@K / NDCG@K."""
    gains, relevant = eval_labels(eval_rows)
    feats = user_features or {r.user_id: r.user_features for r in eval_rows}
    item_ids = [int(i) for i, _ in catalog]
    rankings = {}
    with no_grad():
        e_items = model.item_subspaces([f for _, f in catalog])
        for uid in sorted(gains):
            e_u = model.user_subspaces(feats[uid])
            z = model.score_from_subspaces(e_u, e_items).data.reshape(-1)
            rankings[uid] = rank_items(item_ids, z)
    return evaluate_rankings(rankings, gains, k, relevant)


def evaluate_serving(
    scorer: OnlineScorer,
    eval_rows: list[Row],
    item_ids: list[int],
    k: int,
) -> EvalReport:
    """Same report, but through stored embeddings and the online scorer."""
    gains, relevant = eval_labels(eval_rows)
    rankings = {}
    for uid in sorted(gains):
        z = scorer.score(uid, item_ids)
        rankings[uid] = rank_items(item_ids, z)
    return evaluate_rankings(rankings, gains, k, relevant)


class Trainer:
    """Owns the model, optimizer, and sampling RNG. `save` captures enough
    state (parameters, Adam moments, RNG, step) that `load` + further steps
    reproduces an uninterrupted run bitwise."""

    def __init__(
        self,
        model: PreRankingModel,
        train_rows: list[Row],
        config: TrainConfig,
        cascade_config: CascadeConfig = CascadeConfig(),
        weights: HybridWeights = HybridWeights(),
        val_rows: list[Row] | None = None,
        catalog: list[tuple[int, dict]] | None = None,
    ):
        config.validate()
        self.model = model
        self.config = config
        self.cascade_config = cascade_config
        self.weights = weights
        self.pools = build_user_pools(train_rows)
        self.user_ids = sorted(uid for uid, p in self.pools.items() if p.impressions)
        if not self.user_ids:
            raise TrainingDiverged("no users with impressions in the training rows")
        self.val_rows = val_rows or []
        self.catalog = catalog or []
        self.opt = Adam(model.parameters(), lr=config.learning_rate)
        self.rng = np.random.default_rng(np.random.SeedSequence([config.seed, 20]))
        self.step_count = 0
        self.history: list[dict] = []
        self.best_metric: float | None = None
        self.best_step: int | None = None
        self._best_params: dict[str, np.ndarray] | None = None

    # -- stepping ---------------------------------------------------------

    def _sample_batch_users(self) -> np.ndarray:
        replace = len(self.user_ids) < self.config.batch_size
        return self.rng.choice(self.user_ids, size=self.config.batch_size, replace=replace)

    def train_step(self) -> float:
        """One Adam update on the mean hybrid loss over a sampled batch."""
        batch = self._sample_batch_users()
        losses = []
        used = []
        for uid in batch:
            group = assemble_list_group(self.pools[uid], self.cascade_config, self.rng)
            if group is None:
                continue
            losses.append(hybrid_loss(self.model.score_group(group), self.weights))
            used.append(uid)
        if not losses:
            raise TrainingDiverged("no valid list groups in batch")
        total = losses[0]
        for loss in losses[1:]:
            total = add(total, loss)
        total = mul(total, 1.0 / len(losses))
        value = total.item()
        if not np.isfinite(value):
            raise TrainingDiverged(f"non-finite loss at step {self.step_count} (users {used[:4]}...)")
        self.opt.zero_grad()
        total.backward()
        self.opt.step()
        self.step_count += 1
        return value

    def evaluate_val(self) -> EvalReport:
        return evaluate_model(self.model, self.val_rows, self.catalog, self.config.eval_k)

    def run(self, max_steps: int | None = None, log_every: int | None = None) -> dict:
        """Train until the step budget or until validation NDCG stops
        improving for `patience` evaluations; restores the best parameters."""
        budget = max_steps if max_steps is not None else self.config.max_steps
        evals_since_best = 0
        for _ in range(budget):
            loss = self.train_step()
            if log_every and self.step_count % log_every == 0:
                print(f"step {self.step_count}: loss {loss:.4f}")
            if self.val_rows and self.catalog and self.step_count % self.config.eval_interval == 0:
                report = self.evaluate_val()
                self.history.append(
                    {"step": self.step_count, "recall": report.recall, "ndcg": report.ndcg, "loss": loss}
                )
                if self.best_metric is None or report.ndcg > self.best_metric:
                    self.best_metric = report.ndcg
                    self.best_step = self.step_count
                    self._best_params = {n: t.data.copy() for n, t in self.model.parameters().items()}
                    evals_since_best = 0
                else:
                    evals_since_best += 1
                    if evals_since_best >= self.config.patience:
                        break
        if self._best_params is not None:
            for name, t in self.model.parameters().items():
                t.data = self._best_params[name].copy()
        return {
            "steps": self.step_count,
            "best_step": self.best_step,
            "best_ndcg": self.best_metric,
            "history": self.history,
        }

    # -- persistence --------------------------------------------------------

    def meta(self) -> dict:
        return {
            "kind": "prerank-checkpoint",
            "model_config": self.model.config.to_dict(),
            "schema": self.model.schema.dump(),
            "bucketizers": {
                name: b.boundaries.tolist() for name, b in self.model.bank.bucketizers.items()
            },
            "step": self.step_count,
            "adam_t": self.opt.t,
            "rng_state": self.rng.bit_generator.state,
            "train_config": self.config.__dict__,
            "hybrid_weights": self.weights.__dict__,
            "cascade_config": {
                k: v for k, v in self.cascade_config.__dict__.items() if k != "behavior_weights"
            },
            "best_metric": self.best_metric,
            "best_step": self.best_step,
            "history": self.history,
        }

    def save(self, path) -> None:
        arrays = {name: t.data for name, t in self.model.parameters().items()}
        arrays.update(self.opt.state_arrays())
        save_checkpoint(path, arrays, self.meta())

    def load(self, path) -> None:
        arrays, meta = load_checkpoint(path)
        restore_parameters(self.model, arrays)
        self.opt.load_state_arrays(arrays, meta["adam_t"])
        self.step_count = int(meta["step"])
        self.rng.bit_generator.state = meta["rng_state"]
        self.best_metric = meta.get("best_metric")
        self.best_step = meta.get("best_step")
        self.history = list(meta.get("history", []))


def restore_parameters(model: PreRankingModel, arrays: dict[str, np.ndarray]) -> None:
    for name, tensor in model.parameters().items():
        if name not in arrays:
            raise KeyError(f"checkpoint missing tensor {name}")
        if arrays[name].shape != tensor.data.shape:
            raise ValueError(f"checkpoint tensor {name} has shape {arrays[name].shape}, expected {tensor.data.shape}")
        tensor.data = np.array(arrays[name], dtype=np.float64)


def save_model(path, model: PreRankingModel, extra_meta: dict | None = None) -> None:
    """Standalone model snapshot (no optimizer state)."""
    meta = {
        "kind": "prerank-checkpoint",
        "model_config": model.config.to_dict(),
        "schema": model.schema.dump(),
        "bucketizers": {name: b.boundaries.tolist() for name, b in model.bank.bucketizers.items()},
        "step": 0,
        "adam_t": 0,
    }
    if extra_meta:
        meta.update(extra_meta)
    save_checkpoint(path, {name: t.data for name, t in model.parameters().items()}, meta)


def load_model(path) -> tuple[PreRankingModel, dict]:
    """Rebuild a model from a checkpoint; parameters load bit-exact."""
    arrays, meta = load_checkpoint(path)
    schema = FeatureSchema.parse(meta["schema"])
    bucketizers = {name: Bucketizer(bounds) for name, bounds in meta["bucketizers"].items()}
    config = ModelConfig.from_dict(meta["model_config"])
    model = PreRankingModel.build(schema, bucketizers, config, seed=0)
    restore_parameters(model, arrays)
    return model, meta
