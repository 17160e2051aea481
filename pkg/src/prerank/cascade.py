"""Synthetic cascade-funnel data, stage sampling, and label aggregation.

The generator simulates a multi-stage funnel over a latent-factor world:
a noisy recall cut, a noisier-to-cleaner sequence of score-based cuts for
pre-ranking and ranking survivors, and a final impression set. Behavior
labels (click, convert) are Bernoulli draws whose rates rise with true
utility; converts are drawn only on clicked items. With the noise knob at
zero every cut is an exact top-slice by true utility.

Training examples are per-user lists mixing impression, candidate, and
random items. A small feed-forward teacher trained on impressions supplies
distillation targets.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Tensor, reshape, silu, sigmoid as t_sigmoid
from .features import (
    STAGE_CANDIDATE,
    STAGE_IMPRESSION,
    STAGE_RANDOM,
    ConfigurationError,
    FeatureSchema,
    Row,
    make_field,
)
from .losses import weighted_logloss_logits
from .optim import Adam
from .towers import init_linear, linear

# funnel stages draw score noise at decreasing scale as items travel deeper
STAGE_NOISE_SCALES = (4.0, 2.0, 1.0, 0.5)

BEHAVIORS = ("click", "convert")


@dataclass(frozen=True)
class WorldConfig:
    n_users: int = 200
    n_items: int = 2000
    latent_dim: int = 3
    noise: float = 0.0
    recall_size: int = 400
    prerank_size: int = 100
    rank_size: int = 40
    n_impressions: int = 12
    n_random_logged: int = 8
    buckets: int = 32
    click_sharpness: float = 48.0
    convert_sharpness: float = 48.0
    click_quantile: float = 0.5
    convert_margin: float = 0.35

    def validate(self) -> None:
        if not (self.n_items >= self.recall_size >= self.prerank_size >= self.rank_size >= self.n_impressions >= 1):
            raise ConfigurationError("funnel sizes must shrink: corpus >= recall >= prerank >= rank >= impressions")
        if self.n_items < 10 * self.n_impressions:
            raise ConfigurationError("corpus must be at least 10x the impression count")
        if self.n_users < 1 or self.latent_dim < 1:
            raise ConfigurationError("need at least one user and one latent dimension")
        if self.noise < 0:
            raise ConfigurationError("noise must be nonnegative")


@dataclass
class ImpressionRecord:
    item_id: int
    behaviors: dict[str, int]


@dataclass
class UserLog:
    user_id: int
    impressions: list[ImpressionRecord]
    candidates: list[int]
    randoms: list[int]


class SyntheticWorld:
    """Latent vectors, the funnel logs they induced, and the true utility."""

    def __init__(
        self,
        config: WorldConfig,
        seed: int,
        user_latents: np.ndarray,
        item_latents: np.ndarray,
        logs: dict[int, UserLog],
        user_activity: np.ndarray | None = None,
    ):
        self.config = config
        self.seed = seed
        self.user_latents = user_latents
        self.item_latents = item_latents
        self.logs = logs
        # per-user engagement threshold, logged as an activity-level feature
        self.user_activity = user_activity if user_activity is not None else np.zeros(len(user_latents))

    def utilities(self, user_id: int) -> np.ndarray:
        return self.item_latents @ self.user_latents[user_id] / math.sqrt(self.config.latent_dim)

    def utility(self, user_id: int, item_id: int) -> float:
        return float(
            self.item_latents[item_id] @ self.user_latents[user_id] / math.sqrt(self.config.latent_dim)
        )

    def user_features(self, user_id: int) -> dict:
        feats = {"user_id": int(user_id), "u_act": float(self.user_activity[user_id])}
        for j in range(self.config.latent_dim):
            feats[f"u_lat{j}"] = float(self.user_latents[user_id, j])
        return feats

    def item_features(self, item_id: int) -> dict:
        feats = {"item_id": int(item_id)}
        for j in range(self.config.latent_dim):
            feats[f"i_lat{j}"] = float(self.item_latents[item_id, j])
        return feats

    def schema(self) -> FeatureSchema:
        fields = [
            make_field("user_id", "categorical", "user", self.config.n_users),
            make_field("u_act", "continuous", "user", self.config.buckets),
        ]
        fields += [
            make_field(f"u_lat{j}", "continuous", "user", self.config.buckets)
            for j in range(self.config.latent_dim)
        ]
        fields.append(make_field("item_id", "categorical", "item", self.config.n_items))
        fields += [
            make_field(f"i_lat{j}", "continuous", "item", self.config.buckets)
            for j in range(self.config.latent_dim)
        ]
        return FeatureSchema(fields=tuple(fields))

    def oracle_ranking(self, user_id: int) -> list[int]:
        u = self.utilities(user_id)
        order = np.lexsort((np.arange(len(u)), -u))
        return [int(i) for i in order]

    def to_json(self) -> str:
        return json.dumps(
            {
                "config": self.config.__dict__,
                "seed": self.seed,
                "user_latents": self.user_latents.tolist(),
                "item_latents": self.item_latents.tolist(),
                "user_activity": self.user_activity.tolist(),
                "logs": {
                    str(uid): {
                        "impressions": [
                            {"item_id": r.item_id, "behaviors": r.behaviors} for r in log.impressions
                        ],
                        "candidates": log.candidates,
                        "randoms": log.randoms,
                    }
                    for uid, log in self.logs.items()
                },
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "SyntheticWorld":
        obj = json.loads(text)
        logs = {}
        for uid, log in obj["logs"].items():
            logs[int(uid)] = UserLog(
                user_id=int(uid),
                impressions=[
                    ImpressionRecord(item_id=int(r["item_id"]), behaviors=dict(r["behaviors"]))
                    for r in log["impressions"]
                ],
                candidates=[int(i) for i in log["candidates"]],
                randoms=[int(i) for i in log["randoms"]],
            )
        return cls(
            config=WorldConfig(**obj["config"]),
            seed=int(obj["seed"]),
            user_latents=np.asarray(obj["user_latents"], dtype=np.float64),
            item_latents=np.asarray(obj["item_latents"], dtype=np.float64),
            logs=logs,
            user_activity=np.asarray(obj["user_activity"], dtype=np.float64),
        )


def _top_by(scores: np.ndarray, pool: np.ndarray, size: int) -> np.ndarray:
    order = np.lexsort((pool, -scores))
    return pool[order[:size]]


def generate_synthetic_world(config: WorldConfig, seed: int) -> SyntheticWorld:
    """Simulate the funnel for every user; bit-identical for a fixed seed."""
    config.validate()
    root = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    user_latents = root.normal(size=(config.n_users, config.latent_dim))
    item_latents = root.normal(size=(config.n_items, config.latent_dim))
    world = SyntheticWorld(config, seed, user_latents, item_latents, logs={})

    all_items = np.arange(config.n_items)
    for uid in range(config.n_users):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1, uid]))
        util = world.utilities(uid)

        pool = all_items
        sizes = (config.recall_size, config.prerank_size, config.rank_size, config.n_impressions)
        survivors = []
        for size, scale in zip(sizes, STAGE_NOISE_SCALES):
            noisy = util[pool] + config.noise * scale * rng.normal(size=len(pool))
            pool = _top_by(noisy, pool, size)
            survivors.append(pool)
        _, prerank_set, _, impressions = survivors

        # engagement threshold: a logged per-user activity level
        imp_utils = util[impressions]
        click_thr = float(np.quantile(imp_utils, config.click_quantile))
        conv_thr = click_thr + config.convert_margin
        world.user_activity[uid] = click_thr
        records = []
        for iid in impressions:
            u = util[iid]
            p_click = _np_sigmoid(config.click_sharpness * (u - click_thr))
            click = int(rng.random() < p_click)
            convert = 0
            if click:
                p_conv = _np_sigmoid(config.convert_sharpness * (u - conv_thr))
                convert = int(rng.random() < p_conv)
            records.append(ImpressionRecord(item_id=int(iid), behaviors={"click": click, "convert": convert}))

        shown = set(int(i) for i in impressions)
        candidates = [int(i) for i in prerank_set if int(i) not in shown]
        off_funnel = np.setdiff1d(all_items, prerank_set, assume_unique=False)
        randoms = [int(i) for i in rng.choice(off_funnel, size=min(config.n_random_logged, len(off_funnel)), replace=False)]
        world.logs[uid] = UserLog(uid, records, candidates, randoms)
    return world


def _np_sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


# -- label aggregation -----------------------------------------------------


def aggregate_hard_label(behaviors: dict[str, int], weights: dict[str, float] | None = None, exposed: bool = False) -> float:
    """Weighted sum of behavior labels plus an exposure bit for shown items.

    Default weights of 1 reproduce plain label summation and keep the depth
    hierarchy: converted > clicked > exposed-only > unexposed (0).
    """
    total = 1.0 if exposed else 0.0
    for name, value in behaviors.items():
        w = 1.0 if weights is None else float(weights.get(name, 1.0))
        if w < 0:
            raise ConfigurationError("behavior weights must be nonnegative")
        total += w * float(value)
    return total


# -- list groups -------------------------------------------------------------


@dataclass
class GroupItem:
    item_id: int
    stage: str
    behaviors: dict[str, int]
    y: float
    p: float | None
    features: dict


@dataclass
class ListGroup:
    user_id: int
    user_features: dict
    items: list[GroupItem]

    @property
    def stages(self) -> np.ndarray:
        return np.asarray([it.stage for it in self.items], dtype=object)

    @property
    def hard_labels(self) -> np.ndarray:
        return np.asarray([it.y for it in self.items], dtype=np.float64)

    @property
    def teacher_probs(self) -> np.ndarray:
        return np.asarray(
            [it.p if it.p is not None else np.nan for it in self.items], dtype=np.float64
        )

    def has_teacher(self) -> bool:
        return any(it.p is not None for it in self.items)


@dataclass(frozen=True)
class CascadeConfig:
    n_impression_pos: int = 2
    n_impression_neg: int = 2
    n_candidate: int = 4
    n_random: int = 4
    behavior_weights: dict | None = None

    def validate(self) -> None:
        if min(self.n_impression_pos, self.n_impression_neg, self.n_candidate, self.n_random) < 0:
            raise ConfigurationError("per-stage counts must be nonnegative")


@dataclass
class UserPools:
    user_id: int
    user_features: dict
    impressions: list[Row] = field(default_factory=list)
    candidates: list[Row] = field(default_factory=list)
    randoms: list[Row] = field(default_factory=list)


def build_user_pools(rows: list[Row]) -> dict[int, UserPools]:
    pools: dict[int, UserPools] = {}
    for row in rows:
        pool = pools.setdefault(row.user_id, UserPools(row.user_id, row.user_features))
        if row.stage == STAGE_IMPRESSION:
            pool.impressions.append(row)
        elif row.stage == STAGE_CANDIDATE:
            pool.candidates.append(row)
        else:
            pool.randoms.append(row)
    return pools


def _sample(rows: list[Row], count: int, rng: np.random.Generator) -> list[Row]:
    if count <= 0 or not rows:
        return []
    count = min(count, len(rows))
    idx = rng.choice(len(rows), size=count, replace=False)
    return [rows[i] for i in sorted(idx)]


def assemble_list_group(pools: UserPools, config: CascadeConfig, rng: np.random.Generator) -> ListGroup | None:
    """Draw the configured per-stage counts without replacement, downsampling
    when a pool runs short. Users with no impressions are skipped (None)."""
    config.validate()
    if not pools.impressions:
        return None
    positives = [r for r in pools.impressions if any(r.labels.values())]
    negatives = [r for r in pools.impressions if not any(r.labels.values())]
    chosen = (
        _sample(positives, config.n_impression_pos, rng)
        + _sample(negatives, config.n_impression_neg, rng)
        + _sample(pools.candidates, config.n_candidate, rng)
        + _sample(pools.randoms, config.n_random, rng)
    )
    if len(chosen) < 2:
        return None
    items = []
    for row in chosen:
        exposed = row.stage == STAGE_IMPRESSION
        items.append(
            GroupItem(
                item_id=row.item_id,
                stage=row.stage,
                behaviors=dict(row.labels),
                y=aggregate_hard_label(row.labels, config.behavior_weights, exposed=exposed),
                p=row.teacher_p if exposed else None,
                features=row.item_features,
            )
        )
    return ListGroup(user_id=pools.user_id, user_features=pools.user_features, items=items)


# -- dataset emission --------------------------------------------------------


def world_rows(world: SyntheticWorld) -> dict[int, dict[str, list[Row]]]:
    """Per-user impression/candidate/random rows straight from the funnel logs."""
    out: dict[int, dict[str, list[Row]]] = {}
    for uid, log in world.logs.items():
        uf = world.user_features(uid)
        imp = [
            Row(uid, rec.item_id, uf, world.item_features(rec.item_id), dict(rec.behaviors), None, STAGE_IMPRESSION)
            for rec in log.impressions
        ]
        cand = [
            Row(uid, iid, uf, world.item_features(iid), {b: 0 for b in BEHAVIORS}, None, STAGE_CANDIDATE)
            for iid in log.candidates
        ]
        rand = [
            Row(uid, iid, uf, world.item_features(iid), {b: 0 for b in BEHAVIORS}, None, STAGE_RANDOM)
            for iid in log.randoms
        ]
        out[uid] = {"impression": imp, "candidate": cand, "random": rand}
    return out


def split_dataset(world: SyntheticWorld, seed: int, ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)) -> dict[str, list[Row]]:
    """Per-user split of impression rows into train/val/test; candidate and
    random rows are training-only negatives. Every user keeps at least one
    train impression."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigurationError("split ratios must sum to 1")
    rows = world_rows(world)
    splits: dict[str, list[Row]] = {"train": [], "val": [], "test": []}
    for uid in sorted(rows):
        rng = np.random.default_rng(np.random.SeedSequence([world.seed, 2, seed, uid]))
        imp = rows[uid]["impression"]
        order = rng.permutation(len(imp))
        n = len(imp)
        n_train = max(1, int(round(ratios[0] * n)))
        n_val = int(round(ratios[1] * n))
        n_train = min(n_train, n)
        n_val = min(n_val, n - n_train)
        for pos, idx in enumerate(order):
            if pos < n_train:
                splits["train"].append(imp[idx])
            elif pos < n_train + n_val:
                splits["val"].append(imp[idx])
            else:
                splits["test"].append(imp[idx])
        splits["train"].extend(rows[uid]["candidate"])
        splits["train"].extend(rows[uid]["random"])
    return splits


# -- teacher -----------------------------------------------------------------


@dataclass(frozen=True)
class TeacherConfig:
    hidden: tuple[int, ...] = (16,)
    lr: float = 0.01
    steps: int = 1500
    batch_size: int = 256


class TeacherModel:
    """Small feed-forward scorer over raw continuous features of both sides
    plus all pairwise cross products, trained on impression rows with
    weighted logloss. Produces probabilities in (0, 1)."""

    def __init__(self, weights, biases, user_keys: list[str], item_keys: list[str]):
        self.weights = weights
        self.biases = biases
        self.user_keys = user_keys
        self.item_keys = item_keys

    def features(self, user_features: dict, item_features: dict) -> np.ndarray:
        u = np.array([float(user_features.get(k, 0.0)) for k in self.user_keys])
        i = np.array([float(item_features.get(k, 0.0)) for k in self.item_keys])
        return np.concatenate([u, i, np.outer(u, i).reshape(-1)])

    def _logits(self, x: Tensor) -> Tensor:
        h = x
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = linear(h, w, b)
            if layer < len(self.weights) - 1:
                h = silu(h)
        return h

    def predict(self, user_features: dict, item_features: dict) -> float:
        x = Tensor(self.features(user_features, item_features)[None, :])
        p = t_sigmoid(self._logits(x)).data.reshape(-1)[0]
        return float(np.clip(p, 1e-9, 1.0 - 1e-9))  # keep strictly inside (0, 1)

    def predict_rows(self, rows: list[Row]) -> np.ndarray:
        x = Tensor(np.stack([self.features(r.user_features, r.item_features) for r in rows]))
        p = t_sigmoid(self._logits(x)).data.reshape(-1)
        return np.clip(p, 1e-9, 1.0 - 1e-9)


def _continuous_keys(rows: list[Row]) -> tuple[list[str], list[str]]:
    user_keys, item_keys = set(), set()
    for r in rows:
        user_keys.update(k for k, v in r.user_features.items() if isinstance(v, float))
        item_keys.update(k for k, v in r.item_features.items() if isinstance(v, float))
    return sorted(user_keys), sorted(item_keys)


def train_teacher(impressions: list[Row], seed: int, config: TeacherConfig = TeacherConfig()) -> TeacherModel:
    """Fit the teacher on impression rows only; targets are any-positive
    behavior, weighted by the aggregated label depth."""
    imp = [r for r in impressions if r.stage == STAGE_IMPRESSION]
    if not imp:
        raise ConfigurationError("train_teacher needs at least one impression row")
    user_keys, item_keys = _continuous_keys(imp)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))

    proto = TeacherModel([], [], user_keys, item_keys)
    width = len(proto.features(imp[0].user_features, imp[0].item_features))
    weights, biases = [], []
    prev = width
    for w_out in tuple(config.hidden) + (1,):
        w, b = init_linear(rng, prev, w_out)
        weights.append(w)
        biases.append(b)
        prev = w_out
    model = TeacherModel(weights, biases, user_keys, item_keys)

    x = np.stack([model.features(r.user_features, r.item_features) for r in imp])
    t = np.array([1.0 if any(r.labels.values()) else 0.0 for r in imp])
    w_arr = np.array([aggregate_hard_label(r.labels, exposed=True) for r in imp])

    params = {f"w{i}": w for i, w in enumerate(weights)}
    params.update({f"b{i}": b for i, b in enumerate(biases)})
    opt = Adam(params, lr=config.lr)
    n = len(imp)
    for _ in range(config.steps):
        idx = rng.choice(n, size=min(config.batch_size, n), replace=False)
        opt.zero_grad()
        logits = model._logits(Tensor(x[idx]))
        loss = weighted_logloss_logits(reshape(logits, (logits.data.size,)), t[idx], w_arr[idx])
        loss.backward()
        opt.step()
    return model


def attach_teacher_probs(rows: list[Row], teacher: TeacherModel) -> list[Row]:
    """New rows with the teacher probability set on impressions only."""
    out = []
    imp_idx = [i for i, r in enumerate(rows) if r.stage == STAGE_IMPRESSION]
    preds = teacher.predict_rows([rows[i] for i in imp_idx]) if imp_idx else np.array([])
    lookup = dict(zip(imp_idx, preds))
    for i, r in enumerate(rows):
        if i in lookup:
            out.append(replace(r, teacher_p=float(lookup[i])))
        else:
            out.append(replace(r, teacher_p=None))
    return out


def rank_auc(labels: np.ndarray, scores: np.ndarray) -> float:
    """Mann-Whitney AUC with tie credit."""
    labels = np.asarray(labels, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    pos = scores[labels > 0]
    neg = scores[labels <= 0]
    if len(pos) == 0 or len(neg) == 0:
        raise ConfigurationError("AUC needs both positives and negatives")
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return float(wins / (len(pos) * len(neg)))
