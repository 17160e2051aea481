"""Full scoring model: embedding bank -> gated towers -> cross-attention ->
max-cosine logit. One user is scored against n items in a single pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, reshape
from .cascade import ListGroup
from .features import Bucketizer, EmbeddingBank, FeatureSchema, Row, fit_bucketizer
from .interaction import (
    CrossAttentionParams,
    MaxSimHead,
    cross_attend,
    init_cross_attention,
    init_maxsim_head,
    maxsim_score,
)
from .losses import ListScores
from .towers import GatedTowerParams, init_gated_tower, tower_forward


@dataclass(frozen=True)
class ModelConfig:
    heads_user: int = 4
    heads_item: int = 4
    sub_dim: int = 32
    tower_hidden: tuple[int, ...] = (64,)
    reduction_ratio: int = 4
    activation: str = "silu"
    ln_eps: float = 1e-5

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["tower_hidden"] = list(self.tower_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["tower_hidden"] = tuple(d.get("tower_hidden", (64,)))
        return cls(**d)


def fit_bucketizers(schema: FeatureSchema, rows: list[Row]) -> dict[str, Bucketizer]:
    """Equal-frequency bucketizers for every continuous field, fit on the
    feature values observed in the given rows."""
    values: dict[str, list[float]] = {
        f.name: [] for f in schema.fields if f.kind == "continuous"
    }
    for row in rows:
        for f in schema.fields:
            if f.kind != "continuous":
                continue
            source = row.user_features if f.side == "user" else row.item_features
            v = source.get(f.name)
            if v is not None:
                values[f.name].append(float(v))
    return {name: fit_bucketizer(vals, _bins(schema, name)) for name, vals in values.items()}


def _bins(schema: FeatureSchema, name: str) -> int:
    for f in schema.fields:
        if f.name == name:
            return f.cardinality
    raise KeyError(name)


class PreRankingModel:
    """Owns every trainable tensor; forward passes are pure functions of the
    current parameter values."""

    def __init__(
        self,
        schema: FeatureSchema,
        bank: EmbeddingBank,
        user_tower: GatedTowerParams,
        item_tower: GatedTowerParams,
        cross: CrossAttentionParams,
        head: MaxSimHead,
        config: ModelConfig,
    ):
        self.schema = schema
        self.bank = bank
        self.user_tower = user_tower
        self.item_tower = item_tower
        self.cross = cross
        self.head = head
        self.config = config

    @classmethod
    def build(
        cls,
        schema: FeatureSchema,
        bucketizers: dict[str, Bucketizer],
        config: ModelConfig,
        seed: int,
    ) -> "PreRankingModel":
        rng = np.random.default_rng(np.random.SeedSequence([seed, 10]))
        bank = EmbeddingBank.initialize(schema, bucketizers, rng)
        user_tower = init_gated_tower(
            schema.input_width("user"),
            config.tower_hidden,
            config.heads_user,
            config.sub_dim,
            config.reduction_ratio,
            rng,
            config.activation,
        )
        item_tower = init_gated_tower(
            schema.input_width("item"),
            config.tower_hidden,
            config.heads_item,
            config.sub_dim,
            config.reduction_ratio,
            rng,
            config.activation,
        )
        cross = init_cross_attention(config.sub_dim, rng, config.activation)
        head = init_maxsim_head()
        return cls(schema, bank, user_tower, item_tower, cross, head, config)

    def parameters(self) -> dict[str, Tensor]:
        out = {f"emb.{name}": t for name, t in self.bank.tables.items()}
        out.update(self.user_tower.parameters("user_tower"))
        out.update(self.item_tower.parameters("item_tower"))
        out.update(self.cross.parameters("cross"))
        out.update(self.head.parameters("head"))
        return out

    def freeze(self) -> None:
        for t in self.parameters().values():
            t.requires_grad = False

    # -- forward passes --------------------------------------------------

    def user_subspaces(self, user_features: dict) -> Tensor:
        x = self.bank.embed_side("user", [user_features])
        e = tower_forward(x, self.user_tower)
        return reshape(e, (self.config.heads_user, self.config.sub_dim))

    def item_subspaces(self, item_feature_maps: list[dict]) -> Tensor:
        x = self.bank.embed_side("item", item_feature_maps)
        return tower_forward(x, self.item_tower)

    def score_from_subspaces(self, e_user: Tensor, e_items: Tensor) -> Tensor:
        att_u, att_i = cross_attend(e_user, e_items, self.cross)
        return maxsim_score(att_u, att_i, self.head)

    def score_list(self, user_features: dict, item_feature_maps: list[dict]) -> Tensor:
        e_u = self.user_subspaces(user_features)
        e_i = self.item_subspaces(item_feature_maps)
        return self.score_from_subspaces(e_u, e_i)

    def score_group(self, group: ListGroup) -> ListScores:
        z = self.score_list(group.user_features, [it.features for it in group.items])
        return ListScores(
            z=z,
            y=group.hard_labels,
            stages=group.stages,
            p=group.teacher_probs if group.has_teacher() else None,
        )
