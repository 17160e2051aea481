"""Feature schema, equal-frequency bucketization, embedding lookup, and the
JSON-lines dataset format.

Schema file: one field per line, whitespace separated:
    name kind side cardinality [dim]
where kind is `categorical` or `continuous` (cardinality is then the bucket
count) and side is `user` or `item`. Lines starting with `#` are comments.

Dataset: one JSON object per line with keys user_id, item_id, user_features,
item_features, labels (behavior -> 0/1), teacher_p (optional, impressions
only), stage (impression | candidate | random).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .autodiff import Tensor, concat, take_rows

STAGE_IMPRESSION = "impression"
STAGE_CANDIDATE = "candidate"
STAGE_RANDOM = "random"
STAGES = (STAGE_IMPRESSION, STAGE_CANDIDATE, STAGE_RANDOM)


class ConfigurationError(ValueError):
    """Bad schema, bucketizer, or dataset configuration."""


class SchemaError(ValueError):
    """A dataset row does not conform to the schema or stage rules."""


def default_embedding_dim(cardinality: int) -> int:
    return max(int(math.floor(math.log2(cardinality))), 16)


@dataclass(frozen=True)
class FeatureField:
    name: str
    kind: str
    side: str
    cardinality: int
    dim: int

    def __post_init__(self):
        if self.kind not in ("categorical", "continuous"):
            raise ConfigurationError(f"unknown field kind: {self.kind}")
        if self.side not in ("user", "item"):
            raise ConfigurationError(f"unknown field side: {self.side}")
        if self.cardinality < 1:
            raise ConfigurationError(f"field {self.name}: cardinality must be >= 1")


def make_field(name, kind, side, cardinality, dim=None) -> FeatureField:
    """Build a field, applying the dimension rule unless overridden."""
    return FeatureField(
        name=name,
        kind=kind,
        side=side,
        cardinality=int(cardinality),
        dim=int(dim) if dim is not None else default_embedding_dim(int(cardinality)),
    )


@dataclass(frozen=True)
class FeatureSchema:
    fields: tuple[FeatureField, ...]

    def __post_init__(self):
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise ConfigurationError("duplicate field names in schema")
        if not self.side_fields("user") or not self.side_fields("item"):
            raise ConfigurationError("schema needs at least one user and one item field")

    def side_fields(self, side: str) -> tuple[FeatureField, ...]:
        return tuple(f for f in self.fields if f.side == side)

    def input_width(self, side: str) -> int:
        return sum(f.dim for f in self.side_fields(side))

    def dump(self) -> str:
        lines = ["# name kind side cardinality dim"]
        for f in self.fields:
            lines.append(f"{f.name} {f.kind} {f.side} {f.cardinality} {f.dim}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "FeatureSchema":
        fields = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) not in (4, 5):
                raise ConfigurationError(f"schema line {lineno}: expected 4 or 5 tokens")
            dim = parts[4] if len(parts) == 5 else None
            fields.append(make_field(parts[0], parts[1], parts[2], parts[3], dim))
        return cls(fields=tuple(fields))

    @classmethod
    def load(cls, path) -> "FeatureSchema":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.parse(fh.read())

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dump())


class Bucketizer:
    """Equal-frequency binning; boundaries are right-open bin edges."""

    def __init__(self, boundaries: Sequence[float]):
        b = np.asarray(boundaries, dtype=np.float64)
        if b.size and not np.all(np.diff(b) > 0):
            raise ConfigurationError("bucket boundaries must be strictly increasing")
        self.boundaries = b

    @property
    def n_buckets(self) -> int:
        return len(self.boundaries) + 1

    def bucket(self, value: float) -> int:
        # right-open intervals; values above the last boundary take the last bucket
        return int(np.searchsorted(self.boundaries, value, side="right"))

    def bucket_many(self, values) -> np.ndarray:
        return np.searchsorted(self.boundaries, np.asarray(values, dtype=np.float64), side="right")


def fit_bucketizer(values, bins: int) -> Bucketizer:
    """Boundaries at empirical quantiles i/bins; duplicate quantiles collapse.

    When the data holds fewer distinct values than `bins`, the bin count
    degrades to the distinct-value count.
    """
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise ConfigurationError("cannot fit a bucketizer on empty input")
    if bins < 2:
        raise ConfigurationError("bins must be >= 2")
    n_distinct = len(np.unique(arr))
    eff = min(bins, n_distinct)
    if eff < 2:
        return Bucketizer([])
    qs = np.quantile(arr, [i / eff for i in range(1, eff)])
    return Bucketizer(np.unique(qs))


@dataclass
class InputEmbedding:
    """Concatenated per-field embedding vectors for one user and one item."""

    x_user: Tensor
    x_item: Tensor


class EmbeddingBank:
    """Embedding tables for every schema field, plus continuous bucketizers.

    Each table has shape (cardinality_or_buckets + 1, dim); row 0 is reserved
    for out-of-vocabulary and unseen values, so lookups are total.
    """

    def __init__(self, schema: FeatureSchema, tables: dict[str, Tensor], bucketizers: dict[str, Bucketizer]):
        self.schema = schema
        self.tables = tables
        self.bucketizers = bucketizers
        for f in schema.fields:
            if f.kind == "continuous" and f.name not in bucketizers:
                raise ConfigurationError(f"missing bucketizer for continuous field {f.name}")
            rows = self._n_rows(f)
            if tables[f.name].shape != (rows, f.dim):
                raise ConfigurationError(f"table for {f.name} must have shape ({rows}, {f.dim})")

    def _n_rows(self, f: FeatureField) -> int:
        if f.kind == "continuous":
            return self.bucketizers[f.name].n_buckets + 1
        return f.cardinality + 1

    @classmethod
    def initialize(cls, schema: FeatureSchema, bucketizers: dict[str, Bucketizer], rng: np.random.Generator) -> "EmbeddingBank":
        tables = {}
        for f in schema.fields:
            if f.kind == "continuous":
                rows = bucketizers[f.name].n_buckets + 1
            else:
                rows = f.cardinality + 1
            scale = 1.0 / math.sqrt(f.dim)
            tables[f.name] = Tensor(rng.uniform(-scale, scale, size=(rows, f.dim)), requires_grad=True)
        return cls(schema, tables, bucketizers)

    def lookup_index(self, f: FeatureField, value) -> int:
        """Row index for a raw feature value; 0 (OOV) when missing or unknown."""
        if value is None:
            return 0
        if f.kind == "continuous":
            return 1 + self.bucketizers[f.name].bucket(float(value))
        try:
            code = int(value)
        except (TypeError, ValueError):
            return 0
        if 0 <= code < f.cardinality:
            return 1 + code
        return 0

    def embed_side(self, side: str, feature_maps: Sequence[dict]) -> Tensor:
        """Batch embedding: one row of concatenated field vectors per instance."""
        parts = []
        for f in self.schema.side_fields(side):
            idx = np.array([self.lookup_index(f, m.get(f.name)) for m in feature_maps], dtype=np.int64)
            parts.append(take_rows(self.tables[f.name], idx))
        return concat(parts, axis=1)


def embed_instance(user_features: dict, item_features: dict, bank: EmbeddingBank) -> InputEmbedding:
    """Embed one (user, item) pair; gradients reach only the looked-up rows."""
    xu = bank.embed_side("user", [user_features])
    xi = bank.embed_side("item", [item_features])
    return InputEmbedding(x_user=xu, x_item=xi)


# -- dataset rows --------------------------------------------------------


@dataclass
class Row:
    user_id: int
    item_id: int
    user_features: dict
    item_features: dict
    labels: dict = field(default_factory=dict)
    teacher_p: float | None = None
    stage: str = STAGE_IMPRESSION

    def validate(self) -> None:
        if self.stage not in STAGES:
            raise SchemaError(f"unknown stage {self.stage!r} for item {self.item_id}")
        for name, v in self.labels.items():
            if v not in (0, 1):
                raise SchemaError(f"label {name} must be 0/1, got {v!r}")
        if self.stage != STAGE_IMPRESSION and any(self.labels.values()):
            raise SchemaError(
                f"{self.stage} item {self.item_id} carries a positive behavior label"
            )
        if self.teacher_p is not None and not (0.0 <= self.teacher_p <= 1.0):
            raise SchemaError(f"teacher_p out of [0,1]: {self.teacher_p}")

    def to_json(self) -> str:
        obj = {
            "user_id": self.user_id,
            "item_id": self.item_id,
            "user_features": self.user_features,
            "item_features": self.item_features,
            "labels": self.labels,
            "stage": self.stage,
        }
        if self.teacher_p is not None:
            obj["teacher_p"] = self.teacher_p
        return json.dumps(obj, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "Row":
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise SchemaError(f"malformed dataset line: {e}") from e
        row = cls(
            user_id=int(obj["user_id"]),
            item_id=int(obj["item_id"]),
            user_features=obj.get("user_features", {}),
            item_features=obj.get("item_features", {}),
            labels=obj.get("labels", {}),
            teacher_p=obj.get("teacher_p"),
            stage=obj.get("stage", STAGE_IMPRESSION),
        )
        row.validate()
        return row


def read_rows(path) -> list[Row]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(Row.from_json(line))
    return rows


def write_rows(path, rows: Iterable[Row]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(row.to_json() + "\n")
