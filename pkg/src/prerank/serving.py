"""Decoupled serving: batch export of tower sub-space embeddings to a binary
store, and an online scorer that loads stored embeddings and runs only the
cross-attention and similarity head.

Store layout (little-endian): magic "EMBS", format version u32, side u8
(0 user / 1 item), heads u32, sub_dim u32, count u64, then per record an
id u64 followed by heads*sub_dim float64 values. Stores are read-only
after load; scoring never touches embedding tables or tower parameters.
"""

from __future__ import annotations

import struct

import numpy as np

from .autodiff import Tensor, no_grad
from .interaction import CrossAttentionParams, MaxSimHead, cross_attend, maxsim_score
from .model import PreRankingModel
from .towers import tower_forward

MAGIC = b"EMBS"
VERSION = 1
HEADER = struct.Struct("<4sIBIIQ")
SIDES = {"user": 0, "item": 1}


class StoreError(RuntimeError):
    pass


class NotFoundError(KeyError):
    """An id requested from a store that does not hold it."""


class EmbeddingStore:
    """In-memory view of a store file with an id -> row index."""

    def __init__(self, side: str, heads: int, sub_dim: int, ids: np.ndarray, vectors: np.ndarray):
        if len(set(ids.tolist())) != len(ids):
            raise StoreError("duplicate ids in embedding store")
        self.side = side
        self.heads = heads
        self.sub_dim = sub_dim
        self.ids = ids
        self.vectors = vectors  # (count, heads * sub_dim)
        self._index = {int(i): row for row, i in enumerate(ids)}

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, entity_id: int) -> bool:
        return int(entity_id) in self._index

    def get(self, entity_id: int) -> np.ndarray:
        try:
            row = self._index[int(entity_id)]
        except KeyError:
            raise NotFoundError(f"{self.side} id {entity_id} not present in store") from None
        return self.vectors[row].reshape(self.heads, self.sub_dim)

    @staticmethod
    def file_size(count: int, heads: int, sub_dim: int) -> int:
        return HEADER.size + count * (8 + 8 * heads * sub_dim)


def write_store(path, side: str, heads: int, sub_dim: int, ids, vectors: np.ndarray) -> None:
    """Write one record per entity; vectors shaped (count, heads, sub_dim)
    or (count, heads*sub_dim)."""
    ids = np.asarray(ids, dtype=np.uint64)
    flat = np.ascontiguousarray(vectors, dtype=np.float64).reshape(len(ids), heads * sub_dim)
    if len(set(ids.tolist())) != len(ids):
        raise StoreError("duplicate ids passed to write_store")
    try:
        with open(path, "wb") as fh:
            fh.write(HEADER.pack(MAGIC, VERSION, SIDES[side], heads, sub_dim, len(ids)))
            for i, row in zip(ids, flat):
                fh.write(struct.pack("<Q", int(i)))
                fh.write(row.tobytes())
    except OSError as e:
        raise StoreError(f"cannot write store {path}: {e}") from e


def load_store(path) -> EmbeddingStore:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as e:
        raise StoreError(f"cannot read store {path}: {e}") from e
    if len(blob) < HEADER.size or blob[:4] != MAGIC:
        raise StoreError(f"{path}: not an embedding store")
    magic, version, side_code, heads, sub_dim, count = HEADER.unpack_from(blob, 0)
    if version != VERSION:
        raise StoreError(f"{path}: unsupported store version {version}")
    record = 8 + 8 * heads * sub_dim
    expected = HEADER.size + count * record
    if len(blob) != expected:
        raise StoreError(f"{path}: truncated store ({len(blob)} bytes, expected {expected})")
    side = {v: k for k, v in SIDES.items()}[side_code]
    ids = np.empty(count, dtype=np.uint64)
    vectors = np.empty((count, heads * sub_dim), dtype=np.float64)
    off = HEADER.size
    for row in range(count):
        (ids[row],) = struct.unpack_from("<Q", blob, off)
        off += 8
        vectors[row] = np.frombuffer(blob, dtype="<f8", count=heads * sub_dim, offset=off)
        off += 8 * heads * sub_dim
    return EmbeddingStore(side, heads, sub_dim, ids, vectors)


def export_embeddings(model: PreRankingModel, entities: list[tuple[int, dict]], side: str, path, batch_size: int = 256) -> None:
    """Run features + tower forward for every entity and persist the
    pre-attention sub-space embeddings (the stored quantity; attention
    depends on the user-item pairing and runs online)."""
    if side not in SIDES:
        raise StoreError(f"unknown side {side!r}")
    heads = model.config.heads_user if side == "user" else model.config.heads_item
    ids = [int(e[0]) for e in entities]
    chunks = []
    with no_grad():
        for lo in range(0, len(entities), batch_size):
            feats = [e[1] for e in entities[lo : lo + batch_size]]
            if side == "user":
                e = tower_forward(model.bank.embed_side("user", feats), model.user_tower)
            else:
                e = model.item_subspaces(feats)
            chunks.append(e.data.reshape(len(feats), -1))
    vectors = np.concatenate(chunks, axis=0) if chunks else np.zeros((0, heads * model.config.sub_dim))
    write_store(path, side, heads, model.config.sub_dim, ids, vectors)


class OnlineScorer:
    """Scores (user, items) pairs from stored embeddings; only the
    cross-attention branches and the similarity head run per request."""

    def __init__(self, cross: CrossAttentionParams, head: MaxSimHead, user_store: EmbeddingStore, item_store: EmbeddingStore):
        self.cross = cross
        self.head = head
        self.user_store = user_store
        self.item_store = item_store

    def score(self, user_id: int, item_ids: list[int]) -> np.ndarray:
        e_u = Tensor(self.user_store.get(user_id))
        stacked = np.stack([self.item_store.get(i) for i in item_ids])
        e_i = Tensor(stacked)
        with no_grad():
            att_u, att_i = cross_attend(e_u, e_i, self.cross)
            z = maxsim_score(att_u, att_i, self.head)
        return z.data.reshape(-1)
