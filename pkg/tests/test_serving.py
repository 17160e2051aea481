"""Embedding store format, round trips, and online/training parity."""

import hashlib

import numpy as np
import pytest

from prerank.features import FeatureSchema, fit_bucketizer, make_field
from prerank.model import ModelConfig, PreRankingModel
from prerank.serving import (
    EmbeddingStore,
    NotFoundError,
    OnlineScorer,
    StoreError,
    export_embeddings,
    load_store,
    write_store,
)

MCFG = ModelConfig(heads_user=2, heads_item=3, sub_dim=4, tower_hidden=(8,), reduction_ratio=2)


def small_model(seed=0):
    schema = FeatureSchema(
        fields=(
            make_field("uid", "categorical", "user", 10, dim=6),
            make_field("ux", "continuous", "user", 4, dim=6),
            make_field("iid", "categorical", "item", 40, dim=6),
            make_field("ix", "continuous", "item", 4, dim=6),
        )
    )
    bucketizers = {"ux": fit_bucketizer(np.linspace(0, 1, 50), 4), "ix": fit_bucketizer(np.linspace(-2, 2, 50), 4)}
    return PreRankingModel.build(schema, bucketizers, MCFG, seed)


def user_feats(uid):
    return {"uid": uid, "ux": (uid % 7) / 7.0}


def item_feats(iid):
    return {"iid": iid, "ix": ((iid * 37) % 100) / 25.0 - 2.0}


class TestStoreFormat:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        ids = np.arange(17)
        vectors = rng.normal(size=(17, 3, 4))
        path = tmp_path / "items.emb"
        write_store(path, "item", 3, 4, ids, vectors)
        store = load_store(path)
        assert len(store) == 17
        for i in ids:
            assert np.array_equal(store.get(int(i)), vectors[i])

    def test_file_size_formula(self, tmp_path):
        rng = np.random.default_rng(1)
        path = tmp_path / "u.emb"
        write_store(path, "user", 2, 5, np.arange(9), rng.normal(size=(9, 2, 5)))
        expected = EmbeddingStore.file_size(9, 2, 5)
        assert path.stat().st_size == expected

    def test_missing_id_error_names_id(self, tmp_path):
        path = tmp_path / "u.emb"
        write_store(path, "user", 1, 2, [3, 4], np.zeros((2, 1, 2)))
        store = load_store(path)
        with pytest.raises(NotFoundError, match="77"):
            store.get(77)

    def test_duplicate_ids_rejected(self, tmp_path):
        with pytest.raises(StoreError):
            write_store(tmp_path / "d.emb", "user", 1, 2, [5, 5], np.zeros((2, 1, 2)))

    def test_corrupt_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.emb"
        path.write_bytes(b"NOPE" + b"\x00" * 40)
        with pytest.raises(StoreError):
            load_store(path)

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "t.emb"
        write_store(path, "item", 2, 2, [1, 2, 3], np.ones((3, 2, 2)))
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(StoreError, match="truncated"):
            load_store(path)


class TestExport:
    def test_export_is_deterministic(self, tmp_path):
        model = small_model()
        entities = [(i, item_feats(i)) for i in range(20)]
        a, b = tmp_path / "a.emb", tmp_path / "b.emb"
        export_embeddings(model, entities, "item", a)
        export_embeddings(model, entities, "item", b)
        assert hashlib.sha256(a.read_bytes()).hexdigest() == hashlib.sha256(b.read_bytes()).hexdigest()

    def test_oov_entities_still_exported(self, tmp_path):
        model = small_model()
        entities = [(999, {"iid": 99999, "ix": None})]
        path = tmp_path / "oov.emb"
        export_embeddings(model, entities, "item", path)
        assert 999 in load_store(path)

    def test_unknown_side_rejected(self, tmp_path):
        with pytest.raises(StoreError):
            export_embeddings(small_model(), [], "query", tmp_path / "x.emb")


class TestParity:
    def test_online_scores_match_training_forward(self, tmp_path):
        model = small_model(seed=3)
        users = [(u, user_feats(u)) for u in range(10)]
        items = [(i, item_feats(i)) for i in range(40)]
        user_path, item_path = tmp_path / "u.emb", tmp_path / "i.emb"
        export_embeddings(model, users, "user", user_path)
        export_embeddings(model, items, "item", item_path)
        scorer = OnlineScorer(model.cross, model.head, load_store(user_path), load_store(item_path))

        item_ids = [i for i, _ in items]
        worst = 0.0
        for uid, uf in users:
            online = scorer.score(uid, item_ids)
            direct = model.score_list(uf, [f for _, f in items]).data.reshape(-1)
            worst = max(worst, np.abs(online - direct).max())
        assert worst < 1e-9

    def test_top_k_agreement(self, tmp_path):
        model = small_model(seed=4)
        users = [(u, user_feats(u)) for u in range(4)]
        items = [(i, item_feats(i)) for i in range(30)]
        export_embeddings(model, users, "user", tmp_path / "u.emb")
        export_embeddings(model, items, "item", tmp_path / "i.emb")
        scorer = OnlineScorer(model.cross, model.head, load_store(tmp_path / "u.emb"), load_store(tmp_path / "i.emb"))
        ids = [i for i, _ in items]
        for uid, uf in users:
            online = scorer.score(uid, ids)
            direct = model.score_list(uf, [f for _, f in items]).data.reshape(-1)
            assert list(np.argsort(-online)[:5]) == list(np.argsort(-direct)[:5])

    def test_scoring_builds_no_graph(self, tmp_path):
        model = small_model(seed=5)
        export_embeddings(model, [(0, user_feats(0))], "user", tmp_path / "u.emb")
        export_embeddings(model, [(1, item_feats(1))], "item", tmp_path / "i.emb")
        scorer = OnlineScorer(model.cross, model.head, load_store(tmp_path / "u.emb"), load_store(tmp_path / "i.emb"))
        scorer.score(0, [1])
        for t in model.parameters().values():
            assert t.grad is None
