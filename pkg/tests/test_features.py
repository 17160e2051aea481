"""Schema, bucketizer, and embedding lookup behavior."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prerank import autodiff as ad
from prerank.features import (
    Bucketizer,
    ConfigurationError,
    EmbeddingBank,
    FeatureSchema,
    Row,
    SchemaError,
    default_embedding_dim,
    embed_instance,
    fit_bucketizer,
    make_field,
)


def small_schema():
    return FeatureSchema(
        fields=(
            make_field("uid", "categorical", "user", 10),
            make_field("age", "continuous", "user", 4),
            make_field("iid", "categorical", "item", 10),
        )
    )


def small_bank(seed=0):
    schema = small_schema()
    bucketizers = {"age": fit_bucketizer(range(1, 101), 4)}
    return EmbeddingBank.initialize(schema, bucketizers, np.random.default_rng(seed))


class TestBucketizer:
    def test_quartile_boundaries(self):
        b = fit_bucketizer(range(1, 101), 4)
        np.testing.assert_allclose(b.boundaries, [25.75, 50.5, 75.25])

    def test_identical_values_single_bucket(self):
        b = fit_bucketizer([7.0] * 50, 4)
        assert b.n_buckets == 1
        assert b.bucket(7.0) == 0
        assert b.bucket(-100.0) == 0

    def test_two_distinct_values_collapse(self):
        b = fit_bucketizer([1.0, 2.0, 1.0, 2.0], 4)
        assert b.n_buckets == 2

    def test_empty_input_rejected(self):
        with pytest.raises(ConfigurationError):
            fit_bucketizer([], 4)

    def test_right_open_edges(self):
        b = Bucketizer([1.0, 2.0])
        assert b.bucket(0.5) == 0
        assert b.bucket(1.0) == 1  # boundary belongs to the right bin
        assert b.bucket(1.5) == 1
        assert b.bucket(99.0) == 2

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(st.integers(min_value=-10000, max_value=10000), min_size=8, max_size=200, unique=True),
        st.integers(min_value=2, max_value=8),
    )
    def test_equal_frequency_within_one(self, values, bins):
        values = [float(v) for v in values]
        b = fit_bucketizer(values, bins)
        counts = np.bincount(b.bucket_many(values), minlength=b.n_buckets)
        assert counts.max() - counts.min() <= 1

    def test_population_balance_on_distinct_grid(self):
        values = [float(v) for v in range(1, 101)]
        for bins in (2, 3, 4, 5, 8):
            b = fit_bucketizer(values, bins)
            counts = np.bincount(b.bucket_many(values), minlength=b.n_buckets)
            assert counts.max() - counts.min() <= 1


class TestSchema:
    def test_dimension_rule(self):
        assert default_embedding_dim(10) == 16
        assert default_embedding_dim(65536) == 16
        assert default_embedding_dim(200000) == 17

    def test_rule_applies_unless_overridden(self):
        f = make_field("a", "categorical", "user", 100)
        assert f.dim == 16
        g = make_field("a", "categorical", "user", 100, dim=8)
        assert g.dim == 8

    def test_needs_both_sides(self):
        with pytest.raises(ConfigurationError):
            FeatureSchema(fields=(make_field("uid", "categorical", "user", 5),))

    def test_parse_dump_roundtrip(self):
        schema = small_schema()
        again = FeatureSchema.parse(schema.dump())
        assert again == schema

    def test_parse_rejects_bad_line(self):
        with pytest.raises(ConfigurationError):
            FeatureSchema.parse("uid categorical user\n")


class TestEmbedding:
    def test_instance_shapes(self):
        bank = small_bank()
        emb = embed_instance({"uid": 3, "age": 30.0}, {"iid": 4}, bank)
        assert emb.x_user.shape == (1, 32)
        assert emb.x_item.shape == (1, 16)

    def test_shared_category_identical_vectors(self):
        bank = small_bank()
        a = embed_instance({"uid": 3, "age": 10.0}, {"iid": 4}, bank)
        b = embed_instance({"uid": 3, "age": 90.0}, {"iid": 4}, bank)
        np.testing.assert_array_equal(a.x_user.data[0, :16], b.x_user.data[0, :16])
        np.testing.assert_array_equal(a.x_item.data, b.x_item.data)

    def test_oov_is_total(self):
        bank = small_bank()
        emb = embed_instance({"uid": 999, "age": None}, {"iid": "junk"}, bank)
        np.testing.assert_array_equal(emb.x_user.data[0, :16], bank.tables["uid"].data[0])
        np.testing.assert_array_equal(emb.x_item.data[0], bank.tables["iid"].data[0])

    def test_gradient_only_on_touched_rows(self):
        bank = small_bank()
        emb = embed_instance({"uid": 3, "age": 30.0}, {"iid": 4}, bank)
        loss = ad.reduce_sum(ad.add(ad.reduce_sum(emb.x_user), ad.reduce_sum(emb.x_item)))
        loss.backward()
        grad = bank.tables["uid"].grad
        assert grad is not None
        touched = np.zeros(grad.shape[0], dtype=bool)
        touched[4] = True  # category 3 lives in row 4 (row 0 is OOV)
        assert (grad[touched] != 0).any()
        assert (grad[~touched] == 0).all()

    def test_init_scale(self):
        bank = small_bank()
        for f in bank.schema.fields:
            table = bank.tables[f.name].data
            assert np.abs(table).max() <= 1.0 / np.sqrt(f.dim) + 1e-12


class TestRows:
    def test_roundtrip(self):
        row = Row(1, 2, {"uid": 1}, {"iid": 2}, {"click": 1}, 0.5, "impression")
        again = Row.from_json(row.to_json())
        assert again == row

    def test_candidate_with_positive_label_rejected(self):
        row = Row(1, 2, {}, {}, {"click": 1}, None, "candidate")
        with pytest.raises(SchemaError):
            row.validate()

    def test_unknown_stage_rejected(self):
        with pytest.raises(SchemaError):
            Row(1, 2, {}, {}, {}, None, "shown").validate()
