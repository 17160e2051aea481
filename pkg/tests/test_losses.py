"""Pinned hand-computed values and structural properties for every loss."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prerank import autodiff as ad
from prerank.autodiff import Tensor
from prerank.features import ConfigurationError
from prerank.losses import (
    HybridWeights,
    ListScores,
    distillation_loss,
    hybrid_loss,
    listwise_softmax_loss,
    margin_rankmax_loss,
    pair_margin,
    pairwise_logistic_loss,
    rankmax_loss,
    softsort,
    softsort_numpy,
    sorting_loss,
    weighted_logloss,
)

# frozen via direct enumeration of both 3x3 permutation matrices
SORTING_LOSS_REVERSED_3 = 7.930422443437395


def make_group(z, y, stages, p=None):
    return ListScores(z=Tensor(np.asarray(z, float)), y=np.asarray(y, float), stages=np.asarray(stages, object), p=p)


class TestSoftSort:
    def test_descending_input_hardens_to_identity(self):
        s = Tensor([5.0, 3.0, 1.0])
        m = softsort(s, tau=1e-4)
        np.testing.assert_allclose(m.data, np.eye(3), atol=1e-9)

    def test_two_swapped_items_harden_to_antidiagonal(self):
        m = softsort(Tensor([1.0, 3.0]), tau=1e-4)
        np.testing.assert_allclose(m.data, [[0.0, 1.0], [1.0, 0.0]], atol=1e-9)

    def test_pinned_first_row(self):
        m = softsort(Tensor([2.0, 1.0, 3.0]), tau=1.0, power=2.0)
        np.testing.assert_allclose(m.data[0], [0.2654, 0.0132, 0.7214], atol=5e-5)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        m = softsort(Tensor(rng.normal(size=7)), tau=0.7)
        np.testing.assert_allclose(m.data.sum(axis=1), np.ones(7), atol=1e-9)
        assert (m.data >= 0).all() and (m.data <= 1).all()

    def test_shift_invariance(self):
        rng = np.random.default_rng(1)
        v = rng.normal(size=6)
        a = softsort(Tensor(v), tau=1.0).data
        b = softsort(Tensor(v + 123.456), tau=1.0).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_rows_unimodal_for_squared_distance(self):
        rng = np.random.default_rng(2)
        v = rng.normal(size=8) * 3
        m = softsort(Tensor(v), tau=0.5, power=2.0).data
        order = np.argsort(-v, kind="stable")
        for r in range(8):
            row = m[r][order]  # columns arranged by descending value
            peak = row.argmax()
            assert (np.diff(row[: peak + 1]) >= -1e-15).all()
            assert (np.diff(row[peak:]) <= 1e-15).all()
            assert order[peak] == order[r]  # peak sits at the rank-r element

    def test_requires_positive_temperature(self):
        with pytest.raises(ConfigurationError):
            softsort(Tensor([1.0, 2.0]), tau=0.0)

    def test_matches_numpy_reference(self):
        rng = np.random.default_rng(3)
        v = rng.normal(size=5)
        np.testing.assert_allclose(softsort(Tensor(v), 0.9, 2.0).data, softsort_numpy(v, 0.9, 2.0), atol=1e-12)


class TestSortingLoss:
    def test_matching_scores_minimize(self):
        rng = np.random.default_rng(4)
        y = np.array([3.0, 2.0, 1.0, 0.0])
        base = sorting_loss(Tensor(y.copy()), y).item()
        for _ in range(10):
            z = y + rng.normal(size=4) * 0.5
            assert sorting_loss(Tensor(z), y).item() >= base - 1e-12

    def test_single_item_contributes_zero(self):
        assert sorting_loss(Tensor([1.0]), [1.0]).item() == 0.0

    def test_regression_pin_reversed_list(self):
        got = sorting_loss(Tensor([0.0, 1.0, 2.0]), [2.0, 1.0, 0.0], tau=1.0, power=2.0)
        np.testing.assert_allclose(got.item(), SORTING_LOSS_REVERSED_3, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(min_value=0, max_value=2**31 - 1))
    def test_permutation_equivariance(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 7))
        z = rng.normal(size=n)
        y = rng.integers(0, 3, size=n).astype(float)
        perm = rng.permutation(n)
        a = sorting_loss(Tensor(z), y).item()
        b = sorting_loss(Tensor(z[perm]), y[perm]).item()
        assert abs(a - b) < 1e-9


class TestDistillation:
    def test_uniform_teacher_uniform_logits_gives_log_n(self):
        for n in (2, 3, 5):
            got = distillation_loss(Tensor(np.zeros(n)), np.full(n, 0.5))
            np.testing.assert_allclose(got.item(), math.log(n), atol=1e-12)

    def test_one_hot_reduces_to_cross_entropy(self):
        z = Tensor([0.3, -0.2, 1.1])
        p = np.array([0.0, 1.0, 0.0])
        got = distillation_loss(z, p).item()
        expected = -ad.log_softmax(z).data[1]
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_pinned_ln2_case(self):
        got = distillation_loss(Tensor([0.0, 0.0]), np.array([0.75, 0.25]))
        np.testing.assert_allclose(got.item(), math.log(2.0), atol=1e-12)

    def test_no_teacher_mass_contributes_zero(self):
        assert distillation_loss(Tensor([1.0, 2.0]), np.zeros(2)).item() == 0.0

    def test_rejects_out_of_range(self):
        with pytest.raises(ConfigurationError):
            distillation_loss(Tensor([0.0, 0.0]), np.array([1.5, 0.0]))


class TestRankmax:
    def test_pinned_log2_case(self):
        got = rankmax_loss(Tensor([0.0, 0.0]), np.array([1.0, 0.0]))
        np.testing.assert_allclose(got.item(), math.log(2.0), atol=1e-12)

    def test_saturated_hinges_give_zero(self):
        got = rankmax_loss(Tensor([5.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]))
        np.testing.assert_allclose(got.item(), 0.0, atol=1e-12)

    def test_single_positive_alone_is_zero(self):
        assert rankmax_loss(Tensor([3.0]), np.array([1.0])).item() == 0.0

    def test_no_positives_contribute_zero(self):
        assert rankmax_loss(Tensor([1.0, 2.0]), np.zeros(2)).item() == 0.0


class TestPairMargin:
    def test_negative_lower_item_gets_alpha_bump(self):
        assert pair_margin(0.0, 2.0, alpha=3.0) == 4.0

    def test_positive_lower_item_gets_no_bump(self):
        assert pair_margin(1.0, 2.0, alpha=3.0) == 1.0

    def test_powered_label_distance(self):
        got = pair_margin(0.0, 2.0, alpha=2.0, delta_kind="powered", delta_beta=0.5, delta_power=2.0)
        assert got == 4.0


class TestMarginRankmax:
    def test_loss_floor_is_exactly_zero(self):
        got = margin_rankmax_loss(Tensor([5.0, 3.0, 0.0]), np.array([2.0, 1.0, 0.0]), alpha=1.0)
        np.testing.assert_allclose(got.item(), 0.0, atol=1e-15)

    def test_binary_labels_match_plain_rankmax_value(self):
        got = margin_rankmax_loss(Tensor([0.0, 0.0]), np.array([1.0, 0.0]), alpha=0.0)
        np.testing.assert_allclose(got.item(), math.log(2.0), atol=1e-12)

    def test_translation_invariance(self):
        rng = np.random.default_rng(6)
        z = rng.normal(size=6)
        y = np.array([2.0, 1.0, 1.0, 0.0, 0.0, 0.0])
        a = margin_rankmax_loss(Tensor(z), y).item()
        b = margin_rankmax_loss(Tensor(z + 17.3), y).item()
        assert abs(a - b) < 1e-9

    @settings(max_examples=30, deadline=None)
    @given(st.integers(min_value=0, max_value=2**31 - 1))
    def test_nonincreasing_in_positive_score_binary_labels(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 7))
        y = np.zeros(n)
        y[int(rng.integers(0, n))] = 1.0
        z = rng.normal(size=n)
        j = int(np.flatnonzero(y)[0])
        before = margin_rankmax_loss(Tensor(z.copy()), y).item()
        z[j] += abs(rng.normal()) + 0.1
        after = margin_rankmax_loss(Tensor(z), y).item()
        assert after <= before + 1e-12


class TestHybrid:
    def small_group(self):
        stages = ["impression", "impression", "impression", "candidate", "random", "random"]
        y = [3.0, 1.0, 1.0, 0.0, 0.0, 0.0]
        p = [0.9, 0.4, 0.2, np.nan, np.nan, np.nan]
        z = [0.4, -0.3, 0.2, -0.6, 0.1, -0.8]
        return make_group(z, y, stages, p)

    def test_distill_only_reduction(self):
        g = self.small_group()
        w = HybridWeights(distill=2.5, sorting=0.0, ranking=0.0)
        idx = np.flatnonzero(g.impression_mask)
        expected = 2.5 * distillation_loss(ad.take_rows(g.z, idx), g.p[idx]).item()
        np.testing.assert_allclose(hybrid_loss(g, w).item(), expected, atol=1e-12)

    def test_single_item_group_is_zero(self):
        g = make_group([0.5], [1.0], ["impression"], [0.7])
        assert hybrid_loss(g, HybridWeights()).item() == 0.0

    def test_all_components_positive_weights_add(self):
        g = self.small_group()
        full = hybrid_loss(g, HybridWeights(distill=1.0, sorting=1.0, ranking=1.0)).item()
        parts = (
            hybrid_loss(g, HybridWeights(distill=1.0, sorting=0.0, ranking=0.0)).item()
            + hybrid_loss(g, HybridWeights(distill=0.0, sorting=1.0, ranking=0.0)).item()
            + hybrid_loss(g, HybridWeights(distill=0.0, sorting=0.0, ranking=1.0)).item()
        )
        np.testing.assert_allclose(full, parts, rtol=1e-12)

    def test_finite_difference_six_item_group(self):
        g = self.small_group()

        def loss(z):
            group = ListScores(z=z, y=g.y, stages=g.stages, p=g.p)
            return hybrid_loss(group, HybridWeights())

        err = ad.finite_difference_check(loss, Tensor(g.z.data.copy()))
        assert err < 1e-4

    def test_weights_validation(self):
        with pytest.raises(ConfigurationError):
            HybridWeights(distill=0.0, sorting=0.0, ranking=0.0)
        with pytest.raises(ConfigurationError):
            HybridWeights(sort_temperature=0.0)

    def test_p_must_cover_exactly_impressions(self):
        with pytest.raises(ConfigurationError):
            make_group([0.1, 0.2], [1.0, 0.0], ["impression", "candidate"], [0.5, 0.5])


class TestAblationLosses:
    def test_listwise_softmax_one_hot_is_cross_entropy(self):
        z = Tensor([0.1, 0.9, -0.4])
        y = np.array([0.0, 1.0, 0.0])
        expected = -ad.log_softmax(z).data[1]
        np.testing.assert_allclose(listwise_softmax_loss(z, y).item(), expected, atol=1e-12)

    def test_pairwise_logistic_saturates_when_ordered(self):
        got = pairwise_logistic_loss(Tensor([30.0, 0.0]), np.array([1.0, 0.0]))
        assert got.item() < 1e-9

    def test_weighted_logloss_minimum_is_entropy(self):
        p = np.array([0.2, 0.7, 0.5])
        at_p = weighted_logloss(Tensor(p.copy()), p).item()
        entropy = -(p * np.log(p) + (1 - p) * np.log(1 - p)).sum()
        np.testing.assert_allclose(at_p, entropy, atol=1e-9)
        rng = np.random.default_rng(7)
        for _ in range(10):
            q = np.clip(p + rng.normal(size=3) * 0.2, 1e-6, 1 - 1e-6)
            assert weighted_logloss(Tensor(q), p).item() >= at_p - 1e-12


LOSS_FD_CASES = [
    ("sorting", lambda z, y, p: sorting_loss(z, y, tau=0.8, power=2.0)),
    ("distillation", lambda z, y, p: distillation_loss(z, p)),
    ("rankmax", lambda z, y, p: rankmax_loss(z, (y > 0).astype(float))),
    ("margin_rankmax", lambda z, y, p: margin_rankmax_loss(z, y, alpha=2.0)),
    ("listwise_softmax", lambda z, y, p: listwise_softmax_loss(z, y)),
    ("pairwise_logistic", lambda z, y, p: pairwise_logistic_loss(z, y)),
]


@pytest.mark.parametrize("name,fn", LOSS_FD_CASES, ids=[c[0] for c in LOSS_FD_CASES])
def test_finite_difference_every_loss(name, fn):
    for seed in range(5):
        rng = np.random.default_rng(2000 + seed)
        n = int(rng.integers(3, 9))
        y = rng.integers(0, 3, size=n).astype(float)
        if not (y > 0).any():
            y[0] = 1.0
        p = rng.uniform(0.05, 0.95, size=n)
        z = Tensor(rng.normal(size=n))
        err = ad.finite_difference_check(lambda t: fn(t, y, p), z)
        assert err < 1e-4, f"{name} seed {seed}: rel error {err}"
