"""Listwise training objectives.

Components of the hybrid objective, each evaluated on its own sample scope
within a list group:
  * teacher distillation (impressions only): softmax cross-entropy against
    normalized teacher probabilities;
  * sorting loss (impressions + funnel candidates): cross-entropy between
    soft permutation matrices of labels and logits;
  * margin ranking loss (all stages): a hinge-inside-log listwise loss with
    a pair-adaptive margin for graded labels.

Also hosts the plain rankmax loss and the ablation losses (listwise softmax,
pairwise logistic, weighted logloss).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    absolute,
    add,
    log,
    log_softmax,
    maximum_scalar,
    mul,
    pow_const,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    row_softmax,
    softplus,
    sub,
    take_rows,
)
from .features import STAGE_CANDIDATE, STAGE_IMPRESSION, ConfigurationError


@dataclass(frozen=True)
class HybridWeights:
    """Loss weights and the knobs of the sorting and margin components."""

    distill: float = 1.0
    sorting: float = 1.0
    ranking: float = 1.0
    sort_temperature: float = 1.0
    sort_power: float = 2.0
    margin_alpha: float = 3.0
    delta_kind: str = "constant"  # constant: delta == 1; powered: beta * |dy|^p
    delta_beta: float = 1.0
    delta_power: float = 1.0

    def __post_init__(self):
        if self.distill < 0 or self.sorting < 0 or self.ranking < 0:
            raise ConfigurationError("loss weights must be nonnegative")
        if self.distill == 0 and self.sorting == 0 and self.ranking == 0:
            raise ConfigurationError("at least one loss weight must be positive")
        if self.sort_temperature <= 0:
            raise ConfigurationError("sort_temperature must be positive")
        if self.sort_power < 1:
            raise ConfigurationError("sort_power must be >= 1")
        if self.delta_kind not in ("constant", "powered"):
            raise ConfigurationError(f"unknown delta_kind {self.delta_kind!r}")


@dataclass
class ListScores:
    """Model logits plus labels, stage tags, and teacher probabilities for
    one user's list. Teacher probabilities are defined exactly on the
    impression members (NaN elsewhere)."""

    z: Tensor
    y: np.ndarray
    stages: np.ndarray
    p: np.ndarray | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        self.stages = np.asarray(self.stages, dtype=object)
        n = self.z.data.reshape(-1).shape[0]
        if len(self.y) != n or len(self.stages) != n:
            raise ConfigurationError("z, y, and stages must have equal length")
        if self.p is not None:
            self.p = np.asarray(self.p, dtype=np.float64)
            if len(self.p) != n:
                raise ConfigurationError("p must match the list length")
            defined = ~np.isnan(self.p)
            if not np.array_equal(defined, self.stages == STAGE_IMPRESSION):
                raise ConfigurationError("teacher p must be defined exactly on impressions")

    @property
    def impression_mask(self) -> np.ndarray:
        return self.stages == STAGE_IMPRESSION

    @property
    def sorted_scope_mask(self) -> np.ndarray:
        return (self.stages == STAGE_IMPRESSION) | (self.stages == STAGE_CANDIDATE)


def _zero() -> Tensor:
    return Tensor(0.0)


def _descending_order(values: np.ndarray) -> np.ndarray:
    # stable: ties keep original index order
    return np.argsort(-np.asarray(values, dtype=np.float64), kind="stable")


def softsort(s: Tensor, tau: float, power: float = 2.0) -> Tensor:
    """Row-stochastic relaxation of the descending-sort permutation matrix.

    Row r is the row softmax of -|sorted(s)_r - s|^power / tau, so it peaks
    at the element holding rank r; as tau -> 0 the matrix hardens to the
    exact permutation.
    """
    if tau <= 0:
        raise ConfigurationError("softsort temperature must be positive")
    if power < 1:
        raise ConfigurationError("softsort power must be >= 1")
    n = s.data.reshape(-1).shape[0]
    order = _descending_order(s.data)
    sorted_s = take_rows(s, order)
    diffs = absolute(sub(reshape(sorted_s, (n, 1)), reshape(s, (1, n))))
    return row_softmax(mul(pow_const(diffs, power), -1.0 / tau))


def softsort_numpy(values: np.ndarray, tau: float, power: float = 2.0) -> np.ndarray:
    """Graph-free softsort for constant targets (labels)."""
    v = np.asarray(values, dtype=np.float64)
    s = v[_descending_order(v)]
    d = -np.abs(s[:, None] - v[None, :]) ** power / tau
    e = np.exp(d - d.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _softsort_log_probs(s: Tensor, tau: float, power: float) -> Tensor:
    n = s.data.reshape(-1).shape[0]
    order = _descending_order(s.data)
    sorted_s = take_rows(s, order)
    diffs = absolute(sub(reshape(sorted_s, (n, 1)), reshape(s, (1, n))))
    return log_softmax(mul(pow_const(diffs, power), -1.0 / tau))


def sorting_loss(z: Tensor, y: np.ndarray, tau: float = 1.0, power: float = 2.0) -> Tensor:
    """Cross-entropy between the soft permutation matrices of labels and
    logits. Lists shorter than 2 contribute nothing."""
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    if n < 2:
        return _zero()
    target = softsort_numpy(y, tau, power)
    logp = _softsort_log_probs(z, tau, power)
    return mul(reduce_sum(mul(Tensor(target), logp)), -1.0)


def distillation_loss(z: Tensor, p: np.ndarray) -> Tensor:
    """Softmax cross-entropy against teacher probabilities normalized to a
    distribution. No teacher mass (sum p == 0) contributes nothing."""
    p = np.asarray(p, dtype=np.float64)
    if ((p < 0) | (p > 1)).any():
        raise ConfigurationError("teacher probabilities must lie in [0, 1]")
    if len(p) < 2:
        return _zero()
    total = p.sum()
    if total <= 0:
        return _zero()
    target = p / total
    return mul(reduce_sum(mul(Tensor(target), log_softmax(z))), -1.0)


def rankmax_loss(z: Tensor, y: np.ndarray) -> Tensor:
    """Listwise hinge-inside-log loss for binary labels: for each positive j,
    log of the sum over all items of (z_i - z_j + 1)_+ (self term included)."""
    y = np.asarray(y, dtype=np.float64)
    pos = np.flatnonzero(y > 0)
    if pos.size == 0:
        return _zero()
    n = len(y)
    diffs = add(sub(reshape(z, (1, n)), reshape(z, (n, 1))), 1.0)  # [j, i] = z_i - z_j + 1
    sums = reduce_sum(relu(diffs), axis=1)
    return reduce_sum(log(take_rows(sums, pos)))


def pair_margin(
    y_i: float,
    y_j: float,
    alpha: float,
    delta_kind: str = "constant",
    delta_beta: float = 1.0,
    delta_power: float = 1.0,
) -> float:
    """Margin demanded of a pair with y_i < y_j: a constant bump when the
    lower item is a flat negative, plus a label-distance term."""
    bump = alpha if y_i == 0 else 0.0
    if delta_kind == "constant":
        return bump + 1.0
    if delta_kind == "powered":
        return bump + delta_beta * abs(y_i - y_j) ** delta_power
    raise ConfigurationError(f"unknown delta_kind {delta_kind!r}")


def margin_rankmax_loss(
    z: Tensor,
    y: np.ndarray,
    alpha: float = 3.0,
    delta_kind: str = "constant",
    delta_beta: float = 1.0,
    delta_power: float = 1.0,
) -> Tensor:
    """Graded-label extension of the rankmax loss: for each positive j, only
    items with strictly lower labels compete, each with its pair margin; the
    retained +1 self term keeps the loss floored at exactly 0."""
    y = np.asarray(y, dtype=np.float64)
    pos = np.flatnonzero(y > 0)
    if pos.size == 0:
        return _zero()
    n = len(y)
    valid = (y[None, :] < y[:, None]).astype(np.float64)  # [j, i] = 1 iff y_i < y_j
    margins = np.zeros((n, n))
    for j in range(n):
        for i in range(n):
            if valid[j, i]:
                margins[j, i] = pair_margin(y[i], y[j], alpha, delta_kind, delta_beta, delta_power)
    diffs = add(sub(reshape(z, (1, n)), reshape(z, (n, 1))), Tensor(margins))
    hinges = mul(relu(diffs), Tensor(valid))
    sums = add(reduce_sum(hinges, axis=1), 1.0)
    return reduce_sum(log(take_rows(sums, pos)))


def hybrid_loss(group: ListScores, weights: HybridWeights) -> Tensor:
    """Weighted sum of the three components, each on its mandated scope:
    distillation on impressions, sorting on impressions + candidates,
    margin ranking on the full list."""
    total = _zero()
    if weights.distill > 0 and group.p is not None:
        idx = np.flatnonzero(group.impression_mask)
        if idx.size >= 2:
            comp = distillation_loss(take_rows(group.z, idx), group.p[idx])
            total = add(total, mul(comp, weights.distill))
    if weights.sorting > 0:
        idx = np.flatnonzero(group.sorted_scope_mask)
        if idx.size >= 2:
            comp = sorting_loss(
                take_rows(group.z, idx), group.y[idx], weights.sort_temperature, weights.sort_power
            )
            total = add(total, mul(comp, weights.sorting))
    if weights.ranking > 0:
        comp = margin_rankmax_loss(
            group.z,
            group.y,
            weights.margin_alpha,
            weights.delta_kind,
            weights.delta_beta,
            weights.delta_power,
        )
        total = add(total, mul(comp, weights.ranking))
    return total


# -- ablation losses -----------------------------------------------------


def listwise_softmax_loss(z: Tensor, y: np.ndarray) -> Tensor:
    """Softmax cross-entropy against labels normalized to a distribution."""
    y = np.asarray(y, dtype=np.float64)
    total = y.sum()
    if len(y) < 2 or total <= 0:
        return _zero()
    return mul(reduce_sum(mul(Tensor(y / total), log_softmax(z))), -1.0)


def pairwise_logistic_loss(z: Tensor, targets: np.ndarray) -> Tensor:
    """Mean logistic loss over ordered pairs (t_i > t_j demands z_i > z_j)."""
    t = np.asarray(targets, dtype=np.float64)
    n = len(t)
    hi, lo = np.nonzero(t[:, None] > t[None, :])
    if hi.size == 0:
        return _zero()
    gaps = sub(take_rows(z, hi), take_rows(z, lo))
    return reduce_mean(softplus(mul(gaps, -1.0)))


def weighted_logloss(yhat: Tensor, p: np.ndarray, weights: np.ndarray | None = None, eps: float = 1e-12) -> Tensor:
    """Weighted cross-entropy of probabilities against soft targets; at
    yhat == p it equals the total entropy of p (its minimum)."""
    p = np.asarray(p, dtype=np.float64)
    w = np.ones_like(p) if weights is None else np.asarray(weights, dtype=np.float64)
    pos = mul(Tensor(p * w), log(maximum_scalar(yhat, eps)))
    neg = mul(Tensor((1.0 - p) * w), log(maximum_scalar(sub(1.0, yhat), eps)))
    return mul(reduce_sum(add(pos, neg)), -1.0)


def weighted_logloss_logits(logits: Tensor, targets: np.ndarray, weights: np.ndarray | None = None) -> Tensor:
    """Numerically stable mean weighted logloss straight from logits."""
    t = np.asarray(targets, dtype=np.float64)
    w = np.ones_like(t) if weights is None else np.asarray(weights, dtype=np.float64)
    per = add(
        mul(Tensor(t * w), softplus(mul(logits, -1.0))),
        mul(Tensor((1.0 - t) * w), softplus(logits)),
    )
    return mul(reduce_sum(per), 1.0 / len(t))
