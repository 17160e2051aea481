"""Gradient and pinned-value verification suites.

`gradient_suite` runs finite-difference checks for every engine op, every
loss, and the three model blocks (gated tower, attention unit, similarity
head) across many seeds. `loss_pins` evaluates each loss on hand-computed
instances. Both back the CLI subcommands and the acceptance tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .features import STAGE_CANDIDATE, STAGE_IMPRESSION, STAGE_RANDOM
from .interaction import MaxSimHead, gau, init_gau, init_maxsim_head, maxsim_score
from .losses import (
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
    sorting_loss,
    weighted_logloss,
)
from .metrics import ndcg_at_k
from .towers import init_gated_tower, tower_forward

GRAD_TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    value: float
    bound: float

    @property
    def ok(self) -> bool:
        return self.value < self.bound


def _weighted_sum(x: Tensor) -> Tensor:
    w = Tensor(np.arange(1.0, x.data.size + 1.0).reshape(x.data.shape))
    return ad.reduce_sum(ad.mul(x, w))


def _op_cases(rng: np.random.Generator) -> dict[str, tuple]:
    def t(*shape):
        return Tensor(rng.normal(size=shape))

    return {
        "matmul": (lambda a, b: ad.reduce_sum(ad.matmul(a, b)), [t(3, 4), t(4, 2)]),
        "row_softmax": (lambda x: _weighted_sum(ad.row_softmax(x)), [t(3, 5)]),
        "layer_norm": (
            lambda x, g, b: _weighted_sum(ad.layer_norm(x, g, b)),
            [t(3, 5), t(5), t(5)],
        ),
        "sigmoid": (lambda x: _weighted_sum(ad.sigmoid(x)), [t(2, 6)]),
        "silu": (lambda x: _weighted_sum(ad.silu(x)), [t(2, 6)]),
        "relu": (lambda x: _weighted_sum(ad.relu(x)), [t(2, 6)]),
        "hadamard": (lambda a, b: ad.reduce_sum(ad.hadamard(a, b)), [t(2, 5), t(2, 5)]),
        "concat": (lambda a, b: _weighted_sum(ad.concat([a, b], axis=0)), [t(2, 3), t(3, 3)]),
        "reduce_max": (lambda x: ad.reduce_sum(ad.reduce_max(x, axis=-1)), [t(3, 6)]),
        "cosine_similarity": (lambda a, b: ad.reduce_sum(ad.cosine_similarity(a, b)), [t(3, 5), t(3, 5)]),
        "softsort": (lambda s: _weighted_sum(softsort(s, tau=0.9, power=2.0)), [t(6)]),
        "log_softmax": (lambda x: _weighted_sum(ad.log_softmax(x)), [t(3, 5)]),
        "softplus": (lambda x: _weighted_sum(ad.softplus(x)), [t(2, 6)]),
    }


def _loss_cases(rng: np.random.Generator) -> dict[str, tuple]:
    n = int(rng.integers(4, 9))
    y = rng.integers(0, 3, size=n).astype(float)
    if not (y > 0).any():
        y[0] = 1.0
    p = rng.uniform(0.05, 0.95, size=n)
    z = Tensor(rng.normal(size=n))
    stages = np.array(
        [STAGE_IMPRESSION] * 2 + [STAGE_CANDIDATE, STAGE_RANDOM] * ((n - 2 + 1) // 2),
        dtype=object,
    )[:n]
    y_group = y.copy()
    y_group[stages != STAGE_IMPRESSION] = 0.0
    y_group[0] = max(y_group[0], 1.0)
    p_group = np.where(stages == STAGE_IMPRESSION, p, np.nan)

    def hybrid(zt):
        group = ListScores(z=zt, y=y_group, stages=stages, p=p_group)
        return hybrid_loss(group, HybridWeights(margin_alpha=2.0))

    return {
        "distillation_loss": (lambda zt: distillation_loss(zt, p), [Tensor(z.data.copy())]),
        "sorting_loss": (lambda zt: sorting_loss(zt, y, tau=1.0, power=2.0), [Tensor(z.data.copy())]),
        "rankmax_loss": (lambda zt: rankmax_loss(zt, (y > 0).astype(float)), [Tensor(z.data.copy())]),
        "margin_rankmax_loss": (
            lambda zt: margin_rankmax_loss(zt, y, alpha=2.0),
            [Tensor(z.data.copy())],
        ),
        "hybrid_loss": (hybrid, [Tensor(z.data.copy())]),
    }


def _block_cases(rng: np.random.Generator) -> dict[str, tuple]:
    tower = init_gated_tower(4, (5,), 2, 3, 2, rng)
    x = Tensor(rng.normal(size=(2, 4)))

    def tower_loss(*_):
        return ad.reduce_sum(ad.pow_const(tower_forward(x, tower), 2.0))

    gau_params = init_gau(3, 3, rng)
    q = Tensor(rng.normal(size=(2, 3)))
    kv = Tensor(rng.normal(size=(3, 3)))

    def gau_loss(*_):
        return ad.reduce_sum(ad.pow_const(gau(q, kv, gau_params), 2.0))

    head = init_maxsim_head()
    e_u = Tensor(rng.normal(size=(2, 3)))
    e_i = Tensor(rng.normal(size=(3, 3)))

    def maxsim_loss(*_):
        return ad.reduce_sum(maxsim_score(e_u, e_i, head))

    return {
        "gated_tower": (tower_loss, list(tower.parameters("t").values())),
        "attention_unit": (gau_loss, list(gau_params.parameters("g").values())),
        "maxsim_head": (maxsim_loss, [e_u, e_i, head.log_tau]),
    }


def gradient_suite(seeds: int = 20, base_seed: int = 5000) -> list[CheckResult]:
    """Worst finite-difference relative error per target over `seeds` runs."""
    worst: dict[str, float] = {}
    for s in range(seeds):
        rng = np.random.default_rng(base_seed + s)
        cases: dict[str, tuple] = {}
        cases.update(_op_cases(rng))
        cases.update(_loss_cases(rng))
        cases.update(_block_cases(rng))
        for name, (fn, inputs) in cases.items():
            err = ad.finite_difference_check(fn, inputs)
            worst[name] = max(worst.get(name, 0.0), err)
    return [CheckResult(name, err, GRAD_TOLERANCE) for name, err in worst.items()]


@dataclass
class PinResult:
    name: str
    expected: float
    actual: float
    tolerance: float = 1e-9

    @property
    def ok(self) -> bool:
        return abs(self.expected - self.actual) <= self.tolerance


# frozen by direct enumeration of both 3x3 soft permutation matrices
SORTING_PIN = 7.930422443437395


def loss_pins() -> list[PinResult]:
    """Hand-computed instances for every loss (and the metric pins)."""
    results = []

    results.append(
        PinResult(
            "distillation uniform-logits",
            math.log(2.0),
            distillation_loss(Tensor([0.0, 0.0]), np.array([0.75, 0.25])).item(),
        )
    )
    results.append(
        PinResult(
            "rankmax two tied items",
            math.log(2.0),
            rankmax_loss(Tensor([0.0, 0.0]), np.array([1.0, 0.0])).item(),
        )
    )
    results.append(
        PinResult(
            "margin rankmax saturated floor",
            0.0,
            margin_rankmax_loss(Tensor([5.0, 3.0, 0.0]), np.array([2.0, 1.0, 0.0]), alpha=1.0).item(),
        )
    )
    results.append(
        PinResult(
            "margin rankmax binary reduction",
            math.log(2.0),
            margin_rankmax_loss(Tensor([0.0, 0.0]), np.array([1.0, 0.0]), alpha=0.0).item(),
        )
    )
    results.append(
        PinResult(
            "sorting loss reversed triple",
            SORTING_PIN,
            sorting_loss(Tensor([0.0, 1.0, 2.0]), np.array([2.0, 1.0, 0.0]), tau=1.0, power=2.0).item(),
        )
    )
    e1, e4 = math.exp(-1.0), math.exp(-4.0)
    z_row = 1.0 + e1 + e4
    row = softsort(Tensor([2.0, 1.0, 3.0]), tau=1.0, power=2.0).data[0]
    for col, expected in enumerate([e1 / z_row, e4 / z_row, 1.0 / z_row]):
        results.append(PinResult(f"softsort row0 col{col}", expected, float(row[col])))
    results.append(
        PinResult("pair margin negative lower", 4.0, pair_margin(0.0, 2.0, alpha=3.0))
    )
    results.append(
        PinResult("pair margin positive lower", 1.0, pair_margin(1.0, 2.0, alpha=3.0))
    )
    results.append(
        PinResult(
            "listwise softmax uniform",
            math.log(3.0),
            listwise_softmax_loss(Tensor([0.0, 0.0, 0.0]), np.array([1.0, 1.0, 1.0])).item(),
        )
    )
    p = np.array([0.2, 0.7, 0.5])
    entropy = float(-(p * np.log(p) + (1 - p) * np.log(1 - p)).sum())
    results.append(
        PinResult(
            "weighted logloss at target",
            entropy,
            weighted_logloss(Tensor(p.copy()), p).item(),
        )
    )
    results.append(
        PinResult(
            "pairwise logistic saturated",
            0.0,
            pairwise_logistic_loss(Tensor([30.0, 0.0]), np.array([1.0, 0.0])).item(),
            tolerance=1e-9,
        )
    )
    results.append(
        PinResult("ndcg swapped pair", 1.0 / math.log2(3.0), ndcg_at_k(["b", "a"], {"a": 1.0, "b": 0.0}, 2))
    )
    head = MaxSimHead(log_tau=Tensor(np.log(2.0)))
    results.append(
        PinResult(
            "maxsim two subspaces",
            0.5,
            maxsim_score(Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([[1.0, 0.0], [-1.0, 0.0]]), head).item(),
        )
    )
    return results


def format_results(rows: list, header: tuple[str, str, str]) -> str:
    lines = [f"{header[0]:<34}{header[1]:>14}  {header[2]}"]
    for r in rows:
        if isinstance(r, CheckResult):
            lines.append(f"{r.name:<34}{r.value:>14.3e}  {'PASS' if r.ok else 'FAIL'}")
        else:
            lines.append(f"{r.name:<34}{abs(r.expected - r.actual):>14.3e}  {'PASS' if r.ok else 'FAIL'}")
    return "\n".join(lines)
