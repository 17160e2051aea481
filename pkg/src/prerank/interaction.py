"""User-item interaction layers: a gated attention unit used in two parallel
cross-attention branches (user attends items, items attend user), and the
max-cosine similarity head that turns attended sub-spaces into one logit.

All ops are batch-friendly along a leading axis, so one user can be scored
against n items in a single pass: (H_u, k) query side against (n, H_i, k).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ACTIVATIONS,
    DimensionError,
    Tensor,
    add,
    div,
    exp,
    layer_norm,
    matmul,
    maximum_scalar,
    mul,
    reduce_max,
    reduce_sum,
    row_softmax,
    sigmoid,
    sqrt,
    transpose_last2,
)

COSINE_EPS = 1e-12


@dataclass
class GAUParams:
    """Projection matrices of one gated attention unit (no biases)."""

    w_query: Tensor
    w_key: Tensor
    w_value: Tensor
    w_gate: Tensor
    w_out: Tensor
    activation: str = "silu"

    @property
    def key_width(self) -> int:
        return self.w_query.shape[1]

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.w_query": self.w_query,
            f"{prefix}.w_key": self.w_key,
            f"{prefix}.w_value": self.w_value,
            f"{prefix}.w_gate": self.w_gate,
            f"{prefix}.w_out": self.w_out,
        }


def init_gau(
    query_width: int,
    kv_width: int,
    rng: np.random.Generator,
    key_width: int | None = None,
    activation: str = "silu",
) -> GAUParams:
    dk = key_width if key_width is not None else query_width
    def u(fan_in, fan_out):
        s = 1.0 / math.sqrt(fan_in)
        return Tensor(rng.uniform(-s, s, size=(fan_in, fan_out)), requires_grad=True)

    return GAUParams(
        w_query=u(query_width, dk),
        w_key=u(kv_width, dk),
        w_value=u(kv_width, query_width),
        w_gate=u(query_width, query_width),
        w_out=u(query_width, query_width),
        activation=activation,
    )


def gau(q_in: Tensor, kv_in: Tensor, params: GAUParams, return_attention: bool = False):
    """Attend the query sub-spaces over the key/value sub-spaces, gate the
    attended values with a sigmoid projection of the query, then project out.

    Attention weights form a (rows(q_in), rows(kv_in)) row-stochastic matrix
    per batch element.
    """
    if q_in.data.shape[-1] != params.w_query.shape[0]:
        raise DimensionError("query width does not match GAU parameters")
    if kv_in.data.shape[-1] != params.w_key.shape[0]:
        raise DimensionError("key/value width does not match GAU parameters")
    act = ACTIVATIONS[params.activation]
    q = act(matmul(q_in, params.w_query))
    k = act(matmul(kv_in, params.w_key))
    v = act(matmul(kv_in, params.w_value))
    gate = sigmoid(matmul(q_in, params.w_gate))
    scores = mul(matmul(q, transpose_last2(k)), 1.0 / math.sqrt(params.key_width))
    attn = row_softmax(scores)
    out = matmul(mul(gate, matmul(attn, v)), params.w_out)
    if return_attention:
        return out, attn
    return out


@dataclass
class CrossAttentionParams:
    """Two independent GAU branches with per-branch layer norm."""

    user_gau: GAUParams
    item_gau: GAUParams
    user_ln_gain: Tensor
    user_ln_bias: Tensor
    item_ln_gain: Tensor
    item_ln_bias: Tensor
    ln_eps: float = 1e-5

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        out.update(self.user_gau.parameters(f"{prefix}.user_gau"))
        out.update(self.item_gau.parameters(f"{prefix}.item_gau"))
        out[f"{prefix}.user_ln.gain"] = self.user_ln_gain
        out[f"{prefix}.user_ln.bias"] = self.user_ln_bias
        out[f"{prefix}.item_ln.gain"] = self.item_ln_gain
        out[f"{prefix}.item_ln.bias"] = self.item_ln_bias
        return out


def init_cross_attention(sub_dim: int, rng: np.random.Generator, activation: str = "silu") -> CrossAttentionParams:
    return CrossAttentionParams(
        user_gau=init_gau(sub_dim, sub_dim, rng, activation=activation),
        item_gau=init_gau(sub_dim, sub_dim, rng, activation=activation),
        user_ln_gain=Tensor(np.ones(sub_dim), requires_grad=True),
        user_ln_bias=Tensor(np.zeros(sub_dim), requires_grad=True),
        item_ln_gain=Tensor(np.ones(sub_dim), requires_grad=True),
        item_ln_bias=Tensor(np.zeros(sub_dim), requires_grad=True),
    )


def cross_attend(e_user: Tensor, e_item: Tensor, params: CrossAttentionParams) -> tuple[Tensor, Tensor]:
    """Bidirectional cross-attention with residual + layer norm per branch.

    e_user: (H_u, k) or (n, H_u, k); e_item: (H_i, k) or (n, H_i, k).
    Returns the attended user and item sub-spaces (batched if any input is).
    """
    att_u = gau(e_user, e_item, params.user_gau)
    att_i = gau(e_item, e_user, params.item_gau)
    out_u = layer_norm(add(e_user, att_u), params.user_ln_gain, params.user_ln_bias, params.ln_eps)
    out_i = layer_norm(add(e_item, att_i), params.item_ln_gain, params.item_ln_bias, params.ln_eps)
    return out_u, out_i


@dataclass
class MaxSimHead:
    """Learnable temperature for the max-cosine score, stored as log(tau)
    so tau stays positive without constraints. The head's only parameter."""

    log_tau: Tensor

    @property
    def tau(self) -> float:
        return float(np.exp(self.log_tau.data.reshape(-1)[0]))

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.log_tau": self.log_tau}


def init_maxsim_head() -> MaxSimHead:
    return MaxSimHead(log_tau=Tensor(np.zeros(()), requires_grad=True))


def _unit_rows(x: Tensor) -> Tensor:
    norms = sqrt(reduce_sum(mul(x, x), axis=-1, keepdims=True))
    return div(x, maximum_scalar(norms, COSINE_EPS))


def maxsim_score(att_user: Tensor, att_item: Tensor, head: MaxSimHead) -> Tensor:
    """Sum over user sub-spaces of the max cosine similarity against all item
    sub-spaces, rescaled by the temperature.

    Ties in the max break to the lowest item index; zero-norm rows score 0.
    """
    sims = matmul(_unit_rows(att_user), transpose_last2(_unit_rows(att_item)))
    best = reduce_max(sims, axis=-1)
    summed = reduce_sum(best, axis=-1)
    return div(summed, exp(head.log_tau))
