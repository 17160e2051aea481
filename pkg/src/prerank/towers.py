"""Multi-head gated towers: an MLP whose output is elementwise-gated by a
sigmoid network fed a gradient-stopped copy of the input, then split into
H sub-space embeddings of size k.
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
    matmul,
    mul,
    reshape,
    sigmoid,
    stop_gradient,
)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return add(matmul(x, w), b)


def init_linear(rng: np.random.Generator, fan_in: int, fan_out: int) -> tuple[Tensor, Tensor]:
    scale = 1.0 / math.sqrt(fan_in)
    w = Tensor(rng.uniform(-scale, scale, size=(fan_in, fan_out)), requires_grad=True)
    b = Tensor(rng.uniform(-scale, scale, size=(fan_out,)), requires_grad=True)
    return w, b


@dataclass
class GatedTowerParams:
    """Main MLP (linear final layer of width heads*head_dim) plus a two-layer
    gating MLP whose hidden width is ceil(input/reduction_ratio)."""

    main_weights: list[Tensor]
    main_biases: list[Tensor]
    gate_weights: list[Tensor]
    gate_biases: list[Tensor]
    heads: int
    head_dim: int
    activation: str = "silu"

    @property
    def input_width(self) -> int:
        return self.main_weights[0].shape[0]

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.main_weights, self.main_biases)):
            out[f"{prefix}.main.{i}.w"] = w
            out[f"{prefix}.main.{i}.b"] = b
        for i, (w, b) in enumerate(zip(self.gate_weights, self.gate_biases)):
            out[f"{prefix}.gate.{i}.w"] = w
            out[f"{prefix}.gate.{i}.b"] = b
        return out


def init_gated_tower(
    input_width: int,
    hidden_widths: tuple[int, ...],
    heads: int,
    head_dim: int,
    reduction_ratio: int,
    rng: np.random.Generator,
    activation: str = "silu",
) -> GatedTowerParams:
    if reduction_ratio < 1:
        raise DimensionError("reduction_ratio must be >= 1")
    if heads < 1 or head_dim < 1:
        raise DimensionError("heads and head_dim must be positive")
    out_width = heads * head_dim
    main_weights, main_biases = [], []
    prev = input_width
    for width in tuple(hidden_widths) + (out_width,):
        w, b = init_linear(rng, prev, width)
        main_weights.append(w)
        main_biases.append(b)
        prev = width
    gate_hidden = math.ceil(input_width / reduction_ratio)
    gw1, gb1 = init_linear(rng, input_width, gate_hidden)
    gw2, gb2 = init_linear(rng, gate_hidden, out_width)
    return GatedTowerParams(
        main_weights=main_weights,
        main_biases=main_biases,
        gate_weights=[gw1, gw2],
        gate_biases=[gb1, gb2],
        heads=heads,
        head_dim=head_dim,
        activation=activation,
    )


def tower_forward(x: Tensor, params: GatedTowerParams) -> Tensor:
    """Map a batch of input embeddings (n, input_width) to sub-space
    embeddings (n, heads, head_dim).

    The gating branch consumes a gradient-stopped copy of the input, so
    the input (and anything upstream, like embedding tables) receives
    gradients only through the main MLP.
    """
    if x.data.ndim != 2 or x.data.shape[1] != params.input_width:
        raise DimensionError(
            f"tower input must be (n, {params.input_width}), got {x.data.shape}"
        )
    act = ACTIVATIONS[params.activation]

    h = x
    for i, (w, b) in enumerate(zip(params.main_weights, params.main_biases)):
        h = linear(h, w, b)
        if i < len(params.main_weights) - 1:
            h = act(h)

    g = stop_gradient(x)
    g = act(linear(g, params.gate_weights[0], params.gate_biases[0]))
    g = sigmoid(linear(g, params.gate_weights[1], params.gate_biases[1]))

    gated = mul(h, g)
    n = x.data.shape[0]
    return reshape(gated, (n, params.heads, params.head_dim))
