"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Every tensor op the model and losses need is defined here, each with an
analytic backward rule. Gradient correctness is checked against central
finite differences (see `finite_difference_check`). Single-threaded:
graphs must be built and differentiated on one thread; tensors with
requires_grad=False never record into a graph and are safe to share.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible for an op."""


class EvaluationError(RuntimeError):
    """Raised when a forward evaluation produces non-finite values."""


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse-mode autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._backward: Callable[[], None] | None = None
        self._parents: tuple[Tensor, ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def backward(self) -> None:
        """Backpropagate from a scalar output through the recorded graph.

        Visits each recorded op exactly once, in reverse topological
        (reverse recording) order.
        """
        if self.data.size != 1:
            raise DimensionError("backward() requires a scalar output")
        if not np.isfinite(self.data).all():
            raise EvaluationError("backward() called on non-finite output")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # -- operator sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


_GRAD_ENABLED = True


class no_grad:
    """Context manager disabling graph recording (inference paths).

    Single-threaded by contract, like graph construction itself.
    """

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _make(data: np.ndarray, parents: Sequence[Tensor], backward=None) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


# -- elementwise arithmetic (numpy broadcasting, gradients unbroadcast) --


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def backward():
        g = out.grad
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.data.shape))

    out = _make(out_data, (a, b), backward)
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data - b.data

    def backward():
        g = out.grad
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g, b.data.shape))

    out = _make(out_data, (a, b), backward)
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def backward():
        g = out.grad
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    out = _make(out_data, (a, b), backward)
    return out


hadamard = mul


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data / b.data

    def backward():
        g = out.grad
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    out = _make(out_data, (a, b), backward)
    return out


def pow_const(a: Tensor, exponent: float) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data**exponent

    def backward():
        if a.requires_grad:
            _accumulate(a, out.grad * exponent * a.data ** (exponent - 1.0))

    out = _make(out_data, (a,), backward)
    return out


def absolute(a: Tensor) -> Tensor:
    """Elementwise |x|; subgradient 0 at x == 0."""
    a = _as_tensor(a)
    out_data = np.abs(a.data)

    def backward():
        if a.requires_grad:
            _accumulate(a, out.grad * np.sign(a.data))

    out = _make(out_data, (a,), backward)
    return out


def exp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out_data = np.exp(a.data)

    def backward():
        if a.requires_grad:
            _accumulate(a, out.grad * out.data)

    out = _make(out_data, (a,), backward)
    return out


def log(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out_data = np.log(a.data)

    def backward():
        if a.requires_grad:
            _accumulate(a, out.grad / a.data)

    out = _make(out_data, (a,), backward)
    return out


def sqrt(a: Tensor) -> Tensor:
    return pow_const(a, 0.5)


def maximum_scalar(a: Tensor, floor: float) -> Tensor:
    """max(x, floor) elementwise; gradient flows only where x > floor."""
    a = _as_tensor(a)
    out_data = np.maximum(a.data, floor)

    def backward():
        if a.requires_grad:
            _accumulate(a, out.grad * (a.data > floor))

    out = _make(out_data, (a,), backward)
    return out


# -- activations -----------------------------------------------------


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward():
        if a.requires_grad:
            _accumulate(a, out.grad * out.data * (1.0 - out.data))

    out = _make(out_data, (a,), backward)
    return out


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out_data = np.maximum(a.data, 0.0)

    def backward():
        if a.requires_grad:
            _accumulate(a, out.grad * (a.data > 0))

    out = _make(out_data, (a,), backward)
    return out


def silu(a: Tensor) -> Tensor:
    """x * sigmoid(x); the default smooth activation for projections."""
    a = _as_tensor(a)
    x = a.data
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out_data = x * s

    def backward():
        if a.requires_grad:
            _accumulate(a, out.grad * (s + x * s * (1.0 - s)))

    out = _make(out_data, (a,), backward)
    return out


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "silu": silu,
    "relu": relu,
    "sigmoid": sigmoid,
}


def softplus(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out_data = np.logaddexp(0.0, a.data)

    def backward():
        if a.requires_grad:
            x = a.data
            s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
            _accumulate(a, out.grad * s)

    out = _make(out_data, (a,), backward)
    return out


# -- linear algebra ----------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy matmul semantics (2-D, or batched 3-D)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError("matmul operands must be at least 2-D")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(
            f"matmul inner dimensions disagree: {a.data.shape} x {b.data.shape}"
        )
    out_data = np.matmul(a.data, b.data)

    def backward():
        g = out.grad
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accumulate(a, _unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accumulate(b, _unbroadcast(gb, b.data.shape))

    out = _make(out_data, (a, b), backward)
    return out


def transpose_last2(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim < 2:
        raise DimensionError("transpose_last2 needs ndim >= 2")
    out_data = np.swapaxes(a.data, -1, -2)

    def backward():
        if a.requires_grad:
            _accumulate(a, np.swapaxes(out.grad, -1, -2))

    out = _make(out_data, (a,), backward)
    return out


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.reshape(shape)

    def backward():
        if a.requires_grad:
            _accumulate(a, out.grad.reshape(a.data.shape))

    out = _make(out_data, (a,), backward)
    return out


def concat(parts: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("concat needs at least one tensor")
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward():
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                idx = [slice(None)] * out.grad.ndim
                idx[axis] = slice(lo, hi)
                _accumulate(p, out.grad[tuple(idx)])

    out = _make(out_data, tuple(parts), backward)
    return out


def take_rows(a: Tensor, indices) -> Tensor:
    """Gather rows along axis 0; gradient scatter-adds into the source."""
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    out_data = a.data[idx]

    def backward():
        if a.requires_grad:
            g = np.zeros_like(a.data)
            np.add.at(g, idx, out.grad)
            _accumulate(a, g)

    out = _make(out_data, (a,), backward)
    return out


# -- reductions --------------------------------------------------------


def reduce_sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward():
        if a.requires_grad:
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(g, a.data.shape).copy())

    out = _make(out_data, (a,), backward)
    return out


def reduce_mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reduce_max(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Max along `axis`; gradient routes only to the first argmax element."""
    a = _as_tensor(a)
    if a.data.shape[axis] == 0:
        raise DimensionError("reduce_max over an empty axis")
    amax = np.argmax(a.data, axis=axis)
    out_data = np.take_along_axis(a.data, np.expand_dims(amax, axis), axis=axis)
    if not keepdims:
        out_data = np.squeeze(out_data, axis=axis)

    def backward():
        if a.requires_grad:
            g = out.grad
            if not keepdims:
                g = np.expand_dims(g, axis)
            scatter = np.zeros_like(a.data)
            np.put_along_axis(scatter, np.expand_dims(amax, axis), g, axis=axis)
            _accumulate(a, scatter)

    out = _make(out_data, (a,), backward)
    return out


# -- normalization -----------------------------------------------------


def row_softmax(a: Tensor) -> Tensor:
    """Softmax along the last axis, stabilized by max subtraction."""
    a = _as_tensor(a)
    if a.data.ndim < 1 or a.data.shape[-1] == 0:
        raise DimensionError("row_softmax needs a non-empty last axis")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def backward():
        if a.requires_grad:
            g = out.grad
            y = out.data
            dot = (g * y).sum(axis=-1, keepdims=True)
            _accumulate(a, y * (g - dot))

    out = _make(out_data, (a,), backward)
    return out


def log_softmax(a: Tensor) -> Tensor:
    """Numerically stable log softmax along the last axis."""
    a = _as_tensor(a)
    shift = Tensor(a.data.max(axis=-1, keepdims=True))  # constant: max grad cancels
    z = sub(a, shift)
    lse = log(reduce_sum(exp(z), axis=-1, keepdims=True))
    return sub(z, lse)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    n = x.data.shape[-1]
    if gain.data.shape != (n,) or bias.data.shape != (n,):
        raise DimensionError("layer_norm gain/bias must match the last axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out_data = gain.data * xhat + bias.data

    def backward():
        g = out.grad
        if gain.requires_grad:
            _accumulate(gain, (g * xhat).reshape(-1, n).sum(axis=0))
        if bias.requires_grad:
            _accumulate(bias, g.reshape(-1, n).sum(axis=0))
        if x.requires_grad:
            gx = g * gain.data
            mean_g = gx.mean(axis=-1, keepdims=True)
            mean_gx = (gx * xhat).mean(axis=-1, keepdims=True)
            _accumulate(x, inv * (gx - mean_g - xhat * mean_gx))

    out = _make(out_data, (x, gain, bias), backward)
    return out


# -- graph control -----------------------------------------------------


def stop_gradient(a: Tensor) -> Tensor:
    """Identity forward; blocks all gradient flow into `a`."""
    return Tensor(np.array(a.data, copy=True))


def cosine_similarity(a: Tensor, b: Tensor, eps: float = 1e-12) -> Tensor:
    """Row-paired cosine similarity; zero vectors yield similarity 0.

    Norms are floored at `eps`, so degenerate inputs produce 0 instead of
    an error and gradients stay finite.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise DimensionError("cosine_similarity operands must share a shape")
    dots = reduce_sum(mul(a, b), axis=-1)
    na = maximum_scalar(sqrt(reduce_sum(mul(a, a), axis=-1)), eps)
    nb = maximum_scalar(sqrt(reduce_sum(mul(b, b), axis=-1)), eps)
    return div(dots, mul(na, nb))


# -- verification harness ----------------------------------------------


def finite_difference_check(
    f: Callable[..., Tensor],
    xs: Tensor | Sequence[Tensor],
    step: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` must rebuild its graph on every call from the tensors in `xs`.
    Relative error per coordinate is |analytic - numeric| / max(1, |analytic|).
    """
    tensors = [xs] if isinstance(xs, Tensor) else list(xs)
    for t in tensors:
        t.data = np.ascontiguousarray(t.data)  # probed in place below
        t.requires_grad = True
        t.zero_grad()
    out = f(*tensors)
    if not np.isfinite(out.data).all():
        raise EvaluationError("finite_difference_check: non-finite forward value")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    worst = 0.0
    for t, ana in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = f(*tensors).item()
            flat[i] = orig - step
            lo = f(*tensors).item()
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise EvaluationError("finite_difference_check: non-finite probe value")
            numeric = (hi - lo) / (2.0 * step)
            a = ana.reshape(-1)[i]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst
