"""
Differentiable ops over ``numcore.tensor.Tensor``

Each op computes its forward value with numpy and records a closure that maps
the output gradient to input gradients. Only the broadcasting the model needs
is supported: a trailing-shape operand (bias, gain) against a larger tensor.
"""

from typing import List, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import structlog

from common.errors import DimensionError
from numcore.tensor import Tensor, as_tensor, record

logger = structlog.get_logger(__name__)

LAYERNORM_EPS = 1e-5


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient down to ``shape`` (leading axes and size-1 axes)"""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, extent in enumerate(shape) if extent == 1 and grad.shape[i] != 1)
    if keep:
        grad = grad.sum(axis=keep, keepdims=True)
    return grad.reshape(shape)


def _check_trailing(big: Tensor, small: Tensor, op: str) -> None:
    if small.ndim > big.ndim or big.shape[big.ndim - small.ndim:] != small.shape:
        raise DimensionError(f"{op}: cannot combine shapes {big.shape} and {small.shape}")


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes.

    ``b`` may be a plain matrix applied to every leading slice of ``a``, or a
    stack with exactly the same leading extents as ``a``.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not align")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: batch extents of {a.shape} and {b.shape} differ")
    out = np.matmul(a.data, b.data)

    def backward(grad):
        grad_a = np.matmul(grad, np.swapaxes(b.data, -1, -2))
        if b.ndim == 2:
            grad_b = a.data.reshape(-1, a.shape[-1]).T @ grad.reshape(-1, grad.shape[-1])
        else:
            grad_b = np.matmul(np.swapaxes(a.data, -1, -2), grad)
        return grad_a, grad_b

    return record("matmul", out, (a, b), backward)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` stored as (out, in)"""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data.T
    inputs = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise DimensionError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
        out = out + bias.data
        inputs.append(bias)

    def backward(grad):
        flat_grad = grad.reshape(-1, grad.shape[-1])
        flat_x = x.data.reshape(-1, x.shape[-1])
        grads = [grad @ weight.data, flat_grad.T @ flat_x]
        if bias is not None:
            grads.append(flat_grad.sum(axis=0))
        return tuple(grads)

    return record("linear", out, inputs, backward)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        _check_trailing(a, b, "add")

    def backward(grad):
        return grad, _unbroadcast(grad, b.shape)

    return record("add", a.data + b.data, (a, b), backward)


def scale(x, factor: float) -> Tensor:
    x = as_tensor(x)
    return record("scale", x.data * factor, (x,), lambda grad: (grad * factor,))


def scalar_mix(weight, x, y) -> Tensor:
    """``weight * x + (1 - weight) * y`` for a one-element ``weight``"""
    weight, x, y = as_tensor(weight), as_tensor(x), as_tensor(y)
    if weight.size != 1:
        raise DimensionError(f"scalar_mix: weight must hold one value, got shape {weight.shape}")
    if x.shape != y.shape:
        raise DimensionError(f"scalar_mix: shapes {x.shape} and {y.shape} differ")
    a = weight.data.reshape(-1)[0]
    out = a * x.data + (1.0 - a) * y.data

    def backward(grad):
        grad_weight = np.array(np.sum(grad * (x.data - y.data))).reshape(weight.shape)
        return grad_weight, a * grad, (1.0 - a) * grad

    return record("scalar_mix", out, (weight, x, y), backward)


def transpose(x, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"transpose: axes {axes} invalid for shape {x.shape}")
    inverse = tuple(np.argsort(axes))
    return record("transpose", np.transpose(x.data, axes), (x,), lambda grad: (np.transpose(grad, inverse),))


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as e:
        raise DimensionError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from e
    return record("reshape", out, (x,), lambda grad: (grad.reshape(x.shape),))


def concat(tensors: Sequence, axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat: nothing to concatenate")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from e
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(grad):
        return tuple(np.split(grad, bounds, axis=axis))

    return record("concat", out, tensors, backward)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return record("relu", np.where(mask, x.data, 0.0), (x,), lambda grad: (grad * mask,))


def hardswish(x) -> Tensor:
    """``x * min(max(x + 3, 0), 6) / 6``; derivative 0 at -3 and 1 at 3"""
    x = as_tensor(x)
    out = x.data * np.clip(x.data + 3.0, 0.0, 6.0) / 6.0
    slope = np.where(x.data <= -3.0, 0.0, np.where(x.data >= 3.0, 1.0, (2.0 * x.data + 3.0) / 6.0))
    return record("hardswish", out, (x,), lambda grad: (grad * slope,))


def softmax_lastdim(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] < 1:
        raise DimensionError(f"softmax_lastdim: needs a non-empty last axis, got {x.shape}")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    exps = np.exp(shifted)
    probs = exps / exps.sum(axis=-1, keepdims=True)

    def backward(grad):
        return (probs * (grad - np.sum(grad * probs, axis=-1, keepdims=True)),)

    return record("softmax", probs, (x,), backward)


def layernorm(x, gain, bias, eps: float = LAYERNORM_EPS) -> Tensor:
    """Normalise over the last axis, then apply the elementwise affine"""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    width = x.shape[-1]
    if gain.shape != (width,) or bias.shape != (width,):
        raise DimensionError(f"layernorm: affine {gain.shape}/{bias.shape} does not match input {x.shape}")
    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(np.mean(centered**2, axis=-1, keepdims=True) + eps)
    normed = centered * inv_std
    out = normed * gain.data + bias.data

    def backward(grad):
        grad_normed = grad * gain.data
        grad_x = inv_std * (
            grad_normed
            - grad_normed.mean(axis=-1, keepdims=True)
            - normed * np.mean(grad_normed * normed, axis=-1, keepdims=True)
        )
        return grad_x, _unbroadcast(grad * normed, gain.shape), _unbroadcast(grad, bias.shape)

    return record("layernorm", out, (x, gain, bias), backward)


def dropout(x, p: float, rng: Optional[np.random.Generator], train: bool) -> Tensor:
    """Inverted dropout; the identity in eval mode or when ``p == 0``"""
    x = as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs an explicit rng")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return record("dropout", x.data * mask, (x,), lambda grad: (grad * mask,))


def mean_aggregator(
    neighbor_lists: Sequence[Sequence[int]], weights: Optional[Sequence[Sequence[float]]] = None
) -> sp.csr_matrix:
    """Row-normalised neighbour matrix used by ``segment_mean``.

    Without weights row i averages its neighbours uniformly; with weights it
    uses ``w_ij / sum_j w_ij``. Rows with no neighbours stay empty (zero output).
    """
    n = len(neighbor_lists)
    rows: List[int] = []
    cols: List[int] = []
    values: List[float] = []
    empty = []
    for i, neighbors in enumerate(neighbor_lists):
        if len(neighbors) == 0:
            empty.append(i)
            continue
        if weights is None:
            row_values = np.full(len(neighbors), 1.0 / len(neighbors))
        else:
            row_weights = np.asarray(weights[i], dtype=np.float64)
            row_values = row_weights / row_weights.sum()
        rows.extend([i] * len(neighbors))
        cols.extend(neighbors)
        values.extend(row_values.tolist())
    if empty:
        logger.warning("nodes without neighbours aggregate to zero", count=len(empty), first=empty[0])
    return sp.csr_matrix((values, (rows, cols)), shape=(n, n), dtype=np.float64)


def segment_mean(x, adjacency: sp.spmatrix) -> Tensor:
    """Row i becomes the (weighted) mean of its neighbours' rows along axis 0"""
    x = as_tensor(x)
    n = adjacency.shape[0]
    if x.ndim < 1 or x.shape[0] != adjacency.shape[1]:
        raise DimensionError(f"segment_mean: features {x.shape} do not match adjacency {adjacency.shape}")
    flat = x.data.reshape(x.shape[0], -1)
    out = np.asarray(adjacency @ flat).reshape((n,) + x.shape[1:])
    adjacency_t = adjacency.T.tocsr()

    def backward(grad):
        return (np.asarray(adjacency_t @ grad.reshape(n, -1)).reshape(x.shape),)

    return record("segment_mean", out, (x,), backward)


def sum_all(x) -> Tensor:
    x = as_tensor(x)
    return record("sum", np.array(x.data.sum()), (x,), lambda grad: (np.full(x.shape, float(grad)),))


def mse_loss(pred, target) -> Tensor:
    """Mean squared error over every entry; ``target`` is treated as constant"""
    pred = as_tensor(pred)
    target_data = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.shape != target_data.shape:
        raise DimensionError(f"mse_loss: prediction {pred.shape} and target {target_data.shape} differ")
    diff = pred.data - target_data

    def backward(grad):
        return (2.0 * float(grad) * diff / diff.size,)

    return record("mse", np.array(np.mean(diff**2)), (pred,), backward)
