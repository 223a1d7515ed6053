"""
Differentiable operations on Tensors.

Broadcasting is limited to scalar-with-tensor and equal shapes. Per-row
additions (biases) are written with matmul against a ones column instead.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union
import numpy as np
from scipy import special

from ..errors import BatchSizeError, DimensionError
from .tensor import Tensor, as_tensor

Axes = Optional[Union[int, Sequence[int]]]

SQRT_EPS = 1e-12


# ------------------------------------------------------------------
# Helpers
# ------------------------------------------------------------------

def _normalize_axes(axes: Axes, ndim: int) -> Tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    normalized = []
    for axis in axes:
        if not -ndim <= axis < ndim:
            raise DimensionError(f"axis {axis} out of range for a {ndim}-d tensor")
        normalized.append(axis % ndim)
    if len(set(normalized)) != len(normalized):
        raise DimensionError(f"repeated axis in {tuple(axes)}")
    return tuple(sorted(normalized))


def _check_binary(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape or a.size == 1 and a.ndim == 0 or b.size == 1 and b.ndim == 0:
        return
    raise DimensionError(
        f"{op}: shapes {a.shape} and {b.shape} are neither equal nor scalar-with-tensor"
    )


def _fit(grad: np.ndarray, target: Tensor) -> np.ndarray:
    """Reduce a gradient to the shape of a scalar operand."""
    if grad.shape == target.shape:
        return grad
    return np.asarray(grad.sum(), dtype=np.float64).reshape(target.shape)


# ------------------------------------------------------------------
# Linear algebra
# ------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Matrix product of an M x K and a K x N tensor.

    Raises:
        DimensionError: If either operand is not 2-d or inner dimensions differ
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

    def rule(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor.from_op(a.data @ b.data, (a, b), rule, 'matmul')


# ------------------------------------------------------------------
# Elementwise
# ------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, 'add')
    return Tensor.from_op(a.data + b.data, (a, b), lambda g: (_fit(g, a), _fit(g, b)), 'add')


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, 'sub')
    return Tensor.from_op(a.data - b.data, (a, b), lambda g: (_fit(g, a), _fit(-g, b)), 'sub')


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, 'mul')

    def rule(g):
        return _fit(g * b.data, a), _fit(g * a.data, b)

    return Tensor.from_op(a.data * b.data, (a, b), rule, 'mul')


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    # Gradient at exactly 0 is 0
    positive = x.data > 0
    return Tensor.from_op(np.where(positive, x.data, 0.0), (x,), lambda g: (g * positive,), 'relu')


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), stable for large |x|."""
    x = as_tensor(x)
    return Tensor.from_op(
        np.logaddexp(0.0, x.data), (x,), lambda g: (g * special.expit(x.data),), 'softplus'
    )


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return Tensor.from_op(out, (x,), lambda g: (g * out,), 'exp')


def log(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return Tensor.from_op(np.log(x.data), (x,), lambda g: (g / x.data,), 'log')


def safe_sqrt(x: Tensor, eps: float = SQRT_EPS) -> Tensor:
    """
    Square root that maps values at or below eps to exactly 0 with zero gradient.

    Coincident embeddings therefore have distance 0 and contribute no
    infinite derivative.
    """
    x = as_tensor(x)
    live = x.data > eps
    out = np.where(live, np.sqrt(np.where(live, x.data, 1.0)), 0.0)

    def rule(g):
        return (np.where(live, g * 0.5 / np.where(live, out, 1.0), 0.0),)

    return Tensor.from_op(out, (x,), rule, 'safe_sqrt')


ELEMENTWISE = {
    'add': add,
    'sub': sub,
    'mul': mul,
    'relu': relu,
    'softplus': softplus,
    'exp': exp,
    'log': log,
    'sqrt': safe_sqrt,
}


def elementwise(op: str, *args) -> Tensor:
    """Dispatch an elementwise operation by name."""
    try:
        fn = ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"Unknown elementwise op: {op}") from None
    return fn(*args)


# ------------------------------------------------------------------
# Reductions
# ------------------------------------------------------------------

def _check_reduction(x: Tensor, axes: Tuple[int, ...]) -> None:
    for axis in axes:
        if x.shape[axis] == 0:
            raise DimensionError(f"cannot reduce over empty axis {axis} of shape {x.shape}")


def reduce_sum(x: Tensor, axes: Axes = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes_t = _normalize_axes(axes, x.ndim)
    _check_reduction(x, axes_t)
    kept_shape = tuple(1 if i in axes_t else s for i, s in enumerate(x.shape))

    def rule(g):
        return (np.broadcast_to(g.reshape(kept_shape), x.shape).copy(),)

    return Tensor.from_op(x.data.sum(axis=axes_t, keepdims=keepdims), (x,), rule, 'sum')


def reduce_mean(x: Tensor, axes: Axes = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes_t = _normalize_axes(axes, x.ndim)
    _check_reduction(x, axes_t)
    count = int(np.prod([x.shape[a] for a in axes_t])) if axes_t else 1
    return mul(reduce_sum(x, axes_t, keepdims), 1.0 / count)


def _move_to_end(x: np.ndarray, axes: Tuple[int, ...]) -> Tuple[np.ndarray, Tuple[int, ...]]:
    rest = tuple(i for i in range(x.ndim) if i not in axes)
    perm = rest + axes
    moved = np.transpose(x, perm)
    reduced = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return moved.reshape(moved.shape[:len(rest)] + (reduced,)), perm


def reduce_max(x: Tensor, axes: Axes = None, keepdims: bool = False) -> Tensor:
    """
    Maximum over axes; the gradient goes to the first maximal element in
    row-major scan order of the reduced block.
    """
    x = as_tensor(x)
    axes_t = _normalize_axes(axes, x.ndim)
    _check_reduction(x, axes_t)
    flat, perm = _move_to_end(x.data, axes_t)
    idx = np.argmax(flat, axis=-1)
    values = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    kept_shape = tuple(1 if i in axes_t else s for i, s in enumerate(x.shape))
    out = values.reshape(kept_shape) if keepdims else values.reshape(
        tuple(s for i, s in enumerate(x.shape) if i not in axes_t)
    )

    def rule(g):
        routed = np.zeros_like(flat)
        np.put_along_axis(routed, idx[..., None], g.reshape(idx.shape)[..., None], axis=-1)
        moved_shape = tuple(x.shape[p] for p in perm)
        return (np.transpose(routed.reshape(moved_shape), np.argsort(perm)),)

    return Tensor.from_op(out, (x,), rule, 'max')


def reduce_min(x: Tensor, axes: Axes = None, keepdims: bool = False) -> Tensor:
    """Minimum over axes, routed to the first minimal element."""
    return mul(reduce_max(mul(x, -1.0), axes, keepdims), -1.0)


REDUCTIONS = {'sum': reduce_sum, 'mean': reduce_mean, 'max': reduce_max, 'min': reduce_min}


def reduce(op: str, x: Tensor, axes: Axes = None, keepdims: bool = False) -> Tensor:
    """Dispatch a reduction by name."""
    try:
        fn = REDUCTIONS[op]
    except KeyError:
        raise ValueError(f"Unknown reduction: {op}") from None
    return fn(x, axes, keepdims)


def logsumexp(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable log(sum(exp(x))) over one axis."""
    x = as_tensor(x)
    (axis_n,) = _normalize_axes(axis, x.ndim)
    _check_reduction(x, (axis_n,))
    out = special.logsumexp(x.data, axis=axis_n)
    soft = special.softmax(x.data, axis=axis_n)

    def rule(g):
        return (np.expand_dims(g, axis_n) * soft,)

    return Tensor.from_op(out, (x,), rule, 'logsumexp')


# ------------------------------------------------------------------
# Shape manipulation
# ------------------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as e:
        raise DimensionError(f"cannot reshape {x.shape} to {tuple(shape)}") from e
    return Tensor.from_op(out, (x,), lambda g: (g.reshape(x.shape),), 'reshape')


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"invalid permutation {axes} for shape {x.shape}")
    inverse = tuple(np.argsort(axes))
    return Tensor.from_op(
        np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),), 'transpose'
    )


def take(x: Tensor, key) -> Tensor:
    """
    Numpy-style indexing (slices, integer arrays). Repeated indices
    accumulate their gradients.
    """
    x = as_tensor(x)
    try:
        out = x.data[key]
    except IndexError as e:
        raise DimensionError(f"invalid index for shape {x.shape}: {e}") from e

    def rule(g):
        routed = np.zeros_like(x.data)
        np.add.at(routed, key, g)
        return (routed,)

    return Tensor.from_op(np.array(out, dtype=np.float64), (x,), rule, 'take')


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """
    Concatenate tensors along axis; the gradient is split back.

    Raises:
        DimensionError: If ranks or non-concatenated dimensions differ
    """
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat needs at least one tensor")
    ndim = tensors[0].ndim
    (axis_n,) = _normalize_axes(axis, ndim)
    for t in tensors[1:]:
        if t.ndim != ndim:
            raise DimensionError(f"concat rank mismatch: {tensors[0].shape} vs {t.shape}")
        for i in range(ndim):
            if i != axis_n and t.shape[i] != tensors[0].shape[i]:
                raise DimensionError(
                    f"concat dimension {i} mismatch: {tensors[0].shape} vs {t.shape}"
                )
    sizes = [t.shape[axis_n] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def rule(g):
        return tuple(np.split(g, bounds, axis=axis_n))

    out = np.concatenate([t.data for t in tensors], axis=axis_n)
    return Tensor.from_op(out, tuple(tensors), rule, 'concat')


def split(x: Tensor, sizes: Sequence[int], axis: int = 0) -> List[Tensor]:
    """Inverse of concat: cut x into consecutive pieces of the given sizes."""
    x = as_tensor(x)
    (axis_n,) = _normalize_axes(axis, x.ndim)
    if sum(sizes) != x.shape[axis_n]:
        raise DimensionError(f"split sizes {list(sizes)} do not sum to {x.shape[axis_n]}")
    pieces = []
    start = 0
    for size in sizes:
        key = [slice(None)] * x.ndim
        key[axis_n] = slice(start, start + size)
        pieces.append(take(x, tuple(key)))
        start += size
    return pieces


# ------------------------------------------------------------------
# Batch normalization
# ------------------------------------------------------------------

@dataclass
class BatchNormState:
    """Running statistics of one batch-normalization layer."""
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, features: int, momentum: float = 0.1, eps: float = 1e-5) -> 'BatchNormState':
        return cls(np.zeros(features), np.ones(features), momentum, eps)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    training: bool
) -> Tensor:
    """
    Batch normalization over the batch axis of a B x F tensor.

    In train mode the batch statistics normalize the input and update the
    running statistics with the state's momentum; in eval mode the running
    statistics are used and nothing is updated.

    Raises:
        DimensionError: If x is not B x F or gamma/beta are not length F
        BatchSizeError: If B < 2 in train mode
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 2:
        raise DimensionError(f"batch_norm expects B x F input, got {x.shape}")
    batch, features = x.shape
    if gamma.shape != (features,) or beta.shape != (features,):
        raise DimensionError(
            f"batch_norm affine parameters must have shape ({features},), "
            f"got {gamma.shape} and {beta.shape}"
        )

    if training:
        if batch < 2:
            raise BatchSizeError(f"batch_norm in train mode needs B >= 2, got B = {batch}")
        mean = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        m = state.momentum
        state.running_mean = (1.0 - m) * state.running_mean + m * mean
        state.running_var = (1.0 - m) * state.running_var + m * var * batch / (batch - 1)
    else:
        mean = state.running_mean
        var = state.running_var

    inv_std = 1.0 / np.sqrt(var + state.eps)
    x_hat = (x.data - mean) * inv_std
    out = gamma.data * x_hat + beta.data

    def rule(g):
        d_gamma = (g * x_hat).sum(axis=0)
        d_beta = g.sum(axis=0)
        d_xhat = g * gamma.data
        if training:
            d_x = inv_std / batch * (
                batch * d_xhat - d_xhat.sum(axis=0) - x_hat * (d_xhat * x_hat).sum(axis=0)
            )
        else:
            d_x = d_xhat * inv_std
        return d_x, d_gamma, d_beta

    return Tensor.from_op(out, (x, gamma, beta), rule, 'batch_norm')
