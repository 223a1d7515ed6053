"""
Central finite-difference checks for tape gradients.
"""

from typing import Callable, Dict, Sequence
import numpy as np

from .tensor import Tensor

FD_STEP = 1e-5
# Differences below this are finite-difference noise, e.g. a bias that feeds
# batch norm has an exact zero gradient but a numeric one near 1e-11.
ABS_TOLERANCE = 1e-8


def numerical_gradient(
    fn: Callable[[], Tensor],
    tensor: Tensor,
    step: float = FD_STEP
) -> np.ndarray:
    """
    Estimate d fn() / d tensor by central differences.

    Args:
        fn: Zero-argument closure returning a scalar Tensor; it must read
            ``tensor.data`` on every call
        tensor: The tensor whose entries are perturbed in place
        step: Perturbation size

    Returns:
        Array with the shape of ``tensor.data``
    """
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        plus = fn().item()
        flat[i] = original - step
        minus = fn().item()
        flat[i] = original
        out[i] = (plus - minus) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, atol: float = ABS_TOLERANCE) -> float:
    """||a - n|| / max(||a|| + ||n||, 1e-8); 0 when ||a - n|| <= atol."""
    diff = np.linalg.norm(analytic - numeric)
    if diff <= atol:
        return 0.0
    scale = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-8)
    return float(diff / scale)


def check_gradients(
    fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    step: float = FD_STEP
) -> Dict[str, float]:
    """
    Compare tape gradients with central differences.

    Args:
        fn: Closure building a fresh scalar loss from ``tensors``
        tensors: Tensors with requires_grad set
        step: Finite-difference step

    Returns:
        Relative error per tensor, keyed by name (or position)
    """
    for t in tensors:
        t.zero_grad()
    loss = fn()
    loss.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    errors = {}
    for i, (t, a) in enumerate(zip(tensors, analytic)):
        numeric = numerical_gradient(fn, t, step)
        errors[t.name or str(i)] = relative_error(a, numeric)
    return errors


def projected(output: Tensor, seed: int = 0) -> Tensor:
    """Scalarize a non-scalar output with fixed random weights."""
    from . import ops
    weights = np.random.default_rng(seed).uniform(-1.0, 1.0, size=output.shape)
    return ops.reduce_sum(ops.mul(output, Tensor(weights)))
