"""
Adam with bias correction.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence
import numpy as np

from ..autodiff import Tensor
from ..errors import DimensionError, TrainingError


@dataclass
class OptimizerState:
    """First and second moments per parameter, keyed by parameter name."""
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, params: Sequence[Tensor], **kwargs) -> 'OptimizerState':
        state = cls(**kwargs)
        for key, param in _keyed(params):
            state.first_moment[key] = np.zeros_like(param.data)
            state.second_moment[key] = np.zeros_like(param.data)
        return state


def _keyed(params: Sequence[Tensor]):
    return [(p.name or f"param{i}", p) for i, p in enumerate(params)]


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[Optional[np.ndarray]],
    state: OptimizerState,
    lr: float
) -> None:
    """
    One in-place Adam update.

    A None gradient counts as zero. Every gradient is checked before any
    parameter moves, so a failing step leaves the model untouched.

    Raises:
        TrainingError: If a gradient is not finite
        DimensionError: If a gradient or moment does not match its parameter
    """
    keyed = _keyed(params)
    if len(grads) != len(keyed):
        raise DimensionError(f"{len(keyed)} parameters but {len(grads)} gradients")

    checked: List[np.ndarray] = []
    for (key, param), grad in zip(keyed, grads):
        grad = np.zeros_like(param.data) if grad is None else np.asarray(grad, dtype=np.float64)
        if grad.shape != param.shape:
            raise DimensionError(f"gradient of {key} has shape {grad.shape}, parameter {param.shape}")
        if not np.all(np.isfinite(grad)):
            raise TrainingError("non-finite gradient", parameter=key)
        if key not in state.first_moment:
            state.first_moment[key] = np.zeros_like(param.data)
            state.second_moment[key] = np.zeros_like(param.data)
        if state.first_moment[key].shape != param.shape:
            raise DimensionError(f"moment of {key} has shape {state.first_moment[key].shape}")
        checked.append(grad)

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** state.step
    correction2 = 1.0 - b2 ** state.step
    for (key, param), grad in zip(keyed, checked):
        m = b1 * state.first_moment[key] + (1.0 - b1) * grad
        v = b2 * state.second_moment[key] + (1.0 - b2) * grad * grad
        state.first_moment[key] = m
        state.second_moment[key] = v
        param.data = param.data - lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
