"""
Parameterized building blocks shared by the backbone and the branches.
"""

from typing import Dict, Iterator, List, Optional, Tuple
import numpy as np

from ..autodiff import (
    BatchNormState,
    Tensor,
    add,
    batch_norm,
    matmul,
    relu,
    reshape,
    transpose,
)


class Module:
    """Base class for everything that owns parameters or batch-norm state."""

    def __init__(self, name: str):
        self.name = name
        self._children: List['Module'] = []

    def add_child(self, child: 'Module') -> 'Module':
        self._children.append(child)
        return child

    def own_parameters(self) -> Dict[str, Tensor]:
        """Parameters held directly by this module. Override in subclasses."""
        return {}

    def own_states(self) -> Dict[str, BatchNormState]:
        return {}

    def named_parameters(self) -> Iterator[Tuple[str, Tensor]]:
        for key, param in self.own_parameters().items():
            yield f"{self.name}.{key}", param
        for child in self._children:
            for key, param in child.named_parameters():
                yield f"{self.name}.{key}", param

    def named_states(self) -> Iterator[Tuple[str, BatchNormState]]:
        for key, state in self.own_states().items():
            yield f"{self.name}.{key}", state
        for child in self._children:
            for key, state in child.named_states():
                yield f"{self.name}.{key}", state


class Linear(Module):
    """Affine map x @ W + b on N x in_features inputs."""

    def __init__(
        self,
        name: str,
        in_features: int,
        out_features: int,
        rng: np.random.Generator,
        zero_init: bool = False
    ):
        """
        Initialize a linear layer.

        Args:
            name: Parameter name prefix
            in_features: Input width (fan-in)
            out_features: Output width
            rng: Generator for the uniform(-sqrt(1/fan_in), sqrt(1/fan_in)) init
            zero_init: Start with all-zero weights and bias
        """
        super().__init__(name)
        bound = np.sqrt(1.0 / in_features)
        if zero_init:
            weight = np.zeros((in_features, out_features))
            bias = np.zeros(out_features)
        else:
            weight = rng.uniform(-bound, bound, size=(in_features, out_features))
            bias = rng.uniform(-bound, bound, size=out_features)
        self.weight = Tensor(weight, requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(bias, requires_grad=True, name=f"{name}.bias")

    def own_parameters(self) -> Dict[str, Tensor]:
        return {'weight': self.weight, 'bias': self.bias}

    def __call__(self, x: Tensor) -> Tensor:
        rows = x.shape[0]
        bias_rows = matmul(Tensor(np.ones((rows, 1))), reshape(self.bias, (1, -1)))
        return add(matmul(x, self.weight), bias_rows)


class BatchNorm(Module):
    """Batch normalization with learnable scale and shift."""

    def __init__(self, name: str, features: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__(name)
        self.gamma = Tensor(np.ones(features), requires_grad=True, name=f"{name}.gamma")
        self.beta = Tensor(np.zeros(features), requires_grad=True, name=f"{name}.beta")
        self.state = BatchNormState.create(features, momentum, eps)

    def own_parameters(self) -> Dict[str, Tensor]:
        return {'gamma': self.gamma, 'beta': self.beta}

    def own_states(self) -> Dict[str, BatchNormState]:
        return {'stats': self.state}

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return batch_norm(x, self.gamma, self.beta, self.state, training)


class ResidualBlock(Module):
    """x + relu(x @ W + b), applied to N x features rows."""

    def __init__(self, name: str, features: int, rng: np.random.Generator, zero_init: bool = False):
        super().__init__(name)
        self.linear = self.add_child(Linear('linear', features, features, rng, zero_init))

    def __call__(self, x: Tensor) -> Tensor:
        return add(x, relu(self.linear(x)))


def to_positions(t: Tensor) -> Tensor:
    """B x C x H x W -> (B*H*W) x C, row-major over (b, i, j)."""
    b, c, h, w = t.shape
    return reshape(transpose(t, (0, 2, 3, 1)), (b * h * w, c))


def from_positions(rows: Tensor, b: int, h: int, w: int) -> Tensor:
    """(B*H*W) x C -> B x C x H x W."""
    c = rows.shape[1]
    return transpose(reshape(rows, (b, h, w, c)), (0, 3, 1, 2))


def apply_per_position(block: Optional[ResidualBlock], t: Tensor) -> Tensor:
    """Run a per-position block over every spatial location of a feature map."""
    if block is None:
        return t
    b, _, h, w = t.shape
    return from_positions(block(to_positions(t)), b, h, w)
