"""
Reverse-mode automatic differentiation on dense float64 arrays.

A Tensor owns a numpy array and, when it was produced by a differentiable
operation, a TapeNode that records the parent tensors and the rule mapping
the output gradient to the parent gradients. ``backward`` replays the tape
in reverse topological order.
"""

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union
import numpy as np

from ..errors import DimensionError

ArrayLike = Union[np.ndarray, float, int, Sequence]
BackwardRule = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class TapeNode:
    """One recorded operation: its inputs and its backward rule."""
    inputs: Tuple['Tensor', ...]
    backward_rule: BackwardRule
    op: str = ''


class Tensor:
    """An n-dimensional float64 array participating in a gradient tape."""

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        """
        Create a leaf tensor.

        Args:
            data: Array-like values, copied and stored as float64
            requires_grad: Whether backward() should produce a gradient for it
            name: Optional label used in diagnostics (parameter names)
        """
        self.data: np.ndarray = np.array(data, dtype=np.float64)
        self.requires_grad: bool = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._node: Optional[TapeNode] = None

    @classmethod
    def from_op(
        cls,
        data: np.ndarray,
        inputs: Sequence['Tensor'],
        rule: BackwardRule,
        op: str = ''
    ) -> 'Tensor':
        """Wrap the result of an operation, recording it on the tape if needed."""
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=np.float64)
        out.grad = None
        out.name = None
        out.requires_grad = any(t.requires_grad for t in inputs)
        out._node = TapeNode(tuple(inputs), rule, op) if out.requires_grad else None
        return out

    # --- convenience ---
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> 'Tensor':
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        req = ", requires_grad=True" if self.requires_grad else ""
        nm = f", name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{req}{nm})"

    # --- operators (see ops.py for the rules) ---
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, key):
        from . import ops
        return ops.take(self, key)

    @property
    def T(self) -> 'Tensor':
        from . import ops
        return ops.transpose(self, (1, 0))

    # --- autograd core ---
    def backward(self) -> None:
        """
        Accumulate d(self)/d(t) into ``t.grad`` for every reachable tensor t
        with requires_grad set.

        Raises:
            DimensionError: If self is not a single-element tensor
        """
        if self.data.size != 1:
            raise DimensionError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return

        order = _topological_order(self)
        upstream: Dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}

        for tensor in reversed(order):
            g = upstream.get(id(tensor))
            if g is None:
                g = np.zeros_like(tensor.data)
            tensor.grad = g.copy() if tensor.grad is None else tensor.grad + g

            node = tensor._node
            if node is None:
                continue
            input_grads = node.backward_rule(g)
            for parent, pg in zip(node.inputs, input_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.data.shape:
                    raise DimensionError(
                        f"backward rule of '{node.op}' produced shape {pg.shape} "
                        f"for an input of shape {parent.data.shape}"
                    )
                key = id(parent)
                if key in upstream:
                    upstream[key] = upstream[key] + pg
                else:
                    upstream[key] = pg


def _topological_order(root: Tensor) -> List[Tensor]:
    """Iterative depth-first ordering of the tensors reachable from root."""
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        tensor, expanded = stack.pop()
        if expanded:
            order.append(tensor)
            continue
        if id(tensor) in visited:
            continue
        visited.add(id(tensor))
        stack.append((tensor, True))
        if tensor._node is not None:
            for parent in tensor._node.inputs:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    return order


def as_tensor(value: Union['Tensor', ArrayLike]) -> Tensor:
    """Return value unchanged if it is a Tensor, else wrap it as a constant."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=False)
