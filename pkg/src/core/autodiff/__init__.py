from .tensor import Tensor, TapeNode, as_tensor
from .ops import (
    BatchNormState,
    add,
    batch_norm,
    concat,
    elementwise,
    exp,
    log,
    logsumexp,
    matmul,
    mul,
    reduce,
    reduce_max,
    reduce_mean,
    reduce_min,
    reduce_sum,
    relu,
    reshape,
    safe_sqrt,
    softplus,
    split,
    sub,
    take,
    transpose,
)
from .gradcheck import check_gradients, numerical_gradient, projected, relative_error

__all__ = [
    'Tensor',
    'TapeNode',
    'as_tensor',
    'BatchNormState',
    'add',
    'batch_norm',
    'concat',
    'elementwise',
    'exp',
    'log',
    'logsumexp',
    'matmul',
    'mul',
    'reduce',
    'reduce_max',
    'reduce_mean',
    'reduce_min',
    'reduce_sum',
    'relu',
    'reshape',
    'safe_sqrt',
    'softplus',
    'split',
    'sub',
    'take',
    'transpose',
    'check_gradients',
    'numerical_gradient',
    'projected',
    'relative_error',
]
