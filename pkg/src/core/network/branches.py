"""
Global branch and feature dropping branch.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple
import numpy as np

from ..autodiff import Tensor, reduce_max, reduce_mean, relu
from ..errors import ConfigError
from .layers import BatchNorm, Linear, Module, ResidualBlock, apply_per_position
from .masks import DropKind, DropSpec, apply_mask, make_mask


class Pooling(Enum):
    GAP = "gap"
    GMP = "gmp"


@dataclass
class BranchConfig:
    """Branch widths, the dropping spec and the ablation switches."""
    global_reduce_dim: int = 512
    drop_reduce_dim: int = 1024
    drop_spec: DropSpec = field(default_factory=DropSpec)
    use_global_branch: bool = True
    use_drop_branch: bool = True
    drop_pooling: Pooling = Pooling.GMP
    normalize_descriptor: bool = False

    def __post_init__(self):
        if isinstance(self.drop_pooling, str):
            try:
                self.drop_pooling = Pooling(self.drop_pooling)
            except ValueError:
                raise ConfigError(f"unknown pooling {self.drop_pooling}", key="branches.drop_pooling") from None

    def validate(self) -> 'BranchConfig':
        if self.global_reduce_dim < 1:
            raise ConfigError("must be positive", key="branches.global_reduce_dim")
        if self.drop_reduce_dim < 1:
            raise ConfigError("must be positive", key="branches.drop_reduce_dim")
        if not (self.use_global_branch or self.use_drop_branch):
            raise ConfigError("at least one branch must be enabled", key="branches.use_global_branch")
        self.drop_spec.validate()
        return self

    @property
    def descriptor_dim(self) -> int:
        dim = 0
        if self.use_global_branch:
            dim += self.global_reduce_dim
        if self.use_drop_branch:
            dim += self.drop_reduce_dim
        return dim


class EmbeddingHead(Module):
    """Linear reduce -> batch norm -> ReLU, plus an optional identity classifier."""

    def __init__(
        self,
        name: str,
        in_features: int,
        out_features: int,
        num_classes: Optional[int],
        rng: np.random.Generator
    ):
        super().__init__(name)
        self.reduce = self.add_child(Linear('reduce', in_features, out_features, rng))
        self.norm = self.add_child(BatchNorm('bn', out_features))
        self.classifier = None
        if num_classes:
            self.classifier = self.add_child(Linear('classifier', out_features, num_classes, rng))

    def __call__(self, pooled: Tensor, training: bool) -> Tuple[Tensor, Optional[Tensor]]:
        feat = relu(self.norm(self.reduce(pooled), training))
        logits = self.classifier(feat) if self.classifier is not None else None
        return feat, logits


class GlobalBranch(Module):
    """Global average pooling followed by the embedding head."""

    def __init__(self, channels: int, config: BranchConfig, num_classes: Optional[int], rng: np.random.Generator):
        super().__init__('global')
        self.head = self.add_child(
            EmbeddingHead('head', channels, config.global_reduce_dim, num_classes, rng)
        )

    def __call__(self, feature_map: Tensor, training: bool) -> Tuple[Tensor, Optional[Tensor]]:
        pooled = reduce_mean(feature_map, axes=(2, 3))
        return self.head(pooled, training)


class DropBranch(Module):
    """
    Bottleneck block, Batch DropBlock (train mode only), pooling, embedding head.

    The bottleneck has its own parameters so the two branches never pool the
    same tensor.
    """

    def __init__(self, channels: int, config: BranchConfig, num_classes: Optional[int], rng: np.random.Generator):
        super().__init__('drop')
        self.config = config
        self.bottleneck = self.add_child(ResidualBlock('bottleneck', channels, rng))
        self.head = self.add_child(
            EmbeddingHead('head', channels, config.drop_reduce_dim, num_classes, rng)
        )

    def dropped_map(self, feature_map: Tensor, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
        """The bottleneck output, with a fresh mask applied in train mode."""
        mapped = apply_per_position(self.bottleneck, feature_map)
        spec = self.config.drop_spec
        if training and spec.kind != DropKind.NONE:
            if rng is None:
                raise ValueError("train-mode dropping needs a random generator")
            mapped = apply_mask(mapped, make_mask(spec, mapped.shape, rng))
        return mapped

    def __call__(
        self,
        feature_map: Tensor,
        training: bool,
        rng: Optional[np.random.Generator] = None
    ) -> Tuple[Tensor, Optional[Tensor]]:
        mapped = self.dropped_map(feature_map, training, rng)
        return self.head(self.pool(mapped), training)

    def pool(self, mapped: Tensor) -> Tensor:
        if self.config.drop_pooling == Pooling.GMP:
            return reduce_max(mapped, axes=(2, 3))
        return reduce_mean(mapped, axes=(2, 3))


def global_branch(feature_map: Tensor, branch: GlobalBranch, training: bool = True):
    """Functional entry point for the global branch."""
    return branch(feature_map, training)


def drop_branch(
    feature_map: Tensor,
    branch: DropBranch,
    training: bool,
    rng: Optional[np.random.Generator] = None
):
    """Functional entry point for the feature dropping branch."""
    return branch(feature_map, training, rng)
