"""
Toy backbone producing a B x C x H x W feature map from a grid of patches.

Every spatial position is processed by the same weights and sees only its
own patch, so output location (i, j) depends only on input patch (i, j).
"""

from dataclasses import dataclass
import numpy as np

from ..autodiff import Tensor, reshape
from ..errors import ConfigError, DimensionError
from .layers import Linear, Module, ResidualBlock, from_positions


@dataclass
class BackboneConfig:
    """Feature-map geometry and depth of the toy backbone."""
    grid_h: int = 12
    grid_w: int = 4
    in_patch_dim: int = 8
    feat_channels: int = 32
    mixing_blocks: int = 2
    zero_init_last: bool = False

    def validate(self) -> 'BackboneConfig':
        for key in ('grid_h', 'grid_w', 'in_patch_dim', 'feat_channels'):
            if getattr(self, key) < 1:
                raise ConfigError(f"must be positive, got {getattr(self, key)}", key=f"backbone.{key}")
        if self.mixing_blocks < 0:
            raise ConfigError(f"must be >= 0, got {self.mixing_blocks}", key="backbone.mixing_blocks")
        return self

    @property
    def num_patches(self) -> int:
        return self.grid_h * self.grid_w


class Backbone(Module):
    """Per-position patch embedding followed by residual mixing blocks."""

    def __init__(self, config: BackboneConfig, rng: np.random.Generator):
        super().__init__('backbone')
        self.config = config.validate()
        self.embed = self.add_child(
            Linear('embed', config.in_patch_dim, config.feat_channels, rng)
        )
        self.blocks = []
        for i in range(config.mixing_blocks):
            zero = config.zero_init_last and i == config.mixing_blocks - 1
            self.blocks.append(self.add_child(
                ResidualBlock(f'block{i}', config.feat_channels, rng, zero_init=zero)
            ))

    def __call__(self, images: Tensor) -> Tensor:
        """
        Map B x patches x in_patch_dim inputs to a B x C x H x W feature map.

        Raises:
            DimensionError: If the patch count or patch size does not match the config
        """
        cfg = self.config
        if images.ndim != 3:
            raise DimensionError(f"backbone expects B x patches x dim input, got {images.shape}")
        b, patches, dim = images.shape
        if patches != cfg.num_patches:
            raise DimensionError(
                f"expected {cfg.num_patches} patches ({cfg.grid_h} x {cfg.grid_w}), got {patches}"
            )
        if dim != cfg.in_patch_dim:
            raise DimensionError(f"expected patch dim {cfg.in_patch_dim}, got {dim}")

        rows = self.embed(reshape(images, (b * patches, dim)))
        for block in self.blocks:
            rows = block(rows)
        return from_positions(rows, b, cfg.grid_h, cfg.grid_w)


def backbone_forward(images: Tensor, backbone: Backbone) -> Tensor:
    """Functional entry point: images -> B x C x H x W."""
    return backbone(images)
