"""
Synthetic roughly-aligned identities.

Every identity owns two independent latent part codes, one for the upper
rows of the patch grid and one for the lower rows. An image renders both
parts, adds a per-camera bias and i.i.d. noise, and with some probability
has its upper part replaced by an occluder. Queries are drawn preferentially
from occluded views, so a model that leans only on the most salient part
loses rank-1 accuracy on them.
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple
import logging
import numpy as np

from ..errors import ConfigError
from .records import DatasetSplit, GridSpec, Record

logger = logging.getLogger(__name__)


@dataclass
class SyntheticConfig:
    """Knobs of the synthetic generator."""
    num_train_ids: int = 32
    num_test_ids: int = 32
    images_per_id: int = 8
    cameras: int = 4
    grid_h: int = 12
    grid_w: int = 4
    patch_dim: int = 8
    upper_rows: Optional[int] = None
    upper_scale: float = 1.0
    lower_scale: float = 0.6
    camera_bias: float = 0.2
    noise: float = 0.3
    occlusion_rate: float = 0.1
    query_occlusion_rate: float = 0.7
    alignment_jitter: int = 0
    seed: int = 0

    @property
    def upper(self) -> int:
        return self.upper_rows if self.upper_rows is not None else self.grid_h // 2

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.grid_h, self.grid_w, self.patch_dim)

    def validate(self) -> 'SyntheticConfig':
        """
        Reject configurations that cannot yield a valid split.

        Raises:
            ConfigError: Naming the offending key
        """
        if self.cameras < 2:
            raise ConfigError(
                f"needs at least 2 cameras so every query has a cross-camera gallery match, got {self.cameras}",
                key="data.cameras"
            )
        if self.num_train_ids < 2:
            raise ConfigError("needs at least 2 train identities", key="data.num_train_ids")
        if self.num_test_ids < 1:
            raise ConfigError("needs at least 1 test identity", key="data.num_test_ids")
        if self.images_per_id < 2:
            raise ConfigError("needs at least 2 images per identity", key="data.images_per_id")
        for key in ('grid_h', 'grid_w', 'patch_dim'):
            if getattr(self, key) < 1:
                raise ConfigError("must be positive", key=f"data.{key}")
        if not 0 < self.upper < self.grid_h:
            raise ConfigError(
                f"upper part must leave rows for both parts, got {self.upper} of {self.grid_h}",
                key="data.upper_rows"
            )
        for key in ('occlusion_rate', 'query_occlusion_rate'):
            if not 0.0 <= getattr(self, key) <= 1.0:
                raise ConfigError("must lie in [0, 1]", key=f"data.{key}")
        for key in ('noise', 'camera_bias', 'upper_scale', 'lower_scale'):
            if getattr(self, key) < 0:
                raise ConfigError("must be >= 0", key=f"data.{key}")
        if not 0 <= self.alignment_jitter < self.grid_h:
            raise ConfigError("must lie in [0, grid_h)", key="data.alignment_jitter")
        return self


class _Renderer:
    """Draws identity codes and renders images from them."""

    def __init__(self, config: SyntheticConfig, rng: np.random.Generator):
        self.config = config
        self.rng = rng
        self.camera_bias = rng.normal(0.0, config.camera_bias, size=(config.cameras, config.patch_dim))

    def identity_codes(self) -> Tuple[np.ndarray, np.ndarray]:
        cfg = self.config
        upper = self.rng.normal(0.0, cfg.upper_scale, size=(cfg.upper, cfg.grid_w, cfg.patch_dim))
        lower = self.rng.normal(0.0, cfg.lower_scale, size=(cfg.grid_h - cfg.upper, cfg.grid_w, cfg.patch_dim))
        return upper, lower

    def render(self, codes: Tuple[np.ndarray, np.ndarray], camera: int, occluded: bool) -> np.ndarray:
        cfg = self.config
        upper, lower = codes
        if occluded:
            upper = self.rng.normal(0.0, cfg.upper_scale, size=upper.shape)
        grid = np.concatenate([upper, lower], axis=0) + self.camera_bias[camera]
        grid = grid + self.rng.normal(0.0, cfg.noise, size=grid.shape)
        if cfg.alignment_jitter:
            shift = int(self.rng.integers(-cfg.alignment_jitter, cfg.alignment_jitter + 1))
            grid = np.roll(grid, shift, axis=0)
        return grid.reshape(cfg.grid_h * cfg.grid_w, cfg.patch_dim)


def gen_synthetic(config: SyntheticConfig) -> DatasetSplit:
    """
    Generate a train / query / gallery split.

    Train identities come first (0 .. num_train_ids-1), test identities after
    them. Each test identity contributes one query; its remaining images go
    to the gallery, the first of them under a camera different from the
    query's. The same seed always yields a bit-identical split.

    Raises:
        ConfigError: If the configuration is infeasible
    """
    cfg = config.validate()
    rng = np.random.default_rng(cfg.seed)
    renderer = _Renderer(cfg, rng)
    split = DatasetSplit(grid=cfg.grid)

    for identity in range(cfg.num_train_ids):
        codes = renderer.identity_codes()
        for k in range(cfg.images_per_id):
            camera = int(rng.integers(0, cfg.cameras))
            occluded = bool(rng.random() < cfg.occlusion_rate)
            split.train.append(
                Record(f"train-{identity:04d}-{k:02d}", identity, camera, renderer.render(codes, camera, occluded))
            )

    for offset in range(cfg.num_test_ids):
        identity = cfg.num_train_ids + offset
        codes = renderer.identity_codes()
        query_camera = int(rng.integers(0, cfg.cameras))
        occluded = bool(rng.random() < cfg.query_occlusion_rate)
        split.query.append(
            Record(f"query-{identity:04d}-00", identity, query_camera, renderer.render(codes, query_camera, occluded))
        )
        for k in range(cfg.images_per_id - 1):
            camera = (query_camera + 1 + k) % cfg.cameras
            occluded = bool(rng.random() < cfg.occlusion_rate)
            split.gallery.append(
                Record(f"gallery-{identity:04d}-{k:02d}", identity, camera, renderer.render(codes, camera, occluded))
            )

    logger.debug(f"Generated synthetic split: {split.statistics()}")
    return split.validate()


def random_guess_rank1(split: DatasetSplit) -> float:
    """Expected rank-1 of a uniformly random gallery ranking."""
    hits: List[float] = []
    for q in split.query:
        valid = [g for g in split.gallery if not (g.identity == q.identity and g.camera_id == q.camera_id)]
        relevant = sum(1 for g in valid if g.identity == q.identity)
        if relevant:
            hits.append(relevant / len(valid))
    return float(np.mean(hits)) if hits else 0.0
