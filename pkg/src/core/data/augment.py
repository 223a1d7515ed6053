"""
Input-space augmentations on patch grids.

Order inside ``augment``: horizontal flip, normalization, Cutout, Random
Erasing. Identity and camera fields are never touched.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple
import numpy as np

from ..errors import ConfigError
from .records import GridSpec, Record


@dataclass
class AugmentConfig:
    flip: bool = True
    normalize: bool = True
    cutout: bool = False
    cutout_ratio: float = 0.25
    random_erasing: bool = False
    erasing_p: float = 0.5
    erasing_area: Tuple[float, float] = (0.02, 0.4)
    erasing_aspect: Tuple[float, float] = (0.3, 3.3)

    def validate(self) -> 'AugmentConfig':
        if not 0.0 < self.cutout_ratio <= 1.0:
            raise ConfigError("must lie in (0, 1]", key="augment.cutout_ratio")
        if not 0.0 <= self.erasing_p <= 1.0:
            raise ConfigError("must lie in [0, 1]", key="augment.erasing_p")
        lo, hi = self.erasing_area
        if not 0.0 < lo <= hi <= 1.0:
            raise ConfigError("needs 0 < low <= high <= 1", key="augment.erasing_area")
        lo, hi = self.erasing_aspect
        if not 0.0 < lo <= hi:
            raise ConfigError("needs 0 < low <= high", key="augment.erasing_aspect")
        return self


@dataclass
class NormalizationStats:
    """Per-dimension mean and std of the training patches."""
    mean: np.ndarray
    std: np.ndarray

    def apply(self, patches: np.ndarray) -> np.ndarray:
        return (patches - self.mean) / self.std


def fit_normalization(records: Sequence[Record]) -> NormalizationStats:
    """Statistics over every patch of every record; zero std becomes 1."""
    stacked = np.concatenate([r.patches for r in records], axis=0)
    std = stacked.std(axis=0)
    return NormalizationStats(stacked.mean(axis=0), np.where(std > 0, std, 1.0))


def _grid_view(patches: np.ndarray, grid: GridSpec) -> np.ndarray:
    return np.array(patches, dtype=np.float64).reshape(grid.grid_h, grid.grid_w, grid.patch_dim)


def flip_patches(patches: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Mirror the patch grid left to right."""
    return _grid_view(patches, grid)[:, ::-1, :].reshape(patches.shape)


def cutout(patches: np.ndarray, grid: GridSpec, ratio: float, rng: np.random.Generator) -> np.ndarray:
    """Zero a random square whose side is max(1, floor(ratio * min(grid_h, grid_w)))."""
    view = _grid_view(patches, grid)
    side = max(1, int(np.floor(ratio * min(grid.grid_h, grid.grid_w))))
    top = int(rng.integers(0, grid.grid_h - side + 1))
    left = int(rng.integers(0, grid.grid_w - side + 1))
    view[top:top + side, left:left + side, :] = 0.0
    return view.reshape(patches.shape)


def erasing_box(
    grid: GridSpec,
    area_range: Tuple[float, float],
    aspect_range: Tuple[float, float],
    rng: np.random.Generator
) -> Tuple[int, int, int, int]:
    """(top, left, height, width) of a Random Erasing rectangle clamped to the grid."""
    cells = grid.grid_h * grid.grid_w
    area = rng.uniform(*area_range) * cells
    aspect = rng.uniform(*aspect_range)
    height = int(np.clip(round(np.sqrt(area * aspect)), 1, grid.grid_h))
    width = int(np.clip(round(np.sqrt(area / aspect)), 1, grid.grid_w))
    top = int(rng.integers(0, grid.grid_h - height + 1))
    left = int(rng.integers(0, grid.grid_w - width + 1))
    return top, left, height, width


def random_erasing(
    patches: np.ndarray,
    grid: GridSpec,
    rng: np.random.Generator,
    p: float = 0.5,
    area_range: Tuple[float, float] = (0.02, 0.4),
    aspect_range: Tuple[float, float] = (0.3, 3.3)
) -> np.ndarray:
    """With probability p, fill a random rectangle with uniform values in [-1, 1)."""
    if rng.random() >= p:
        return np.array(patches, dtype=np.float64)
    view = _grid_view(patches, grid)
    top, left, height, width = erasing_box(grid, area_range, aspect_range, rng)
    view[top:top + height, left:left + width, :] = rng.uniform(-1.0, 1.0, size=(height, width, grid.patch_dim))
    return view.reshape(patches.shape)


def augment(
    record: Record,
    config: AugmentConfig,
    grid: GridSpec,
    rng: np.random.Generator,
    stats: Optional[NormalizationStats] = None
) -> Record:
    """
    Apply the enabled train-time augmentations to one record.

    Args:
        record: Source record
        config: Which augmentations run
        grid: Patch grid geometry
        rng: Generator for every random decision
        stats: Train-split normalization; required when config.normalize is set

    Returns:
        A new Record with the same identity and camera
    """
    patches = np.array(record.patches, dtype=np.float64)
    if config.flip and rng.random() < 0.5:
        patches = flip_patches(patches, grid)
    if config.normalize:
        if stats is None:
            raise ConfigError("normalization needs train statistics", key="augment.normalize")
        patches = stats.apply(patches)
    if config.cutout:
        patches = cutout(patches, grid, config.cutout_ratio, rng)
    if config.random_erasing:
        patches = random_erasing(
            patches, grid, rng, config.erasing_p, config.erasing_area, config.erasing_aspect
        )
    return record.with_patches(patches)
