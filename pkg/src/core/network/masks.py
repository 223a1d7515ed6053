"""
Feature-space dropping masks for B x C x H x W feature maps.

Batch DropBlock zeroes one rectangle that is identical for every sample and
channel of a batch. The other generators are the comparison variants:
per-sample DropBlock, Dropout, SpatialDropout and Batch Dropout. All
generators are pure functions of (dims, spec, rng).
"""

from dataclasses import dataclass
from enum import Enum
from typing import Tuple
import numpy as np

from ..autodiff import Tensor, mul
from ..errors import DimensionError, SpecError


class DropKind(Enum):
    """Supported dropping strategies."""
    BATCH_DROP_BLOCK = "batch_drop_block"
    DROP_BLOCK = "drop_block"
    DROPOUT = "dropout"
    SPATIAL_DROPOUT = "spatial_dropout"
    BATCH_DROPOUT = "batch_dropout"
    NONE = "none"


BLOCK_KINDS = (DropKind.BATCH_DROP_BLOCK, DropKind.DROP_BLOCK)
DROPOUT_KINDS = (DropKind.DROPOUT, DropKind.SPATIAL_DROPOUT, DropKind.BATCH_DROPOUT)


class BroadcastRule(Enum):
    """How a mask pattern spreads over a B x C x H x W tensor."""
    SHARED_OVER_BATCH_AND_CHANNEL = "shared_over_batch_and_channel"  # H x W
    PER_SAMPLE = "per_sample"  # B x H x W
    PER_CHANNEL = "per_channel"  # B x C
    PER_ELEMENT = "per_element"  # B x C x H x W


@dataclass
class DropSpec:
    """Dropping configuration; block kinds use r_h/r_w, dropout kinds use p."""
    kind: DropKind = DropKind.BATCH_DROP_BLOCK
    r_h: float = 0.3
    r_w: float = 1.0
    p: float = 0.1

    def __post_init__(self):
        if isinstance(self.kind, str):
            try:
                self.kind = DropKind(self.kind)
            except ValueError:
                raise SpecError(f"Unknown drop kind: {self.kind}") from None

    def validate(self) -> 'DropSpec':
        """
        Check value ranges.

        Raises:
            SpecError: If r_h or r_w is outside [0, 1] or p is outside [0, 1)
        """
        for label, ratio in (('r_h', self.r_h), ('r_w', self.r_w)):
            if not 0.0 <= ratio <= 1.0:
                raise SpecError(f"{label} must lie in [0, 1], got {ratio}")
        if not 0.0 <= self.p < 1.0:
            raise SpecError(f"p must lie in [0, 1), got {self.p}")
        return self


@dataclass
class DropMask:
    """A binary pattern together with its broadcast rule."""
    pattern: np.ndarray
    broadcast_rule: BroadcastRule

    def expand(self, shape: Tuple[int, ...]) -> np.ndarray:
        """
        Broadcast the pattern to a full B x C x H x W array.

        Raises:
            DimensionError: If the pattern does not fit the shape under the rule
        """
        if len(shape) != 4:
            raise DimensionError(f"masks apply to B x C x H x W tensors, got {shape}")
        b, c, h, w = shape
        rule = self.broadcast_rule
        expected = {
            BroadcastRule.SHARED_OVER_BATCH_AND_CHANNEL: (h, w),
            BroadcastRule.PER_SAMPLE: (b, h, w),
            BroadcastRule.PER_CHANNEL: (b, c),
            BroadcastRule.PER_ELEMENT: (b, c, h, w),
        }[rule]
        if self.pattern.shape != expected:
            raise DimensionError(
                f"{rule.value} mask of shape {self.pattern.shape} does not fit tensor {shape}"
            )
        if rule == BroadcastRule.SHARED_OVER_BATCH_AND_CHANNEL:
            view = self.pattern[None, None, :, :]
        elif rule == BroadcastRule.PER_SAMPLE:
            view = self.pattern[:, None, :, :]
        elif rule == BroadcastRule.PER_CHANNEL:
            view = self.pattern[:, :, None, None]
        else:
            view = self.pattern
        return np.broadcast_to(view, shape).astype(np.float64)

    @property
    def kept_fraction(self) -> float:
        return float(self.pattern.mean()) if self.pattern.size else 1.0


def block_size(ratio: float, extent: int) -> int:
    """max(1, floor(ratio * extent)) for ratio > 0, else 0."""
    if ratio <= 0.0:
        return 0
    return min(extent, max(1, int(np.floor(ratio * extent))))


def _require_kind(spec: DropSpec, *kinds: DropKind) -> None:
    spec.validate()
    if spec.kind not in kinds:
        expected = ', '.join(k.value for k in kinds)
        raise SpecError(f"mask generator expects kind {expected}, got {spec.kind.value}")


def _require_dims(**dims: int) -> None:
    for label, value in dims.items():
        if value < 1:
            raise DimensionError(f"{label} must be >= 1, got {value}")


def _block_pattern(h: int, w: int, dh: int, dw: int, top: int, left: int) -> np.ndarray:
    pattern = np.ones((h, w), dtype=np.float64)
    pattern[top:top + dh, left:left + dw] = 0.0
    return pattern


def batch_drop_block_mask(h: int, w: int, spec: DropSpec, rng: np.random.Generator) -> DropMask:
    """
    One H x W mask shared by the whole batch, with a single dh x dw rectangle
    of zeros placed uniformly over all valid top-left positions.
    """
    _require_kind(spec, DropKind.BATCH_DROP_BLOCK)
    _require_dims(h=h, w=w)
    dh, dw = block_size(spec.r_h, h), block_size(spec.r_w, w)
    top = int(rng.integers(0, h - dh + 1))
    left = int(rng.integers(0, w - dw + 1))
    return DropMask(
        _block_pattern(h, w, dh, dw, top, left),
        BroadcastRule.SHARED_OVER_BATCH_AND_CHANNEL
    )


def drop_block_mask(b: int, h: int, w: int, spec: DropSpec, rng: np.random.Generator) -> DropMask:
    """B independent rectangles of the same size, one per sample."""
    _require_kind(spec, DropKind.DROP_BLOCK)
    _require_dims(b=b, h=h, w=w)
    dh, dw = block_size(spec.r_h, h), block_size(spec.r_w, w)
    tops = rng.integers(0, h - dh + 1, size=b)
    lefts = rng.integers(0, w - dw + 1, size=b)
    pattern = np.stack([
        _block_pattern(h, w, dh, dw, int(top), int(left)) for top, left in zip(tops, lefts)
    ])
    return DropMask(pattern, BroadcastRule.PER_SAMPLE)


def dropout_mask(b: int, c: int, h: int, w: int, spec: DropSpec, rng: np.random.Generator) -> DropMask:
    """I.i.d. Bernoulli(1 - p) keep decisions for every element."""
    _require_kind(spec, DropKind.DROPOUT)
    _require_dims(b=b, c=c, h=h, w=w)
    pattern = (rng.random((b, c, h, w)) >= spec.p).astype(np.float64)
    return DropMask(pattern, BroadcastRule.PER_ELEMENT)


def spatial_dropout_mask(b: int, c: int, spec: DropSpec, rng: np.random.Generator) -> DropMask:
    """Whole channels zeroed with probability p, independently per sample."""
    _require_kind(spec, DropKind.SPATIAL_DROPOUT)
    _require_dims(b=b, c=c)
    pattern = (rng.random((b, c)) >= spec.p).astype(np.float64)
    return DropMask(pattern, BroadcastRule.PER_CHANNEL)


def batch_dropout_mask(h: int, w: int, spec: DropSpec, rng: np.random.Generator) -> DropMask:
    """Isolated spatial positions dropped with probability p, shared by the batch."""
    _require_kind(spec, DropKind.BATCH_DROPOUT)
    _require_dims(h=h, w=w)
    pattern = (rng.random((h, w)) >= spec.p).astype(np.float64)
    return DropMask(pattern, BroadcastRule.SHARED_OVER_BATCH_AND_CHANNEL)


def make_mask(spec: DropSpec, shape: Tuple[int, int, int, int], rng: np.random.Generator) -> DropMask:
    """
    Draw a fresh mask of the spec's kind for a B x C x H x W tensor.

    Args:
        spec: Dropping configuration
        shape: Target tensor shape
        rng: Random generator; one call consumes one draw of the mask

    Returns:
        DropMask ready for apply_mask
    """
    spec.validate()
    b, c, h, w = shape
    if spec.kind == DropKind.BATCH_DROP_BLOCK:
        return batch_drop_block_mask(h, w, spec, rng)
    if spec.kind == DropKind.DROP_BLOCK:
        return drop_block_mask(b, h, w, spec, rng)
    if spec.kind == DropKind.DROPOUT:
        return dropout_mask(b, c, h, w, spec, rng)
    if spec.kind == DropKind.SPATIAL_DROPOUT:
        return spatial_dropout_mask(b, c, spec, rng)
    if spec.kind == DropKind.BATCH_DROPOUT:
        return batch_dropout_mask(h, w, spec, rng)
    return DropMask(np.ones((h, w)), BroadcastRule.SHARED_OVER_BATCH_AND_CHANNEL)


def apply_mask(t: Tensor, mask: DropMask) -> Tensor:
    """
    Multiply t by the broadcast mask. Kept units are not rescaled and only
    they receive gradient.

    Raises:
        DimensionError: If the mask does not fit t
    """
    return mul(t, Tensor(mask.expand(t.shape)))
