"""
Dataset records, splits and the P x K batch plan.
"""

from dataclasses import dataclass, field, replace
from typing import Dict, List, Set
import numpy as np

from ..errors import ConfigError, DatasetError


@dataclass(frozen=True, eq=False)
class Record:
    """One image: identity, camera and its grid of flattened patches."""
    sample_id: str
    identity: int
    camera_id: int
    patches: np.ndarray

    def __post_init__(self):
        patches = np.array(self.patches, dtype=np.float64)
        patches.setflags(write=False)
        object.__setattr__(self, 'patches', patches)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Record):
            return NotImplemented
        return (
            self.sample_id == other.sample_id
            and self.identity == other.identity
            and self.camera_id == other.camera_id
            and np.array_equal(self.patches, other.patches)
        )

    __hash__ = None

    def with_patches(self, patches: np.ndarray) -> 'Record':
        return replace(self, patches=patches)


@dataclass
class GridSpec:
    grid_h: int
    grid_w: int
    patch_dim: int

    @property
    def patch_shape(self):
        return (self.grid_h * self.grid_w, self.patch_dim)


@dataclass
class DatasetSplit:
    """Train / query / gallery partition of a re-ID dataset."""
    grid: GridSpec
    train: List[Record] = field(default_factory=list)
    query: List[Record] = field(default_factory=list)
    gallery: List[Record] = field(default_factory=list)

    def identities(self, part: str) -> Set[int]:
        return {r.identity for r in getattr(self, part)}

    @property
    def num_train_classes(self) -> int:
        return len(self.identities('train'))

    def train_label_map(self) -> Dict[int, int]:
        """Train identity -> contiguous classifier index, in sorted identity order."""
        return {identity: i for i, identity in enumerate(sorted(self.identities('train')))}

    def statistics(self) -> List[Dict[str, int]]:
        """Identity and image counts per split."""
        return [
            {'split': part, 'identities': len(self.identities(part)), 'images': len(getattr(self, part))}
            for part in ('train', 'query', 'gallery')
        ]

    def validate(self) -> 'DatasetSplit':
        """
        Check every split invariant.

        Raises:
            DatasetError: Naming the first violated rule
        """
        for part in ('train', 'query', 'gallery'):
            if not getattr(self, part):
                raise DatasetError(f"{part}_nonempty", f"the {part} split has no records")

        seen: Set[str] = set()
        for part in ('train', 'query', 'gallery'):
            for r in getattr(self, part):
                if r.identity < 0 or r.camera_id < 0:
                    raise DatasetError("nonnegative_labels", f"record {r.sample_id}")
                if r.patches.shape != self.grid.patch_shape:
                    raise DatasetError(
                        "patch_dims",
                        f"record {r.sample_id} has {r.patches.shape}, header says {self.grid.patch_shape}"
                    )
                if r.sample_id in seen:
                    raise DatasetError("unique_sample_ids", f"duplicate id {r.sample_id}")
                seen.add(r.sample_id)

        test_ids = self.identities('query') | self.identities('gallery')
        shared = self.identities('train') & test_ids
        if shared:
            raise DatasetError("disjoint_train_test", f"identities in both train and test: {sorted(shared)[:5]}")

        cameras: Dict[int, Set[int]] = {}
        for r in self.gallery:
            cameras.setdefault(r.identity, set()).add(r.camera_id)
        for r in self.query:
            if not cameras.get(r.identity, set()) - {r.camera_id}:
                raise DatasetError(
                    "query_cross_camera_match",
                    f"query {r.sample_id} has no gallery image of identity {r.identity} under another camera"
                )
        return self


@dataclass
class BatchPlan:
    """P identities x K instances per batch."""
    P: int = 8
    K: int = 4

    @property
    def batch_size(self) -> int:
        return self.P * self.K

    def validate(self) -> 'BatchPlan':
        if self.P < 2:
            raise ConfigError(f"P must be >= 2, got {self.P}", key="sampler.P")
        if self.K < 2:
            raise ConfigError(f"K must be >= 2, got {self.K}", key="sampler.K")
        return self
