"""
Identity-balanced P x K batch sampling.
"""

from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence
import numpy as np

from ..errors import SamplerError
from .records import BatchPlan, Record


@dataclass
class PKBatch:
    """Indices into the train list and the identity of each sampled record."""
    indices: np.ndarray
    identities: np.ndarray


class PKSampler:
    """
    Draws P identities without replacement and K instances of each.

    Identities are reshuffled every epoch and split into consecutive groups
    of P; a trailing group smaller than P is dropped. Instances are drawn
    without replacement when an identity has at least K images and with
    replacement otherwise.
    """

    def __init__(self, train: Sequence[Record], plan: BatchPlan):
        self.plan = plan.validate()
        self.by_identity: Dict[int, List[int]] = {}
        for index, record in enumerate(train):
            self.by_identity.setdefault(record.identity, []).append(index)
        self.identity_list = sorted(self.by_identity)
        if len(self.identity_list) < plan.P:
            raise SamplerError(
                f"need at least P={plan.P} identities, train split has {len(self.identity_list)}"
            )

    def __len__(self) -> int:
        """Batches per epoch."""
        return len(self.identity_list) // self.plan.P

    def _instances(self, identity: int, rng: np.random.Generator) -> np.ndarray:
        pool = np.array(self.by_identity[identity])
        replace = len(pool) < self.plan.K
        return rng.choice(pool, size=self.plan.K, replace=replace)

    def epoch(self, rng: np.random.Generator) -> Iterator[PKBatch]:
        P, K = self.plan.P, self.plan.K
        order = rng.permutation(len(self.identity_list))
        for start in range(0, len(self) * P, P):
            identities = [self.identity_list[i] for i in order[start:start + P]]
            indices = np.concatenate([self._instances(identity, rng) for identity in identities])
            yield PKBatch(indices=indices, identities=np.repeat(identities, K))


def pk_sampler(
    train: Sequence[Record],
    plan: BatchPlan,
    rng: np.random.Generator,
    epochs: Optional[int] = None
) -> Iterator[PKBatch]:
    """
    Stream P x K batches, epoch after epoch.

    Args:
        train: Training records
        plan: Batch layout
        rng: Generator driving every shuffle and draw
        epochs: Number of epochs to stream; None streams forever

    Raises:
        SamplerError: If train has fewer than P identities
    """
    return _stream(PKSampler(train, plan), rng, epochs)


def _stream(sampler: PKSampler, rng: np.random.Generator, epochs: Optional[int]) -> Iterator[PKBatch]:
    done = 0
    while epochs is None or done < epochs:
        yield from sampler.epoch(rng)
        done += 1
