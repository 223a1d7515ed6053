"""
Learning-rate schedule: linear warm-up followed by step decay.
"""

from dataclasses import dataclass, field
from typing import List, Tuple

from ..errors import ConfigError, ScheduleError


@dataclass
class Schedule:
    """Epoch-indexed learning-rate schedule (epochs count from 1)."""
    base_lr: float = 1e-3
    warmup_epochs: int = 50
    decay_points: List[Tuple[int, float]] = field(default_factory=lambda: [(200, 1e-4), (300, 1e-5)])
    total_epochs: int = 400

    @classmethod
    def paper(cls) -> 'Schedule':
        return cls()

    @classmethod
    def desk(cls) -> 'Schedule':
        """Same ratios at 60 epochs."""
        return cls(base_lr=1e-3, warmup_epochs=8, decay_points=[(30, 1e-4), (45, 1e-5)], total_epochs=60)

    def validate(self) -> 'Schedule':
        """
        Raises:
            ConfigError: If lrs are not positive, decay epochs do not increase
                or a decay point lies outside the run
        """
        if self.base_lr <= 0:
            raise ConfigError("must be positive", key="train.base_lr")
        if self.total_epochs < 1:
            raise ConfigError("must be >= 1", key="train.total_epochs")
        if not 0 <= self.warmup_epochs <= self.total_epochs:
            raise ConfigError("must lie in [0, total_epochs]", key="train.warmup_epochs")
        previous = self.warmup_epochs
        for epoch, lr in self.decay_points:
            if epoch < previous or epoch > self.total_epochs:
                raise ConfigError(
                    f"decay epochs must increase from the warm-up end and stay within the run, got {epoch}",
                    key="train.decay_points"
                )
            if lr <= 0:
                raise ConfigError(f"decayed lr must be positive, got {lr}", key="train.decay_points")
            previous = epoch + 1
        return self


def lr_at(epoch: int, schedule: Schedule) -> float:
    """
    Learning rate for a 1-based epoch.

    During warm-up the rate is base_lr * epoch / warmup_epochs. After it, the
    rate is base_lr until the first decay epoch has passed, then each decay
    point's value once its epoch has passed.

    Raises:
        ScheduleError: If epoch is outside [1, total_epochs]
    """
    if not 1 <= epoch <= schedule.total_epochs:
        raise ScheduleError(f"epoch {epoch} outside [1, {schedule.total_epochs}]")
    if epoch <= schedule.warmup_epochs:
        return schedule.base_lr * epoch / schedule.warmup_epochs
    lr = schedule.base_lr
    for decay_epoch, decayed in schedule.decay_points:
        if epoch > decay_epoch:
            lr = decayed
    return lr
