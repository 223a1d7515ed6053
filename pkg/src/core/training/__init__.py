from .schedule import Schedule, lr_at
from .optimizer import OptimizerState, adam_step
from .loop import (
    HISTORY_COLUMNS,
    HistoryRow,
    TrainHistory,
    TrainResult,
    evaluate_split,
    train_loop,
    train_step,
)

__all__ = [
    'Schedule',
    'lr_at',
    'OptimizerState',
    'adam_step',
    'HISTORY_COLUMNS',
    'HistoryRow',
    'TrainHistory',
    'TrainResult',
    'evaluate_split',
    'train_loop',
    'train_step',
]
