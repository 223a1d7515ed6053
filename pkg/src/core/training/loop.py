"""
Seeded training loop: P x K sampler -> model -> losses -> Adam.
"""

import csv
import io
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, List, Optional, Tuple
import numpy as np

from ..autodiff import Tensor
from ..data import DatasetSplit, NormalizationStats, PKSampler, augment, fit_normalization
from ..errors import ConfigError, TrainingError
from ..metric import BatchLabels, LossValue, MetricLoss, branch_losses, extract_embeddings, reid_metrics
from ..network import BDBNetwork, Mode
from ...utils.logging import RunLogger
from .optimizer import OptimizerState, adam_step
from .schedule import lr_at

if TYPE_CHECKING:
    from ..config import RunConfig

HISTORY_COLUMNS = [
    'epoch', 'lr', 'loss_total',
    'loss_triplet_g', 'loss_softmax_g', 'loss_triplet_d', 'loss_softmax_d',
    'rank1', 'map',
]
_COMPONENT_COLUMNS = {
    'triplet_global': 'loss_triplet_g',
    'softmax_global': 'loss_softmax_g',
    'triplet_drop': 'loss_triplet_d',
    'softmax_drop': 'loss_softmax_d',
}


@dataclass
class HistoryRow:
    epoch: int
    lr: float
    loss_total: float
    components: Dict[str, float] = field(default_factory=dict)
    rank1: Optional[float] = None
    map: Optional[float] = None

    def as_csv_row(self) -> Dict[str, str]:
        row = {'epoch': str(self.epoch), 'lr': repr(self.lr), 'loss_total': repr(self.loss_total)}
        for name, column in _COMPONENT_COLUMNS.items():
            row[column] = repr(self.components[name]) if name in self.components else ''
        row['rank1'] = repr(self.rank1) if self.rank1 is not None else ''
        row['map'] = repr(self.map) if self.map is not None else ''
        return row


@dataclass
class TrainHistory:
    rows: List[HistoryRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def losses(self) -> List[float]:
        return [r.loss_total for r in self.rows]

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=HISTORY_COLUMNS, lineterminator='\n')
        writer.writeheader()
        for row in self.rows:
            writer.writerow(row.as_csv_row())
        return buffer.getvalue()


@dataclass
class TrainResult:
    """Trained model plus everything eval and checkpointing need."""
    model: BDBNetwork
    history: TrainHistory
    stats: Optional[NormalizationStats] = None
    beta: Optional[Tensor] = None
    label_map: Dict[int, int] = field(default_factory=dict)

    def input_transform(self):
        return self.stats.apply if self.stats is not None else None

    def __iter__(self):
        # Unpacks as (model, history)
        return iter((self.model, self.history))


def check_geometry(cfg: 'RunConfig', split: DatasetSplit) -> None:
    """
    Raises:
        ConfigError: If the backbone geometry does not match the dataset grid
    """
    bb, grid = cfg.backbone, split.grid
    for key, ours, theirs in (
        ('grid_h', bb.grid_h, grid.grid_h),
        ('grid_w', bb.grid_w, grid.grid_w),
        ('in_patch_dim', bb.in_patch_dim, grid.patch_dim),
    ):
        if ours != theirs:
            raise ConfigError(f"model has {ours}, dataset has {theirs}", key=f"backbone.{key}")


def train_step(
    model: BDBNetwork,
    images: np.ndarray,
    labels: np.ndarray,
    cfg: 'RunConfig',
    state: OptimizerState,
    lr: float,
    rng: np.random.Generator,
    beta: Optional[Tensor] = None
) -> LossValue:
    """
    Forward, backward and one Adam update on a single batch.

    Args:
        model: Network to update in place
        images: B x patches x dim batch (already augmented)
        labels: Classifier indices of the batch, in P x K layout
        cfg: Run configuration (losses section is used)
        state: Optimizer moments
        lr: Learning rate for this step
        rng: Generator for margin-loss negative sampling
        beta: Learnable margin boundary, if enabled

    Returns:
        The loss before the update

    Raises:
        TrainingError: If the loss or a gradient is not finite
    """
    out = model.forward(images, Mode.TRAIN)
    loss = branch_losses(out.loss_inputs(), BatchLabels(labels), cfg.losses, rng, beta)
    if not np.isfinite(loss.total.item()):
        raise TrainingError(f"non-finite loss {loss.as_floats()}")

    params = model.parameters() + ([beta] if beta is not None else [])
    for param in params:
        param.zero_grad()
    loss.total.backward()
    adam_step(params, [p.grad for p in params], state, lr)
    return loss


def evaluate_split(model: BDBNetwork, split: DatasetSplit, cfg: 'RunConfig', transform=None):
    """Re-ID metrics of the model on the split's query and gallery."""
    query = extract_embeddings(model, split.query, cfg.eval.batch_size, transform)
    gallery = extract_embeddings(model, split.gallery, cfg.eval.batch_size, transform)
    return reid_metrics(query, gallery, cfg.eval.max_rank)


def train_loop(
    cfg: 'RunConfig',
    split: DatasetSplit,
    rng: Optional[np.random.Generator] = None,
    logger: Optional[RunLogger] = None
) -> TrainResult:
    """
    Train a network on the split's train records.

    The model's parameter init and mask draws come from cfg.seed; sampling,
    augmentation and margin-loss negatives come from rng. Two calls with the
    same config and an identically seeded rng give bit-identical parameters.

    Args:
        cfg: Run configuration
        split: Validated dataset split
        rng: Data-side generator; defaults to one seeded from cfg.seed
        logger: Run logger for epoch summaries

    Returns:
        TrainResult, which also unpacks as (model, history)
    """
    cfg.validate()
    check_geometry(cfg, split)
    logger = logger or RunLogger('train')
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)

    label_map = split.train_label_map()
    model = BDBNetwork(cfg.backbone, cfg.branches, len(label_map), seed=cfg.seed)
    stats = fit_normalization(split.train) if cfg.augment.normalize else None
    beta = None
    if cfg.losses.metric == MetricLoss.MARGIN and cfg.losses.learn_beta:
        beta = Tensor(cfg.losses.margin_beta, requires_grad=True, name='loss.beta')
    params = model.parameters() + ([beta] if beta is not None else [])
    state = OptimizerState.create(params)
    sampler = PKSampler(split.train, cfg.sampler)
    transform = stats.apply if stats is not None else None

    logger.info("Starting training", {
        'epochs': cfg.schedule.total_epochs,
        'batches_per_epoch': len(sampler),
        'parameters': int(sum(p.size for p in model.parameters())),
        'classes': len(label_map),
    })

    history = TrainHistory()
    for epoch in range(1, cfg.schedule.total_epochs + 1):
        lr = lr_at(epoch, cfg.schedule)
        sums: Dict[str, float] = {}
        batches = 0
        for batch in sampler.epoch(rng):
            records = [
                augment(split.train[i], cfg.augment, split.grid, rng, stats) for i in batch.indices
            ]
            images = np.stack([r.patches for r in records])
            labels = np.array([label_map[i] for i in batch.identities])
            loss = train_step(model, images, labels, cfg, state, lr, rng, beta)
            for name, value in loss.as_floats().items():
                sums[name] = sums.get(name, 0.0) + value
            batches += 1

        means = {name: value / batches for name, value in sums.items()}
        row = HistoryRow(
            epoch=epoch,
            lr=lr,
            loss_total=means.pop('total'),
            components=means,
        )
        if cfg.eval.eval_every and epoch % cfg.eval.eval_every == 0:
            report = evaluate_split(model, split, cfg, transform)
            row.rank1, row.map = report.rank1, report.map
        history.rows.append(row)
        logger.info(f"Epoch {epoch}/{cfg.schedule.total_epochs}", {
            'lr': lr,
            'loss': round(row.loss_total, 6),
            **{k: round(v, 6) for k, v in row.components.items()},
            **({'rank1': row.rank1, 'map': row.map} if row.rank1 is not None else {}),
        })

    return TrainResult(model=model, history=history, stats=stats, beta=beta, label_map=label_map)
