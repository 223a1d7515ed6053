"""
Metric-learning objectives.

Batch-hard soft-margin triplet and softmax cross-entropy are the training
losses of the two-branch network; lifted structure and the
distance-weighted margin loss are the retrieval alternatives.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union
import logging
import numpy as np

from ..autodiff import (
    Tensor,
    add,
    concat,
    logsumexp,
    mul,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    safe_sqrt,
    softplus,
    sub,
    take,
)
from ..errors import BatchCompositionError, ConfigError, DimensionError, LabelError

logger = logging.getLogger(__name__)

# Distance-weighted sampling constants
SAMPLING_CUTOFF = 0.5
NONZERO_LOSS_CUTOFF = 1.4


class MetricLoss(Enum):
    TRIPLET = "triplet"
    LIFTED = "lifted"
    MARGIN = "margin"


@dataclass
class LossConfig:
    """Which terms enter the training objective and their hyper-parameters."""
    metric: MetricLoss = MetricLoss.TRIPLET
    use_triplet: bool = True
    use_softmax: bool = True
    lifted_margin: float = 1.0
    margin_alpha: float = 0.2
    margin_beta: float = 1.2
    learn_beta: bool = False

    def __post_init__(self):
        if isinstance(self.metric, str):
            try:
                self.metric = MetricLoss(self.metric)
            except ValueError:
                raise ConfigError(f"unknown metric loss {self.metric}", key="losses.metric") from None

    def validate(self) -> 'LossConfig':
        if not (self.use_triplet or self.use_softmax):
            raise ConfigError("at least one loss term must be enabled", key="losses.use_triplet")
        if self.lifted_margin < 0:
            raise ConfigError("must be >= 0", key="losses.lifted_margin")
        if self.margin_alpha < 0:
            raise ConfigError("must be >= 0", key="losses.margin_alpha")
        return self


@dataclass
class BatchLabels:
    """Per-sample identities of a metric-learning batch."""
    identity: np.ndarray

    def __post_init__(self):
        self.identity = np.asarray(self.identity).reshape(-1)

    def __len__(self) -> int:
        return len(self.identity)

    @property
    def counts(self) -> Dict[int, int]:
        ids, counts = np.unique(self.identity, return_counts=True)
        return {int(i): int(c) for i, c in zip(ids, counts)}

    def validate(self) -> 'BatchLabels':
        """
        Check the batch supports in-batch mining.

        Raises:
            BatchCompositionError: If an identity has a single sample or only
                one identity is present
        """
        counts = self.counts
        if len(counts) < 2:
            raise BatchCompositionError("batch needs at least 2 identities")
        singles = [i for i, c in counts.items() if c < 2]
        if singles:
            raise BatchCompositionError(f"identities with a single sample: {singles}")
        return self

    def is_pk(self, p: int, k: int) -> bool:
        """True when the batch has exactly p identities with k samples each."""
        counts = self.counts
        return len(counts) == p and all(c == k for c in counts.values())

    def masks(self) -> Tuple[np.ndarray, np.ndarray]:
        """(positive mask excluding the diagonal, negative mask)."""
        same = self.identity[:, None] == self.identity[None, :]
        return same & ~np.eye(len(self), dtype=bool), ~same


@dataclass
class LossValue:
    """Total objective and its named components."""
    total: Tensor
    components: Dict[str, Tensor] = field(default_factory=dict)

    def as_floats(self) -> Dict[str, float]:
        values = {name: t.item() for name, t in self.components.items()}
        values['total'] = self.total.item()
        return values


def _labels(labels: Union[BatchLabels, Sequence[int], np.ndarray]) -> BatchLabels:
    return labels if isinstance(labels, BatchLabels) else BatchLabels(labels)


def _check_feats(feats: Tensor, labels: BatchLabels) -> None:
    if feats.ndim != 2:
        raise DimensionError(f"features must be N x D, got {feats.shape}")
    if feats.shape[0] != len(labels):
        raise DimensionError(f"{feats.shape[0]} features but {len(labels)} labels")


def pairwise_euclidean(x: Tensor) -> Tensor:
    """
    N x N Euclidean distances between the rows of x.

    Distances come from explicit row differences (an N x N x D
    intermediate), so they do not depend on where the batch sits in
    embedding space. The diagonal is exactly zero and the root goes through
    safe_sqrt so coincident rows have distance 0 and zero gradient.
    """
    if x.ndim != 2:
        raise DimensionError(f"pairwise_euclidean expects N x D, got {x.shape}")
    n = x.shape[0]
    if n < 1:
        raise DimensionError("pairwise_euclidean needs at least one row")
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing='ij')
    diff = sub(take(x, (ii.ravel(),)), take(x, (jj.ravel(),)))
    squared = reduce_sum(mul(diff, diff), axes=1)
    return safe_sqrt(reshape(squared, (n, n)))


def batch_hard_soft_margin_triplet(feats: Tensor, labels) -> Tensor:
    """
    Batch-hard triplet loss with soft margin, summed over anchors.

    For every anchor the farthest same-identity sample and the nearest
    other-identity sample are mined from the distance matrix, and the loss is
    softplus(d_pos - d_neg). Ties pick the first index.

    Raises:
        BatchCompositionError: If an identity has one sample or there is only one identity
    """
    labels = _labels(labels).validate()
    _check_feats(feats, labels)
    dist = pairwise_euclidean(feats)
    positive, negative = labels.masks()
    rows = np.arange(len(labels))
    hard_pos = np.argmax(np.where(positive, dist.data, -np.inf), axis=1)
    hard_neg = np.argmin(np.where(negative, dist.data, np.inf), axis=1)
    d_pos = take(dist, (rows, hard_pos))
    d_neg = take(dist, (rows, hard_neg))
    return reduce_sum(softplus(sub(d_pos, d_neg)))


def softmax_ce(logits: Tensor, labels) -> Tensor:
    """
    Mean negative log-likelihood of the labels under softmax(logits).

    Raises:
        LabelError: If a label is outside [0, C)
    """
    if logits.ndim != 2:
        raise DimensionError(f"logits must be N x C, got {logits.shape}")
    targets = np.asarray(labels.identity if isinstance(labels, BatchLabels) else labels).reshape(-1)
    n, c = logits.shape
    if len(targets) != n:
        raise DimensionError(f"{n} logit rows but {len(targets)} labels")
    if np.any(targets < 0) or np.any(targets >= c) or not np.all(targets == np.round(targets)):
        raise LabelError(f"labels must be integers in [0, {c}), got {targets.tolist()}")
    picked = take(logits, (np.arange(n), targets.astype(np.int64)))
    return reduce_mean(sub(logsumexp(logits, axis=1), picked))


def lifted_structure_loss(feats: Tensor, labels, margin: float = 1.0) -> Tensor:
    """
    Lifted structured embedding loss.

    For every unordered positive pair (i, j):
        J_ij = log(sum_{k in N(i)} exp(m - D_ik) + sum_{l in N(j)} exp(m - D_jl)) + D_ij
    and the loss is sum relu(J_ij)^2 / (2 |P|).
    """
    labels = _labels(labels).validate()
    _check_feats(feats, labels)
    dist = pairwise_euclidean(feats)
    positive, negative = labels.masks()
    first, second = np.nonzero(np.triu(positive))

    slack = sub(margin, dist)
    # Non-negatives are pushed to -inf so they vanish from the log-sum-exp
    blocked = np.where(negative, 0.0, -np.inf)
    exclude = Tensor(np.concatenate([blocked[first], blocked[second]], axis=1))
    rows = concat([take(slack, first), take(slack, second)], axis=1)
    j = add(logsumexp(add(rows, exclude), axis=1), take(dist, (first, second)))
    hinge = relu(j)
    return mul(1.0 / (2 * len(first)), reduce_sum(mul(hinge, hinge)))


def _sampling_weights(feats: np.ndarray, negative: np.ndarray) -> np.ndarray:
    """Inverse distance-density weights over negatives, rows normalized to 1."""
    n, dim = feats.shape
    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    unit = feats / np.maximum(norms, 1e-12)
    gram = unit @ unit.T
    d = np.sqrt(np.maximum(2.0 - 2.0 * gram, 0.0))
    d = np.maximum(d, SAMPLING_CUTOFF)

    log_w = (2.0 - dim) * np.log(d) - ((dim - 3) / 2.0) * np.log(np.maximum(1.0 - 0.25 * d * d, 1e-8))
    usable = negative & (d < NONZERO_LOSS_CUTOFF)
    weights = np.zeros((n, n))
    for i in range(n):
        # Fall back to every negative when none is inside the cutoff
        mask = usable[i] if usable[i].any() else negative[i]
        row = np.where(mask, log_w[i], -np.inf)
        row = np.exp(row - row[mask].max())
        weights[i] = row / row.sum()
    return weights


def weighted_margin_loss(
    feats: Tensor,
    labels,
    rng: np.random.Generator,
    alpha: float = 0.2,
    beta: Union[float, Tensor] = 1.2
) -> Tensor:
    """
    Margin loss over distance-weighted sampled negatives.

    Every ordered positive pair (a, p) gets one negative n drawn from a's
    negatives with probability proportional to the inverse distance density.
    The loss is the mean over pairs of
        relu(alpha + D_ap - beta) + relu(alpha - D_an + beta)

    Args:
        feats: N x D embeddings
        labels: Batch identities
        rng: Generator for the negative draws
        alpha: Margin half-width
        beta: Boundary; pass a scalar Tensor with requires_grad to learn it

    Returns:
        Scalar loss
    """
    labels = _labels(labels).validate()
    _check_feats(feats, labels)
    positive, negative = labels.masks()
    weights = _sampling_weights(feats.data, negative)
    anchors, positives = np.nonzero(positive)
    negatives = np.array([rng.choice(len(labels), p=weights[a]) for a in anchors], dtype=np.int64)

    dist = pairwise_euclidean(feats)
    d_ap = take(dist, (anchors, positives))
    d_an = take(dist, (anchors, negatives))
    beta = beta if isinstance(beta, Tensor) else Tensor(beta)
    pos_term = relu(sub(add(alpha, d_ap), beta))
    neg_term = relu(add(sub(alpha, d_an), beta))
    return reduce_mean(add(pos_term, neg_term))


def metric_loss(
    feats: Tensor,
    labels,
    config: LossConfig,
    rng: Optional[np.random.Generator] = None,
    beta: Optional[Tensor] = None
) -> Tensor:
    """Dispatch to the metric loss selected in the config."""
    if config.metric == MetricLoss.TRIPLET:
        return batch_hard_soft_margin_triplet(feats, labels)
    if config.metric == MetricLoss.LIFTED:
        return lifted_structure_loss(feats, labels, config.lifted_margin)
    if rng is None:
        raise ValueError("the margin loss needs a random generator for negative sampling")
    return weighted_margin_loss(
        feats, labels, rng, config.margin_alpha, beta if beta is not None else config.margin_beta
    )


def combine(components: Dict[str, Tensor]) -> LossValue:
    """Unit-weight sum of named scalar losses."""
    if not components:
        raise ValueError("combine needs at least one component")
    names = list(components)
    total = components[names[0]]
    for name in names[1:]:
        total = add(total, components[name])
    return LossValue(total=total, components=dict(components))


def branch_losses(
    inputs: Dict[str, Tensor],
    labels,
    config: LossConfig,
    rng: Optional[np.random.Generator] = None,
    beta: Optional[Tensor] = None
) -> LossValue:
    """
    Build the training objective from ModelOutput.loss_inputs().

    Component names are ``triplet_<branch>`` (the configured metric loss,
    whatever its kind) and ``softmax_<branch>`` for the global and drop branches.
    """
    components: Dict[str, Tensor] = {}
    for branch in ('global', 'drop'):
        feat = inputs.get(f'feat_{branch}')
        if feat is None:
            continue
        if config.use_triplet:
            components[f'triplet_{branch}'] = metric_loss(feat, labels, config, rng, beta)
        logits = inputs.get(f'logits_{branch}')
        if config.use_softmax and logits is not None:
            components[f'softmax_{branch}'] = softmax_ce(logits, labels)
    return combine(components)


def loss_component_names(use_global: bool, use_drop: bool, config: LossConfig) -> List[str]:
    names = []
    for branch, enabled in (('global', use_global), ('drop', use_drop)):
        if not enabled:
            continue
        if config.use_triplet:
            names.append(f'triplet_{branch}')
        if config.use_softmax:
            names.append(f'softmax_{branch}')
    return names
