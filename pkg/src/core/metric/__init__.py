from .losses import (
    BatchLabels,
    LossConfig,
    LossValue,
    MetricLoss,
    batch_hard_soft_margin_triplet,
    branch_losses,
    combine,
    lifted_structure_loss,
    loss_component_names,
    metric_loss,
    pairwise_euclidean,
    softmax_ce,
    weighted_margin_loss,
)
from .embeddings import EmbeddingRecord, load_embeddings, save_embeddings, stack_vectors
from .evaluation import (
    EvalConfig,
    MetricsReport,
    average_precision,
    distance_matrix,
    extract_embeddings,
    recall_at_k,
    reid_metrics,
)

__all__ = [
    'BatchLabels',
    'LossConfig',
    'LossValue',
    'MetricLoss',
    'batch_hard_soft_margin_triplet',
    'branch_losses',
    'combine',
    'lifted_structure_loss',
    'loss_component_names',
    'metric_loss',
    'pairwise_euclidean',
    'softmax_ce',
    'weighted_margin_loss',
    'EmbeddingRecord',
    'load_embeddings',
    'save_embeddings',
    'stack_vectors',
    'EvalConfig',
    'MetricsReport',
    'average_precision',
    'distance_matrix',
    'extract_embeddings',
    'recall_at_k',
    'reid_metrics',
]
