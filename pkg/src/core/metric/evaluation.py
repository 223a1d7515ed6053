"""
Retrieval metrics: CMC and mAP under the re-ID camera exclusion rule, and
Recall@K with self-exclusion.
"""

import json
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence
import logging
import numpy as np
from scipy.spatial.distance import cdist

from ..errors import ConfigError, EvalError
from .embeddings import EmbeddingRecord, stack_vectors

logger = logging.getLogger(__name__)


@dataclass
class EvalConfig:
    """Evaluation protocol settings."""
    protocol: str = "reid"
    max_rank: int = 20
    ks: List[int] = field(default_factory=lambda: [1, 2, 4, 8])
    batch_size: int = 64
    eval_every: int = 0

    def validate(self) -> 'EvalConfig':
        if self.protocol not in ("reid", "retrieval"):
            raise ConfigError(f"unknown protocol {self.protocol}", key="eval.protocol")
        if self.max_rank < 1:
            raise ConfigError("must be >= 1", key="eval.max_rank")
        if not self.ks or any(k < 1 for k in self.ks):
            raise ConfigError("needs positive values", key="eval.ks")
        if self.batch_size < 1:
            raise ConfigError("must be >= 1", key="eval.batch_size")
        if self.eval_every < 0:
            raise ConfigError("must be >= 0", key="eval.eval_every")
        return self


@dataclass
class MetricsReport:
    """Evaluation results; serialized as one JSON document."""
    cmc: List[float] = field(default_factory=list)
    rank1: Optional[float] = None
    map: Optional[float] = None
    recall_at: Dict[int, float] = field(default_factory=dict)
    num_queries: int = 0
    num_skipped: int = 0
    meta: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'cmc': [float(v) for v in self.cmc],
            'rank1': self.rank1,
            'map': self.map,
            'recall_at': {str(k): float(v) for k, v in sorted(self.recall_at.items())},
            'num_queries': self.num_queries,
            'num_skipped': self.num_skipped,
            'meta': self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def distance_matrix(a: Sequence[EmbeddingRecord], b: Sequence[EmbeddingRecord]) -> np.ndarray:
    """
    Exact Euclidean distances between two embedding sets.

    Raises:
        EvalError: If the two sets have different dimensions
    """
    left, right = stack_vectors(a), stack_vectors(b)
    if len(a) and len(b) and left.shape[1] != right.shape[1]:
        raise EvalError(f"dimension mismatch: {left.shape[1]} vs {right.shape[1]}")
    if not len(a) or not len(b):
        return np.zeros((len(a), len(b)))
    return cdist(left, right, metric='euclidean')


def rank_order(distances: np.ndarray) -> np.ndarray:
    """Ascending order per row; ties keep input order."""
    return np.argsort(distances, axis=1, kind='stable')


def average_precision(hits: np.ndarray) -> float:
    """Mean of precision@position over the relevant positions of a ranked list."""
    positions = np.flatnonzero(hits)
    if len(positions) == 0:
        return 0.0
    precision = np.arange(1, len(positions) + 1) / (positions + 1.0)
    return float(precision.mean())


def reid_metrics(
    query: Sequence[EmbeddingRecord],
    gallery: Sequence[EmbeddingRecord],
    max_rank: int = 20
) -> MetricsReport:
    """
    Single-query CMC and mAP.

    Gallery items sharing both identity and camera with the query are removed
    before scoring. Queries with no remaining same-identity item are skipped
    and counted in ``num_skipped``.

    Args:
        query: Query embeddings
        gallery: Gallery embeddings
        max_rank: Length of the reported CMC curve

    Returns:
        MetricsReport with cmc[0] == rank1

    Raises:
        EvalError: If the gallery is empty or no query can be scored
    """
    if not gallery:
        raise EvalError("gallery is empty")
    if not query:
        raise EvalError("query set is empty")
    distances = distance_matrix(query, gallery)
    order = rank_order(distances)
    g_ids = np.array([g.identity for g in gallery])
    g_cams = np.array([g.camera_id for g in gallery])

    curves, aps = [], []
    skipped = 0
    for qi, q in enumerate(query):
        ranked = order[qi]
        keep = ~((g_ids[ranked] == q.identity) & (g_cams[ranked] == q.camera_id))
        hits = (g_ids[ranked][keep] == q.identity)
        if not hits.any():
            skipped += 1
            continue
        found = np.cumsum(hits) > 0
        curve = np.ones(max_rank)
        curve[:min(max_rank, len(found))] = found[:max_rank]
        curves.append(curve)
        aps.append(average_precision(hits))

    if skipped:
        logger.warning(f"Skipped {skipped} queries without a valid gallery match")
    if not curves:
        raise EvalError("no query has a relevant gallery item under a different camera")

    cmc = np.mean(np.stack(curves), axis=0)
    return MetricsReport(
        cmc=cmc.tolist(),
        rank1=float(cmc[0]),
        map=float(np.mean(aps)),
        num_queries=len(curves),
        num_skipped=skipped,
    )


def recall_at_k(embeddings: Sequence[EmbeddingRecord], ks: Sequence[int]) -> MetricsReport:
    """
    Recall@K where every sample queries all the others.

    Raises:
        EvalError: If fewer than 2 embeddings are given or some K >= the set size
    """
    n = len(embeddings)
    if n < 2:
        raise EvalError("Recall@K needs at least 2 embeddings")
    for k in ks:
        if k < 1 or k >= n:
            raise EvalError(f"K={k} is outside [1, {n - 1}] for {n} embeddings")
    distances = distance_matrix(embeddings, embeddings)
    np.fill_diagonal(distances, np.inf)
    order = rank_order(distances)[:, :-1]
    labels = np.array([e.identity for e in embeddings])
    same = labels[order] == labels[:, None]
    first_hit = np.where(same.any(axis=1), same.argmax(axis=1), n)

    recall = {int(k): float(np.mean(first_hit < k)) for k in ks}
    return MetricsReport(
        rank1=recall.get(1),
        recall_at=recall,
        num_queries=n,
    )


def extract_embeddings(
    model,
    records: Sequence,
    batch_size: int = 64,
    transform: Optional[Callable[[np.ndarray], np.ndarray]] = None
) -> List[EmbeddingRecord]:
    """
    Eval-mode descriptors for a list of records.

    Args:
        model: BDBNetwork
        records: Objects with sample_id, identity, camera_id and patches
        batch_size: Records per forward pass; results do not depend on it
        transform: Applied to each stacked batch of patches before the forward
            pass (input normalization)

    Raises:
        ConfigError: If the record patches do not fit the model's backbone
    """
    from ..network.model import Mode

    cfg = model.backbone_config
    expected = (cfg.num_patches, cfg.in_patch_dim)
    out: List[EmbeddingRecord] = []
    for start in range(0, len(records), batch_size):
        chunk = records[start:start + batch_size]
        for r in chunk:
            if np.shape(r.patches) != expected:
                raise ConfigError(
                    f"record {r.sample_id} has patches {np.shape(r.patches)}, model expects {expected}",
                    key="backbone"
                )
        batch = np.stack([np.asarray(r.patches, dtype=np.float64) for r in chunk])
        if transform is not None:
            batch = transform(batch)
        descriptors = model.forward(batch, Mode.EVAL).descriptor.data
        for r, vector in zip(chunk, descriptors):
            out.append(EmbeddingRecord(r.sample_id, r.identity, r.camera_id, vector.copy()))
    return out
