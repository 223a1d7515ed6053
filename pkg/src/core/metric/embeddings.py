"""
Embedding records and the embedding file format.

File layout: a header line ``bdb-embeddings v1 dim=<d>`` followed by one
JSON object per line: {"id": str, "identity": int, "camera": int, "v": [...]}.
"""

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Union
import numpy as np

from ..errors import EvalError, ParseError

HEADER_PATTERN = re.compile(r'^bdb-embeddings v1 dim=(\d+)$')


@dataclass
class EmbeddingRecord:
    sample_id: str
    identity: int
    camera_id: int
    vector: np.ndarray

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64).reshape(-1)


def stack_vectors(records: Sequence[EmbeddingRecord]) -> np.ndarray:
    """
    Stack record vectors into an N x d matrix.

    Raises:
        EvalError: If dimensions differ or a value is not finite
    """
    if not records:
        return np.zeros((0, 0))
    dims = {len(r.vector) for r in records}
    if len(dims) != 1:
        raise EvalError(f"embedding dimensions differ within a set: {sorted(dims)}")
    matrix = np.stack([r.vector for r in records])
    if not np.all(np.isfinite(matrix)):
        raise EvalError("embedding set contains non-finite values")
    return matrix


def save_embeddings(records: Sequence[EmbeddingRecord], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dim = len(records[0].vector) if records else 0
    stack_vectors(records)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(f"bdb-embeddings v1 dim={dim}\n")
        for r in records:
            row = {
                'id': r.sample_id,
                'identity': int(r.identity),
                'camera': int(r.camera_id),
                'v': [float(x) for x in r.vector],
            }
            f.write(json.dumps(row) + "\n")
    return path


def load_embeddings(path: Union[str, Path]) -> List[EmbeddingRecord]:
    """
    Read an embedding file.

    Raises:
        ParseError: On a bad header, malformed JSON, missing fields or a
            vector whose length differs from the header
    """
    path = Path(path)
    with open(path, 'r', encoding='utf-8') as f:
        lines = f.read().splitlines()
    if not lines:
        raise ParseError("empty embedding file", line_number=1)
    match = HEADER_PATTERN.match(lines[0].strip())
    if match is None:
        raise ParseError(f"bad header {lines[0]!r}", line_number=1)
    dim = int(match.group(1))

    records = []
    for number, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            record = EmbeddingRecord(
                sample_id=str(row['id']),
                identity=int(row['identity']),
                camera_id=int(row['camera']),
                vector=row['v'],
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise ParseError(f"malformed embedding line: {e}", line_number=number) from e
        if len(record.vector) != dim:
            raise ParseError(f"vector has {len(record.vector)} values, header says {dim}", line_number=number)
        records.append(record)
    return records
