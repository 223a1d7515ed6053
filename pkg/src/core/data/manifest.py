"""
Manifest reader and writer.

A manifest is a header line
    bdb-manifest v1 grid_h=<int> grid_w=<int> patch_dim=<int>
followed by one JSON record per line:
    {"id": str, "identity": int, "camera": int, "split": "train|query|gallery", "patches": [floats]}
``patches`` is the row-major flattening of the (grid_h*grid_w) x patch_dim grid.
"""

import json
import logging
import re
from pathlib import Path
from typing import Union
import numpy as np

from ..errors import ParseError
from .records import DatasetSplit, GridSpec, Record

logger = logging.getLogger(__name__)

HEADER_PATTERN = re.compile(r'^bdb-manifest v1 grid_h=(\d+) grid_w=(\d+) patch_dim=(\d+)$')
SPLITS = ('train', 'query', 'gallery')


def parse_header(line: str) -> GridSpec:
    match = HEADER_PATTERN.match(line.strip())
    if match is None:
        raise ParseError(f"bad manifest header {line.strip()!r}", line_number=1)
    grid = GridSpec(*(int(v) for v in match.groups()))
    if min(grid.grid_h, grid.grid_w, grid.patch_dim) < 1:
        raise ParseError("grid dimensions must be positive", line_number=1)
    return grid


def parse_record(line: str, grid: GridSpec, line_number: int):
    """Parse one record line into (split name, Record)."""
    try:
        row = json.loads(line)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg}", line_number=line_number) from e
    if not isinstance(row, dict):
        raise ParseError("record must be a JSON object", line_number=line_number)
    missing = [k for k in ('id', 'identity', 'camera', 'split', 'patches') if k not in row]
    if missing:
        raise ParseError(f"missing fields {missing}", line_number=line_number)
    if row['split'] not in SPLITS:
        raise ParseError(f"unknown split {row['split']!r}", line_number=line_number)
    for key in ('identity', 'camera'):
        if not isinstance(row[key], int) or isinstance(row[key], bool):
            raise ParseError(f"{key} must be an integer", line_number=line_number)
    try:
        flat = np.array(row['patches'], dtype=np.float64).reshape(-1)
    except (TypeError, ValueError) as e:
        raise ParseError(f"patches must be a list of numbers: {e}", line_number=line_number) from e
    rows, dim = grid.patch_shape
    if flat.size != rows * dim:
        raise ParseError(
            f"patches has {flat.size} values, header needs {rows * dim}", line_number=line_number
        )
    record = Record(str(row['id']), row['identity'], row['camera'], flat.reshape(rows, dim))
    return row['split'], record


def load_manifest(path: Union[str, Path]) -> DatasetSplit:
    """
    Read and validate a manifest.

    Raises:
        ParseError: On a malformed line, with its 1-based line number
        DatasetError: If the parsed split violates a dataset rule
    """
    path = Path(path)
    with open(path, 'r', encoding='utf-8') as f:
        lines = f.read().splitlines()
    if not lines:
        raise ParseError("empty manifest", line_number=1)

    grid = parse_header(lines[0])
    split = DatasetSplit(grid=grid)
    for number, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        part, record = parse_record(line, grid, number)
        getattr(split, part).append(record)

    logger.debug(f"Loaded manifest {path}: {[s['images'] for s in split.statistics()]} images")
    return split.validate()


def save_manifest(split: DatasetSplit, path: Union[str, Path]) -> Path:
    """Write a split in manifest format; floats keep their exact value."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    grid = split.grid
    with open(path, 'w', encoding='utf-8') as f:
        f.write(f"bdb-manifest v1 grid_h={grid.grid_h} grid_w={grid.grid_w} patch_dim={grid.patch_dim}\n")
        for part in SPLITS:
            for r in getattr(split, part):
                row = {
                    'id': r.sample_id,
                    'identity': int(r.identity),
                    'camera': int(r.camera_id),
                    'split': part,
                    'patches': [float(v) for v in r.patches.reshape(-1)],
                }
                f.write(json.dumps(row) + "\n")
    return path
