"""
Model checkpoints as a deterministic zip container.

Layout:
    config.json          model geometry, seed, optional run-config echo
    rng.json             state of the mask generator
    params/<name>.npy    one entry per parameter
    stats/<name>.npy     batch-norm running mean/var, stacked as 2 x F
    extras/<name>.npy    caller-supplied arrays (input normalization stats, ...)

Entry order, timestamps and JSON key order are fixed, so saving the same
model twice yields byte-identical files.
"""

import io
import json
import logging
import zipfile
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Union
import numpy as np

from ..errors import ConfigError, DimensionError, ParseError
from .backbone import BackboneConfig
from .branches import BranchConfig
from .masks import DropSpec
from .model import BDBNetwork

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


@dataclass
class Checkpoint:
    """A restored model together with what was saved alongside it."""
    model: BDBNetwork
    config_echo: Dict[str, Any] = field(default_factory=dict)
    extras: Dict[str, np.ndarray] = field(default_factory=dict)


def _jsonable(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def model_config_dict(model: BDBNetwork) -> Dict[str, Any]:
    """Everything needed to rebuild the network's structure."""
    return {
        'backbone': _jsonable(asdict(model.backbone_config)),
        'branches': _jsonable(asdict(model.branch_config)),
        'num_classes': model.num_classes,
        'seed': model.seed,
    }


def _array_bytes(array: np.ndarray) -> bytes:
    buffer = io.BytesIO()
    np.lib.format.write_array(buffer, np.ascontiguousarray(array), allow_pickle=False)
    return buffer.getvalue()


def _write_entry(archive: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    archive.writestr(info, payload)


def save_checkpoint(
    path: Union[str, Path],
    model: BDBNetwork,
    config_echo: Optional[Dict[str, Any]] = None,
    extras: Optional[Dict[str, np.ndarray]] = None
) -> Path:
    """
    Write a model checkpoint.

    Args:
        path: Destination file
        model: Network to save
        config_echo: Run configuration to embed verbatim
        extras: Additional named arrays restored by load_checkpoint

    Returns:
        The written path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        'format': 'bdb-checkpoint',
        'version': FORMAT_VERSION,
        'model': model_config_dict(model),
        'run': _jsonable(config_echo or {}),
    }
    rng_state = _jsonable(model.mask_rng.bit_generator.state)

    with zipfile.ZipFile(path, 'w') as archive:
        _write_entry(archive, 'config.json', json.dumps(header, sort_keys=True, indent=2).encode('utf-8'))
        _write_entry(archive, 'rng.json', json.dumps(rng_state, sort_keys=True).encode('utf-8'))
        for name, param in model.named_parameters():
            _write_entry(archive, f'params/{name}.npy', _array_bytes(param.data))
        for name, state in model.named_states():
            stats = np.stack([state.running_mean, state.running_var])
            _write_entry(archive, f'stats/{name}.npy', _array_bytes(stats))
        for name in sorted(extras or {}):
            _write_entry(archive, f'extras/{name}.npy', _array_bytes(np.asarray(extras[name])))

    logger.debug(f"Saved checkpoint {path}")
    return path


def _read_array(archive: zipfile.ZipFile, name: str) -> np.ndarray:
    try:
        with archive.open(name) as handle:
            return np.lib.format.read_array(io.BytesIO(handle.read()), allow_pickle=False)
    except KeyError:
        raise ParseError(f"checkpoint has no entry {name}") from None


def _model_from_header(config: Dict[str, Any]) -> BDBNetwork:
    try:
        backbone = BackboneConfig(**config['backbone'])
        branches = dict(config['branches'])
        branches['drop_spec'] = DropSpec(**branches['drop_spec'])
        return BDBNetwork(backbone, BranchConfig(**branches), config['num_classes'], config['seed'])
    except (KeyError, TypeError) as e:
        raise ConfigError(f"checkpoint model config is incomplete: {e}", key='checkpoint.model') from e


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """
    Restore a model saved by save_checkpoint.

    Raises:
        ParseError: If the file is not a checkpoint
        DimensionError: If a stored array does not fit the rebuilt model
    """
    path = Path(path)
    try:
        archive = zipfile.ZipFile(path, 'r')
    except zipfile.BadZipFile as e:
        raise ParseError(f"{path} is not a checkpoint archive") from e

    with archive:
        names = set(archive.namelist())
        if 'config.json' not in names:
            raise ParseError(f"{path} has no config.json")
        header = json.loads(archive.read('config.json').decode('utf-8'))
        if header.get('format') != 'bdb-checkpoint':
            raise ParseError(f"{path}: unknown checkpoint format {header.get('format')!r}")

        model = _model_from_header(header['model'])
        for name, param in model.named_parameters():
            stored = _read_array(archive, f'params/{name}.npy')
            if stored.shape != param.shape:
                raise DimensionError(f"{name}: stored shape {stored.shape} != model shape {param.shape}")
            param.data = stored.astype(np.float64)
        for name, state in model.named_states():
            stats = _read_array(archive, f'stats/{name}.npy')
            if stats.shape != (2,) + state.running_mean.shape:
                raise DimensionError(f"{name}: stored stats shape {stats.shape} does not fit")
            state.running_mean = stats[0].copy()
            state.running_var = stats[1].copy()

        model.mask_rng.bit_generator.state = json.loads(archive.read('rng.json').decode('utf-8'))
        extras = {
            entry[len('extras/'):-len('.npy')]: _read_array(archive, entry)
            for entry in sorted(names) if entry.startswith('extras/')
        }

    logger.debug(f"Loaded checkpoint {path}")
    return Checkpoint(model=model, config_echo=header.get('run', {}), extras=extras)
