"""
Run configuration: presets, INI config files and command-line overrides.

Precedence is preset < config file < overrides. Every key maps to one field
of a module dataclass; unknown sections or keys raise ConfigError.
"""

import configparser
import copy
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Union

from .data import AugmentConfig, BatchPlan, SyntheticConfig
from .errors import BDBError, ConfigError
from .metric import EvalConfig, LossConfig
from .network import BackboneConfig, BranchConfig, DropSpec
from .training import Schedule

PRESETS = ('desk', 'paper', 'retrieval')

# config-file section -> RunConfig attribute path
SECTIONS = {
    'masks': ('branches', 'drop_spec'),
    'backbone': ('backbone',),
    'branches': ('branches',),
    'losses': ('losses',),
    'data': ('data',),
    'augment': ('augment',),
    'sampler': ('sampler',),
    'train': ('schedule',),
    'eval': ('eval',),
}
RUN_KEYS = ('seed', 'output_dir')


@dataclass
class RunConfig:
    """Every knob of a run."""
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    branches: BranchConfig = field(default_factory=BranchConfig)
    losses: LossConfig = field(default_factory=LossConfig)
    data: SyntheticConfig = field(default_factory=SyntheticConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    sampler: BatchPlan = field(default_factory=BatchPlan)
    schedule: Schedule = field(default_factory=Schedule.desk)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    output_dir: str = "runs"
    preset: str = "desk"

    @property
    def drop(self) -> DropSpec:
        return self.branches.drop_spec

    def validate(self) -> 'RunConfig':
        """
        Validate every section and the cross-section constraints.

        Raises:
            ConfigError: Naming the offending key
            SpecError: If the drop spec is out of range
        """
        self.backbone.validate()
        self.branches.validate()
        self.losses.validate()
        self.data.validate()
        self.augment.validate()
        self.sampler.validate()
        self.schedule.validate()
        self.eval.validate()
        for ours, theirs in (('grid_h', 'grid_h'), ('grid_w', 'grid_w'), ('in_patch_dim', 'patch_dim')):
            if getattr(self.backbone, ours) != getattr(self.data, theirs):
                raise ConfigError(
                    f"backbone.{ours}={getattr(self.backbone, ours)} differs from "
                    f"data.{theirs}={getattr(self.data, theirs)}",
                    key=f"backbone.{ours}"
                )
        if self.data.num_train_ids < self.sampler.P:
            raise ConfigError(
                f"P={self.sampler.P} exceeds the {self.data.num_train_ids} train identities",
                key="sampler.P"
            )
        return self

    def to_dict(self) -> Dict[str, Any]:
        """Plain-JSON echo of the configuration."""
        return _plain(asdict(self))

    def copy(self) -> 'RunConfig':
        return copy.deepcopy(self)


def _plain(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


# ------------------------------------------------------------------
# Presets
# ------------------------------------------------------------------

def preset_config(name: str = 'desk') -> RunConfig:
    """
    Build one of the named recipes.

    desk: 60-epoch synthetic recipe with small branch widths.
    paper: 400-epoch schedule, 512/1024 branch widths, P=32, K=4.
    retrieval: desk recipe with a 0.5 x 0.5 dropped block, scored by Recall@K.

    Raises:
        ConfigError: For an unknown preset name
    """
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}, choose from {', '.join(PRESETS)}", key="run.preset")
    cfg = RunConfig(
        branches=BranchConfig(global_reduce_dim=64, drop_reduce_dim=128),
        schedule=Schedule.desk(),
        preset=name,
    )
    if name == 'paper':
        cfg.branches = BranchConfig(global_reduce_dim=512, drop_reduce_dim=1024)
        cfg.sampler = BatchPlan(P=32, K=4)
        cfg.data.num_train_ids = max(cfg.data.num_train_ids, 64)
        cfg.schedule = Schedule.paper()
    elif name == 'retrieval':
        cfg.branches.drop_spec = DropSpec(r_h=0.5, r_w=0.5)
        cfg.eval.protocol = 'retrieval'
    return cfg


# ------------------------------------------------------------------
# Value coercion
# ------------------------------------------------------------------

_TRUE = {'1', 'true', 'yes', 'on'}
_FALSE = {'0', 'false', 'no', 'off'}


def _parse_bool(text: str, key: str) -> bool:
    lowered = text.strip().lower()
    if lowered in _TRUE:
        return True
    if lowered in _FALSE:
        return False
    raise ConfigError(f"expected a boolean, got {text!r}", key=key)


def _parse_decay_points(text: str, key: str):
    points = []
    for item in filter(None, (p.strip() for p in text.split(','))):
        try:
            epoch, lr = item.split(':')
            points.append((int(epoch), float(lr)))
        except ValueError:
            raise ConfigError(f"expected epoch:lr pairs, got {item!r}", key=key) from None
    return points


def coerce(current: Any, text: str, key: str) -> Any:
    """Convert text to the type of the field's current value."""
    text = text.strip()
    try:
        if key.endswith('decay_points'):
            return _parse_decay_points(text, key)
        if isinstance(current, bool):
            return _parse_bool(text, key)
        if isinstance(current, Enum):
            return type(current)(text)
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float):
            return float(text)
        if isinstance(current, tuple):
            return tuple(float(v) for v in text.split(','))
        if isinstance(current, list):
            return [int(v) for v in text.split(',') if v.strip()]
        if current is None:
            return None if text.lower() == 'none' else int(text)
        return text
    except ValueError as e:
        raise ConfigError(f"cannot parse {text!r}: {e}", key=key) from None


def _target(cfg: RunConfig, section: str):
    if section not in SECTIONS:
        raise ConfigError(f"unknown section [{section}]", key=section)
    obj = cfg
    for attr in SECTIONS[section]:
        obj = getattr(obj, attr)
    return obj


def set_value(cfg: RunConfig, dotted: str, text: str) -> None:
    """
    Assign ``section.key`` from its text form.

    Raises:
        ConfigError: For an unknown section or key, or an unparsable value
    """
    if '.' not in dotted:
        raise ConfigError("keys take the form section.key", key=dotted)
    section, key = dotted.split('.', 1)
    if section == 'run':
        if key not in RUN_KEYS:
            raise ConfigError("unknown key", key=dotted)
        setattr(cfg, key, coerce(getattr(cfg, key), text, dotted))
        return
    target = _target(cfg, section)
    names = {f.name for f in fields(target) if not is_dataclass(getattr(target, f.name))}
    if key not in names:
        raise ConfigError(f"unknown key in [{section}]", key=dotted)
    try:
        setattr(target, key, coerce(getattr(target, key), text, dotted))
    except BDBError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e), key=dotted) from None


def apply_file(cfg: RunConfig, path: Union[str, Path]) -> RunConfig:
    """
    Overlay an INI config file.

    Raises:
        ConfigError: For unknown sections or keys and unparsable values
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path, 'r', encoding='utf-8') as f:
            parser.read_file(f)
    except configparser.Error as e:
        raise ConfigError(f"malformed config file: {e}", key=str(path)) from None
    for section in parser.sections():
        for key, value in parser.items(section):
            set_value(cfg, f"{section}.{key}", value)
    return cfg


def apply_overrides(cfg: RunConfig, overrides: Dict[str, Optional[str]]) -> RunConfig:
    """Apply ``section.key -> text`` overrides, skipping None values."""
    for dotted, text in overrides.items():
        if text is not None:
            set_value(cfg, dotted, str(text))
    return cfg


def load_config(
    preset: str = 'desk',
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Dict[str, Optional[str]]] = None
) -> RunConfig:
    """Preset, then file, then overrides; the result is validated."""
    cfg = preset_config(preset)
    if path is not None:
        apply_file(cfg, path)
    if overrides:
        apply_overrides(cfg, overrides)
    return cfg.validate()


def sync_grid(cfg: RunConfig, grid_h: int, grid_w: int, patch_dim: int) -> RunConfig:
    """Point both the backbone and the generator at a dataset's grid."""
    cfg.backbone.grid_h = cfg.data.grid_h = grid_h
    cfg.backbone.grid_w = cfg.data.grid_w = grid_w
    cfg.backbone.in_patch_dim = cfg.data.patch_dim = patch_dim
    return cfg
