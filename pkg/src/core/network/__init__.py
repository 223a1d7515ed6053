from .masks import (
    BroadcastRule,
    DropKind,
    DropMask,
    DropSpec,
    apply_mask,
    batch_drop_block_mask,
    batch_dropout_mask,
    block_size,
    drop_block_mask,
    dropout_mask,
    make_mask,
    spatial_dropout_mask,
)
from .backbone import Backbone, BackboneConfig, backbone_forward
from .branches import BranchConfig, DropBranch, GlobalBranch, Pooling, drop_branch, global_branch
from .model import BDBNetwork, Mode, ModelOutput, forward, spatial_energy_map
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint

__all__ = [
    'BroadcastRule',
    'DropKind',
    'DropMask',
    'DropSpec',
    'apply_mask',
    'batch_drop_block_mask',
    'batch_dropout_mask',
    'block_size',
    'drop_block_mask',
    'dropout_mask',
    'make_mask',
    'spatial_dropout_mask',
    'Backbone',
    'BackboneConfig',
    'backbone_forward',
    'BranchConfig',
    'DropBranch',
    'GlobalBranch',
    'Pooling',
    'drop_branch',
    'global_branch',
    'BDBNetwork',
    'Mode',
    'ModelOutput',
    'forward',
    'spatial_energy_map',
    'Checkpoint',
    'load_checkpoint',
    'save_checkpoint',
]
