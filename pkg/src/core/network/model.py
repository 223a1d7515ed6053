"""
Two-branch Batch DropBlock network.

Backbone -> (global branch: GAP) and (feature dropping branch: bottleneck,
Batch DropBlock, GMP). Training returns both features and both logits; eval
returns the concatenated descriptor.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Tuple, Union
import numpy as np

from ..autodiff import BatchNormState, Tensor, concat
from .backbone import Backbone, BackboneConfig
from .branches import BranchConfig, DropBranch, GlobalBranch


class Mode(Enum):
    TRAIN = "train"
    EVAL = "eval"


@dataclass
class ModelOutput:
    """Everything one forward pass produces."""
    feature_map: Tensor
    global_feat: Optional[Tensor] = None
    drop_feat: Optional[Tensor] = None
    global_logits: Optional[Tensor] = None
    drop_logits: Optional[Tensor] = None
    descriptor: Optional[Tensor] = None
    drop_map: Optional[Tensor] = None

    def loss_inputs(self) -> Dict[str, Tensor]:
        """The features and logits that feed the losses, keyed by role."""
        named = {
            'feat_global': self.global_feat,
            'logits_global': self.global_logits,
            'feat_drop': self.drop_feat,
            'logits_drop': self.drop_logits,
        }
        return {k: v for k, v in named.items() if v is not None}


class BDBNetwork:
    """The backbone plus the enabled branches, with a seeded mask generator."""

    def __init__(
        self,
        backbone_config: BackboneConfig,
        branch_config: BranchConfig,
        num_classes: Optional[int],
        seed: int = 0
    ):
        """
        Build and initialize the network.

        Args:
            backbone_config: Feature-map geometry
            branch_config: Branch widths, drop spec and ablation switches
            num_classes: Number of training identities for the classifier
                heads; None or 0 builds the network without classifiers
            seed: Seeds parameter init and, through a separate stream, the masks
        """
        self.backbone_config = backbone_config.validate()
        self.branch_config = branch_config.validate()
        self.num_classes = num_classes or 0
        self.seed = seed

        init_rng, self.mask_rng = _split_seed(seed)

        channels = backbone_config.feat_channels
        self.backbone = Backbone(backbone_config, init_rng)
        # Branch construction order keeps the global branch parameters
        # identical whether or not the dropping branch exists.
        self.global_branch = None
        self.drop_branch = None
        if branch_config.use_global_branch:
            self.global_branch = GlobalBranch(channels, branch_config, num_classes, init_rng)
        if branch_config.use_drop_branch:
            self.drop_branch = DropBranch(channels, branch_config, num_classes, init_rng)

        for name, param in self.named_parameters():
            param.name = name

    # --- parameters ---
    def modules(self) -> List:
        return [m for m in (self.backbone, self.global_branch, self.drop_branch) if m is not None]

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        return [item for module in self.modules() for item in module.named_parameters()]

    def parameters(self) -> List[Tensor]:
        return [param for _, param in self.named_parameters()]

    def named_states(self) -> List[Tuple[str, BatchNormState]]:
        return [item for module in self.modules() for item in module.named_states()]

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.zero_grad()

    @property
    def descriptor_dim(self) -> int:
        return self.branch_config.descriptor_dim

    # --- forward ---
    def forward(
        self,
        images: Union[Tensor, np.ndarray],
        mode: Mode = Mode.TRAIN,
        rng: Optional[np.random.Generator] = None
    ) -> ModelOutput:
        """
        Run the backbone and both branches.

        Args:
            images: B x patches x in_patch_dim input
            mode: TRAIN draws a fresh batch mask and uses batch statistics;
                EVAL is deterministic and mask-free
            rng: Mask generator override; defaults to the model's own stream

        Returns:
            ModelOutput; ``descriptor`` is set in EVAL mode only
        """
        if not isinstance(images, Tensor):
            images = Tensor(images)
        mode = Mode(mode)
        training = mode == Mode.TRAIN
        rng = rng if rng is not None else self.mask_rng

        feature_map = self.backbone(images)
        out = ModelOutput(feature_map=feature_map)
        if self.global_branch is not None:
            out.global_feat, out.global_logits = self.global_branch(feature_map, training)
        if self.drop_branch is not None:
            out.drop_map = self.drop_branch.dropped_map(feature_map, training, rng)
            out.drop_feat, out.drop_logits = self.drop_branch.head(
                self.drop_branch.pool(out.drop_map), training
            )

        if not training:
            parts = [t for t in (out.global_feat, out.drop_feat) if t is not None]
            descriptor = concat(parts, axis=1) if len(parts) > 1 else parts[0]
            if self.branch_config.normalize_descriptor:
                norms = np.linalg.norm(descriptor.data, axis=1, keepdims=True)
                descriptor = Tensor(descriptor.data / np.maximum(norms, 1e-12))
            out.descriptor = descriptor
        return out

    __call__ = forward


def forward(model: BDBNetwork, images, mode: Mode = Mode.TRAIN, rng=None) -> ModelOutput:
    """Functional entry point for BDBNetwork.forward."""
    return model.forward(images, mode, rng)


def _split_seed(seed: int) -> Tuple[np.random.Generator, np.random.Generator]:
    """Independent streams for parameter init and mask draws."""
    init_seq, mask_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_seq), np.random.default_rng(mask_seq)


def spatial_energy_map(feature_map: Union[Tensor, np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-location channel L2 norm, normalized to sum 1 per sample, and its entropy.

    This is a stand-in for class activation maps: a spread-out map has high
    entropy, a map concentrated on one location has entropy 0.

    Args:
        feature_map: B x C x H x W values

    Returns:
        (energy B x H x W, entropy of length B). An all-zero sample maps to
        the uniform distribution.
    """
    data = feature_map.data if isinstance(feature_map, Tensor) else np.asarray(feature_map, dtype=np.float64)
    b, _, h, w = data.shape
    norms = np.sqrt((data ** 2).sum(axis=1))
    totals = norms.reshape(b, -1).sum(axis=1)
    energy = np.empty_like(norms)
    for i in range(b):
        if totals[i] > 0:
            energy[i] = norms[i] / totals[i]
        else:
            energy[i] = 1.0 / (h * w)
    flat = energy.reshape(b, -1)
    logs = np.log(np.where(flat > 0, flat, 1.0))
    entropy = -(flat * logs).sum(axis=1)
    return energy, entropy
