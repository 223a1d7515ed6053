from .records import BatchPlan, DatasetSplit, GridSpec, Record
from .manifest import load_manifest, save_manifest
from .sampler import PKBatch, PKSampler, pk_sampler
from .augment import (
    AugmentConfig,
    NormalizationStats,
    augment,
    cutout,
    fit_normalization,
    flip_patches,
    random_erasing,
)
from .synthetic import SyntheticConfig, gen_synthetic, random_guess_rank1

__all__ = [
    'BatchPlan',
    'DatasetSplit',
    'GridSpec',
    'Record',
    'load_manifest',
    'save_manifest',
    'PKBatch',
    'PKSampler',
    'pk_sampler',
    'AugmentConfig',
    'NormalizationStats',
    'augment',
    'cutout',
    'fit_normalization',
    'flip_patches',
    'random_erasing',
    'SyntheticConfig',
    'gen_synthetic',
    'random_guess_rank1',
]
