"""
Shared fixtures: a tiny run configuration and its synthetic split.
"""

import os

import pytest

from src.core.config import preset_config, sync_grid
from src.core.data import gen_synthetic
from src.core.training import Schedule

SLOW_ENV = 'BDB_RUN_SLOW'


def make_tiny_config(epochs=3, seed=0):
    cfg = preset_config('desk')
    sync_grid(cfg, grid_h=4, grid_w=2, patch_dim=3)
    cfg.backbone.feat_channels = 6
    cfg.backbone.mixing_blocks = 1
    cfg.branches.global_reduce_dim = 6
    cfg.branches.drop_reduce_dim = 8
    cfg.branches.drop_spec.r_h = 0.5
    cfg.data.num_train_ids = 4
    cfg.data.num_test_ids = 3
    cfg.data.images_per_id = 4
    cfg.sampler.P, cfg.sampler.K = 2, 2
    cfg.schedule = Schedule(base_lr=5e-3, warmup_epochs=1, decay_points=[], total_epochs=epochs)
    cfg.seed = seed
    cfg.data.seed = seed
    return cfg.validate()


@pytest.fixture
def tiny_config():
    return make_tiny_config()


@pytest.fixture
def tiny_split(tiny_config):
    return gen_synthetic(tiny_config.data)


def pytest_collection_modifyitems(config, items):
    if os.environ.get(SLOW_ENV) == '1':
        return
    skip = pytest.mark.skip(reason=f"set {SLOW_ENV}=1 to run training experiments")
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip)
