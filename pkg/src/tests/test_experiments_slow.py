"""
Training experiments on the default synthetic split.

These check the direction of the ablation findings, not absolute numbers.
They train dozens of desk-recipe models; run with BDB_RUN_SLOW=1.
"""

import numpy as np
import pytest

from src.core.config import preset_config
from src.core.data import gen_synthetic, random_guess_rank1
from src.core.experiment import ExperimentManager
from src.core.network import Mode, spatial_energy_map
from src.core.training import train_loop

SEEDS = 5

pytestmark = pytest.mark.slow


@pytest.fixture(scope='module')
def manager(tmp_path_factory):
    return ExperimentManager(tmp_path_factory.mktemp('experiments'))


def _rank1_by_config(manager, sweep):
    result = manager.ablate(preset_config('desk').validate(), sweep, seeds=SEEDS, write_reports=False)
    return {row['config']: row['rank1_mean'] for row in result.rows}


def test_dropping_branch_beats_global_baseline(manager):
    rank1 = _rank1_by_config(manager, 'components')
    chance = random_guess_rank1(gen_synthetic(preset_config('desk').data))
    assert rank1['bdb'] - rank1['baseline+triplet'] >= 0.05
    assert rank1['bdb'] > chance
    assert rank1['baseline+triplet'] > chance


def test_batch_drop_block_leads_its_variants(manager):
    rank1 = _rank1_by_config(manager, 'variants')
    assert rank1['batch_drop_block'] >= rank1['batch_dropout']
    assert rank1['batch_drop_block'] >= rank1['drop_block']


def test_max_pooling_on_dropping_branch(manager):
    rank1 = _rank1_by_config(manager, 'pooling')
    assert rank1['drop_gmp'] >= rank1['drop_gap']


def test_dropping_branch_spreads_spatial_energy():
    cfg = preset_config('desk').validate()
    split = gen_synthetic(cfg.data)
    images = np.stack([r.patches for r in split.query + split.gallery])

    bdb = train_loop(cfg, split)
    out = bdb.model.forward(bdb.stats.apply(images), Mode.EVAL)
    _, bdb_entropy = spatial_energy_map(out.drop_map)

    baseline_cfg = cfg.copy()
    baseline_cfg.branches.use_drop_branch = False
    baseline = train_loop(baseline_cfg, split)
    out = baseline.model.forward(baseline.stats.apply(images), Mode.EVAL)
    _, baseline_entropy = spatial_energy_map(out.feature_map)

    assert bdb_entropy.mean() > baseline_entropy.mean()
