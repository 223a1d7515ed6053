"""
Tests for presets, INI config files and overrides.
"""

import json

import pytest

from src.core.config import (
    RunConfig,
    apply_file,
    load_config,
    preset_config,
    set_value,
    sync_grid,
)
from src.core.errors import ConfigError, SpecError
from src.core.metric import MetricLoss
from src.core.network import DropKind, Pooling


class TestPresets:

    def test_desk(self):
        cfg = preset_config('desk').validate()
        assert (cfg.branches.global_reduce_dim, cfg.branches.drop_reduce_dim) == (64, 128)
        assert cfg.schedule.total_epochs == 60
        assert cfg.drop.kind == DropKind.BATCH_DROP_BLOCK
        assert (cfg.drop.r_h, cfg.drop.r_w) == (0.3, 1.0)

    def test_paper(self):
        cfg = preset_config('paper').validate()
        assert cfg.branches.descriptor_dim == 1536
        assert (cfg.sampler.P, cfg.sampler.K) == (32, 4)
        assert cfg.sampler.batch_size == 128
        assert cfg.schedule.total_epochs == 400 and cfg.schedule.warmup_epochs == 50

    def test_retrieval(self):
        cfg = preset_config('retrieval').validate()
        assert (cfg.drop.r_h, cfg.drop.r_w) == (0.5, 0.5)
        assert cfg.eval.protocol == 'retrieval'

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            preset_config('imagenet')

    def test_presets_are_independent(self):
        a = preset_config('desk')
        a.data.num_train_ids = 5
        assert preset_config('desk').data.num_train_ids == 32


class TestOverrides:

    def setup_method(self, method):
        self.cfg = preset_config('desk')

    def test_coercion_by_field_type(self):
        set_value(self.cfg, 'masks.kind', 'drop_block')
        set_value(self.cfg, 'masks.r_h', '0.4')
        set_value(self.cfg, 'branches.use_global_branch', 'no')
        set_value(self.cfg, 'branches.drop_pooling', 'gap')
        set_value(self.cfg, 'losses.metric', 'lifted')
        set_value(self.cfg, 'sampler.P', '4')
        set_value(self.cfg, 'eval.ks', '1,5,10')
        set_value(self.cfg, 'train.decay_points', '20:1e-4, 40:1e-5')
        set_value(self.cfg, 'augment.erasing_area', '0.1,0.3')
        set_value(self.cfg, 'run.seed', '9')
        assert self.cfg.drop.kind == DropKind.DROP_BLOCK
        assert self.cfg.drop.r_h == 0.4
        assert self.cfg.branches.use_global_branch is False
        assert self.cfg.branches.drop_pooling == Pooling.GAP
        assert self.cfg.losses.metric == MetricLoss.LIFTED
        assert self.cfg.sampler.P == 4
        assert self.cfg.eval.ks == [1, 5, 10]
        assert self.cfg.schedule.decay_points == [(20, 1e-4), (40, 1e-5)]
        assert self.cfg.augment.erasing_area == (0.1, 0.3)
        assert self.cfg.seed == 9

    def test_empty_decay_points(self):
        set_value(self.cfg, 'train.decay_points', '')
        assert self.cfg.schedule.decay_points == []

    @pytest.mark.parametrize('dotted', ['masks.depth', 'optimizer.lr', 'seed', 'run.preset', 'branches.drop_spec'])
    def test_unknown_keys(self, dotted):
        with pytest.raises(ConfigError):
            set_value(self.cfg, dotted, '1')

    @pytest.mark.parametrize('dotted,text', [
        ('sampler.P', 'four'),
        ('branches.use_drop_branch', 'maybe'),
        ('masks.kind', 'cutmix'),
        ('train.decay_points', '20-1e-4'),
    ])
    def test_unparsable_values(self, dotted, text):
        with pytest.raises(ConfigError) as info:
            set_value(self.cfg, dotted, text)
        assert info.value.key == dotted


class TestConfigFile:

    def test_file_then_overrides(self, tmp_path):
        path = tmp_path / 'run.ini'
        path.write_text(
            "[masks]\nr_h = 0.5\nkind = batch_drop_block\n\n"
            "[sampler]\nP = 4\nK = 2\n\n"
            "[run]\nseed = 3\n"
        )
        cfg = load_config('desk', path, {'masks.r_h': '0.2', 'sampler.K': None})
        assert cfg.drop.r_h == 0.2
        assert (cfg.sampler.P, cfg.sampler.K) == (4, 2)
        assert cfg.seed == 3

    def test_unknown_section(self, tmp_path):
        path = tmp_path / 'bad.ini'
        path.write_text("[optimizer]\nlr = 0.1\n")
        with pytest.raises(ConfigError) as info:
            apply_file(preset_config(), path)
        assert info.value.key == 'optimizer'

    def test_malformed_file(self, tmp_path):
        path = tmp_path / 'broken.ini'
        path.write_text("r_h = 0.3\n")
        with pytest.raises(ConfigError):
            apply_file(preset_config(), path)


class TestValidation:

    def test_out_of_range_ratio(self):
        with pytest.raises(SpecError):
            load_config('desk', overrides={'masks.r_h': '1.5'})

    def test_grid_mismatch(self):
        cfg = preset_config()
        cfg.backbone.grid_h = 6
        with pytest.raises(ConfigError) as info:
            cfg.validate()
        assert info.value.key == 'backbone.grid_h'

    def test_p_exceeds_identities(self):
        with pytest.raises(ConfigError) as info:
            load_config('desk', overrides={'sampler.P': '40'})
        assert info.value.key == 'sampler.P'

    def test_no_branch_enabled(self):
        with pytest.raises(ConfigError):
            load_config('desk', overrides={
                'branches.use_global_branch': 'false', 'branches.use_drop_branch': 'false'
            })

    def test_sync_grid_keeps_sections_consistent(self):
        cfg = sync_grid(preset_config(), 6, 3, 5).validate()
        assert (cfg.data.grid.grid_h, cfg.data.grid.grid_w, cfg.data.grid.patch_dim) == (6, 3, 5)
        assert cfg.backbone.num_patches == 18


def test_to_dict_is_plain_json():
    cfg = preset_config('paper')
    echo = cfg.to_dict()
    assert json.loads(json.dumps(echo)) == echo
    assert echo['branches']['drop_spec']['kind'] == 'batch_drop_block'
    assert echo['preset'] == 'paper'


def test_copy_is_deep():
    cfg = RunConfig()
    other = cfg.copy()
    other.branches.drop_spec.r_h = 0.9
    assert cfg.drop.r_h == 0.3
