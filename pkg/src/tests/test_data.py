"""
Tests for records, the manifest format, the P x K sampler, augmentations and
the synthetic generator.
"""

import json
import unittest

import numpy as np
import pytest

from src.core.data import (
    AugmentConfig,
    BatchPlan,
    DatasetSplit,
    GridSpec,
    PKSampler,
    Record,
    SyntheticConfig,
    augment,
    cutout,
    fit_normalization,
    flip_patches,
    gen_synthetic,
    load_manifest,
    pk_sampler,
    random_erasing,
    random_guess_rank1,
    save_manifest,
)
from src.core.errors import ConfigError, DatasetError, ParseError, SamplerError
from src.core.metric import BatchLabels

HAND_MANIFEST = "\n".join([
    "bdb-manifest v1 grid_h=2 grid_w=1 patch_dim=2",
    '{"id": "t0", "identity": 0, "camera": 0, "split": "train", "patches": [1, 2, 3, 4]}',
    '{"id": "t1", "identity": 0, "camera": 1, "split": "train", "patches": [1.5, 2, 3, 4]}',
    '{"id": "q1", "identity": 1, "camera": 0, "split": "query", "patches": [0, 0, 0, 0]}',
    '{"id": "q2", "identity": 2, "camera": 1, "split": "query", "patches": [0, 0, 1, 1]}',
    '{"id": "g1", "identity": 1, "camera": 1, "split": "gallery", "patches": [0, 0, 0, 0.5]}',
    '{"id": "g2", "identity": 2, "camera": 0, "split": "gallery", "patches": [0, 0, 1, 1.5]}',
]) + "\n"


def _write(tmp_path, text, name='m.jsonl'):
    path = tmp_path / name
    path.write_text(text)
    return path


def _records(counts, grid=GridSpec(2, 1, 2)):
    out = []
    for identity, count in counts.items():
        for k in range(count):
            out.append(Record(f"{identity}-{k}", identity, k % 2, np.zeros(grid.patch_shape)))
    return out


class TestManifest:

    def test_hand_written_manifest(self, tmp_path):
        split = load_manifest(_write(tmp_path, HAND_MANIFEST))
        assert split.grid == GridSpec(2, 1, 2)
        assert split.train[0] == Record("t0", 0, 0, np.array([[1.0, 2.0], [3.0, 4.0]]))
        assert [r.sample_id for r in split.query] == ["q1", "q2"]
        assert [r.camera_id for r in split.gallery] == [1, 0]
        assert split.statistics() == [
            {'split': 'train', 'identities': 1, 'images': 2},
            {'split': 'query', 'identities': 2, 'images': 2},
            {'split': 'gallery', 'identities': 2, 'images': 2},
        ]

    def test_round_trip(self, tmp_path):
        split = load_manifest(_write(tmp_path, HAND_MANIFEST))
        again = load_manifest(save_manifest(split, tmp_path / 'copy.jsonl'))
        for part in ('train', 'query', 'gallery'):
            assert getattr(again, part) == getattr(split, part)

    def test_saving_is_deterministic(self, tmp_path):
        split = gen_synthetic(SyntheticConfig(num_train_ids=4, num_test_ids=3, images_per_id=3, seed=2))
        a = save_manifest(split, tmp_path / 'a.jsonl').read_bytes()
        b = save_manifest(split, tmp_path / 'b.jsonl').read_bytes()
        assert a == b

    def test_empty_train_split(self, tmp_path):
        text = "\n".join(line for line in HAND_MANIFEST.splitlines() if '"train"' not in line)
        with pytest.raises(DatasetError) as info:
            load_manifest(_write(tmp_path, text))
        assert info.value.rule == "train_nonempty"

    @pytest.mark.parametrize('bad_line', [
        '{"id": "x", "identity": 5, "camera": 0, "split": "train"',
        '{"id": "x", "identity": 5, "camera": 0, "split": "train"}',
        '{"id": "x", "identity": 5, "camera": 0, "split": "dev", "patches": [0, 0, 0, 0]}',
        '{"id": "x", "identity": "5", "camera": 0, "split": "train", "patches": [0, 0, 0, 0]}',
        '{"id": "x", "identity": 5, "camera": 0, "split": "train", "patches": [0, 0, 0]}',
    ])
    def test_malformed_line_reports_line_number(self, tmp_path, bad_line):
        lines = HAND_MANIFEST.splitlines()
        lines.insert(3, bad_line)
        with pytest.raises(ParseError) as info:
            load_manifest(_write(tmp_path, "\n".join(lines)))
        assert info.value.line_number == 4

    def test_bad_header(self, tmp_path):
        with pytest.raises(ParseError) as info:
            load_manifest(_write(tmp_path, "manifest grid=2x1\n"))
        assert info.value.line_number == 1

    @pytest.mark.parametrize('line,rule', [
        ('{"id": "t0", "identity": 3, "camera": 0, "split": "train", "patches": [0, 0, 0, 0]}',
         'unique_sample_ids'),
        ('{"id": "t9", "identity": 1, "camera": 0, "split": "train", "patches": [0, 0, 0, 0]}',
         'disjoint_train_test'),
        ('{"id": "q3", "identity": 7, "camera": 0, "split": "query", "patches": [0, 0, 0, 0]}',
         'query_cross_camera_match'),
        ('{"id": "t9", "identity": -1, "camera": 0, "split": "train", "patches": [0, 0, 0, 0]}',
         'nonnegative_labels'),
    ])
    def test_dataset_rules(self, tmp_path, line, rule):
        with pytest.raises(DatasetError) as info:
            load_manifest(_write(tmp_path, HAND_MANIFEST + line + "\n"))
        assert info.value.rule == rule


def test_records_are_immutable():
    record = Record("a", 0, 0, np.zeros((2, 2)))
    with pytest.raises(ValueError):
        record.patches[0, 0] = 1.0
    with pytest.raises(AttributeError):
        record.identity = 4


class TestSampler:

    def test_every_batch_is_p_by_k(self):
        train = _records({0: 5, 1: 4, 2: 4})
        batches = list(pk_sampler(train, BatchPlan(P=2, K=4), np.random.default_rng(0), epochs=5))
        assert len(batches) == 5
        for batch in batches:
            assert BatchLabels(batch.identities).is_pk(2, 4)
            identities = [train[i].identity for i in batch.indices]
            np.testing.assert_array_equal(identities, batch.identities)
            BatchLabels(batch.identities).validate()

    def test_no_duplicates_when_identity_has_enough_images(self):
        train = _records({0: 6, 1: 6})
        for batch in pk_sampler(train, BatchPlan(P=2, K=4), np.random.default_rng(1), epochs=10):
            assert len(set(batch.indices.tolist())) == 8

    def test_small_identity_is_drawn_with_replacement(self):
        train = _records({0: 2, 1: 4})
        batch = next(pk_sampler(train, BatchPlan(P=2, K=4), np.random.default_rng(0)))
        small = [i for i in batch.indices if train[i].identity == 0]
        assert len(small) == 4 and len(set(small)) <= 2

    def test_epoch_covers_every_identity_when_p_divides(self):
        train = _records({i: 4 for i in range(6)})
        sampler = PKSampler(train, BatchPlan(P=3, K=2))
        assert len(sampler) == 2
        seen = set()
        for batch in sampler.epoch(np.random.default_rng(4)):
            seen.update(batch.identities.tolist())
        assert seen == set(range(6))

    def test_deterministic_under_seed(self):
        train = _records({i: 5 for i in range(5)})
        a = [b.indices for b in pk_sampler(train, BatchPlan(2, 3), np.random.default_rng(9), epochs=3)]
        b = [b.indices for b in pk_sampler(train, BatchPlan(2, 3), np.random.default_rng(9), epochs=3)]
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_too_few_identities(self):
        with pytest.raises(SamplerError):
            pk_sampler(_records({0: 4}), BatchPlan(P=2, K=2), np.random.default_rng(0))

    def test_plan_needs_two_by_two(self):
        with pytest.raises(ConfigError):
            BatchPlan(P=1, K=4).validate()
        with pytest.raises(ConfigError):
            BatchPlan(P=4, K=1).validate()


class TestAugment(unittest.TestCase):

    def setUp(self):
        self.grid = GridSpec(6, 4, 3)
        self.rng = np.random.default_rng(0)
        self.patches = self.rng.normal(size=self.grid.patch_shape)

    def test_flip_is_an_involution(self):
        flipped = flip_patches(self.patches, self.grid)
        self.assertFalse(np.array_equal(flipped, self.patches))
        np.testing.assert_array_equal(flip_patches(flipped, self.grid), self.patches)
        # first column of the grid becomes the last
        np.testing.assert_array_equal(flipped.reshape(6, 4, 3)[:, 3], self.patches.reshape(6, 4, 3)[:, 0])

    def test_cutout_zeroes_one_square(self):
        out = cutout(self.patches, self.grid, 0.5, self.rng).reshape(6, 4, 3)
        zero_cells = np.all(out == 0.0, axis=2)
        rows, cols = np.nonzero(zero_cells)
        self.assertEqual(zero_cells.sum(), 4)
        self.assertEqual((rows.max() - rows.min() + 1, cols.max() - cols.min() + 1), (2, 2))
        original = self.patches.reshape(6, 4, 3)
        np.testing.assert_array_equal(out[~zero_cells], original[~zero_cells])

    def test_cutout_side_is_at_least_one(self):
        out = cutout(self.patches, self.grid, 0.01, self.rng).reshape(6, 4, 3)
        self.assertEqual(int(np.all(out == 0.0, axis=2).sum()), 1)

    def test_random_erasing_probability_extremes(self):
        untouched = random_erasing(self.patches, self.grid, self.rng, p=0.0)
        np.testing.assert_array_equal(untouched, self.patches)
        erased = random_erasing(self.patches, self.grid, self.rng, p=1.0).reshape(6, 4, 3)
        changed = np.any(erased != self.patches.reshape(6, 4, 3), axis=2)
        self.assertGreater(changed.sum(), 0)
        self.assertTrue(np.all(np.abs(erased[changed]) <= 1.0))

    def test_normalization_statistics(self):
        records = [Record(f"r{i}", i % 3, 0, self.rng.normal(2.0, 3.0, size=self.grid.patch_shape))
                   for i in range(40)]
        stats = fit_normalization(records)
        normalized = np.concatenate([stats.apply(r.patches) for r in records])
        np.testing.assert_allclose(normalized.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(normalized.std(axis=0), 1.0, atol=1e-12)

    def test_augment_keeps_labels(self):
        record = Record("r", 7, 2, self.patches)
        stats = fit_normalization([record])
        config = AugmentConfig(cutout=True, random_erasing=True)
        out = augment(record, config, self.grid, self.rng, stats)
        self.assertEqual((out.sample_id, out.identity, out.camera_id), ("r", 7, 2))
        self.assertEqual(out.patches.shape, record.patches.shape)

    def test_normalize_needs_statistics(self):
        with self.assertRaises(ConfigError):
            augment(Record("r", 0, 0, self.patches), AugmentConfig(), self.grid, self.rng)

    def test_config_validation(self):
        with self.assertRaises(ConfigError):
            AugmentConfig(cutout_ratio=0.0).validate()
        with self.assertRaises(ConfigError):
            AugmentConfig(erasing_area=(0.5, 0.2)).validate()


class TestSynthetic:

    def test_split_is_valid_and_sized(self):
        cfg = SyntheticConfig(num_train_ids=6, num_test_ids=5, images_per_id=4, seed=1)
        split = gen_synthetic(cfg)
        assert len(split.train) == 24
        assert len(split.query) == 5 and len(split.gallery) == 15
        assert split.identities('train') == set(range(6))
        assert split.identities('query') == set(range(6, 11))
        assert split.train[0].patches.shape == (48, 8)

    def test_same_seed_same_split(self):
        cfg = SyntheticConfig(num_train_ids=4, num_test_ids=4, images_per_id=3, seed=5)
        a, b = gen_synthetic(cfg), gen_synthetic(cfg)
        assert a.train == b.train and a.query == b.query and a.gallery == b.gallery

    def test_clean_images_differ_only_by_camera_bias(self):
        cfg = SyntheticConfig(num_train_ids=3, num_test_ids=2, images_per_id=6,
                              occlusion_rate=0.0, query_occlusion_rate=0.0, noise=0.0, seed=3)
        split = gen_synthetic(cfg)
        same = [r for r in split.train if r.identity == 0]
        diff = same[0].patches - same[1].patches
        # every patch is shifted by the same per-camera vector
        np.testing.assert_allclose(diff, np.broadcast_to(diff[0], diff.shape), atol=1e-12)
        if same[0].camera_id == same[1].camera_id:
            np.testing.assert_allclose(diff, 0.0, atol=1e-12)

    def test_identity_codes_differ(self):
        cfg = SyntheticConfig(num_train_ids=4, num_test_ids=2, images_per_id=2, noise=0.0,
                              occlusion_rate=0.0, camera_bias=0.0, seed=0)
        split = gen_synthetic(cfg)
        firsts = [next(r for r in split.train if r.identity == i).patches for i in range(4)]
        for i in range(4):
            for j in range(i + 1, 4):
                assert not np.allclose(firsts[i], firsts[j])

    def test_lower_part_alone_identifies_people(self):
        """Nearest neighbour on raw lower-part pixels reaches rank-1 above 0.9."""
        cfg = SyntheticConfig(noise=0.05, seed=11)
        split = gen_synthetic(cfg)
        start = cfg.upper * cfg.grid_w
        gallery = np.stack([g.patches[start:].reshape(-1) for g in split.gallery])
        g_ids = np.array([g.identity for g in split.gallery])
        g_cams = np.array([g.camera_id for g in split.gallery])
        hits = 0
        for q in split.query:
            d = np.linalg.norm(gallery - q.patches[start:].reshape(-1), axis=1)
            d[(g_ids == q.identity) & (g_cams == q.camera_id)] = np.inf
            hits += int(g_ids[np.argmin(d)] == q.identity)
        assert hits / len(split.query) > 0.9

    def test_queries_are_biased_toward_occlusion(self):
        cfg = SyntheticConfig(num_test_ids=200, num_train_ids=2, images_per_id=2, noise=0.0,
                              camera_bias=0.0, occlusion_rate=0.0, query_occlusion_rate=1.0, seed=4)
        split = gen_synthetic(cfg)
        by_id = {g.identity: g for g in split.gallery}
        upper = cfg.upper * cfg.grid_w
        for q in split.query[:20]:
            g = by_id[q.identity]
            assert not np.allclose(q.patches[:upper], g.patches[:upper])
            np.testing.assert_allclose(q.patches[upper:], g.patches[upper:])

    def test_one_camera_is_infeasible(self):
        with pytest.raises(ConfigError) as info:
            gen_synthetic(SyntheticConfig(cameras=1))
        assert info.value.key == "data.cameras"

    def test_random_guess_baseline(self):
        split = gen_synthetic(SyntheticConfig(num_train_ids=2, num_test_ids=10, images_per_id=4, seed=0))
        expected = np.mean([3 / 30 for _ in split.query])
        assert random_guess_rank1(split) == pytest.approx(expected)


def test_split_validation_detects_patch_dims():
    grid = GridSpec(2, 1, 2)
    split = DatasetSplit(
        grid=grid,
        train=[Record("t", 0, 0, np.zeros((2, 2)))],
        query=[Record("q", 1, 0, np.zeros((2, 2)))],
        gallery=[Record("g", 1, 1, np.zeros((3, 2)))],
    )
    with pytest.raises(DatasetError) as info:
        split.validate()
    assert info.value.rule == "patch_dims"
