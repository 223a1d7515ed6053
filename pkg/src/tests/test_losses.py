"""
Loss tests: brute-force oracles, hand cases and invariances.
"""

import numpy as np
import pytest

from src.core.autodiff import Tensor, check_gradients
from src.core.errors import BatchCompositionError, ConfigError, DimensionError, LabelError
from src.core.metric import (
    BatchLabels,
    LossConfig,
    MetricLoss,
    batch_hard_soft_margin_triplet,
    branch_losses,
    combine,
    lifted_structure_loss,
    loss_component_names,
    metric_loss,
    pairwise_euclidean,
    softmax_ce,
    weighted_margin_loss,
)


def _pk_batch(rng, p, k, dim, scale=1.0):
    feats = rng.normal(scale=scale, size=(p * k, dim))
    labels = np.repeat(np.arange(p), k)
    return feats, labels


def _dist(a, b):
    return np.sqrt(np.sum((a - b) ** 2))


def _softplus(x):
    return np.log1p(np.exp(-abs(x))) + max(x, 0.0)


def triplet_oracle(feats, labels):
    total = 0.0
    n = len(labels)
    for a in range(n):
        hard_pos = max(_dist(feats[a], feats[p]) for p in range(n) if p != a and labels[p] == labels[a])
        hard_neg = min(_dist(feats[a], feats[q]) for q in range(n) if labels[q] != labels[a])
        total += _softplus(hard_pos - hard_neg)
    return total


def lifted_oracle(feats, labels, margin):
    n = len(labels)
    terms = []
    for i in range(n):
        for j in range(i + 1, n):
            if labels[i] != labels[j]:
                continue
            s = sum(np.exp(margin - _dist(feats[i], feats[k])) for k in range(n) if labels[k] != labels[i])
            s += sum(np.exp(margin - _dist(feats[j], feats[l])) for l in range(n) if labels[l] != labels[j])
            terms.append(max(np.log(s) + _dist(feats[i], feats[j]), 0.0) ** 2)
    return sum(terms) / (2 * len(terms))


class TestPairwiseEuclidean:

    def test_known_matrix(self):
        np.testing.assert_allclose(pairwise_euclidean(Tensor([[0.0], [3.0]])).data, [[0, 3], [3, 0]])

    def test_identical_rows_give_zero_matrix(self):
        assert np.all(pairwise_euclidean(Tensor(np.ones((4, 3)))).data == 0.0)

    def test_matches_double_loop(self):
        x = np.random.default_rng(0).uniform(size=(5, 4))
        expected = np.array([[_dist(x[i], x[j]) for j in range(5)] for i in range(5)])
        np.testing.assert_allclose(pairwise_euclidean(Tensor(x)).data, expected, rtol=0, atol=1e-12)

    @pytest.mark.parametrize('shift', [0.0, 10.0, 1000.0])
    def test_translated_batch_keeps_precision(self, shift):
        x = np.random.default_rng(1).uniform(size=(6, 4))
        moved = x + shift
        expected = np.array([[_dist(x[i], x[j]) for j in range(6)] for i in range(6)])
        got = pairwise_euclidean(Tensor(moved)).data
        np.testing.assert_allclose(got, expected, rtol=1e-9, atol=0)
        on_moved = np.array([[_dist(moved[i], moved[j]) for j in range(6)] for i in range(6)])
        np.testing.assert_allclose(got, on_moved, rtol=1e-12, atol=0)
        assert np.all(np.diag(got) == 0.0)

    def test_gradient_is_finite_for_coincident_rows(self):
        x = Tensor(np.array([[1.0, 2.0], [1.0, 2.0], [0.0, 0.0]]), requires_grad=True)
        from src.core.autodiff import reduce_sum
        reduce_sum(pairwise_euclidean(x)).backward()
        assert np.all(np.isfinite(x.grad))


class TestBatchHardTriplet:

    def test_identical_embeddings_give_n_ln2(self):
        labels = np.repeat(np.arange(2), 4)
        loss = batch_hard_soft_margin_triplet(Tensor(np.ones((8, 3))), labels)
        assert loss.item() == pytest.approx(8 * np.log(2), abs=1e-12)

    def test_one_dimensional_hand_case(self):
        feats = Tensor([[0.0], [1.0], [10.0], [11.0]])
        loss = batch_hard_soft_margin_triplet(feats, [0, 0, 1, 1]).item()
        expected = 2 * _softplus(-9.0) + 2 * _softplus(-8.0)
        assert loss == pytest.approx(expected, rel=1e-12)
        assert loss == pytest.approx(9.175e-4, rel=1e-3)

    @pytest.mark.parametrize('seed', range(50))
    def test_matches_triple_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        p, k = rng.integers(2, 5), rng.integers(2, 5)
        feats, labels = _pk_batch(rng, p, k, dim=int(rng.integers(2, 6)))
        loss = batch_hard_soft_margin_triplet(Tensor(feats), labels).item()
        assert loss == pytest.approx(triplet_oracle(feats, labels), abs=1e-10)

    def test_gradient_matches_finite_differences(self):
        feats, labels = _pk_batch(np.random.default_rng(4), 2, 4, 4)
        x = Tensor(feats, requires_grad=True, name='feats')
        errors = check_gradients(lambda: batch_hard_soft_margin_triplet(x, labels), [x])
        assert errors['feats'] < 1e-4

    def test_translation_and_permutation_invariance(self):
        rng = np.random.default_rng(8)
        feats, labels = _pk_batch(rng, 3, 3, 5)
        base = batch_hard_soft_margin_triplet(Tensor(feats), labels).item()
        shifted = batch_hard_soft_margin_triplet(Tensor(feats + rng.normal(size=5)), labels).item()
        order = rng.permutation(9)
        permuted = batch_hard_soft_margin_triplet(Tensor(feats[order]), labels[order]).item()
        assert shifted == pytest.approx(base, rel=1e-9)
        assert permuted == pytest.approx(base, rel=1e-12)

    @pytest.mark.parametrize('shift', [10.0, 1000.0])
    def test_far_translation_keeps_the_loss(self, shift):
        feats, labels = _pk_batch(np.random.default_rng(9), 3, 4, 6)
        base = batch_hard_soft_margin_triplet(Tensor(feats), labels).item()
        moved = batch_hard_soft_margin_triplet(Tensor(feats + shift), labels).item()
        assert moved == pytest.approx(base, rel=1e-9)
        assert moved == pytest.approx(triplet_oracle(feats, labels), rel=1e-9)

    @pytest.mark.parametrize('labels', [[0, 0, 0, 0], [0, 0, 1, 2], [0, 1]])
    def test_rejects_bad_batches(self, labels):
        with pytest.raises(BatchCompositionError):
            batch_hard_soft_margin_triplet(Tensor(np.zeros((len(labels), 2))), labels)

    def test_rejects_mismatched_sizes(self):
        with pytest.raises(DimensionError):
            batch_hard_soft_margin_triplet(Tensor(np.zeros((3, 2))), [0, 0, 1, 1])


class TestSoftmaxCE:

    def test_uniform_logits_give_ln_c(self):
        assert softmax_ce(Tensor(np.zeros((3, 5))), [0, 4, 2]).item() == pytest.approx(np.log(5))

    def test_matches_direct_summation(self):
        rng = np.random.default_rng(2)
        logits = rng.normal(size=(6, 4))
        labels = rng.integers(0, 4, size=6)
        expected = np.mean([
            np.log(np.sum(np.exp(logits[i]))) - logits[i, labels[i]] for i in range(6)
        ])
        assert softmax_ce(Tensor(logits), labels).item() == pytest.approx(expected, abs=1e-12)

    def test_confident_correct_logit_drives_loss_down(self):
        values = [softmax_ce(Tensor([[z, 0.0, 0.0]]), [0]).item() for z in (0.0, 5.0, 50.0, 500.0)]
        assert values == sorted(values, reverse=True)
        assert values[-1] < 1e-12

    def test_gradient(self):
        logits = Tensor(np.random.default_rng(0).normal(size=(5, 3)), requires_grad=True)
        assert check_gradients(lambda: softmax_ce(logits, [0, 1, 2, 1, 0]), [logits])['0'] < 1e-6

    @pytest.mark.parametrize('labels', [[0, 3], [-1, 0], [0.5, 1]])
    def test_rejects_out_of_range_labels(self, labels):
        with pytest.raises(LabelError):
            softmax_ce(Tensor(np.zeros((2, 3))), labels)


class TestLiftedStructure:

    def test_degenerate_case_depends_on_margin_only(self):
        margin = 0.7
        loss = lifted_structure_loss(Tensor(np.zeros((4, 2))), [0, 0, 1, 1], margin).item()
        # every pair: J = m + log(2 * 2 negatives)
        assert loss == pytest.approx((margin + np.log(4)) ** 2 / 2, rel=1e-12)

    def test_far_negatives_give_zero(self):
        feats = Tensor([[0.0], [0.1], [100.0], [100.1]])
        assert lifted_structure_loss(feats, [0, 0, 1, 1], 1.0).item() == 0.0

    @pytest.mark.parametrize('seed', range(10))
    def test_matches_pairwise_oracle(self, seed):
        rng = np.random.default_rng(100 + seed)
        feats, labels = _pk_batch(rng, 4, 2, 3, scale=0.5)
        loss = lifted_structure_loss(Tensor(feats), labels, 1.0).item()
        assert loss == pytest.approx(lifted_oracle(feats, labels, 1.0), abs=1e-10)

    def test_gradient(self):
        feats, labels = _pk_batch(np.random.default_rng(1), 2, 3, 3, scale=0.5)
        x = Tensor(feats, requires_grad=True)
        assert check_gradients(lambda: lifted_structure_loss(x, labels), [x])['0'] < 1e-4


class TestWeightedMargin:

    # Two identities on the axes of a square: every anchor sees both of its
    # negatives at the same distance, so the sampled index does not matter.
    SQUARE = 0.8 * np.array([[0.0, 1.0], [0.0, -1.0], [1.0, 0.0], [-1.0, 0.0]])

    def test_hand_configuration(self):
        loss = weighted_margin_loss(Tensor(self.SQUARE), [0, 0, 1, 1], np.random.default_rng(0))
        # positive hinge 0.2 + 1.6 - 1.2, negative hinge 0.2 - 0.8 * sqrt(2) + 1.2
        expected = 0.6 + (1.4 - 0.8 * np.sqrt(2))
        assert loss.item() == pytest.approx(expected, rel=1e-12)

    def test_pairs_on_the_boundary_give_zero(self):
        # d_pos = beta - alpha, d_neg >= beta + alpha
        feats = Tensor([[0.0], [1.0], [3.0], [4.0]])
        loss = weighted_margin_loss(feats, [0, 0, 1, 1], np.random.default_rng(0), alpha=0.2, beta=1.2)
        assert loss.item() == 0.0

    def test_sampling_is_reproducible(self):
        feats, labels = _pk_batch(np.random.default_rng(3), 3, 4, 6)
        a = weighted_margin_loss(Tensor(feats), labels, np.random.default_rng(11)).item()
        b = weighted_margin_loss(Tensor(feats), labels, np.random.default_rng(11)).item()
        assert a == b

    def test_gradient_including_learned_beta(self):
        feats, labels = _pk_batch(np.random.default_rng(6), 2, 3, 4, scale=0.4)
        x = Tensor(feats, requires_grad=True, name='feats')
        beta = Tensor(1.2, requires_grad=True, name='beta')
        errors = check_gradients(
            lambda: weighted_margin_loss(x, labels, np.random.default_rng(0), beta=beta), [x, beta]
        )
        assert errors['feats'] < 1e-4
        assert errors['beta'] < 1e-4

    def test_dispatch_needs_rng(self):
        with pytest.raises(ValueError):
            metric_loss(Tensor(self.SQUARE), [0, 0, 1, 1], LossConfig(metric=MetricLoss.MARGIN))


def test_all_losses_are_nonnegative():
    rng = np.random.default_rng(21)
    for _ in range(10):
        feats, labels = _pk_batch(rng, 3, 2, 4)
        x = Tensor(feats)
        assert batch_hard_soft_margin_triplet(x, labels).item() >= 0.0
        assert lifted_structure_loss(x, labels).item() >= 0.0
        assert weighted_margin_loss(x, labels, rng).item() >= 0.0
        assert softmax_ce(x, labels).item() >= 0.0


class TestCombine:

    def test_sum_of_components(self):
        value = combine({'a': Tensor(1.0), 'b': Tensor(2.0)})
        assert value.total.item() == 3.0
        assert value.as_floats() == {'a': 1.0, 'b': 2.0, 'total': 3.0}

    def test_single_component_is_identity(self):
        t = Tensor(4.5)
        assert combine({'only': t}).total is t

    def test_gradient_is_sum_of_component_gradients(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        from src.core.autodiff import mul, reduce_sum
        combine({'a': reduce_sum(mul(x, 2.0)), 'b': reduce_sum(mul(x, x))}).total.backward()
        np.testing.assert_allclose(x.grad, 2.0 + 2.0 * x.data)

    def test_empty(self):
        with pytest.raises(ValueError):
            combine({})


def test_branch_losses_component_names():
    rng = np.random.default_rng(0)
    labels = np.repeat(np.arange(2), 2)
    inputs = {
        'feat_global': Tensor(rng.normal(size=(4, 3))),
        'logits_global': Tensor(rng.normal(size=(4, 2))),
        'feat_drop': Tensor(rng.normal(size=(4, 5))),
        'logits_drop': Tensor(rng.normal(size=(4, 2))),
    }
    config = LossConfig()
    value = branch_losses(inputs, labels, config)
    assert list(value.components) == ['triplet_global', 'softmax_global', 'triplet_drop', 'softmax_drop']
    assert list(value.components) == loss_component_names(True, True, config)
    assert value.total.item() == pytest.approx(sum(t.item() for t in value.components.values()))

    baseline = LossConfig(use_triplet=False)
    only_global = {k: v for k, v in inputs.items() if k.endswith('global')}
    assert list(branch_losses(only_global, labels, baseline).components) == ['softmax_global']


def test_loss_config_validation():
    with pytest.raises(ConfigError):
        LossConfig(use_triplet=False, use_softmax=False).validate()
    with pytest.raises(ConfigError):
        LossConfig(metric='histogram')


def test_batch_labels_pk_layout():
    labels = BatchLabels([0, 0, 1, 1, 2, 2])
    assert labels.is_pk(3, 2)
    assert not labels.is_pk(2, 3)
    positive, negative = labels.masks()
    assert not positive.diagonal().any()
    assert positive.sum() == 6 and negative.sum() == 24
