import numpy as np
import pytest

from oracles import quadratic_mmd_unbiased
from sca import numcore
from sca.data import LabeledDataset
from sca.errors import ConfigError, ContractError, SamplingUnavailable
from sca.losses import jmmd
from sca.pseudo import PseudoLabeledSet
from sca.sampling import BatchSpec, pair_halves_for_jmmd, sample_pk_batch, sample_source_pk_batch, sample_uniform


def source_with(classes, per_class=6):
    y = np.repeat(np.arange(classes), per_class)
    return LabeledDataset(np.arange(y.size, dtype=float)[:, None], y, classes)


def pseudo_with(labels, n_target=50, num_classes=4):
    labels = np.asarray(labels, dtype=np.int64)
    return PseudoLabeledSet(np.arange(labels.size), labels, np.ones(labels.size), 0.9, n_target, num_classes)


class TestPkBatch:
    def test_counts(self):
        batch = sample_pk_batch(source_with(3), pseudo_with([0, 0, 1, 1, 2]), BatchSpec(2, 2),
                                np.random.default_rng(0))
        assert batch.source_idx.size == 4 and batch.target_idx.size == 4
        assert batch.labels.size == 8
        assert np.array_equal(batch.source_labels, batch.target_labels)

    def test_labels_match_pools(self):
        src = source_with(4)
        pseudo = pseudo_with([0, 1, 2, 3, 0, 1, 2, 3, 3])
        batch = sample_pk_batch(src, pseudo, BatchSpec(3, 4), np.random.default_rng(1))
        assert np.array_equal(src.labels[batch.source_idx], batch.source_labels)
        assert np.array_equal(pseudo.assigned_labels[batch.target_idx], batch.target_labels)

    def test_single_member_pool_repeats(self):
        pseudo = pseudo_with([0, 1, 1, 1])
        batch = sample_pk_batch(source_with(2), pseudo, BatchSpec(2, 2), np.random.default_rng(0))
        assert batch.target_idx[batch.target_labels == 0].tolist() == [0, 0]

    def test_class_frequency(self):
        rng = np.random.default_rng(7)
        src, pseudo = source_with(4), pseudo_with([0, 1, 2, 3] * 3)
        counts = np.zeros(4)
        for _ in range(1000):
            counts[sample_pk_batch(src, pseudo, BatchSpec(2, 2), rng).classes] += 1
        # each class appears with probability 1/2; 4 binomial standard deviations
        assert np.all(np.abs(counts - 500) < 4 * np.sqrt(1000 * 0.25))

    def test_too_few_classes(self):
        with pytest.raises(SamplingUnavailable):
            sample_pk_batch(source_with(3), pseudo_with([0, 0]), BatchSpec(2, 2), np.random.default_rng(0))

    def test_source_fallback(self):
        batch = sample_source_pk_batch(source_with(3), BatchSpec(3, 2), np.random.default_rng(0))
        assert batch.source_only and batch.labels.size == 6

    def test_batch_shape_validation(self):
        with pytest.raises(ConfigError):
            BatchSpec(1, 4)
        with pytest.raises(ConfigError):
            BatchSpec(2, 1)


class TestPairing:
    def test_pairs_per_domain(self):
        pairing = pair_halves_for_jmmd(4, 4, np.random.default_rng(0))
        assert pairing.n_pairs == 2
        assert sorted(pairing.order_s.tolist()) == [0, 1, 2, 3]

    def test_deterministic(self):
        a = pair_halves_for_jmmd(10, 10, numcore.make_rng(3, numcore.STREAM_PAIRING))
        b = pair_halves_for_jmmd(10, 10, numcore.make_rng(3, numcore.STREAM_PAIRING))
        assert np.array_equal(a.order_s, b.order_s) and np.array_equal(a.order_t, b.order_t)

    def test_odd_size_drops_one(self):
        pairing = pair_halves_for_jmmd(5, 5, np.random.default_rng(0))
        assert pairing.order_s.size == 4 and pairing.order_t.size == 4

    def test_mismatched_halves(self):
        with pytest.raises(ContractError):
            pair_halves_for_jmmd(4, 6, np.random.default_rng(0))

    def test_average_over_pairings_approaches_quadratic_mmd(self):
        rng = np.random.default_rng(11)
        xs = rng.normal(size=(6, 2))
        xt = rng.normal(size=(6, 2)) + 0.8
        gammas = [0.5, 1.0]
        pr = np.random.default_rng(0)
        vals = []
        for _ in range(200):
            p = pair_halves_for_jmmd(6, 6, pr)
            vals.append(jmmd([xs[p.order_s]], [xt[p.order_t]], gammas=[np.array(gammas)])[0])
        vals = np.array(vals)
        ref = quadratic_mmd_unbiased(xs, xt, gammas)
        assert abs(vals.mean() - ref) < 4 * vals.std(ddof=1) / np.sqrt(vals.size)


class TestUniform:
    def test_without_replacement_when_possible(self):
        idx = sample_uniform(10, 10, np.random.default_rng(0))
        assert sorted(idx.tolist()) == list(range(10))

    def test_with_replacement_when_needed(self):
        assert sample_uniform(3, 8, np.random.default_rng(0)).size == 8

    def test_empty(self):
        with pytest.raises(ContractError):
            sample_uniform(0, 2, np.random.default_rng(0))
