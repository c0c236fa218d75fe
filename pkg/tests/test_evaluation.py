import csv

import numpy as np
import pytest

from sca.data import LabeledDataset, TargetDataset
from sca.errors import ContractError
from sca.evaluation import a_distance, accuracy, export_embeddings, predict
from sca.model import MlpParams, init_mlp
from sca.pseudo import PseudoLabeledSet


def linear_model(W):
    """Identity hidden and bottleneck layers followed by classifier ``W``."""
    d = W.shape[0]
    return MlpParams([np.eye(d), np.eye(d), W], [np.zeros(d), np.zeros(d), np.zeros(W.shape[1])])


class TestAccuracy:
    def test_all_correct(self):
        # features are one-hot positive, so the ReLU layer passes them unchanged
        model = linear_model(np.eye(3))
        ds = LabeledDataset(np.eye(3) * 2.0, [0, 1, 2], 3)
        assert accuracy(model, ds) == 1.0

    def test_zero_model_predicts_class_zero(self):
        model = linear_model(np.zeros((2, 2)))
        ds = LabeledDataset(np.random.default_rng(0).normal(size=(10, 2)), [0, 1] * 5, 2)
        assert predict(model, ds.features).tolist() == [0] * 10
        assert accuracy(model, ds) == 0.5

    def test_hand_counted_fixture(self):
        # the model predicts argmax of the (non-negative) input
        model = linear_model(np.eye(3))
        X = np.array([[3, 1, 0], [0, 2, 1], [0, 0, 5], [1, 4, 0], [2, 0, 1],
                      [0, 1, 3], [6, 0, 0], [0, 7, 2], [1, 0, 4], [0, 3, 0]], dtype=float)
        y = np.array([0, 2, 2, 1, 1, 2, 0, 0, 2, 1])
        # predictions 0,1,2,1,0,2,0,1,2,1 -> correct at rows 0,2,3,5,6,8,9
        assert accuracy(model, LabeledDataset(X, y, 3)) == pytest.approx(0.7, abs=1e-15)

    def test_hidden_labels_accepted(self):
        model = linear_model(np.eye(2))
        assert accuracy(model, TargetDataset(np.eye(2), hidden_labels=[0, 1])) == 1.0

    def test_unlabeled_rejected(self):
        with pytest.raises(ContractError):
            accuracy(linear_model(np.eye(2)), TargetDataset(np.eye(2)))


class TestADistance:
    def test_separable(self):
        rng = np.random.default_rng(0)
        rep = a_distance(rng.normal(size=(100, 3)), rng.normal(size=(100, 3)) + 10.0)
        assert rep.epsilon == 0.0 and rep.d_A == 2.0

    def test_indistinguishable_control(self):
        vals = []
        for seed in range(10):
            rng = np.random.default_rng(seed)
            vals.append(a_distance(rng.normal(size=(200, 4)), rng.normal(size=(200, 4)), seed=seed).d_A)
        assert abs(np.mean(vals)) < 0.3

    def test_clamped_and_deterministic(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(30, 2)), rng.normal(size=(30, 2))
        r1, r2 = a_distance(a, b, seed=4), a_distance(a, b, seed=4)
        assert r1 == r2
        assert 0.0 <= r1.epsilon <= 0.5 and 0.0 <= r1.d_A <= 2.0

    def test_width_mismatch(self):
        with pytest.raises(ContractError):
            a_distance(np.zeros((4, 2)), np.zeros((4, 3)))


class TestExport:
    def fixture(self, tmp_path):
        params = init_mlp([2, 8, 32, 2], 0)
        rng = np.random.default_rng(0)
        source = LabeledDataset(rng.normal(size=(3, 2)), [0, 1, 0], 2)
        target = TargetDataset(rng.normal(size=(2, 2)))
        pseudo = PseudoLabeledSet(np.array([1]), np.array([1]), np.array([0.97]), 0.9, 2, 2)
        return params, source, target, pseudo

    def test_layout(self, tmp_path):
        path = export_embeddings(*self.fixture(tmp_path), tmp_path / "e.csv")
        rows = list(csv.reader(path.open()))
        assert rows[0][:5] == ["domain", "index", "label", "pseudo_label", "score"]
        assert len(rows) == 6
        assert all(len(r) == 5 + 32 for r in rows)
        assert rows[4][:5] == ["t", "0", "-1", "-1", "0.0"]
        assert rows[5][3:5] == ["1", "0.97"]

    def test_byte_identical_reexport(self, tmp_path):
        args = self.fixture(tmp_path)
        export_embeddings(*args, tmp_path / "a.csv")
        export_embeddings(*args, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
