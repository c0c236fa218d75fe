import json

import numpy as np
import pytest

from oracles import central_diff, max_rel_err
from sca.errors import ConfigError, ContractError
from sca.losses import KernelConfig
from sca.model import (Gradients, MlpParams, SgdState, backward, forward, init_mlp, inv_lr, load_checkpoint,
                       save_checkpoint, sgd_step)
from sca.sampling import JmmdPairing
from sca.trainer import sca_objective


def small_problem(seed=0):
    """A 3-5-4-3 net with nonzero biases and one batch of every kind of row."""
    rng = np.random.default_rng(seed)
    params = init_mlp([3, 5, 4, 3], seed + 1)
    for b in params.biases:
        b[:] = rng.normal(0.0, 0.1, b.shape)
    batch = dict(
        Xs=rng.normal(size=(6, 3)), ys=np.array([0, 0, 1, 1, 2, 2]), Xt=rng.normal(size=(6, 3)) + 1.0,
        triplet_Xs=rng.normal(size=(4, 3)), triplet_ys=np.array([0, 0, 1, 1]),
        triplet_Xt=rng.normal(size=(4, 3)), triplet_yt=np.array([0, 0, 1, 1]),
        pairing=JmmdPairing(rng.permutation(6), rng.permutation(6)),
        gammas=[np.array([0.3, 0.6]), np.array([1.0])])
    return params, batch


def objective(params, batch, alpha, beta):
    return sca_objective(params, alpha=alpha, beta=beta, kernel=KernelConfig((0.5, 1.0)), margin=1.0, **batch)


class TestInit:
    def test_deterministic(self):
        a, b = init_mlp([4, 8, 3, 2], 5), init_mlp([4, 8, 3, 2], 5)
        assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))

    def test_zero_biases(self):
        assert all((b == 0).all() for b in init_mlp([4, 8, 3, 2], 0).biases)

    def test_he_variance(self):
        W = init_mlp([1000, 1000, 4, 2], 0).weights[0]
        assert abs(W.var() / (2.0 / 1000) - 1.0) < 0.2

    def test_bad_dims(self):
        with pytest.raises(ConfigError):
            init_mlp([3, 0, 2], 0)
        with pytest.raises(ConfigError):
            init_mlp([3, 2], 0)


class TestForward:
    def test_zero_model(self):
        p = init_mlp([3, 4, 2, 2], 0)
        for a in p.arrays():
            a[:] = 0.0
        acts = forward(p, np.ones((5, 3)))
        assert all((z == 0).all() for z in acts.post)

    def test_shapes(self):
        acts = forward(init_mlp([3, 4, 2, 5], 0), np.ones((7, 3)))
        assert [z.shape for z in acts.post] == [(7, 4), (7, 2), (7, 5)]
        assert acts.embedding.shape == (7, 2) and acts.logits.shape == (7, 5)

    def test_row_matches_batch(self):
        p = init_mlp([3, 6, 4, 2], 2)
        X = np.random.default_rng(0).normal(size=(5, 3))
        full = forward(p, X).logits
        for i in range(5):
            np.testing.assert_allclose(forward(p, X[i:i + 1]).logits[0], full[i], rtol=0, atol=1e-12)

    def test_embedding_is_affine(self):
        # negative bottleneck values survive because only hidden layers use ReLU
        emb = forward(init_mlp([2, 16, 8, 2], 0), np.random.default_rng(1).normal(size=(50, 2))).embedding
        assert (emb < 0).any()

    def test_width_mismatch(self):
        with pytest.raises(ContractError):
            forward(init_mlp([3, 4, 2, 2], 0), np.ones((2, 4)))


class TestBackward:
    def test_zero_upstream(self):
        p = init_mlp([3, 4, 2, 2], 0)
        acts = forward(p, np.ones((3, 3)))
        z = {"embedding": np.zeros((3, 2)), "logits": np.zeros((3, 2))}
        g = backward(p, acts, None, {"source": z})
        assert all((a == 0).all() for a in g.arrays())

    def test_missing_key(self):
        p = init_mlp([3, 4, 2, 2], 0)
        acts = forward(p, np.ones((3, 3)))
        with pytest.raises(ContractError):
            backward(p, acts, None, {"source": {"logits": np.zeros((3, 2))}})

    @pytest.mark.parametrize("alpha,beta", [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (0.7, 2.0)])
    def test_matches_finite_differences(self, alpha, beta):
        params, batch = small_problem()
        analytic = objective(params, batch, alpha, beta).grads.arrays()
        numeric = central_diff(lambda: objective(params, batch, alpha, beta).losses.l_total, params.arrays())
        assert max_rel_err(analytic, numeric) < 1e-4

    def test_beta_scales_triplet_contribution(self):
        params, batch = small_problem(3)
        base = objective(params, batch, 1.0, 0.0).grads.arrays()
        one = objective(params, batch, 1.0, 1.0).grads.arrays()
        two = objective(params, batch, 1.0, 2.0).grads.arrays()
        for g0, g1, g2 in zip(base, one, two):
            np.testing.assert_allclose(g2 - g0, 2.0 * (g1 - g0), rtol=1e-9, atol=1e-12)


class TestSgd:
    def test_initial_lr(self):
        p = init_mlp([2, 3, 2, 2], 0)
        assert SgdState.for_params(p, 100).current_lr() == 0.001

    def test_inv_lr_at_end(self):
        # frozen: 0.001 * 11 ** -0.75
        assert inv_lr(0.001, 1.0, 10.0, 0.75) == pytest.approx(0.00016556002607617017, rel=1e-14)

    def test_identity_step(self):
        p = init_mlp([2, 3, 2, 2], 0)
        before = p.copy()
        state = SgdState.for_params(p, 10, weight_decay=0.0)
        sgd_step(p, Gradients.zeros_like(p), state)
        assert all(np.array_equal(a, b) for a, b in zip(p.arrays(), before.arrays()))
        assert state.step_index == 1

    def test_momentum_and_decay(self):
        p = MlpParams([np.ones((1, 1)), np.ones((1, 1))], [np.ones(1), np.ones(1)])
        g = Gradients([np.full((1, 1), 0.5)] * 2, [np.full(1, 0.5)] * 2)
        state = SgdState.for_params(p, 1000, base_lr=0.1, momentum_coeff=0.9, weight_decay=0.01, inv_gamma=0.0)
        sgd_step(p, g, state)
        # v = 0.5 + 0.01 * 1 for weights; no decay on biases
        assert p.weights[0][0, 0] == pytest.approx(1 - 0.1 * 0.51)
        assert p.biases[0][0] == pytest.approx(1 - 0.1 * 0.5)
        sgd_step(p, g, state)
        w1 = 1 - 0.1 * 0.51
        assert p.weights[0][0, 0] == pytest.approx(w1 - 0.1 * (0.9 * 0.51 + 0.5 + 0.01 * w1))


class TestCheckpoint:
    def test_round_trip_exact(self, tmp_path):
        p = init_mlp([3, 7, 4, 2], 11)
        save_checkpoint(p, tmp_path / "c")
        q = load_checkpoint(tmp_path / "c")
        assert all(np.array_equal(a, b) for a, b in zip(p.arrays(), q.arrays()))

    def test_wrong_format(self, tmp_path):
        (tmp_path / "c").write_text(json.dumps({"format": "other", "version": 1}))
        with pytest.raises(ContractError):
            load_checkpoint(tmp_path / "c")
