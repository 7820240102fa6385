import math

import numpy as np
import pytest

from probsurv.tensorcore import (
    IDENTITY,
    RELU,
    AdamState,
    DenseLayer,
    Network,
    TrainConfig,
    adam_step,
    backward,
    forward,
    grad_check,
    l2_penalty,
    load_network,
    sample_dropout_masks,
    save_network,
    spectral_normalize,
)


def _squared_loss(net, X, y, masks=None):
    def loss():
        out, _ = forward(net, X, masks)
        return 0.5 * float(np.sum((out - y) ** 2))

    out, cache = forward(net, X, masks)
    return loss, backward(net, cache, out - y)


def _kink_free_net(rng, widths, X):
    """Random ReLU net whose hidden pre-activations stay clear of zero on X."""
    for _ in range(100):
        net = Network.init(widths, rng)
        _, cache = forward(net, X)
        if all(np.min(np.abs(z)) > 1e-3 for z in cache.pre[:-1]):
            return net
    raise RuntimeError("could not draw a kink-free network")


class TestForward:
    def test_identity(self):
        net = Network([DenseLayer(np.eye(3), np.zeros(3), IDENTITY)])
        x = np.array([1.0, -2.0, 3.0])
        np.testing.assert_array_equal(net(x), x)

    def test_bias_only(self):
        b = np.array([0.5, -1.0])
        net = Network([DenseLayer(np.zeros((2, 3)), b, IDENTITY)])
        np.testing.assert_array_equal(net(np.ones(3)), b)

    def test_hand_expanded_two_layer(self):
        W1 = np.array([[1.0, 2.0], [-1.0, 1.0], [0.5, -0.5]])
        b1 = np.array([0.0, 0.5, 1.0])
        W2 = np.array([[1.0, -2.0, 3.0]])
        b2 = np.array([0.25])
        net = Network([DenseLayer(W1, b1, RELU), DenseLayer(W2, b2, IDENTITY)])
        # hidden pre-activations at x=[1,-1]: [-1, -1.5, 2] -> relu [0, 0, 2]
        assert net(np.array([1.0, -1.0]))[0] == pytest.approx(3 * 2 + 0.25)

    def test_shape_mismatch(self):
        net = Network.init([3, 2, 1], np.random.default_rng(0))
        with pytest.raises(ValueError):
            net(np.ones(4))

    def test_layer_chain_mismatch(self):
        with pytest.raises(ValueError):
            Network([DenseLayer(np.ones((2, 3)), np.zeros(2)), DenseLayer(np.ones((1, 3)), np.zeros(1))])

    def test_batch_matches_rows(self, rng):
        net = Network.init([4, 5, 2], rng)
        X = rng.normal(size=(6, 4))
        np.testing.assert_allclose(net(X), np.vstack([net(x) for x in X]), rtol=0, atol=1e-14)


class TestBackward:
    @pytest.mark.parametrize("widths", [[3, 1], [4, 6, 2], [5, 8, 4, 1]])
    def test_finite_differences(self, rng, widths):
        X = rng.normal(size=(7, widths[0]))
        y = rng.normal(size=(7, widths[-1]))
        net = _kink_free_net(rng, widths, X)
        loss, grads = _squared_loss(net, X, y)
        assert grad_check(net, loss, grads).max_rel_error < 1e-5

    def test_zero_upstream(self, rng):
        net = Network.init([3, 4, 1], rng)
        _, cache = forward(net, rng.normal(size=(5, 3)))
        assert all(np.all(g == 0) for g in backward(net, cache, np.zeros((5, 1))))

    def test_linear_closed_form(self, rng):
        X = rng.normal(size=(9, 3))
        y = rng.normal(size=(9, 1))
        net = Network([DenseLayer(rng.normal(size=(1, 3)), rng.normal(size=1), IDENTITY)])
        loss, grads = _squared_loss(net, X, y)
        resid = net(X) - y
        np.testing.assert_allclose(grads[0], resid.T @ X, rtol=1e-12)
        np.testing.assert_allclose(grads[1], resid.sum(axis=0), rtol=1e-12)
        assert grad_check(net, loss, grads).max_rel_error < 1e-7

    def test_frozen_masks(self, rng):
        X = rng.normal(size=(6, 3))
        y = rng.normal(size=(6, 1))
        net = _kink_free_net(rng, [3, 8, 5, 1], X)
        masks = sample_dropout_masks([8, 5], 0.3, 7, n_rows=6)
        loss, grads = _squared_loss(net, X, y, masks)
        assert grad_check(net, loss, grads).max_rel_error < 1e-5

    def test_input_gradient(self, rng):
        net = _kink_free_net(rng, [3, 4, 1], rng.normal(size=(1, 3)))
        x = rng.normal(size=3)
        out, cache = forward(net, x)
        _, gx = backward(net, cache, np.ones(1), return_input_grad=True)
        h = 1e-6
        num = [(net(x + h * e)[0] - net(x - h * e)[0]) / (2 * h) for e in np.eye(3)]
        np.testing.assert_allclose(gx, num, rtol=1e-6)

    def test_cache_mismatch(self, rng):
        net = Network.init([3, 4, 1], rng)
        other = Network.init([3, 1], rng)
        _, cache = forward(other, np.ones(3))
        with pytest.raises(ValueError):
            backward(net, cache, np.ones(1))


class TestDropoutMasks:
    def test_zero_rate(self):
        assert all(np.all(m == 1.0) for m in sample_dropout_masks([3, 5], 0.0, 1))

    def test_full_rate_bias_pathway(self):
        masks = sample_dropout_masks([4], 1.0, 1)
        assert np.all(masks[0] == 0.0)
        net = Network([DenseLayer(np.ones((4, 2)), np.ones(4), RELU), DenseLayer(np.ones((1, 4)), np.array([0.7]), IDENTITY)])
        assert net(np.ones(2), masks)[0] == 0.7

    def test_half_rate_concentration(self):
        for seed in range(20):
            kept = np.mean(sample_dropout_masks([1000], 0.5, seed)[0] > 0)
            assert 0.45 <= kept <= 0.55

    def test_inverted_scale(self):
        m = sample_dropout_masks([10000], 0.25, 3)[0]
        assert set(np.unique(m)) == {0.0, 1.0 / 0.75}
        assert abs(m.mean() - 1.0) < 0.03

    def test_seed_determinism(self):
        a = sample_dropout_masks([5, 5], 0.4, 11, n_rows=3)
        b = sample_dropout_masks([5, 5], 0.4, 11, n_rows=3)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))


class TestSpectralNorm:
    def test_identity(self):
        W, sigma, _ = spectral_normalize(np.eye(3), 1.0, iters=5)
        np.testing.assert_allclose(W, np.eye(3))
        assert sigma == pytest.approx(1.0)

    def test_diag(self):
        W, sigma, _ = spectral_normalize(np.diag([2.0, 1.0]), 1.0, iters=50)
        np.testing.assert_allclose(W, np.diag([1.0, 0.5]), atol=1e-9)

    def test_svd_oracle(self, rng):
        for _ in range(10):
            A = rng.normal(size=(5, 3))
            W, sigma, _ = spectral_normalize(A, 1.0, iters=50, rng=rng)
            top = math.sqrt(np.linalg.eigvalsh(A.T @ A).max())
            assert abs(sigma - top) < 1e-3
            assert np.linalg.svd(W, compute_uv=False)[0] <= 1.0 + 1e-3

    def test_below_bound_unchanged(self):
        A = np.diag([0.5, 0.1])
        W, _, _ = spectral_normalize(A, 1.0, iters=10)
        np.testing.assert_array_equal(W, A)

    def test_persisted_u_converges(self, rng):
        A = rng.normal(size=(6, 4))
        u = None
        for _ in range(60):
            _, sigma, u = spectral_normalize(A, 1.0, iters=1, u=u, rng=rng)
        assert sigma == pytest.approx(np.linalg.svd(A, compute_uv=False)[0], rel=1e-6)


class TestAdam:
    def test_zero_gradient(self):
        p = [np.array([1.0, -2.0])]
        adam_step(p, [np.zeros(2)], AdamState.zeros_like(p), 1, TrainConfig())
        np.testing.assert_array_equal(p[0], [1.0, -2.0])

    def test_first_step_magnitude(self):
        p = [np.array([1.0, 1.0])]
        cfg = TrainConfig(learning_rate=0.01)
        adam_step(p, [np.array([3.0, -0.2])], AdamState.zeros_like(p), 1, cfg)
        np.testing.assert_allclose(p[0], [0.99, 1.01], atol=1e-8)

    def test_scalar_oracle(self):
        cfg = TrainConfig(learning_rate=0.1)
        p = [np.array([1.0])]
        state = AdamState.zeros_like(p)
        w, m, v = 1.0, 0.0, 0.0
        for t in range(1, 11):
            g = 2.0 * w
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            w -= 0.1 * (m / (1 - 0.9**t)) / (math.sqrt(v / (1 - 0.999**t)) + 1e-8)
            adam_step(p, [2.0 * p[0]], state, t, cfg)
        assert abs(p[0][0] - w) < 1e-10

    def test_non_finite_names_parameter(self):
        p = [np.zeros(2), np.zeros(1)]
        with pytest.raises(FloatingPointError, match=r"layers\[0\]\.biases"):
            adam_step(p, [np.zeros(2), np.array([np.nan])], AdamState.zeros_like(p), 1, TrainConfig(), ["layers[0].weights", "layers[0].biases"])

    def test_decoupled_decay(self):
        p = [np.array([2.0])]
        adam_step(p, [np.zeros(1)], AdamState.zeros_like(p), 1, TrainConfig(learning_rate=0.1, weight_decay=0.5))
        assert p[0][0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(optimizer="sgd")
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0)


class TestL2:
    def test_zero_lambda(self, rng):
        net = Network.init([3, 2, 1], rng)
        value, grads = l2_penalty(net, 0.0)
        assert value == 0.0 and all(np.all(g == 0) for g in grads)

    def test_single_weight(self):
        value, grads = l2_penalty([np.array([3.0])], 0.5)
        assert value == 4.5 and grads[0][0] == 3.0

    def test_direct_sum(self, rng):
        net = Network.init([4, 6, 1], rng)
        value, _ = l2_penalty(net, 0.01)
        direct = 0.01 * sum(float(x) ** 2 for p in net.params() for x in p.ravel())
        assert value == pytest.approx(direct, rel=1e-12)


class TestCheckpoint:
    def test_round_trip(self, rng, tmp_path):
        net = Network.init([3, 4, 1], rng)
        save_network(net, tmp_path / "n.json")
        back = load_network(tmp_path / "n.json")
        for a, b in zip(net.params(), back.params()):
            np.testing.assert_array_equal(a, b)
        assert [l.activation for l in back.layers] == [RELU, IDENTITY]
