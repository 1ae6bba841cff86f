"""
Unit tests for dense networks, losses, training and the weight format.
"""

import math

import numpy as np
import pytest

from gatlab.models import DimensionError
from gatlab.nncore import (
    CCE, MSE, SIMPLEX, DenseNet, OptimizerState, dump_net, forward_pass, gradient_check,
    load_net, loss, read_net, save_net, train_step,
)


class TestForwardPass:
    """Test forward_pass."""

    def test_zero_weight_net_outputs_zeros(self):
        net = DenseNet([3, 5, 2])
        assert np.array_equal(forward_pass(net, np.array([1.0, -2.0, 3.0])), np.zeros(2))

    def test_identity_layer(self):
        net = DenseNet([2, 2])
        net.weights[0] = np.eye(2)
        assert np.array_equal(forward_pass(net, np.array([1.0, 2.0])), np.array([1.0, 2.0]))

    def test_seeded_net_matches_hand_arithmetic(self):
        net = DenseNet([2, 3, 2], rng=np.random.default_rng(7))
        x = np.array([0.5, -0.5])

        hidden = []
        for j in range(3):
            z = sum(x[i] * net.weights[0][i][j] for i in range(2)) + net.biases[0][j]
            hidden.append(max(z, 0.0))
        expected = [
            sum(hidden[j] * net.weights[1][j][k] for j in range(3)) + net.biases[1][k]
            for k in range(2)
        ]

        assert forward_pass(net, x) == pytest.approx(expected, abs=1e-12)

    def test_dimension_mismatch_names_lengths(self):
        net = DenseNet([3, 2])
        with pytest.raises(DimensionError) as exc_info:
            forward_pass(net, np.zeros(4))
        assert exc_info.value.expected == 3
        assert exc_info.value.actual == 4

    def test_simplex_head_sums_to_one(self, rng):
        net = DenseNet([4, 6, 16], head=SIMPLEX, simplex_groups=2, rng=rng)
        for _ in range(20):
            out = forward_pass(net, rng.normal(scale=5.0, size=4))
            assert np.all(out >= 0)
            assert abs(out[:8].sum() - 1.0) <= 1e-9
            assert abs(out[8:].sum() - 1.0) <= 1e-9

    def test_batch_forward_matches_rows(self, rng):
        net = DenseNet([3, 4, 2], rng=rng)
        X = rng.normal(size=(5, 3))
        batch = net.forward(X)
        for row, x in zip(batch, X):
            assert np.allclose(row, net.forward(x), rtol=0.0, atol=1e-12)


class TestLoss:
    """Test loss."""

    def test_mse_identity_is_zero(self):
        x = np.array([0.3, -1.2, 4.0])
        assert loss(MSE, x, x) == 0.0

    def test_mse_hand_value(self):
        assert loss(MSE, np.array([1.0, 2.0]), np.array([0.0, 0.0])) == 2.5

    def test_cce_uniform_over_eight(self):
        target = np.zeros(8)
        target[5] = 1.0
        assert loss(CCE, np.full(8, 1 / 8), target) == pytest.approx(math.log(8))

    def test_cce_clamps_zero_probability(self):
        target = np.array([0.0, 1.0])
        assert loss(CCE, np.array([1.0, 0.0]), target) == pytest.approx(-math.log(1e-12))

    def test_cce_rejects_non_one_hot(self):
        with pytest.raises(ValueError):
            loss(CCE, np.full(4, 0.25), np.array([0.5, 0.5, 0.0, 0.0]))

    def test_cce_rejects_predictions_off_the_simplex(self):
        target = np.eye(3)[0]
        with pytest.raises(ValueError):
            loss(CCE, np.array([2.0, -0.5, 0.1]), target)
        with pytest.raises(ValueError):
            loss(CCE, np.array([0.5, 0.5, 0.5]), target)


class TestTrainStep:
    """Test train_step and the optimizer."""

    def test_loss_decreases_on_fixed_pair(self, rng):
        net = DenseNet([3, 8, 2], rng=rng)
        opt = OptimizerState.for_net(net, 1e-2)
        x = np.array([[0.2, -0.4, 0.9]])
        t = np.array([[1.0, -1.0]])
        losses = [train_step(net, opt, x, t, MSE) for _ in range(10)]
        assert losses[-1] < losses[0]

    def test_zero_learning_rate_leaves_parameters(self, rng):
        net = DenseNet([3, 4, 2], rng=rng)
        before = dump_net(net)
        opt = OptimizerState.for_net(net, 0.0)
        train_step(net, opt, np.ones((2, 3)), np.zeros((2, 2)), MSE)
        assert dump_net(net) == before

    def test_returns_pre_update_loss(self, rng):
        net = DenseNet([2, 3, 1], rng=rng)
        x = np.array([[0.5, 0.1]])
        t = np.array([[2.0]])
        expected = loss(MSE, net.forward(x[0]), t[0])
        opt = OptimizerState.for_net(net, 1e-2)
        assert train_step(net, opt, x, t, MSE) == pytest.approx(expected)

    def test_empty_batch_rejected(self):
        net = DenseNet([2, 2])
        opt = OptimizerState.for_net(net)
        with pytest.raises(ValueError):
            train_step(net, opt, np.zeros((0, 2)), np.zeros((0, 2)), MSE)

    def test_cce_requires_simplex_head(self):
        net = DenseNet([2, 2])
        opt = OptimizerState.for_net(net)
        with pytest.raises(ValueError):
            train_step(net, opt, np.zeros((1, 2)), np.array([[1.0, 0.0]]), CCE)

    def test_cce_fit_on_separable_points(self):
        rng = np.random.default_rng(11)
        net = DenseNet([4, 16, 8], head=SIMPLEX, rng=rng)
        opt = OptimizerState.for_net(net, 1e-2)
        X = np.eye(4)
        labels = [1, 3, 5, 7]
        T = np.eye(8)[labels]
        for _ in range(500):
            train_step(net, opt, X, T, CCE)
        predicted = np.argmax(net.forward(X), axis=1)
        assert list(predicted) == labels

    def test_seeded_training_is_deterministic(self):
        def run():
            net = DenseNet([3, 5, 2], rng=np.random.default_rng(3))
            opt = OptimizerState.for_net(net, 1e-2)
            data = np.random.default_rng(4)
            for _ in range(5):
                train_step(net, opt, data.normal(size=(4, 3)), data.normal(size=(4, 2)), MSE)
            return dump_net(net)

        assert run() == run()


class TestGradientCheck:
    """Test gradient_check on every head/loss combination."""

    def test_mse_linear_head(self):
        net = DenseNet([3, 4, 2], rng=np.random.default_rng(5))
        err = gradient_check(net, np.array([0.3, -0.7, 0.9]), np.array([0.5, -0.25]), MSE)
        assert err <= 1e-4

    def test_mse_two_hidden_layers(self):
        net = DenseNet([3, 5, 4, 3], rng=np.random.default_rng(6))
        err = gradient_check(net, np.array([0.8, 0.1, -0.6]), np.array([1.0, 0.0, -1.0]), MSE)
        assert err <= 1e-4

    def test_cce_simplex_head(self):
        net = DenseNet([3, 4, 8], head=SIMPLEX, rng=np.random.default_rng(8))
        target = np.zeros(8)
        target[2] = 1.0
        assert gradient_check(net, np.array([0.4, -0.9, 0.2]), target, CCE) <= 1e-4

    def test_cce_grouped_simplex_head(self):
        net = DenseNet([3, 4, 16], head=SIMPLEX, simplex_groups=2, rng=np.random.default_rng(9))
        target = np.concatenate([np.eye(8)[1], np.eye(8)[6]])
        assert gradient_check(net, np.array([0.4, -0.9, 0.2]), target, CCE) <= 1e-4

    def test_zero_gradient_point(self):
        net = DenseNet([2, 3, 2])
        assert gradient_check(net, np.array([0.5, 0.5]), np.zeros(2), MSE) == 0.0

    def test_cce_on_linear_head_is_rejected(self):
        net = DenseNet([3, 4, 2], rng=np.random.default_rng(10))
        with pytest.raises(ValueError):
            gradient_check(net, np.array([0.4, -0.9, 0.2]), np.array([1.0, 0.0]), CCE)


class TestWeightFormat:
    """Test the plain-text weight dump."""

    def test_dump_load_restores_weights_exactly(self, rng):
        net = DenseNet([3, 4, 8], head=SIMPLEX, rng=rng)
        net.biases[0] = rng.normal(size=4)
        restored = load_net(dump_net(net))
        assert restored.layer_sizes == net.layer_sizes
        assert restored.head == SIMPLEX
        for a, b in zip(net.parameters(), restored.parameters()):
            assert np.array_equal(a, b)

    def test_save_and_read(self, tmp_path, rng):
        net = DenseNet([2, 2], rng=rng)
        path = tmp_path / "net.txt"
        save_net(net, path)
        assert path.read_text().startswith("# gatlab densenet v1\n")
        assert np.array_equal(read_net(path).weights[0], net.weights[0])

    def test_rejects_foreign_text(self):
        with pytest.raises(ValueError):
            load_net("not a network")
