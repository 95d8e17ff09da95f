import numpy as np
import pytest

from v2xsim import nn

import oracles


def random_net(rng, sizes=(6, 16, 5)):
    return nn.init_weights(sizes, rng)


class TestForward:
    def test_zero_weights_zero_output(self):
        net = nn.QNetwork((3, 4, 2), [np.zeros((3, 4)), np.zeros((4, 2))],
                          [np.zeros(4), np.zeros(2)])
        out = nn.forward(net, np.array([1.0, -2.0, 3.0]))
        assert np.all(out == 0.0)

    def test_scalar_chain_hand_value(self):
        # 1-1-1 net: out = w2 * relu(w1*x + b1) + b2
        net = nn.QNetwork((1, 1, 1), [np.array([[2.0]]), np.array([[3.0]])],
                          [np.array([0.5]), np.array([-1.0])])
        out = nn.forward(net, np.array([2.0]))
        assert out[0] == pytest.approx(3.0 * (2.0 * 2.0 + 0.5) - 1.0)
        # Negative pre-activation is rectified away.
        out = nn.forward(net, np.array([-2.0]))
        assert out[0] == pytest.approx(-1.0)

    def test_matches_independent_matrix_oracle(self):
        rng = np.random.default_rng(3)
        net = random_net(rng)
        x = rng.normal(size=6)
        expected = oracles.oracle_net_forward(
            [w.tolist() for w in net.weights],
            [b.tolist() for b in net.biases], x.tolist())
        assert nn.forward(net, x) == pytest.approx(expected, rel=1e-12)

    def test_dimension_mismatch_raises(self):
        net = random_net(np.random.default_rng(0))
        with pytest.raises(ValueError):
            nn.forward(net, np.zeros(7))

    def test_batch_matches_single(self):
        rng = np.random.default_rng(4)
        net = random_net(rng)
        xs = rng.normal(size=(5, 6))
        batch = nn.forward(net, xs)
        for i in range(5):
            assert batch[i] == pytest.approx(nn.forward(net, xs[i]))


class TestBackward:
    def test_zero_error_zero_gradients(self):
        rng = np.random.default_rng(5)
        net = random_net(rng)
        x = rng.normal(size=6)
        out = nn.forward(net, x)
        mask = np.zeros(5)
        mask[2] = 1.0
        grads = nn.backward(net, x, np.array([out[2]]), mask)
        for g in grads:
            assert np.allclose(g, 0.0, atol=1e-15)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        for _ in range(5):
            net = random_net(rng, sizes=(4, 8, 3))
            xs = rng.normal(size=(2, 4))
            targets = rng.normal(size=2)
            actions = rng.integers(0, 3, size=2)
            mask = np.zeros((2, 3))
            mask[np.arange(2), actions] = 1.0
            grads = nn.backward(net, xs, targets, mask)
            w_fd, b_fd = oracles.finite_diff_grads(
                [w.tolist() for w in net.weights],
                [b.tolist() for b in net.biases],
                xs.tolist(), targets.tolist(), actions.tolist())
            flat_bp = np.concatenate([g.ravel() for g in grads])
            flat_fd = np.concatenate(
                [np.asarray(w_fd[0]).ravel(), np.asarray(b_fd[0]).ravel()])
            flat_fd = np.concatenate([
                np.asarray(w_fd[0]).ravel(), np.asarray(b_fd[0]).ravel(),
                np.asarray(w_fd[1]).ravel(), np.asarray(b_fd[1]).ravel()])
            err = np.abs(flat_bp - flat_fd) / np.maximum(
                1e-8, np.abs(flat_bp) + np.abs(flat_fd))
            assert err.max() <= 1e-4

    def test_error_scaling_is_linear(self):
        rng = np.random.default_rng(7)
        net = random_net(rng)
        x = rng.normal(size=6)
        out = nn.forward(net, x)
        mask = np.zeros(5)
        mask[1] = 1.0
        g1 = nn.backward(net, x, np.array([out[1] - 1.0]), mask)
        g2 = nn.backward(net, x, np.array([out[1] - 2.0]), mask)
        for a, b in zip(g1, g2):
            assert np.allclose(2.0 * a, b, rtol=1e-12)

    def test_untaken_output_rows_get_zero_gradient(self):
        rng = np.random.default_rng(8)
        net = random_net(rng)
        x = rng.normal(size=6)
        mask = np.zeros(5)
        mask[0] = 1.0
        grads = nn.backward(net, x, np.array([3.0]), mask)
        out_w_grad = grads[-2]   # hidden x out weight matrix
        assert np.allclose(out_w_grad[:, 1:], 0.0)


class TestAdam:
    def test_first_step_is_signed_learning_rate(self):
        rng = np.random.default_rng(9)
        net = random_net(rng)
        adam = nn.AdamState.for_network(net, learning_rate=0.01)
        before = [p.copy() for p in net.parameters()]
        grads = [rng.normal(size=p.shape) for p in net.parameters()]
        nn.adam_step(net, adam, grads)
        for b, p, g in zip(before, net.parameters(), grads):
            delta = p - b
            big = np.abs(g) > 1e-3
            assert np.allclose(delta[big], -0.01 * np.sign(g[big]), atol=1e-4)

    def test_zero_gradient_keeps_parameters(self):
        rng = np.random.default_rng(10)
        net = random_net(rng)
        adam = nn.AdamState.for_network(net)
        before = [p.copy() for p in net.parameters()]
        nn.adam_step(net, adam, [np.zeros_like(p) for p in net.parameters()])
        assert adam.step == 1
        for b, p in zip(before, net.parameters()):
            assert np.array_equal(b, p)

    def test_deterministic_trajectories(self):
        def train(seed):
            rng = np.random.default_rng(seed)
            net = random_net(np.random.default_rng(0))
            adam = nn.AdamState.for_network(net)
            for _ in range(10):
                grads = [rng.normal(size=p.shape) for p in net.parameters()]
                nn.adam_step(net, adam, grads)
            return net

        a, b = train(123), train(123)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert np.array_equal(pa, pb)

    def test_training_reduces_regression_loss(self):
        rng = np.random.default_rng(11)
        net = nn.init_weights((4, 32, 2), rng)
        adam = nn.AdamState.for_network(net, learning_rate=0.005)
        xs = rng.normal(size=(16, 4))
        targets = rng.normal(size=16)
        actions = rng.integers(0, 2, size=16)
        mask = np.zeros((16, 2))
        mask[np.arange(16), actions] = 1.0
        first = nn.masked_loss(net, xs, targets, mask)
        losses = []
        for _ in range(200):
            loss, grads = nn.loss_and_grads(net, xs, targets, mask)
            nn.adam_step(net, adam, grads)
            losses.append(loss)
        assert losses[-1] < first
        assert losses[-1] < 0.05 * first


class TestInit:
    def test_seed_determinism(self):
        a = nn.init_weights((5, 7, 3), np.random.default_rng(42))
        b = nn.init_weights((5, 7, 3), np.random.default_rng(42))
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert np.array_equal(pa, pb)

    def test_weight_mean_near_zero(self):
        rng = np.random.default_rng(13)
        net = nn.init_weights((100, 500, 100), rng)
        w = net.weights[0]
        limit = np.sqrt(6.0 / (100 + 500))
        sigma = limit / np.sqrt(3.0)  # uniform(-a, a) std
        assert abs(w.mean()) < 3 * sigma / np.sqrt(w.size)
        assert np.abs(w).max() <= limit

    def test_biases_exactly_zero(self):
        net = nn.init_weights((5, 7, 3), np.random.default_rng(1))
        for b in net.biases:
            assert np.all(b == 0.0)

    def test_bad_sizes_rejected(self):
        with pytest.raises(ValueError):
            nn.init_weights((5,), np.random.default_rng(0))
        with pytest.raises(ValueError):
            nn.init_weights((5, 0, 3), np.random.default_rng(0))


class TestSerialization:
    def test_round_trip_bit_identical(self):
        net = random_net(np.random.default_rng(14), sizes=(34, 256, 80))
        restored = nn.deserialize(nn.serialize(net))
        assert restored.layer_sizes == net.layer_sizes
        for a, b in zip(net.parameters(), restored.parameters()):
            assert np.array_equal(a, b)

    def test_truncated_stream_raises(self):
        data = nn.serialize(random_net(np.random.default_rng(15)))
        with pytest.raises(nn.ModelFormatError):
            nn.deserialize(data[:-5])

    def test_bad_magic_raises(self):
        data = nn.serialize(random_net(np.random.default_rng(16)))
        with pytest.raises(nn.ModelFormatError):
            nn.deserialize(b"XXXX" + data[4:])

    def test_bad_version_raises(self):
        data = bytearray(nn.serialize(random_net(np.random.default_rng(17))))
        data[4] = 99
        with pytest.raises(nn.ModelFormatError):
            nn.deserialize(bytes(data))
