# Copyright (c) 2026, Transience contributors
# For license information, please see license.txt

import unittest

import numpy as np

from transience.exceptions import NonFiniteError, ValidationError
from transience.networks.net import (
    DECODER_X,
    ENCODER_X,
    PRIVATE_Y,
    AdamState,
    EncoderStack,
    Layer,
    Mlp,
    adam_step,
    backward,
    flatten_groups,
    forward,
    gradcheck,
    inject_noise,
    leaky_relu,
)


def _naive_forward(net, X):
    h = X
    for k, layer in enumerate(net.layers):
        h = layer.weights @ h + layer.bias[:, None]
        if k < len(net.layers) - 1:
            h = np.where(h > 0, h, net.slope * h)
    return h


class TestForward(unittest.TestCase):
    def test_zero_weights_return_bias(self):
        net = Mlp([Layer(np.zeros((2, 3)), np.array([1.0, -2.0]))])
        out = net(np.random.default_rng(0).normal(size=(3, 5)))
        np.testing.assert_array_equal(out, np.tile([[1.0], [-2.0]], (1, 5)))

    def test_single_linear_layer(self):
        W = np.array([[1.0, 2.0], [0.0, -1.0], [3.0, 1.0]])
        b = np.array([0.5, 0.0, -1.0])
        X = np.array([[1.0, -1.0], [2.0, 0.5]])
        np.testing.assert_allclose(Mlp([Layer(W, b)])(X), W @ X + b[:, None])

    def test_deep_net_matches_naive_evaluation(self):
        rng = np.random.default_rng(1)
        net = Mlp.build([4, 7, 5, 3], rng)
        X = rng.normal(size=(4, 9))
        np.testing.assert_allclose(net(X), _naive_forward(net, X), atol=1e-12)

    def test_leaky_slope(self):
        np.testing.assert_allclose(leaky_relu(np.array([-2.0, 0.0, 3.0]), 0.03), [-0.06, 0.0, 3.0])

    def test_wrong_input_dim_rejected(self):
        net = Mlp.build([3, 2], np.random.default_rng(2))
        with self.assertRaises(ValidationError):
            net(np.zeros((4, 2)))

    def test_layer_shapes_must_chain(self):
        with self.assertRaises(ValidationError):
            Mlp([Layer(np.zeros((3, 2)), np.zeros(3)), Layer(np.zeros((2, 4)), np.zeros(2))])

    def test_init_range(self):
        net = Mlp.build([10, 30], np.random.default_rng(3))
        limit = np.sqrt(6.0 / 40)
        self.assertLessEqual(np.abs(net.layers[0].weights).max(), limit)
        np.testing.assert_array_equal(net.layers[0].bias, 0.0)


class TestBackward(unittest.TestCase):
    def test_linear_sum_loss(self):
        rng = np.random.default_rng(4)
        net = Mlp.build([3, 2], rng)
        X = rng.normal(size=(3, 6))
        _, cache = forward(net, X)
        grads, grad_in = backward(net, cache, np.ones((2, 6)))
        np.testing.assert_allclose(grads[0], np.ones((2, 6)) @ X.T)
        np.testing.assert_allclose(grads[1], [6.0, 6.0])
        np.testing.assert_allclose(grad_in, net.layers[0].weights.T @ np.ones((2, 6)))

    def test_finite_differences_on_parameters_and_input(self):
        rng = np.random.default_rng(5)
        net = Mlp.build([3, 6, 4, 2], rng)
        X = rng.normal(size=(3, 5))
        target = rng.normal(size=(2, 5))

        def loss():
            out, cache = forward(net, X)
            r = out - target
            grads, _ = backward(net, cache, 2.0 * r)
            return float(np.sum(r * r)), grads

        report = gradcheck(loss, net.params(), np.random.default_rng(6))
        self.assertTrue(report.passed(1e-4), report)

        out, cache = forward(net, X)
        _, grad_in = backward(net, cache, 2.0 * (out - target))
        h = 1e-6
        for i, j in [(0, 0), (2, 4), (1, 2)]:
            Xp, Xm = X.copy(), X.copy()
            Xp[i, j] += h
            Xm[i, j] -= h
            numeric = (np.sum((net(Xp) - target) ** 2) - np.sum((net(Xm) - target) ** 2)) / (2 * h)
            self.assertAlmostEqual(grad_in[i, j], numeric, places=5)

    def test_foreign_cache_rejected(self):
        rng = np.random.default_rng(7)
        a = Mlp.build([2, 3], rng)
        b = Mlp.build([2, 3], rng)
        _, cache = forward(a, np.zeros((2, 1)))
        with self.assertRaises(ValidationError):
            backward(b, cache, np.zeros((3, 1)))

    def test_grad_shape_mismatch_rejected(self):
        net = Mlp.build([2, 3], np.random.default_rng(8))
        _, cache = forward(net, np.zeros((2, 4)))
        with self.assertRaises(ValidationError):
            backward(net, cache, np.zeros((3, 5)))


class TestAdam(unittest.TestCase):
    def test_zero_gradient_leaves_parameters(self):
        p = [np.array([1.0, -2.0])]
        state = AdamState(lr=0.1)
        for _ in range(5):
            adam_step(p, [np.zeros(2)], state)
        np.testing.assert_array_equal(p[0], [1.0, -2.0])

    def test_constant_gradient_moves_by_lr(self):
        p = [np.array([0.0])]
        state = AdamState(lr=0.01)
        adam_step(p, [np.array([3.0])], state)
        np.testing.assert_allclose(p[0], [-0.01], rtol=1e-6)
        self.assertEqual(state.step, 1)

    def test_quadratic_converges(self):
        theta = [np.array([0.0])]
        state = AdamState(lr=0.1)
        for _ in range(2000):
            adam_step(theta, [2.0 * (theta[0] - 3.0)], state)
        self.assertLess(abs(theta[0][0] - 3.0), 1e-2)

    def test_nonfinite_gradient_rejected_without_update(self):
        p = [np.array([1.0])]
        state = AdamState(lr=0.1)
        adam_step(p, [np.array([1.0])], state)
        before = (p[0].copy(), state.m[0].copy(), state.step)
        with self.assertRaises(NonFiniteError):
            adam_step(p, [np.array([np.nan])], state)
        np.testing.assert_array_equal(p[0], before[0])
        np.testing.assert_array_equal(state.m[0], before[1])
        self.assertEqual(state.step, before[2])

    def test_invalid_hyperparameters_rejected(self):
        with self.assertRaises(ValidationError):
            AdamState(lr=0.0)
        with self.assertRaises(ValidationError):
            AdamState(beta1=1.0)


class TestNoise(unittest.TestCase):
    def test_zero_sigma_is_identity(self):
        X = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(inject_noise(X, 0.0, np.random.default_rng(0)), X)

    def test_noise_moments(self):
        X = np.zeros((4, 20000))
        noisy = inject_noise(X, 0.5, np.random.default_rng(1))
        self.assertAlmostEqual(noisy.mean(), 0.0, delta=0.01)
        self.assertAlmostEqual(noisy.std(), 0.5, delta=0.01)

    def test_seeded(self):
        X = np.ones((2, 3))
        np.testing.assert_array_equal(
            inject_noise(X, 0.5, np.random.default_rng(9)),
            inject_noise(X, 0.5, np.random.default_rng(9)),
        )

    def test_negative_sigma_rejected(self):
        with self.assertRaises(ValidationError):
            inject_noise(np.zeros((1, 1)), -0.1, np.random.default_rng(0))


class TestGradcheck(unittest.TestCase):
    def test_quadratic_passes(self):
        theta = np.array([1.0, -2.0, 0.5])

        def loss():
            return float(np.sum(theta ** 2)), [2.0 * theta]

        report = gradcheck(loss, [theta], np.random.default_rng(0))
        self.assertLess(report.max_rel_error, 1e-8)
        self.assertEqual(report.checked, 3)
        np.testing.assert_array_equal(theta, [1.0, -2.0, 0.5])

    def test_wrong_gradient_detected(self):
        theta = np.array([1.0, 2.0])

        def loss():
            return float(np.sum(theta ** 2)), [3.0 * theta]

        self.assertFalse(gradcheck(loss, [theta], np.random.default_rng(0)).passed(1e-4))

    def test_zero_gradient_within_rounding_passes(self):
        theta = np.array([0.3, -0.7])

        def loss():
            return 5.0 + 1e-12 * float(np.sum(theta)), [np.zeros(2)]

        report = gradcheck(loss, [theta], np.random.default_rng(0))
        self.assertEqual(report.max_rel_error, 0.0)

    def test_kink_inside_stencil_is_remeasured(self):
        theta = np.array([3e-6, -2e-6, 0.5])

        def loss():
            active = theta > 0
            return float(np.sum(leaky_relu(theta, 0.2))), [np.where(active, 1.0, 0.2)]

        report = gradcheck(loss, [theta], np.random.default_rng(0))
        self.assertLess(report.max_rel_error, 1e-6)

    def test_kink_does_not_hide_a_wrong_gradient(self):
        theta = np.array([3e-6])

        def loss():
            return float(np.sum(leaky_relu(theta, 0.2))), [np.array([0.6])]

        self.assertFalse(gradcheck(loss, [theta], np.random.default_rng(0)).passed(1e-4))


class TestEncoderStack(unittest.TestCase):
    def test_build_topology(self):
        stack = EncoderStack.build(
            5, 7, np.random.default_rng(0), latent_dim=4, private_dim=3, hidden=(8, 6),
            use_autoencoder=True, use_private=True,
        )
        params = stack.parameters()
        self.assertEqual(len(params), 6)
        self.assertEqual(stack.encoder_x.sizes(), [5, 8, 6, 4])
        self.assertEqual(stack.decoder_x.sizes(), [7, 6, 8, 5])
        self.assertEqual(stack.private_y.sizes(), [7, 8, 6, 3])
        self.assertEqual((stack.latent_dim, stack.private_dim), (4, 3))

    def test_plain_stack_has_only_encoders(self):
        stack = EncoderStack.build(3, 3, np.random.default_rng(1), latent_dim=2, hidden=(4,))
        self.assertEqual(sorted(stack.parameters()), [ENCODER_X, "encoder_y"])
        self.assertEqual(stack.private_dim, 0)

    def test_missing_decoder_rejected(self):
        rng = np.random.default_rng(2)
        with self.assertRaises(ValidationError):
            EncoderStack(Mlp.build([3, 2], rng), Mlp.build([3, 2], rng), use_autoencoder=True)

    def test_encode_shapes(self):
        stack = EncoderStack.build(3, 5, np.random.default_rng(3), latent_dim=2, hidden=(4,))
        zx, zy = stack.encode(np.zeros((3, 6)), np.zeros((5, 8)))
        self.assertEqual((zx.shape, zy.shape), ((2, 6), (2, 8)))

    def test_flatten_groups_sorted_by_name(self):
        groups = {PRIVATE_Y: [np.zeros(1)], DECODER_X: [np.ones(1)], ENCODER_X: [np.full(1, 2.0)]}
        flat = flatten_groups(groups)
        np.testing.assert_array_equal(np.concatenate(flat), [1.0, 2.0, 0.0])


if __name__ == "__main__":
    unittest.main()
