import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from yoloret import kernels
from yoloret.kernels import ConvParams
from yoloret.tensor import Tensor
from yoloret.tests import oracles


def _random_conv_case(rng):
    kind = rng.choice(["dense", "depthwise", "grouped"])
    k = int(rng.choice([1, 3, 5]))
    stride = int(rng.choice([1, 2]))
    padding = k // 2 if rng.uniform() < 0.7 else 0
    n = int(rng.integers(1, 3))
    h = int(rng.integers(k, 10))
    w = int(rng.integers(k, 10))
    if kind == "dense":
        groups, c_in, c_out = 1, int(rng.integers(1, 5)), int(rng.integers(1, 5))
    elif kind == "depthwise":
        c_in = c_out = groups = int(rng.integers(2, 6))
    else:
        groups = 2
        c_in, c_out = 2 * int(rng.integers(1, 3)), 2 * int(rng.integers(1, 3))
    x = rng.standard_normal((n, c_in, h, w))
    weight = rng.standard_normal((c_out, c_in // groups, k, k))
    bias = rng.standard_normal(c_out) if rng.uniform() < 0.5 else None
    return x, weight, bias, stride, padding, groups


class TestConv2d(unittest.TestCase):
    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(120):
            x, weight, bias, stride, padding, groups = _random_conv_case(rng)
            params = ConvParams(
                Tensor(weight),
                None if bias is None else Tensor(bias),
                stride=stride,
                padding=padding,
                groups=groups,
            )
            out = kernels.conv2d(Tensor(x), params)
            expected = oracles.conv2d_loop(x, weight, bias, stride, padding, groups)
            self.assertEqual(out.shape, expected.shape)
            assert_allclose(out.data, expected, rtol=1e-5, atol=1e-8)

    def test_float32_close_to_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((1, 4, 8, 8)).astype(np.float32)
        weight = rng.standard_normal((6, 4, 3, 3)).astype(np.float32)
        out = kernels.conv2d(Tensor(x), ConvParams(Tensor(weight), padding=1))
        self.assertEqual(out.dtype, np.float32)
        assert_allclose(out.data, oracles.conv2d_loop(x, weight, padding=1), rtol=1e-4, atol=1e-5)

    def test_output_size(self):
        x = Tensor(np.zeros((1, 3, 320, 320)))
        params = ConvParams(Tensor(np.zeros((8, 3, 3, 3))), stride=2, padding=1)
        self.assertEqual(kernels.conv2d(x, params).shape, (1, 8, 160, 160))

    def test_channel_mismatch(self):
        x = Tensor(np.zeros((1, 4, 5, 5)))
        params = ConvParams(Tensor(np.zeros((2, 3, 3, 3))))
        with self.assertRaisesRegex(ValueError, "c=4"):
            kernels.conv2d(x, params)

    def test_kernel_larger_than_input(self):
        x = Tensor(np.zeros((1, 1, 2, 2)))
        params = ConvParams(Tensor(np.zeros((1, 1, 5, 5))))
        with self.assertRaises(ValueError):
            kernels.conv2d(x, params)

    def test_depthwise_identity_kernel(self):
        x = np.random.default_rng(2).standard_normal((2, 3, 5, 5))
        weight = np.zeros((3, 1, 3, 3))
        weight[:, 0, 1, 1] = 1.0
        out = kernels.conv2d(Tensor(x), ConvParams(Tensor(weight), padding=1, groups=3))
        assert_array_equal(out.data, x)


class TestBatchnorm(unittest.TestCase):
    def setUp(self):
        rng = np.random.default_rng(3)
        self.x = rng.standard_normal((2, 3, 4, 4))
        self.gamma = Tensor(rng.uniform(0.5, 1.5, 3))
        self.beta = Tensor(rng.standard_normal(3))

    def test_inference_formula(self):
        mean = np.array([0.1, -0.2, 0.3])
        var = np.array([1.0, 2.0, 0.5])
        out = kernels.batchnorm(Tensor(self.x), self.gamma, self.beta, mean.copy(), var.copy())
        b = (1, 3, 1, 1)
        expected = (self.x - mean.reshape(b)) / np.sqrt(var.reshape(b) + 1e-5)
        expected = expected * self.gamma.data.reshape(b) + self.beta.data.reshape(b)
        assert_allclose(out.data, expected, rtol=1e-12, atol=1e-12)

    def test_training_updates_running_stats(self):
        mean, var = np.zeros(3), np.ones(3)
        kernels.batchnorm(Tensor(self.x), self.gamma, self.beta, mean, var, training=True, momentum=0.1)
        batch_mean = self.x.mean(axis=(0, 2, 3))
        batch_var = self.x.var(axis=(0, 2, 3), ddof=1)
        assert_allclose(mean, 0.1 * batch_mean)
        assert_allclose(var, 0.9 + 0.1 * batch_var)

    def test_training_normalizes_batch(self):
        out = kernels.batchnorm(
            Tensor(self.x), Tensor(np.ones(3)), Tensor(np.zeros(3)), np.zeros(3), np.ones(3), training=True
        )
        assert_allclose(out.data.mean(axis=(0, 2, 3)), 0, atol=1e-12)
        assert_allclose(out.data.var(axis=(0, 2, 3)), 1, atol=1e-4)

    def test_shape_mismatch(self):
        with self.assertRaises(ValueError):
            kernels.batchnorm(Tensor(self.x), Tensor(np.ones(2)), self.beta, np.zeros(3), np.ones(3))


class TestElementwise(unittest.TestCase):
    def test_activations(self):
        x = Tensor(np.array([-2.0, 0.0, 3.0, 7.0]))
        assert_array_equal(kernels.activation(x, "relu6").data, [0, 0, 3, 6])
        assert_allclose(kernels.activation(x, "sigmoid").data, 1 / (1 + np.exp(-x.data)))
        assert_allclose(kernels.activation(x, "swish").data, x.data / (1 + np.exp(-x.data)))
        with self.assertRaises(ValueError):
            kernels.activation(x, "tanh")

    def test_resize_matches_oracles(self):
        rng = np.random.default_rng(4)
        for factor in (1, 2, 4):
            x = rng.standard_normal((2, 3, 8, 8))
            down = kernels.resize(Tensor(x), factor, "down")
            assert_allclose(down.data, oracles.avg_pool_loop(x, factor), rtol=1e-12, atol=1e-12)
            up = kernels.resize(Tensor(x), factor, "up")
            assert_array_equal(up.data, oracles.upsample_loop(x, factor))

    def test_resize_errors(self):
        x = Tensor(np.zeros((1, 1, 6, 6)))
        with self.assertRaises(ValueError):
            kernels.resize(x, 3, "up")
        with self.assertRaises(ValueError):
            kernels.resize(x, 4, "down")
        with self.assertRaises(ValueError):
            kernels.resize(x, 2, "sideways")

    def test_resize_to(self):
        x = Tensor(np.ones((1, 2, 4, 4)))
        self.assertEqual(kernels.resize_to(x, 16, 8).shape, (1, 2, 8, 8))
        self.assertEqual(kernels.resize_to(x, 16, 32).shape, (1, 2, 2, 2))
        self.assertEqual(kernels.resize_to(x, 16, 16).shape, (1, 2, 4, 4))

    def test_global_avg_pool(self):
        x = np.random.default_rng(5).standard_normal((2, 3, 4, 5))
        out = kernels.global_avg_pool(Tensor(x))
        self.assertEqual(out.shape, (2, 3, 1, 1))
        assert_allclose(out.data[..., 0, 0], x.mean(axis=(2, 3)))

    def test_fusion_coefficients(self):
        w = np.array([1.0, -2.0, 3.0])
        coef = kernels.fusion_coefficients(w, 1e-4)
        self.assertEqual(coef[1], 0.0)
        self.assertAlmostEqual(coef.sum(), 4.0 / (4.0 + 1e-4))

    def test_fusion_all_zero_with_zero_eps(self):
        inputs = [Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 2, 2)))]
        with self.assertRaises(ValueError):
            kernels.weighted_fusion(inputs, Tensor(np.zeros(2)), eps=0.0)

    def test_weighted_fusion_value(self):
        a, b = np.full((1, 1, 2, 2), 2.0), np.full((1, 1, 2, 2), 4.0)
        out = kernels.weighted_fusion([Tensor(a), Tensor(b)], Tensor(np.array([1.0, 1.0])), eps=0.0)
        assert_allclose(out.data, 3.0)

    def test_weighted_fusion_ignores_weight_scale(self):
        rng = np.random.default_rng(3)
        inputs = [Tensor(rng.standard_normal((2, 3, 4, 4))) for _ in range(3)]
        w = np.array([0.2, 0.5, 0.3])
        base = kernels.weighted_fusion(inputs, Tensor(w), eps=0.0).data
        for scale in (1e-3, 0.7, 4.0, 250.0):
            out = kernels.weighted_fusion(inputs, Tensor(scale * w), eps=0.0).data
            assert_allclose(out, base, rtol=1e-6, atol=1e-12)

    def test_concat_and_add(self):
        a, b = np.ones((1, 2, 3, 3)), np.zeros((1, 1, 3, 3))
        self.assertEqual(kernels.concat_channels([Tensor(a), Tensor(b)]).shape, (1, 3, 3, 3))
        with self.assertRaises(ValueError):
            kernels.eltwise_add([Tensor(a), Tensor(b)])
        assert_array_equal(kernels.eltwise_add([Tensor(a), Tensor(a)]).data, 2 * a)


if __name__ == "__main__":
    unittest.main()
