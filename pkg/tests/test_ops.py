"""Convolution family: identity cases, table shapes, adjointness, errors."""
import numpy as np
import pytest

from stereonvs import ops
from stereonvs.tensor import Tensor


class TestConv2d:
    def test_identity_1x1_kernel(self, rng):
        x = Tensor(rng.normal(size=(1, 3, 5, 5)))
        w = Tensor(np.eye(3).reshape(3, 3, 1, 1))
        out = ops.conv2d(x, w, None)
        assert np.allclose(out.data, x.data)

    def test_ones_kernel_on_constant_image(self):
        # hand computation: each interior output sums nine copies of v
        v = 0.37
        x = Tensor(np.full((1, 1, 6, 6), v))
        w = Tensor(np.ones((1, 1, 3, 3)))
        out = ops.conv2d(x, w, None, stride=1, padding=1)
        assert np.allclose(out.data[0, 0, 1:-1, 1:-1], 9 * v, atol=1e-6)
        # border positions see fewer taps
        assert np.allclose(out.data[0, 0, 0, 1:-1], 6 * v, atol=1e-6)

    def test_stride2_halves_64(self, rng):
        x = Tensor(rng.normal(size=(1, 3, 64, 64)))
        w = Tensor(rng.normal(size=(32, 3, 5, 5)))
        out = ops.conv2d(x, w, None, stride=2, padding=2)
        assert out.shape == (1, 32, 32, 32)

    def test_bias_broadcast(self, rng):
        x = Tensor(np.zeros((1, 2, 4, 4)))
        w = Tensor(np.zeros((3, 2, 3, 3)))
        b = Tensor(np.array([1.0, 2.0, 3.0]))
        out = ops.conv2d(x, w, b, padding=1)
        for c in range(3):
            assert np.allclose(out.data[0, c], b.data[c])

    def test_channel_mismatch_raises(self, rng):
        x = Tensor(rng.normal(size=(1, 2, 4, 4)))
        w = Tensor(rng.normal(size=(3, 4, 3, 3)))
        with pytest.raises(ValueError, match="channels"):
            ops.conv2d(x, w, None)

    def test_empty_output_raises(self, rng):
        x = Tensor(rng.normal(size=(1, 1, 2, 2)))
        w = Tensor(rng.normal(size=(1, 1, 5, 5)))
        with pytest.raises(ValueError, match="no output position"):
            ops.conv2d(x, w, None)

    def test_deterministic(self, rng):
        x = Tensor(rng.normal(size=(1, 3, 8, 8)).astype(np.float32))
        w = Tensor(rng.normal(size=(4, 3, 3, 3)).astype(np.float32))
        a = ops.conv2d(x, w, None, padding=1).data
        b = ops.conv2d(x, w, None, padding=1).data
        assert np.array_equal(a, b)


class TestConv3d:
    def test_identity_1x1x1(self, rng):
        x = Tensor(rng.normal(size=(1, 2, 3, 4, 5)))
        w = Tensor(np.eye(2).reshape(2, 2, 1, 1, 1))
        out = ops.conv3d(x, w, None)
        assert np.allclose(out.data, x.data)

    def test_stride2_halves_all_three(self, rng):
        x = Tensor(rng.normal(size=(1, 4, 8, 16, 16)))
        w = Tensor(rng.normal(size=(4, 4, 3, 3, 3)))
        out = ops.conv3d(x, w, None, stride=2, padding=1)
        assert out.shape == (1, 4, 4, 8, 8)

    def test_single_weight_grad_is_sum_of_touched_inputs(self, rng):
        # all-stride-1 valid conv with a delta kernel: d(sum out)/dw[t] is the
        # sum of the input window it multiplies, cross-checked by brute force
        x = Tensor(rng.normal(size=(1, 1, 4, 4, 4)), requires_grad=True)
        w = Tensor(np.zeros((1, 1, 3, 3, 3)), requires_grad=True)
        out = ops.conv3d(x, w, None)
        out.sum().backward()
        brute = np.zeros((3, 3, 3))
        for d in range(3):
            for i in range(3):
                for j in range(3):
                    brute[d, i, j] = x.data[0, 0, d:d + 2, i:i + 2, j:j + 2].sum()
        assert np.allclose(w.grad[0, 0], brute, atol=1e-10)


class TestConvTranspose3d:
    def test_adjoint_identity(self, rng):
        x = Tensor(rng.normal(size=(1, 2, 4, 4, 4)))
        y = Tensor(rng.normal(size=(1, 3, 2, 2, 2)))
        w = Tensor(rng.normal(size=(3, 2, 3, 3, 3)))
        cx = ops.conv3d(x, w, None, stride=2, padding=1)
        ty = ops.conv_transpose3d(y, w, None, stride=2, padding=1,
                                  output_spatial=(4, 4, 4))
        lhs = float((cx.data * y.data).sum())
        rhs = float((x.data * ty.data).sum())
        assert abs(lhs - rhs) < 1e-10

    def test_stride2_doubles(self, rng):
        x = Tensor(rng.normal(size=(1, 4, 4, 8, 8)))
        w = Tensor(rng.normal(size=(4, 2, 3, 3, 3)))
        out = ops.conv_transpose3d(x, w, None, stride=2, padding=1,
                                   output_spatial=(8, 16, 16))
        assert out.shape == (1, 2, 8, 16, 16)

    def test_zero_input_gives_bias_broadcast(self, rng):
        x = Tensor(np.zeros((1, 2, 2, 2, 2)))
        w = Tensor(rng.normal(size=(2, 3, 3, 3, 3)))
        b = Tensor(np.array([0.5, -1.0, 2.0]))
        out = ops.conv_transpose3d(x, w, b, stride=2, padding=1,
                                   output_spatial=(4, 4, 4))
        for c in range(3):
            assert np.allclose(out.data[0, c], b.data[c])

    def test_missing_output_shape_raises(self, rng):
        x = Tensor(rng.normal(size=(1, 2, 2, 2, 2)))
        w = Tensor(rng.normal(size=(2, 2, 3, 3, 3)))
        with pytest.raises(ValueError, match="output_spatial"):
            ops.conv_transpose3d(x, w, None, stride=2, padding=1)

    def test_inconsistent_output_shape_raises(self, rng):
        x = Tensor(rng.normal(size=(1, 2, 2, 2, 2)))
        w = Tensor(rng.normal(size=(2, 2, 3, 3, 3)))
        with pytest.raises(ValueError, match="inconsistent"):
            ops.conv_transpose3d(x, w, None, stride=2, padding=1,
                                 output_spatial=(9, 4, 4))


class TestPoolUpsample:
    def test_avg_pool_means(self):
        x = Tensor(np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4))
        out = ops.avg_pool2d(x)
        assert np.allclose(out.data[0, 0], [[2.5, 4.5], [10.5, 12.5]])

    def test_upsample_repeats(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
        out = ops.upsample_nearest2d(x)
        assert np.array_equal(out.data[0, 0],
                              [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])

    def test_pool_odd_extent_raises(self, rng):
        with pytest.raises(ValueError, match="divisible"):
            ops.avg_pool2d(Tensor(rng.normal(size=(1, 1, 5, 4))))
