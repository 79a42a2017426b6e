"""Autodiff engine semantics: accumulation, graph walk, movement ops."""
import numpy as np
import pytest

from stereonvs.tensor import Tensor, concat, no_grad, stack


class TestBackward:
    def test_sum_grad_is_ones(self, rng):
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        x.sum().backward()
        assert np.array_equal(x.grad, np.ones((3, 4)))

    def test_square_grad(self, rng):
        x = Tensor(rng.normal(size=(5,)), requires_grad=True)
        (x * x).sum().backward()
        assert np.allclose(x.grad, 2 * x.data)

    def test_non_scalar_backward_raises(self, rng):
        x = Tensor(rng.normal(size=(3,)), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            (x * 2).backward()

    def test_grads_accumulate_across_backward_calls(self, rng):
        x = Tensor(rng.normal(size=(4,)), requires_grad=True)
        x.sum().backward()
        x.sum().backward()
        assert np.allclose(x.grad, 2.0)

    def test_reused_node_accumulates(self, rng):
        x = Tensor(rng.normal(size=(3,)), requires_grad=True)
        y = x * 3.0
        (y + y).sum().backward()
        assert np.allclose(x.grad, 6.0)

    def test_zero_grad_resets(self, rng):
        x = Tensor(rng.normal(size=(3,)), requires_grad=True)
        x.sum().backward()
        x.zero_grad()
        assert x.grad is None

    def test_no_grad_blocks_graph(self, rng):
        x = Tensor(rng.normal(size=(3,)), requires_grad=True)
        with no_grad():
            y = (x * x).sum()
        assert not y.requires_grad
        assert y._backward is None

    def test_broadcast_unreduces(self, rng):
        x = Tensor(rng.normal(size=(3, 1)), requires_grad=True)
        b = Tensor(rng.normal(size=(1, 4)), requires_grad=True)
        (x + b).sum().backward()
        assert x.grad.shape == (3, 1)
        assert np.allclose(x.grad, 4.0)
        assert np.allclose(b.grad, 3.0)

    def test_deep_chain_iterative_walk(self):
        # must not hit the recursion limit
        x = Tensor(np.ones(2), requires_grad=True)
        y = x
        for _ in range(3000):
            y = y + 1.0
        y.sum().backward()
        assert np.allclose(x.grad, 1.0)


class TestDtype:
    def test_float64_preserved(self):
        x = Tensor(np.zeros(3, dtype=np.float64))
        assert x.dtype == np.float64

    def test_int_input_becomes_float32(self):
        assert Tensor([1, 2, 3]).dtype == np.float32

    def test_op_keeps_float32(self, rng):
        x = Tensor(rng.normal(size=(3,)).astype(np.float32))
        assert (x * 2.5 + 1).dtype == np.float32


class TestMovement:
    def test_concat_roundtrip_grads(self, rng):
        a = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        out = concat([a, b], axis=0)
        assert out.shape == (6, 3)
        (out * 2.0).sum().backward()
        assert np.allclose(a.grad, 2.0) and np.allclose(b.grad, 2.0)

    def test_stack_new_axis(self, rng):
        a = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
        b = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
        out = stack([a, b], axis=1)
        assert out.shape == (2, 2, 2)
        out.sum().backward()
        assert np.allclose(a.grad, 1.0)

    def test_pad_then_slice_identity(self, rng):
        a = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        padded = a.pad(((1, 1), (2, 0)))
        assert padded.shape == (4, 5)
        assert np.array_equal(padded.data[1:-1, 2:], a.data)
        padded.sum().backward()
        assert np.allclose(a.grad, 1.0)

    def test_getitem_scatters_grad(self, rng):
        a = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
        a[1:3, :2].sum().backward()
        expected = np.zeros((4, 4))
        expected[1:3, :2] = 1.0
        assert np.array_equal(a.grad, expected)

    def test_mean_axis_tuple(self, rng):
        a = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
        m = a.mean(axis=(0, 2), keepdims=True)
        assert m.shape == (1, 3, 1)
        m.sum().backward()
        assert np.allclose(a.grad, 1.0 / 8)


class TestElementwise:
    def test_clamp_grad_mask(self):
        x = Tensor(np.array([-1.0, 0.5, 2.0]), requires_grad=True)
        x.clamp(0.0, 1.0).sum().backward()
        assert np.array_equal(x.grad, [0.0, 1.0, 0.0])

    def test_relu_subgradient_zero_at_negative(self):
        x = Tensor(np.array([-2.0, 3.0]), requires_grad=True)
        x.relu().sum().backward()
        assert np.array_equal(x.grad, [0.0, 1.0])

    def test_abs_sign(self):
        x = Tensor(np.array([-2.0, 3.0]), requires_grad=True)
        x.abs().sum().backward()
        assert np.array_equal(x.grad, [-1.0, 1.0])

    def test_exp_log_roundtrip(self, rng):
        x = Tensor(rng.uniform(0.5, 2.0, size=(4,)), requires_grad=True)
        y = x.exp().log()
        assert np.allclose(y.data, x.data)
