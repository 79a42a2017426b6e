"""Layers, batch norm semantics, module plumbing, checkpoint container."""
import numpy as np
import pytest

from stereonvs import nn
from stereonvs.checkpoint import (CheckpointError, load_checkpoint, load_module,
                                  save_checkpoint, save_module)
from stereonvs.tensor import Tensor


@pytest.fixture
def init_rng():
    return np.random.default_rng(7)


class TestConvSpec:
    def test_output_formula(self):
        spec = nn.ConvSpec(kernel=(5, 5), stride=(2, 2), padding=(2, 2),
                           in_channels=3, out_channels=32)
        assert spec.out_spatial((64, 64)) == (32, 32)

    def test_empty_output_rejected(self):
        spec = nn.ConvSpec(kernel=(7, 7), stride=(1, 1), padding=(0, 0),
                           in_channels=1, out_channels=1)
        with pytest.raises(ValueError):
            spec.out_spatial((4, 4))

    def test_bad_channels_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            nn.ConvSpec(kernel=(3, 3), stride=(1, 1), padding=(1, 1),
                        in_channels=0, out_channels=4)


class TestBatchNorm:
    def test_constant_input_maps_to_beta(self, init_rng):
        # zero variance: epsilon keeps it finite, gamma * 0 + beta
        bn = nn.BatchNorm(2)
        bn.beta.data = np.array([0.3, -0.7], dtype=np.float32)
        x = Tensor(np.full((1, 2, 4, 4), 5.0, dtype=np.float32))
        out = bn(x)
        assert np.allclose(out.data[0, 0], 0.3, atol=1e-5)
        assert np.allclose(out.data[0, 1], -0.7, atol=1e-5)

    def test_standardized_input_passes_through(self, rng):
        x = rng.normal(size=(1, 1, 8, 8))
        x = (x - x.mean()) / x.std()
        out = nn.BatchNorm(1, dtype=np.float64)(Tensor(x[None][0].reshape(1, 1, 8, 8)))
        # epsilon shrinks the output by sqrt(var/(var+eps))
        assert np.allclose(out.data, x * (1.0 / np.sqrt(1 + 1e-5)), atol=1e-6)

    def test_eval_mode_affine_closed_form(self, rng):
        bn = nn.BatchNorm(2, dtype=np.float64)
        bn.register_buffer("running_mean", np.array([1.0, -2.0]))
        bn.register_buffer("running_var", np.array([4.0, 0.25]))
        bn.gamma.data = np.array([2.0, 3.0])
        bn.beta.data = np.array([0.5, -0.5])
        bn.eval()
        x = rng.normal(size=(1, 2, 3, 3))
        out = bn(Tensor(x))
        for c, (m, v) in enumerate([(1.0, 4.0), (-2.0, 0.25)]):
            expected = bn.gamma.data[c] * (x[0, c] - m) / np.sqrt(v + 1e-5) + bn.beta.data[c]
            assert np.allclose(out.data[0, c], expected, atol=1e-12)

    def test_training_normalizes_per_sample(self, rng):
        # two samples with different statistics each come out standardized
        bn = nn.BatchNorm(1, dtype=np.float64)
        x = np.stack([rng.normal(5.0, 2.0, (1, 6, 6)), rng.normal(-3.0, 0.5, (1, 6, 6))])
        out = bn(Tensor(x)).data
        for n in range(2):
            assert abs(out[n].mean()) < 1e-10
            assert abs(out[n].std() - 1.0) < 1e-3

    def test_running_stats_update(self, rng):
        bn = nn.BatchNorm(1, dtype=np.float64)
        x = rng.normal(2.0, 1.0, size=(1, 1, 16, 16))
        bn(Tensor(x))
        assert np.allclose(bn.running_mean, 0.9 * 0 + 0.1 * x.mean(), atol=1e-12)
        bn.eval()
        before = bn.running_mean.copy()
        bn(Tensor(x))
        assert np.array_equal(bn.running_mean, before)

    def test_channel_mismatch(self, rng):
        with pytest.raises(ValueError, match="channels"):
            nn.BatchNorm(3)(Tensor(rng.normal(size=(1, 2, 4, 4))))


class TestResidualBlock:
    @pytest.mark.parametrize("shape", [(1, 8, 6, 6), (2, 8, 10, 4)])
    def test_shape_preserved(self, init_rng, shape, rng):
        block = nn.ResidualBlock(8, init_rng)
        x = Tensor(rng.normal(size=shape).astype(np.float32))
        assert block(x).shape == shape

    def test_zero_branch_gives_identity(self, init_rng, rng):
        block = nn.ResidualBlock(4, init_rng, use_bn=False)
        block.conv2.weight.data[:] = 0
        block.conv2.bias.data[:] = 0
        x = Tensor(rng.normal(size=(1, 4, 5, 5)).astype(np.float32))
        assert np.allclose(block(x).data, x.data)


class TestModulePlumbing:
    def test_named_parameters_hierarchy(self, init_rng):
        block = nn.ResidualBlock(4, init_rng)
        names = {n for n, _ in block.named_parameters()}
        assert "conv1.weight" in names and "bn2.beta" in names

    def test_state_dict_roundtrip(self, init_rng, rng):
        a = nn.ResidualBlock(4, init_rng)
        b = nn.ResidualBlock(4, np.random.default_rng(99))
        b.load_state_dict(a.state_dict())
        x = Tensor(rng.normal(size=(1, 4, 6, 6)).astype(np.float32))
        assert np.array_equal(a(x).data, b(x).data)

    def test_load_rejects_shape_mismatch(self, init_rng):
        a = nn.ResidualBlock(4, init_rng)
        state = a.state_dict()
        state["conv1.weight"] = state["conv1.weight"][:, :2]
        with pytest.raises(ValueError, match="shape"):
            a.load_state_dict(state)

    def test_load_rejects_missing_and_extra(self, init_rng):
        a = nn.ResidualBlock(4, init_rng)
        state = a.state_dict()
        state.pop("conv1.bias")
        with pytest.raises(KeyError, match="missing"):
            a.load_state_dict(state)
        state = a.state_dict()
        state["bogus"] = np.zeros(3)
        with pytest.raises(KeyError, match="unexpected"):
            a.load_state_dict(state)


class TestCheckpointContainer:
    def test_roundtrip(self, tmp_path, rng):
        state = {"conv_0.weight": rng.normal(size=(4, 3, 5, 5)).astype(np.float32),
                 "conv_0.bias": rng.normal(size=(4,)).astype(np.float32)}
        path = tmp_path / "model.svck"
        save_checkpoint(path, "depthnet-v1", state)
        name, loaded = load_checkpoint(path)
        assert name == "depthnet-v1"
        assert set(loaded) == set(state)
        for key in state:
            assert np.array_equal(loaded[key], state[key])

    def test_magic_and_version(self, tmp_path):
        path = tmp_path / "model.svck"
        save_checkpoint(path, "m", {})
        raw = path.read_bytes()
        assert raw[:4] == b"SVCK"
        assert int.from_bytes(raw[4:8], "little") == 1

    def test_values_stored_as_float32_le(self, tmp_path):
        arr = np.array([1.5, -2.25], dtype=np.float64)
        path = tmp_path / "model.svck"
        save_checkpoint(path, "m", {"x": arr})
        raw = path.read_bytes()
        assert np.frombuffer(raw[-8:], dtype="<f4").tolist() == [1.5, -2.25]

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.svck"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_truncated_rejected(self, tmp_path, rng):
        path = tmp_path / "model.svck"
        save_checkpoint(path, "m", {"x": rng.normal(size=(8,))})
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / "nope.svck")

    def test_module_roundtrip_with_model_name(self, tmp_path, init_rng, rng):
        block = nn.ResidualBlock(4, init_rng)
        path = tmp_path / "block.svck"
        save_module(path, "test-block-v1", block)
        other = nn.ResidualBlock(4, np.random.default_rng(1))
        name = load_module(path, other, expect_name="test-block-v1")
        assert name == "test-block-v1"
        with pytest.raises(CheckpointError, match="expected"):
            load_module(path, other, expect_name="something-else")
