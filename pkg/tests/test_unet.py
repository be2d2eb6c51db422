"""Model structure, single ops, forward contracts, and checkpointing."""

import numpy as np
import pytest

from batseg.errors import CheckpointError, InvalidConfigError, ShapeError
from batseg.unet import (
    ConvLayer,
    UNetConfig,
    UNetModel,
    concat_channels,
    conv3d_forward,
    forward_with_trace,
    init_model,
    layer_names,
    load_checkpoint,
    maxpool3d,
    relu,
    save_checkpoint,
    sigmoid,
    unet_forward,
    upsample3d,
)
from batseg.volume import Shape3, Volume


def rand_volume(rng, shape, channels=1):
    return Volume(Shape3(*shape), channels, rng.random((channels, *shape)))


class TestConfig:
    def test_divisibility_enforced(self):
        with pytest.raises(InvalidConfigError):
            UNetConfig(Shape3(10, 10, 10))

    def test_bottleneck_channels_follow_doubling_rule(self):
        cfg = UNetConfig(Shape3(8, 8, 8), base_filters=4)
        m = init_model(cfg, 0)
        assert m.layers["conv4b"].out_channels == 32  # 4 * 2**3

    def test_channel_chain(self):
        cfg = UNetConfig(Shape3(8, 8, 8), base_filters=2)
        m = init_model(cfg, 0)
        f = 2
        assert m.layers["conv1a"].weights.shape == (f, 1, 3, 3, 3)
        assert m.layers["conv4a"].weights.shape == (8 * f, 4 * f, 3, 3, 3)
        assert m.layers["conv5a"].weights.shape == (4 * f, 12 * f, 3, 3, 3)
        assert m.layers["conv7a"].weights.shape == (f, 3 * f, 3, 3, 3)
        assert m.layers["conv8"].weights.shape == (1, f, 1, 1, 1)


class TestInit:
    def test_same_seed_bitwise_identical(self):
        cfg = UNetConfig(Shape3(8, 8, 8), base_filters=2)
        a = init_model(cfg, 123)
        b = init_model(cfg, 123)
        for name in layer_names(cfg):
            assert np.array_equal(a.layers[name].weights, b.layers[name].weights)
            assert np.array_equal(a.layers[name].bias, b.layers[name].bias)

    def test_different_seeds_differ(self):
        cfg = UNetConfig(Shape3(8, 8, 8))
        a = init_model(cfg, 1)
        b = init_model(cfg, 2)
        assert not np.array_equal(a.layers["conv1a"].weights, b.layers["conv1a"].weights)

    def test_biases_zero_and_weights_fan_in_scaled(self):
        cfg = UNetConfig(Shape3(8, 8, 8), base_filters=4)
        m = init_model(cfg, 9)
        for name in layer_names(cfg):
            assert np.all(m.layers[name].bias == 0.0)
        w = m.layers["conv4b"].weights  # fan_in = 32 * 27
        expect_std = np.sqrt(2.0 / (32 * 27))
        assert np.std(w) == pytest.approx(expect_std, rel=0.1)


class TestSingleOps:
    def test_relu(self):
        v = Volume(Shape3(1, 1, 3), 1, np.array([-1.0, 0.0, 2.0]))
        assert relu(v).data.ravel().tolist() == [0.0, 0.0, 2.0]

    def test_sigmoid_symmetry(self):
        rng = np.random.default_rng(2)
        z = rng.standard_normal((1, 2, 2, 2)) * 3
        v = Volume(Shape3(2, 2, 2), 1, z)
        neg = Volume(Shape3(2, 2, 2), 1, -z)
        np.testing.assert_allclose(sigmoid(v).data + sigmoid(neg).data, 1.0, rtol=1e-12)
        zero = Volume(Shape3(1, 1, 1), 1, np.zeros((1, 1, 1, 1)))
        assert sigmoid(zero).data.ravel()[0] == 0.5

    def test_conv_volume_wrapper(self):
        rng = np.random.default_rng(3)
        v = rand_volume(rng, (4, 4, 4), channels=2)
        layer = ConvLayer(rng.standard_normal((3, 2, 3, 3, 3)), rng.standard_normal(3))
        out = conv3d_forward(v, layer)
        assert out.channels == 3 and out.shape == v.shape

    def test_maxpool_and_upsample_shapes(self):
        rng = np.random.default_rng(4)
        v = rand_volume(rng, (4, 6, 8), channels=2)
        pooled, idx = maxpool3d(v)
        assert tuple(pooled.shape) == (2, 3, 4)
        assert idx.shape == (2, 2, 3, 4)
        up = upsample3d(pooled)
        assert tuple(up.shape) == (4, 6, 8)

    def test_concat_channels(self):
        rng = np.random.default_rng(5)
        a = rand_volume(rng, (4, 4, 4), channels=2)
        b = rand_volume(rng, (4, 4, 4), channels=3)
        cat = concat_channels(a, b)
        assert cat.channels == 5
        np.testing.assert_array_equal(cat.data[:2], a.data)
        np.testing.assert_array_equal(cat.data[2:], b.data)

    def test_concat_spatial_mismatch(self):
        rng = np.random.default_rng(6)
        with pytest.raises(ShapeError):
            concat_channels(rand_volume(rng, (4, 4, 4)), rand_volume(rng, (8, 8, 8)))


class TestForward:
    def test_output_shape_and_open_interval_64x64x32(self):
        cfg = UNetConfig(Shape3(64, 64, 32), base_filters=1)
        m = init_model(cfg, 7)
        rng = np.random.default_rng(8)
        out = unet_forward(m, [rand_volume(rng, (64, 64, 32))])[0]
        assert tuple(out.shape) == (64, 64, 32) and out.channels == 1
        assert out.data.min() > 0.0 and out.data.max() < 1.0

    def test_shape_contract_8x8x8(self):
        cfg = UNetConfig(Shape3(8, 8, 8), base_filters=1)
        m = init_model(cfg, 1)
        rng = np.random.default_rng(9)
        out = unet_forward(m, [rand_volume(rng, (8, 8, 8))])[0]
        assert tuple(out.shape) == (8, 8, 8)

    def test_zero_weights_give_exactly_half(self):
        cfg = UNetConfig(Shape3(8, 8, 8), base_filters=2)
        m = init_model(cfg, 0)
        for name in layer_names(cfg):
            m.layers[name].weights[:] = 0.0
        rng = np.random.default_rng(10)
        out = unet_forward(m, [rand_volume(rng, (8, 8, 8))])[0]
        assert np.all(out.data == 0.5)

    def test_input_shape_mismatch_rejected(self):
        cfg = UNetConfig(Shape3(8, 8, 8))
        m = init_model(cfg, 0)
        with pytest.raises(ShapeError):
            forward_with_trace(m, np.zeros((1, 16, 16, 16)))

    def test_batch_forward_returns_one_output_per_input(self):
        cfg = UNetConfig(Shape3(8, 8, 8), base_filters=1)
        m = init_model(cfg, 3)
        rng = np.random.default_rng(11)
        outs = unet_forward(m, [rand_volume(rng, (8, 8, 8)) for _ in range(3)])
        assert len(outs) == 3

    def test_skip_connections_carry_signal(self):
        cfg = UNetConfig(Shape3(8, 8, 8), base_filters=2)
        m = init_model(cfg, 13)
        rng = np.random.default_rng(14)
        x = rng.random((1, 8, 8, 8))
        with_skips, _ = forward_with_trace(m, x)
        without, _ = forward_with_trace(m, x, zero_skips=True)
        assert not np.allclose(with_skips, without)


class TestCheckpoint:
    def _model(self):
        cfg = UNetConfig(Shape3(8, 8, 8), base_filters=2)
        m = init_model(cfg, 21)
        m.adam_step = 5
        for name in layer_names(cfg):
            m.adam_m[name][0][:] = 0.25
            m.adam_v[name][1][:] = 0.5
        return m

    def test_round_trip_bitwise(self):
        m = self._model()
        back = load_checkpoint(save_checkpoint(m))
        assert back.config == m.config
        assert back.adam_step == 5
        for name in layer_names(m.config):
            assert np.array_equal(back.layers[name].weights, m.layers[name].weights)
            assert np.array_equal(back.layers[name].bias, m.layers[name].bias)
            for store_a, store_b in ((m.adam_m, back.adam_m), (m.adam_v, back.adam_v)):
                assert np.array_equal(store_a[name][0], store_b[name][0])
                assert np.array_equal(store_a[name][1], store_b[name][1])

    def test_forward_identical_after_round_trip(self):
        m = self._model()
        rng = np.random.default_rng(15)
        x = rng.random((1, 8, 8, 8))
        before, _ = forward_with_trace(m, x)
        after, _ = forward_with_trace(load_checkpoint(save_checkpoint(m)), x)
        np.testing.assert_array_equal(before, after)

    def test_truncated_rejected(self):
        blob = save_checkpoint(self._model())
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(blob[: len(blob) // 2])

    def test_bad_magic_rejected(self):
        blob = save_checkpoint(self._model())
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(b"XXXX" + blob[4:])

    def test_trailing_bytes_rejected(self):
        blob = save_checkpoint(self._model())
        with pytest.raises(CheckpointError, match="trailing"):
            load_checkpoint(blob + b"\x00")
