"""Loss values, optimizer stepping, and the epoch loop."""

import math

import numpy as np
import pytest

from batseg.data import SegSample
from batseg.errors import InvalidInputError, ShapeError
from batseg.training import EpochLog, Hyperparams, bce_loss, evaluate_model, train, train_step
from batseg.unet import UNetConfig, init_model, layer_names
from batseg.volume import MaskVolume, Shape3, Volume


def make_sample(rng, shape=(8, 8, 8), fg=0.3, sid="s"):
    image = Volume(Shape3(*shape), 1, rng.random((1, *shape)))
    mask = MaskVolume(Shape3(*shape), (rng.random(shape) < fg).astype(np.uint8))
    return SegSample(image=image, mask=mask, id=sid)


def model_8(base_filters=1, seed=1):
    return init_model(UNetConfig(Shape3(8, 8, 8), base_filters=base_filters), seed)


class TestBceLoss:
    def test_half_prediction_gives_ln2(self):
        pred = Volume(Shape3(2, 2, 2), 1, np.full((1, 2, 2, 2), 0.5))
        mask = MaskVolume(Shape3(2, 2, 2), np.zeros((2, 2, 2), dtype=np.uint8))
        loss, _ = bce_loss(pred, mask)
        assert loss == pytest.approx(math.log(2.0), rel=1e-12)

    def test_perfect_prediction_hits_clip_floor(self):
        mask_arr = np.array([[[1, 0]]], dtype=np.uint8)
        pred = Volume(Shape3(1, 1, 2), 1, mask_arr.astype(np.float64))
        mask = MaskVolume(Shape3(1, 1, 2), mask_arr)
        loss, _ = bce_loss(pred, mask)
        assert loss <= -math.log(1.0 - 1e-7) + 1e-12

    def test_single_voxel_hand_value(self):
        pred = Volume(Shape3(1, 1, 1), 1, np.array([0.9]))
        mask = MaskVolume(Shape3(1, 1, 1), np.array([[[1]]]))
        loss, _ = bce_loss(pred, mask)
        assert loss == pytest.approx(0.1053605156578263, rel=1e-12)  # -ln 0.9

    def test_loss_finite_for_extreme_predictions(self):
        pred = Volume(Shape3(1, 1, 2), 1, np.array([0.0, 1.0]))
        mask = MaskVolume(Shape3(1, 1, 2), np.array([[[1, 0]]]))
        loss, grad = bce_loss(pred, mask)
        assert math.isfinite(loss)
        assert np.all(np.isfinite(grad.data))

    def test_shape_mismatch_rejected(self):
        pred = Volume(Shape3(2, 2, 2), 1, np.full((1, 2, 2, 2), 0.5))
        mask = MaskVolume(Shape3(4, 4, 4), np.zeros((4, 4, 4), dtype=np.uint8))
        with pytest.raises(ShapeError):
            bce_loss(pred, mask)


class TestTrainStep:
    def test_overfit_smoke_50_steps(self):
        rng = np.random.default_rng(0)
        sample = make_sample(rng)
        model = model_8()
        model, initial = train_step(model, [sample], lr=1e-2)
        final = initial
        for _ in range(49):
            model, final = train_step(model, [sample], lr=1e-2)
        assert final < initial

    def test_zero_lr_leaves_parameters_bitwise_unchanged(self):
        rng = np.random.default_rng(1)
        model = model_8(seed=3)
        before = {n: model.layers[n].weights.copy() for n in layer_names(model.config)}
        before_b = {n: model.layers[n].bias.copy() for n in layer_names(model.config)}
        train_step(model, [make_sample(rng)], lr=0.0)
        for n in layer_names(model.config):
            assert np.array_equal(model.layers[n].weights, before[n])
            assert np.array_equal(model.layers[n].bias, before_b[n])

    def test_returns_pre_update_loss(self):
        rng = np.random.default_rng(2)
        sample = make_sample(rng)
        m1 = model_8(seed=5)
        m2 = model_8(seed=5)
        _, loss_zero = train_step(m1, [sample], lr=0.0)
        _, loss_big = train_step(m2, [sample], lr=1e-2)
        assert loss_zero == pytest.approx(loss_big, rel=1e-15)

    def test_empty_batch_rejected(self):
        with pytest.raises(InvalidInputError):
            train_step(model_8(), [], lr=1e-3)


class TestTrainLoop:
    def _dataset(self, rng, n=6):
        return [make_sample(rng, sid=f"s{i}") for i in range(n)]

    def test_zero_epochs_returns_unchanged_model_and_empty_log(self):
        rng = np.random.default_rng(4)
        ds = self._dataset(rng)
        model = model_8(seed=7)
        before = {n: model.layers[n].weights.copy() for n in layer_names(model.config)}
        model, logs = train(model, ds[:4], ds[4:], Hyperparams(1e-3, 2), epochs=0, seed=1)
        assert logs == []
        for n in layer_names(model.config):
            assert np.array_equal(model.layers[n].weights, before[n])

    def test_deterministic_replay(self):
        rng = np.random.default_rng(5)
        ds = self._dataset(rng)
        hp = Hyperparams(5e-3, 2)
        _, logs_a = train(model_8(seed=9), ds[:4], ds[4:], hp, epochs=3, seed=11)
        _, logs_b = train(model_8(seed=9), ds[:4], ds[4:], hp, epochs=3, seed=11)
        assert logs_a == logs_b  # bitwise-equal floats

    def test_partial_batch_kept(self):
        rng = np.random.default_rng(6)
        ds = self._dataset(rng, n=6)  # 5 train / 1 val with batch 3 -> batches 3,2
        model = model_8(seed=13)
        _, logs = train(model, ds[:5], ds[5:], Hyperparams(1e-3, 3), epochs=1, seed=2)
        assert len(logs) == 1
        assert isinstance(logs[0], EpochLog)

    def test_epoch_log_fields_and_loss_decreases_on_overfit(self):
        rng = np.random.default_rng(7)
        ds = self._dataset(rng, n=4)
        model = model_8(seed=15)
        _, logs = train(model, ds[:3], ds[3:], Hyperparams(1e-2, 2), epochs=10, seed=3)
        assert [l.epoch for l in logs] == list(range(1, 11))
        assert logs[-1].val_loss < logs[0].val_loss
        for l in logs:
            assert 0.0 <= l.train_acc <= 1.0 and 0.0 <= l.val_acc <= 1.0

    def test_zero_lr_flat_epoch_means(self):
        # epoch statistics are per-sample means, so reshuffling cannot move them
        rng = np.random.default_rng(8)
        ds = self._dataset(rng, n=7)
        model = model_8(seed=17)
        _, logs = train(model, ds[:5], ds[5:], Hyperparams(0.0, 2), epochs=3, seed=4)
        assert len({l.train_loss for l in logs}) == 1
        assert len({l.val_loss for l in logs}) == 1

    def test_empty_split_rejected(self):
        rng = np.random.default_rng(9)
        ds = self._dataset(rng, n=2)
        with pytest.raises(InvalidInputError):
            train(model_8(), [], ds, Hyperparams(1e-3, 2), epochs=1, seed=0)
        with pytest.raises(InvalidInputError):
            train(model_8(), ds, [], Hyperparams(1e-3, 2), epochs=1, seed=0)

    def test_augment_fn_is_applied_to_train_only(self):
        rng = np.random.default_rng(10)
        ds = self._dataset(rng, n=4)
        calls = []

        def spy_augment(sample, rng_):
            calls.append(sample.id)
            return sample

        train(model_8(seed=19), ds[:3], ds[3:], Hyperparams(1e-3, 2), epochs=2, seed=5,
              augment_fn=spy_augment)
        assert sorted(set(calls)) == ["s0", "s1", "s2"]
        assert len(calls) == 6  # 3 train samples x 2 epochs


class TestEvaluateModel:
    def test_matches_training_metrics_semantics(self):
        rng = np.random.default_rng(12)
        ds = [make_sample(rng, sid=f"s{i}") for i in range(2)]
        loss, acc = evaluate_model(model_8(seed=23), ds)
        assert math.isfinite(loss)
        assert 0.0 <= acc <= 1.0

    def test_hyperparams_validation(self):
        with pytest.raises(InvalidInputError):
            Hyperparams(-1e-3, 2)
        with pytest.raises(InvalidInputError):
            Hyperparams(1e-3, 0)
