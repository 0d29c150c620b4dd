import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from svsep.dataset import TrainingSample
from svsep.errors import InvalidInputError, NumericError, ShapeError
from svsep.model import Adam, TrainConfig, UNetConfig, checkpoint, init_params, train, unet
from svsep.model import layers as L

from _oracles import finite_difference_check

TINY = UNetConfig(depth=2, base_channels=4, input_shape=(2, 16, 16))
MICRO = UNetConfig(depth=1, base_channels=2, input_shape=(2, 4, 4))


def grids(seed, shape=(2, 16, 16)):
    rng = np.random.default_rng(seed)
    return rng.random(shape), rng.random(shape)


class TestConfig:
    def test_channel_ladder(self):
        cfg = UNetConfig()
        assert cfg.encoder_channels == [16, 32, 64, 128, 256]
        assert cfg.decoder_io()[0] == (256, 128) and cfg.decoder_io()[-1] == (32, 16)

    @pytest.mark.parametrize("kwargs", [{"depth": 0}, {"input_shape": (2, 12, 16), "depth": 3}])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            UNetConfig(**kwargs)


class TestForward:
    def test_shape_and_mask_range(self):
        p = init_params(TINY, 0)
        x, _ = grids(0)
        mask, est = unet.forward(p, 100 * x)
        assert mask.shape == est.shape == x.shape
        assert mask.min() >= 0 and mask.max() <= 1
        assert np.all(est <= 100 * x)

    def test_batched(self):
        p = init_params(TINY, 0)
        x = np.stack(grids(1))
        assert unet.forward(p, x)[1].shape == x.shape

    def test_zero_mixture(self):
        p = init_params(TINY, 3)
        assert not np.any(unet.forward(p, np.zeros((2, 16, 16)))[1])

    def test_deterministic(self):
        x, _ = grids(2)
        a = unet.forward(init_params(TINY, 5), x)[1]
        b = unet.forward(init_params(TINY, 5), x)[1]
        assert a.tobytes() == b.tobytes()

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            unet.forward(init_params(TINY, 0), np.zeros((2, 16, 8)))

    def test_negative_input(self):
        with pytest.raises(InvalidInputError):
            unet.forward(init_params(TINY, 0), -np.ones((2, 16, 16)))

    @settings(max_examples=10, deadline=None)
    @given(depth=st.integers(1, 3), scale=st.floats(1e-3, 1e3), seed=st.integers(0, 1000))
    def test_mask_range_any_input(self, depth, scale, seed):
        cfg = UNetConfig(depth=depth, base_channels=2, input_shape=(2, 8, 16))
        x = scale * np.random.default_rng(seed).random((2, 8, 16))
        mask, _ = unet.forward(init_params(cfg, seed), x, training=True, rng=np.random.default_rng(seed))
        assert mask.shape == x.shape and mask.min() >= 0 and mask.max() <= 1

    def test_batch_of_one_is_instance_norm(self):
        x = np.random.default_rng(0).standard_normal((1, 3, 5, 6))
        y, *_ = L.batchnorm(x, np.ones(3), np.zeros(3), eps=0.0)
        per_channel = (x - x.mean(axis=(2, 3), keepdims=True)) / x.std(axis=(2, 3), keepdims=True)
        np.testing.assert_allclose(y, per_channel, atol=1e-12)


class TestLoss:
    def test_equal(self):
        x, _ = grids(0)
        assert unet.l1_masked_loss(x, x) == 0.0

    def test_constant_offset(self):
        x, _ = grids(0)
        assert unet.l1_masked_loss(x + 0.5, x) == pytest.approx(0.5, abs=1e-15)

    def test_oracle(self):
        a, b = grids(1)
        total = 0.0
        for idx in np.ndindex(a.shape):
            total += abs(a[idx] - b[idx])
        assert unet.l1_masked_loss(a, b) == pytest.approx(total / a.size, abs=1e-12)

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            unet.l1_masked_loss(np.zeros(3), np.zeros(4))


class TestLayers:
    def test_conv_matches_direct_sum(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((1, 2, 8, 8))
        w = rng.standard_normal((3, 2, 5, 5))
        y, _ = L.conv2d(x, w, 2)
        xp = np.pad(x, ((0, 0), (0, 0), (2, 2), (2, 2)))
        ref = np.zeros((1, 3, 4, 4))
        for o in range(3):
            for i in range(4):
                for j in range(4):
                    ref[0, o, i, j] = np.sum(xp[0, :, 2 * i:2 * i + 5, 2 * j:2 * j + 5] * w[o])
        np.testing.assert_allclose(y, ref, atol=1e-12)

    def test_transpose_is_adjoint(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((1, 2, 8, 8))
        u = rng.standard_normal((1, 3, 4, 4))
        w = rng.standard_normal((3, 2, 5, 5))
        y, _ = L.conv2d(x, w, 2)
        # conv_transpose2d takes (in, out, k, k); the adjoint of w maps 3 -> 2 channels
        z, _ = L.conv_transpose2d(u, w, 2)
        assert np.sum(y * u) == pytest.approx(np.sum(x * z), rel=1e-12)


class TestBackward:
    def test_finite_differences(self):
        p = init_params(TINY, 0)
        x, y = grids(4)
        worst, checked, skipped = finite_difference_check(p, x, y, per_tensor=40)
        assert checked >= 200
        assert worst < 1e-3

    def test_zero_mixture_zero_gradient(self):
        p = init_params(TINY, 0)
        _, y = grids(5)
        g = unet.backward(p, np.zeros((2, 16, 16)), y, np.random.default_rng(0))
        assert not np.any(g)

    def test_subgradient_zero_at_exact_match(self):
        p = init_params(MICRO, 0)
        x = np.random.default_rng(6).random((2, 4, 4))
        target = unet.forward(p, x, training=True, rng=np.random.default_rng(0))[1]
        g = unet.backward(p, x, target, np.random.default_rng(0))
        assert not np.any(g)

    def test_gradient_keys_and_order(self):
        p = init_params(TINY, 0)
        x, y = grids(7)
        _, grads, stats = unet.loss_and_grads(p, x, y, np.random.default_rng(0))
        assert list(grads) == list(p.weights)
        assert all(grads[k].shape == p.weights[k].shape for k in grads)
        assert set(stats) == {"enc0", "enc1", "dec0", "dec1"}


class TestAdam:
    def test_single_step_oracle(self):
        g = np.array([0.3, -2.0, 0.0, 1e-9])
        theta = {"w": np.array([1.0, 1.0, 1.0, 1.0])}
        Adam(lr=0.1).step(theta, {"w": g})
        # after one step m_hat = g and v_hat = g^2
        expected = 1.0 - 0.1 * g / (np.abs(g) + 1e-8)
        np.testing.assert_allclose(theta["w"], expected, rtol=1e-15)

    def test_two_steps_oracle(self):
        b1, b2, eps, lr = 0.9, 0.999, 1e-8, 1e-3
        g1, g2 = np.array([1.0, -0.5]), np.array([0.2, 0.7])
        theta = {"w": np.zeros(2)}
        opt = Adam(lr, b1, b2, eps)
        opt.step(theta, {"w": g1})
        opt.step(theta, {"w": g2})
        m = b1 * (1 - b1) * g1 + (1 - b1) * g2
        v = b2 * (1 - b2) * g1 ** 2 + (1 - b2) * g2 ** 2
        step1 = lr * g1 / (np.abs(g1) + eps)
        step2 = lr * (m / (1 - b1 ** 2)) / (np.sqrt(v / (1 - b2 ** 2)) + eps)
        np.testing.assert_allclose(theta["w"], -step1 - step2, rtol=1e-13)


def micro_samples(n, seed, target_fn):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        x = rng.random((2, 4, 4))
        out.append(TrainingSample(x, {"vocals": target_fn(x)}))
    return out


class TestTrain:
    def test_exact_update_count(self):
        data = micro_samples(4, 0, lambda x: 0.5 * x)
        cfg = TrainConfig(epochs=1, steps_per_epoch=800, learning_rate=1e-3)
        res = train(data, data, ["vocals"], cfg, MICRO)["vocals"]
        assert res.updates == 800 and res.epochs_run == 1
        assert len(res.history["val"]) == 2

    def test_patience_zero_stops_on_worse_validation(self):
        # training pushes the mask up, validation wants it at zero
        train_data = micro_samples(4, 1, lambda x: x)
        val_data = micro_samples(2, 2, np.zeros_like)
        cfg = TrainConfig(epochs=5, steps_per_epoch=20, learning_rate=1e-2, patience=0)
        res = train(train_data, val_data, ["vocals"], cfg, MICRO)["vocals"]
        assert res.history["val"][1] > res.history["val"][0]
        assert res.epochs_run == 1 and res.best_epoch == 0
        assert len(res.history["val"]) == 2

    def test_learns_and_is_deterministic(self, tmp_path):
        data = micro_samples(8, 3, lambda x: 0.2 * x)
        cfg = TrainConfig(epochs=2, steps_per_epoch=100, learning_rate=1e-2, seed=9)
        a = train(data, data[:3], ["vocals"], cfg, MICRO, checkpoint_dir=tmp_path / "a")["vocals"]
        train(data, data[:3], ["vocals"], cfg, MICRO, checkpoint_dir=tmp_path / "b")["vocals"]
        assert a.history["val"][-1] < a.history["val"][0]
        for name in ("epoch_0001.ckpt", "epoch_0002.ckpt", "best.ckpt"):
            assert (tmp_path / "a/vocals" / name).read_bytes() == (tmp_path / "b/vocals" / name).read_bytes()

    def test_sources_are_independent(self):
        rng = np.random.default_rng(4)
        data = []
        for _ in range(4):
            x = rng.random((2, 4, 4))
            data.append(TrainingSample(x, {"vocals": 0.3 * x, "instrumental": 0.7 * x}))
        cfg = TrainConfig(epochs=1, steps_per_epoch=10)
        both = train(data, data, ["vocals", "instrumental"], cfg, MICRO)
        alone = train(data, data, ["instrumental"], cfg, MICRO)
        assert np.array_equal(both["instrumental"].params.flat(), alone["instrumental"].params.flat())
        assert not np.array_equal(both["vocals"].params.flat(), both["instrumental"].params.flat())

    def test_empty_data(self):
        with pytest.raises(InvalidInputError):
            train([], micro_samples(1, 0, np.zeros_like), ["vocals"], TrainConfig(), MICRO)

    def test_divergence(self):
        data = [TrainingSample(np.full((2, 4, 4), np.inf), {"vocals": np.zeros((2, 4, 4))})]
        val = micro_samples(1, 0, np.zeros_like)
        with pytest.raises(NumericError):
            train(data, val, ["vocals"], TrainConfig(epochs=1, steps_per_epoch=1), MICRO)

    @pytest.mark.parametrize("kwargs", [{"learning_rate": 0}, {"steps_per_epoch": 0}, {"patience": -1}])
    def test_bad_config(self, kwargs):
        with pytest.raises(InvalidInputError):
            TrainConfig(**kwargs)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        p = init_params(TINY, 1)
        p.stats["enc0.mean"] += 0.25
        path = checkpoint.save(tmp_path / "m.ckpt", p, 3, {"val": [1.0, 0.5]}, {"source": "vocals"})
        q, header = checkpoint.load(path)
        assert q.config == p.config and header["epoch"] == 3 and header["extra"]["source"] == "vocals"
        assert list(q.weights) == list(p.weights)
        np.testing.assert_array_equal(q.flat(), p.flat().astype(np.float32))
        np.testing.assert_array_equal(q.stats["enc0.mean"], p.stats["enc0.mean"].astype(np.float32))

    def test_byte_layout(self):
        p = init_params(MICRO, 0)
        data = checkpoint.to_bytes(p)
        assert data[:8] == b"SVSEPCK1"
        n = int.from_bytes(data[8:16], "little")
        n_stats = sum(v.size for v in p.stats.values())
        assert len(data) == 16 + n + 4 * (p.size + n_stats)
        block = np.frombuffer(data[16 + n:16 + n + 4 * p.size], "<f4")
        np.testing.assert_array_equal(block, p.flat().astype(np.float32))

    def test_rejects_garbage(self):
        with pytest.raises(InvalidInputError):
            checkpoint.from_bytes(b"NOTACKPT" + bytes(8))
