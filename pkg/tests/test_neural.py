import numpy as np
import pytest

from stapnet import neural
from stapnet.errors import FormatError, NumericError
from stapnet.neural import BatchNorm, Conv2D, Dense, Flatten, MaxPool2, ReLU, Tanh, TrainConfig


def small_model(seed=0, dtype=np.float64, dims=(2, 6, 5)):
    rng = np.random.default_rng(seed)
    c, h, w = dims
    layers = [
        Conv2D(c, 4, rng=rng, dtype=dtype), BatchNorm(4, dtype=dtype), ReLU(),
        MaxPool2(),
        Flatten(),
        Dense(4 * (h // 2) * (w // 2), 8, rng=rng, dtype=dtype), ReLU(),
        Dense(8, 3, rng=rng, dtype=dtype, gain=3.0), Tanh(),
    ]
    return neural.CnnModel(layers, dims, dtype)


@pytest.fixture
def batch():
    rng = np.random.default_rng(7)
    return rng.random((6, 2, 6, 5)), rng.uniform(-0.8, 0.8, (6, 3))


def test_default_architecture_shapes():
    m = neural.default_architecture()
    y = neural.forward(m, np.zeros((2, 5, 26, 21)))
    assert y.shape == (2, 3)
    kinds = [type(layer).__name__ for layer in m.layers]
    assert kinds.count("Conv2D") == 3 and kinds.count("BatchNorm") == 3
    assert kinds[-1] == "Tanh"


def test_zero_head_gives_zero_output():
    m = neural.default_architecture()
    for layer in m.layers:
        if isinstance(layer, Dense):
            for p in layer.params.values():
                p[...] = 0
    np.testing.assert_array_equal(neural.forward(m, np.zeros((3, 5, 26, 21)), "train"), 0)


def test_eval_mode_is_batch_independent(batch):
    m = small_model(dtype=np.float32)
    x, _ = batch
    neural.forward(m, x, "train")
    full = neural.forward(m, x, "eval")
    one = neural.forward(m, x[2:3], "eval")
    np.testing.assert_allclose(one[0], full[2], atol=1e-6)


def test_outputs_bounded(batch):
    m = small_model()
    y = neural.forward(m, 1e3 * batch[0], "eval")
    assert np.all(np.abs(y) <= 1)


def test_shape_mismatch(batch):
    m = small_model()
    with pytest.raises(ValueError):
        neural.forward(m, np.zeros((2, 3, 6, 5)))
    with pytest.raises(ValueError):
        neural.forward(m, batch[0], "test")
    with pytest.raises(ValueError):
        neural.loss_and_gradients(m, batch[0], np.zeros((6, 2)))


def test_non_finite_names_layer(batch):
    m = small_model()
    m.layers[5].params["W"][0, 0] = np.nan
    with pytest.raises(NumericError, match="layer 5"):
        neural.loss_and_gradients(m, batch[0], batch[1])


def test_perfect_labels_give_zero_loss_and_gradients(batch):
    m = small_model()
    y = neural.forward(m, batch[0], "train")
    loss, grads = neural.loss_and_gradients(m, batch[0], y)
    assert loss == 0
    for g in grads.values():
        assert np.all(g == 0)


def test_duplicated_batch_same_gradients(batch):
    m = small_model()
    x, y = batch
    _, g1 = neural.loss_and_gradients(m, x, y)
    g1 = {k: v.copy() for k, v in g1.items()}
    _, g2 = neural.loss_and_gradients(m, np.concatenate([x, x]), np.concatenate([y, y]))
    for k in g1:
        np.testing.assert_allclose(g2[k], g1[k], rtol=1e-9, atol=1e-14)


def test_layerwise_gradients_default_architecture():
    m = neural.default_architecture(seed=3)
    x = np.random.default_rng(0).random((4, 5, 26, 21))
    res = neural.layerwise_gradient_check(m, x)
    assert len({k[0] for k in res}) == len(m.layers)
    for key, (err, checked, _) in res.items():
        assert checked >= 3, key
        assert err < 1e-4, key


def test_end_to_end_gradients_small_model(batch):
    res = neural.finite_difference_check(small_model(), *batch, samples=10)
    for key, (err, checked, _) in res.items():
        assert checked >= 3, key
        assert err < 1e-4, key


def test_adam_zero_gradient_keeps_parameters(batch):
    m = small_model()
    before = [p.copy() for _, _, p in m.named_params()]
    grads = {k: np.zeros_like(p) for k, _, p in m.named_params()}
    neural.adam_step(m, grads, TrainConfig())
    for b, (_, _, p) in zip(before, m.named_params()):
        np.testing.assert_array_equal(b, p)


def test_adam_first_step_is_learning_rate(batch):
    m = small_model()
    before = {k: p.copy() for k, _, p in m.named_params()}
    rng = np.random.default_rng(1)
    grads = {k: rng.standard_normal(p.shape) for k, _, p in m.named_params()}
    neural.adam_step(m, grads, TrainConfig(learning_rate=1e-3), step_index=1)
    for k, _, p in m.named_params():
        np.testing.assert_allclose(before[k] - p, 1e-3 * np.sign(grads[k]), rtol=1e-4)


def test_adam_skips_frozen_layers():
    m = neural.freeze_features(small_model())
    before = m.layers[0].params["W"].copy()
    grads = {k: np.ones_like(p) for k, _, p in m.named_params()}
    for t in range(3):
        neural.adam_step(m, grads, TrainConfig())
    np.testing.assert_array_equal(m.layers[0].params["W"], before)
    assert not np.array_equal(m.layers[5].params["W"], 0)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


def test_zero_epochs_leave_model_unchanged(batch):
    m = small_model()
    ref = m.copy()
    m, hist = neural.train(m, batch, TrainConfig(epochs=0))
    assert hist == []
    for (_, _, a), (_, _, b) in zip(m.named_params(), ref.named_params()):
        np.testing.assert_array_equal(a, b)


def test_training_is_deterministic(batch):
    cfg = TrainConfig(epochs=5, batch_size=4, rng_seed=3)
    a, ha = neural.train(small_model(dtype=np.float32), batch, cfg)
    b, hb = neural.train(small_model(dtype=np.float32), batch, cfg)
    assert ha == hb
    for (_, _, p), (_, _, q) in zip(a.named_params(), b.named_params()):
        np.testing.assert_array_equal(p, q)


def test_memorizes_eight_examples():
    rng = np.random.default_rng(5)
    x = rng.random((8, 5, 26, 21)).astype(np.float32)
    y = rng.uniform(-0.8, 0.8, (8, 3))
    m, hist = neural.train(neural.default_architecture(seed=2), (x, y), TrainConfig(epochs=500, learning_rate=1e-4))
    assert hist[-1] < 1e-3
    assert len(hist) == 500


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        neural.train(small_model(), (np.zeros((0, 2, 6, 5)), np.zeros((0, 3))), TrainConfig())


def test_finetune_freezes_features(batch):
    x, y = batch
    m, _ = neural.train(small_model(dtype=np.float32), batch, TrainConfig(epochs=3, batch_size=2))
    tuned = neural.freeze_and_finetune(m, (x, -y), TrainConfig(learning_rate=5e-4, epochs=5, batch_size=2))
    for i, layer in enumerate(m.layers):
        for name, p in layer.params.items():
            q = tuned.layers[i].params[name]
            if isinstance(layer, (Conv2D, BatchNorm)):
                np.testing.assert_array_equal(p, q)
                assert not tuned.layers[i].trainable
        if isinstance(layer, BatchNorm):
            np.testing.assert_array_equal(layer.running_mean, tuned.layers[i].running_mean)
            np.testing.assert_array_equal(layer.running_var, tuned.layers[i].running_var)
    assert not np.array_equal(m.layers[5].params["W"], tuned.layers[5].params["W"])
    # the source model is untouched
    assert all(layer.trainable for layer in m.layers)
    with pytest.raises(ValueError):
        neural.freeze_and_finetune(m, (x[:0], y[:0]))


def test_default_finetune_trains_about_half():
    m = neural.freeze_features(neural.default_architecture())
    frac = m.num_params(trainable_only=True) / m.num_params()
    assert 0.25 <= frac <= 1.0


def test_checkpoint_roundtrip(tmp_path, batch):
    m, _ = neural.train(small_model(dtype=np.float32), batch, TrainConfig(epochs=2, batch_size=3))
    m.layers[0].trainable = False
    path = tmp_path / "m.bin"
    neural.save_checkpoint(m, path)
    assert path.read_bytes()[:8] == b"STAPCNN1"
    back = neural.load_checkpoint(path)
    assert back.input_dims == m.input_dims and back.adam_step == m.adam_step
    assert [type(a) for a in back.layers] == [type(a) for a in m.layers]
    assert not back.layers[0].trainable
    for (k, _, p), (k2, _, q) in zip(m.named_params(), back.named_params()):
        assert k == k2
        np.testing.assert_array_equal(p, q)
        np.testing.assert_array_equal(m.adam_m[k], back.adam_m[k])
    np.testing.assert_array_equal(m.layers[1].running_var, back.layers[1].running_var)
    np.testing.assert_array_equal(neural.predict(m, batch[0]), neural.predict(back, batch[0]))


def test_checkpoint_errors(tmp_path, batch):
    m = small_model(dtype=np.float32)
    path = tmp_path / "m.bin"
    neural.save_checkpoint(m, path)
    data = path.read_bytes()
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"XXXXXXXX" + data[8:])
    with pytest.raises(FormatError) as e:
        neural.load_checkpoint(bad)
    assert e.value.offset == 0
    bad.write_bytes(data[:8] + (7).to_bytes(4, "little") + data[12:])
    with pytest.raises(FormatError) as e:
        neural.load_checkpoint(bad)
    assert e.value.offset == 8
    bad.write_bytes(data[:-5])
    with pytest.raises(FormatError, match="truncated"):
        neural.load_checkpoint(bad)
    bad.write_bytes(data + b"\0")
    with pytest.raises(FormatError, match="trailing"):
        neural.load_checkpoint(bad)


def _smooth_task(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.random((n, 2, 6, 5))
    w = np.random.default_rng(99).standard_normal((60, 3)) / 8
    return x, 0.8 * np.tanh(x.reshape(n, -1) @ w - 0.5 * w.sum(0))


def test_finetune_on_training_distribution_does_no_harm():
    x, y = _smooth_task(512, 1)
    xv, yv = _smooth_task(256, 2)
    m, _ = neural.train(small_model(), (x, y), TrainConfig(epochs=30, batch_size=32))
    before = np.mean((neural.predict(m, xv) - yv) ** 2)
    fx, fy = _smooth_task(64, 3)
    tuned = neural.freeze_and_finetune(m, (fx, fy))
    after = np.mean((neural.predict(tuned, xv) - yv) ** 2)
    assert after <= 1.1 * before


def test_finetune_continues_optimizer_state(batch):
    x, y = batch
    m, _ = neural.train(small_model(), batch, TrainConfig(epochs=3, batch_size=2))
    tuned = neural.freeze_and_finetune(m, (x, y), TrainConfig(learning_rate=5e-4, epochs=2, batch_size=3))
    assert tuned.adam_step == m.adam_step + 4
    assert m.adam_step == 9
