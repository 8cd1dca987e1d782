from __future__ import annotations

import math
import subprocess
import sys

import numpy as np
import orjson
import pytest

from livescope.classifier import (
    BaselineModel,
    ConfigError,
    LiveVodModel,
    ModelFormatError,
    Prediction,
    TrainConfig,
    autocorr_peak_lags,
    backward,
    bce_loss,
    check_gradients,
    confusion_matrix,
    forward,
    forward_logits,
    init_params,
    load_model,
    predict_proba,
    rate_series,
    save_model,
    train,
    zero_params,
)
from livescope.classifier.lstm import HIDDEN
from livescope.forest import NotFittedError, RandomForest
from livescope.packets import StreamKind


def sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


def scalar_forward(x, params):
    """Plain-Python LSTM + MLP, one unit at a time."""
    W, b = params.lstm.W, params.lstm.b
    h = [0.0] * HIDDEN
    c = [0.0] * HIDDEN
    for xt in x:
        new_h, new_c = [], []
        for j in range(HIDDEN):
            z = []
            for gate in range(4):
                s = b[gate, j] + W[gate, j, 0] * xt
                for k in range(HIDDEN):
                    s += W[gate, j, 1 + k] * h[k]
                z.append(s)
            i, f, o, g = sigmoid(z[0]), sigmoid(z[1]), sigmoid(z[2]), math.tanh(z[3])
            cj = f * c[j] + i * g
            new_c.append(cj)
            new_h.append(o * math.tanh(cj))
        h, c = new_h, new_c
    a = h
    n = len(params.mlp.weights)
    for layer, (w, bias) in enumerate(zip(params.mlp.weights, params.mlp.biases)):
        z = [bias[r] + sum(w[r, k] * a[k] for k in range(len(a))) for r in range(w.shape[0])]
        a = [max(v, 0.0) for v in z] if layer < n - 1 else z
    return sigmoid(a[0])


# -- forward ----------------------------------------------------------------


def test_zero_params_give_one_half():
    assert forward(np.zeros(60), zero_params()) == 0.5


def test_forward_is_pure(rng):
    params = init_params(3)
    x = rng.poisson(1.0, 60).astype(float)
    before = [a.copy() for a in params.arrays()]
    assert forward(x, params) == forward(x, params)
    assert all(np.array_equal(a, b) for a, b in zip(before, params.arrays()))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_forward_matches_scalar_reference(seed):
    rng = np.random.default_rng(seed)
    params = init_params(seed)
    for arr in params.arrays():
        arr *= 2.0  # push gates away from their linear regime
    x = rng.poisson(1.5, 60).astype(float)
    assert forward(x, params) == pytest.approx(scalar_forward(x, params), abs=1e-12)


def test_batch_equals_single(rng):
    params = init_params(4)
    X = rng.poisson(1.0, (5, 60)).astype(float)
    batch = predict_proba(X, params)
    assert np.allclose(batch, [forward(x, params) for x in X], rtol=0, atol=1e-15)


@pytest.mark.parametrize("bad", [[np.nan] * 60, [np.inf] + [0] * 59, [-1] + [0] * 59, []])
def test_forward_rejects_bad_input(bad):
    with pytest.raises(ValueError):
        forward(bad, init_params(0))


@pytest.mark.parametrize("bias", [-1e3, -40.0, 0.0, 40.0, 1e3])
@pytest.mark.parametrize("level", [0.0, 1e3])
def test_output_strictly_inside_unit_interval(bias, level):
    params = init_params(5)
    for arr in params.mlp.weights:
        arr *= 50.0
    params.mlp.biases[-1][:] = bias
    p = forward(np.full(60, level), params)
    assert 0.0 < p < 1.0


def test_prediction_label_rule():
    assert Prediction(0.5, StreamKind.LIVE, 0.0).label is StreamKind.LIVE
    with pytest.raises(ValueError):
        Prediction(0.49, StreamKind.LIVE, 0.0)
    with pytest.raises(ValueError):
        Prediction(0.5, StreamKind.VOD, 0.0)


def test_decision_invariant_under_monotone_transform(rng):
    p = rng.uniform(0, 1, 1000)
    for f in (np.log, np.sqrt, lambda v: v**3 + 2 * v, np.exp):
        with np.errstate(divide="ignore"):
            assert np.array_equal(f(p) >= f(1 - p), p >= 0.5)


# -- gradients --------------------------------------------------------------


@pytest.mark.parametrize("steps", [1, 5, 20])
def test_gradcheck(steps):
    rng = np.random.default_rng(steps)
    x = rng.poisson(1.0, steps).astype(float)
    errs = check_gradients(x, float(steps % 2), init_params(steps))
    assert max(errs.values()) < 1e-4


def test_gradient_vanishes_when_probability_equals_label():
    params = init_params(0)
    x = np.ones(20)
    p = forward(x, params)
    # the label equal to the model's own probability is a stationary point of BCE
    loss, grads = backward(x[None, :], [p], params)
    assert max(float(np.abs(g).max()) for g in grads.arrays()) < 1e-12
    assert loss == pytest.approx(-(p * math.log(p) + (1 - p) * math.log(1 - p)))


def test_single_step_gradient_by_hand():
    """Length-1 sequence: h0 = c0 = 0, so recurrent weights and the forget
    gate get no gradient and the rest follows from c = i·g, h = o·tanh(c)."""
    params = init_params(7)
    x, y = 1.7, 1.0
    W, b = params.lstm.W, params.lstm.b
    z = W[:, :, 0] * x + b
    i, f, o, g = sigmoid_v(z[0]), sigmoid_v(z[1]), sigmoid_v(z[2]), np.tanh(z[3])
    c = i * g
    h = o * np.tanh(c)
    # dL/dh through the MLP
    acts = [h]
    for k, (w, bias) in enumerate(zip(params.mlp.weights, params.mlp.biases)):
        zz = w @ acts[-1] + bias
        acts.append(np.maximum(zz, 0) if k < 3 else zz)
    delta = np.array([sigmoid(acts[-1][0]) - y])
    for k in range(3, -1, -1):
        delta = params.mlp.weights[k].T @ delta
        if k > 0:
            delta = delta * (acts[k] > 0)
    dh = delta
    dc = dh * o * (1 - np.tanh(c) ** 2)
    dz = np.stack([dc * g * i * (1 - i), np.zeros(HIDDEN), dh * np.tanh(c) * o * (1 - o), dc * i * (1 - g * g)])

    _, grads = backward([[x]], [y], params)
    assert np.array_equal(grads.lstm.W[:, :, 1:], np.zeros((4, HIDDEN, HIDDEN)))
    assert np.allclose(grads.lstm.W[:, :, 0], dz * x, rtol=0, atol=1e-14)
    assert np.allclose(grads.lstm.b, dz, rtol=0, atol=1e-14)


def sigmoid_v(z):
    return 1.0 / (1.0 + np.exp(-z))


def test_bce_from_logits_is_finite_at_extremes():
    assert bce_loss(np.array([800.0]), np.array([1.0])) == pytest.approx(0.0)
    assert np.isfinite(bce_loss(np.array([-800.0]), np.array([1.0])))


# -- training ---------------------------------------------------------------


def toy_windows(rng, n):
    """Live: two requests every 4 bins; VoD: one request every 20 bins."""
    X, y = [], []
    for k in range(n):
        x = np.zeros(60)
        if k % 2:
            x[int(rng.integers(4)) :: 4] = 2
            y.append(1)
        else:
            x[int(rng.integers(20)) :: 20] = 1
            y.append(0)
        X.append(x)
    return np.array(X), np.array(y)


def test_training_is_deterministic(rng):
    X, y = toy_windows(rng, 10)
    cfg = TrainConfig(epochs=1, holdout=0.0, rng_seed=3)
    a, b = train(X, y, cfg), train(X, y, cfg)
    assert a.epoch_losses == b.epoch_losses
    assert all(np.array_equal(p, q) for p, q in zip(a.params.arrays(), b.params.arrays()))


def test_training_learns_toy_periodicity(rng):
    X, y = toy_windows(rng, 300)
    res = train(X, y, TrainConfig(epochs=15, batch_size=32))
    assert res.test_accuracy >= 0.95
    assert res.epoch_losses[-1] < res.epoch_losses[0]
    assert res.confusion.sum() == len(res.test_idx)


def test_single_class_corpus_rejected():
    with pytest.raises(ConfigError):
        train(np.zeros((10, 60)), np.ones(10))
    with pytest.raises(ConfigError):
        train(np.zeros((10, 60)), np.full(10, 2))


@pytest.mark.parametrize("kw", [dict(learning_rate=0), dict(threshold=1.0), dict(threshold=0.0), dict(batch_size=0)])
def test_bad_config_rejected(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw)


def test_weight_decay_touches_mlp_weights_only():
    params = init_params(1)
    params.mlp.weights[-1][:] = 0.0
    params.mlp.biases[-1][:] = 0.0
    x = np.random.default_rng(0).poisson(1.0, 60).astype(float)
    # identical inputs with opposite labels at p = 0.5: every BCE gradient is zero
    _, grads = backward(np.stack([x, x]), [0.0, 1.0], params)
    assert all(not np.any(g) for g in grads.arrays())
    res = train(np.stack([x, x]), np.array([0, 1]), TrainConfig(epochs=1, batch_size=2, holdout=0.0), init=params)
    assert np.array_equal(res.params.lstm.W, params.lstm.W)
    assert np.array_equal(res.params.lstm.b, params.lstm.b)
    assert all(np.array_equal(a, b) for a, b in zip(res.params.mlp.biases, params.mlp.biases))
    for a, b in zip(res.params.mlp.weights[:-1], params.mlp.weights[:-1]):
        assert np.linalg.norm(a) < np.linalg.norm(b)


def test_confusion_matrix_layout():
    m = confusion_matrix([1, 1, 1, 0, 0], [1, 0, 1, 1, 0])
    assert m.tolist() == [[2, 1], [1, 1]]


# -- baseline ----------------------------------------------------------------


def impulse_train(period_s, seconds=60, bin_width=0.1):
    times = np.arange(0, seconds, period_s)
    return rate_series(times, np.full(len(times), 1e5), 0.0, seconds, bin_width)


def test_two_second_train_peaks_at_two():
    assert autocorr_peak_lags(impulse_train(2.0))[0] == 2


def test_ten_second_train_peaks_at_ten():
    assert autocorr_peak_lags(impulse_train(10.0))[0] == 10


def test_constant_series_has_no_peaks():
    assert autocorr_peak_lags(np.full(600, 7.0)) == (0, 0, 0)


def test_short_series_rejected():
    with pytest.raises(ValueError):
        autocorr_peak_lags(np.zeros(100))


def test_single_tree_on_separable_lags():
    lags = np.array([[2, 4, 6]] * 10 + [[10, 20, 0]] * 10)
    y = np.array([1] * 10 + [0] * 10)
    model = BaselineModel.fit(lags, y, n_trees=1)
    assert np.array_equal(model.predict(lags), y)


def test_vote_tie_goes_to_vod():
    X = np.array([[2.0, 4, 6], [10, 20, 0]])
    a = RandomForest(n_trees=1, bootstrap=False).fit(X, [1, 0])
    b = RandomForest(n_trees=1, bootstrap=False).fit(X, [0, 1])
    a.trees += b.trees
    a.n_trees = 2
    model = BaselineModel(a)
    assert model.votes(X).tolist() == [[1, 1], [1, 1]]
    assert model.predict(X).tolist() == [0, 0]


def test_untrained_baseline_raises():
    with pytest.raises(NotFittedError):
        BaselineModel(RandomForest()).predict([[2, 4, 6]])


# -- persistence -------------------------------------------------------------


def test_lstm_model_roundtrip_bit_identical(tmp_path):
    model = LiveVodModel(init_params(9), "twitch", 20)
    loaded = load_model(save_model(model, tmp_path / "m.json"))
    assert loaded.provider == "twitch" and loaded.window_seconds == 20 and loaded.window_bins == 40
    assert all(np.array_equal(a, b) for a, b in zip(model.params.arrays(), loaded.params.arrays()))


def test_baseline_roundtrip(tmp_path, rng):
    lags = rng.integers(0, 30, (50, 3))
    y = (lags[:, 0] < 5).astype(int)
    model = BaselineModel.fit(lags, y, n_trees=7)
    loaded = load_model(save_model(model, tmp_path / "b.json"))
    assert np.array_equal(loaded.votes(lags), model.votes(lags))


def test_corrupted_model_file(tmp_path):
    path = save_model(LiveVodModel(init_params(0), "youtube"), tmp_path / "m.json")
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(ModelFormatError):
        load_model(path)
    d = orjson.loads(raw)
    d["params"]["lstm.W"]["data"] = d["params"]["lstm.W"]["data"][:-1]
    path.write_bytes(orjson.dumps(d))
    with pytest.raises(ModelFormatError):
        load_model(path)
    path.write_bytes(b'{"hello": 1}')
    with pytest.raises(ModelFormatError):
        load_model(path)


def test_version_mismatch(tmp_path):
    path = save_model(LiveVodModel(init_params(0), "youtube"), tmp_path / "m.json")
    d = orjson.loads(path.read_bytes())
    d["version"] = 99
    path.write_bytes(orjson.dumps(d))
    with pytest.raises(ModelFormatError, match="version"):
        load_model(path)


def test_missing_model_file(tmp_path):
    with pytest.raises(OSError):
        load_model(tmp_path / "nope.json")


def test_model_portable_across_processes(tmp_path, rng):
    X, y = toy_windows(rng, 40)
    res = train(X, y, TrainConfig(epochs=2, holdout=0.0))
    path = save_model(LiveVodModel(res.params, "twitch"), tmp_path / "m.json")
    np.save(tmp_path / "x.npy", X)
    code = (
        "import sys, numpy as np; from livescope.classifier import load_model;"
        "m = load_model(sys.argv[1]); X = np.load(sys.argv[2]);"
        "print(' '.join(float(p).hex() for p in m.proba(X)))"
    )
    out = subprocess.run([sys.executable, "-c", code, str(path), str(tmp_path / "x.npy")],
                         capture_output=True, text=True, check=True).stdout.split()
    here = [float(p).hex() for p in predict_proba(X, res.params)]
    assert out == here


def test_model_rejects_wrong_window_length():
    model = LiveVodModel(init_params(0), "twitch", 10)
    with pytest.raises(ValueError):
        model.proba(np.zeros((1, 60)))
    assert model.proba(np.zeros((3, 20))).shape == (3,)
    with pytest.raises(ValueError):
        LiveVodModel(init_params(0), "twitch", 15)


def test_logits_consistent_with_proba(rng):
    params = init_params(2)
    X = rng.poisson(1.0, (4, 40)).astype(float)
    assert np.allclose(1 / (1 + np.exp(-forward_logits(X, params))), predict_proba(X, params), atol=1e-15)
