import numpy as np
import pytest

from chromalign.errors import ArgumentError, NumericError
from chromalign.neuralnet import (
    AdamState,
    RngStream,
    adam_update,
    bce_loss,
    conv1d_apply,
    conv1d_backward,
    dense_apply,
    dense_backward,
    dropout_apply,
    dropout_backward,
    gradient_check,
    gru_apply,
    gru_backward,
    lstm_apply,
    lstm_backward,
    maxpool1d,
    maxpool1d_backward,
)

TOLERANCE = 1e-4
RECURRENT_TOLERANCE = 1e-3


def recurrent_params(rng, features, units, gates, bidirectional):
    params = {}
    for name in ["fwd", "bwd"] if bidirectional else ["fwd"]:
        params[f"{name}.Wx"] = rng.normal(0, 0.5, (features, gates * units))
        params[f"{name}.Wh"] = rng.normal(0, 0.5, (units, gates * units))
        params[f"{name}.b"] = rng.normal(0, 0.1, gates * units)
    return params


def test_dense_matches_the_formula(rng):
    x = rng.normal(size=(4, 3))
    W = rng.normal(size=(2, 3))
    b = rng.normal(size=2)
    y, _ = dense_apply(x, W, b, "tanh")
    np.testing.assert_allclose(y, np.tanh(x @ W.T + b))


def test_dense_rejects_mismatched_shapes(rng):
    with pytest.raises(ArgumentError):
        dense_apply(rng.normal(size=(4, 3)), rng.normal(size=(2, 4)), np.zeros(2))


@pytest.mark.parametrize("activation", ["linear", "tanh", "sigmoid"])
def test_dense_gradients(rng, activation):
    R = rng.normal(size=(5, 2))

    def fn(p):
        y, cache = dense_apply(p["x"], p["W"], p["b"], activation)
        dx, dW, db = dense_backward(R, cache)
        return float(np.sum(y * R)), {"x": dx, "W": dW, "b": db}

    params = {"x": rng.normal(size=(5, 3)), "W": rng.normal(size=(2, 3)), "b": rng.normal(size=2)}
    assert gradient_check(fn, params, tolerance=TOLERANCE).passed


def test_conv1d_is_a_valid_correlation(rng):
    x = rng.normal(size=(2, 10, 3))
    K = rng.normal(size=(4, 3, 3))
    bias = rng.normal(size=4)
    y, _ = conv1d_apply(x, K, bias)
    assert y.shape == (2, 8, 4)
    expected = np.einsum("btkc,ock->bto", np.stack([x[:, k : k + 8] for k in range(3)], 2), K)
    np.testing.assert_allclose(y, expected + bias, atol=1e-12)


def test_conv1d_accepts_an_unbatched_sequence(rng):
    y, _ = conv1d_apply(rng.normal(size=(6, 1)), rng.normal(size=(2, 1, 3)), np.zeros(2))
    assert y.shape == (4, 2)


def test_conv1d_gradients(rng):
    R = rng.normal(size=(2, 7, 3))

    def fn(p):
        y, cache = conv1d_apply(p["x"], p["K"], p["bias"], "tanh")
        dx, dK, db = conv1d_backward(R, cache)
        return float(np.sum(y * R)), {"x": dx, "K": dK, "bias": db}

    params = {
        "x": rng.normal(size=(2, 9, 2)),
        "K": rng.normal(0, 0.5, size=(3, 2, 3)),
        "bias": rng.normal(size=3),
    }
    assert gradient_check(fn, params, tolerance=TOLERANCE).passed


def test_maxpool_drops_the_remainder():
    x = np.array([1.0, 3.0, 2.0, 5.0, 4.0, 0.0, 6.0]).reshape(1, 7, 1)
    y, cache = maxpool1d(x, 3, 3)
    assert y.reshape(-1).tolist() == [3.0, 5.0]
    dx = maxpool1d_backward(np.ones_like(y), cache)
    assert dx.reshape(-1).tolist() == [0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0]


def test_maxpool_gradients(rng):
    R = rng.normal(size=(2, 4, 3))

    def fn(p):
        y, cache = maxpool1d(p["x"], 3, 2)
        return float(np.sum(y * R)), {"x": maxpool1d_backward(R, cache)}

    assert gradient_check(fn, {"x": rng.normal(size=(2, 9, 3))}, tolerance=TOLERANCE).passed


def test_maxpool_rejects_short_sequences():
    with pytest.raises(ArgumentError):
        maxpool1d(np.ones((1, 2, 1)), 3, 3)


def test_dropout_is_identity_at_inference(rng):
    x = rng.normal(size=(3, 4))
    y, mask = dropout_apply(x, 0.5, "infer")
    assert y is x and mask is None


def test_dropout_mask_is_scaled():
    x = np.ones((200, 50))
    y, mask = dropout_apply(x, 0.25, "train", RngStream(3))
    assert set(np.unique(y)) <= {0.0, 1.0 / 0.75}
    assert y.mean() == pytest.approx(1.0, abs=0.05)
    np.testing.assert_array_equal(dropout_backward(np.ones_like(x), mask), mask)


def test_dropout_needs_an_rng_for_training():
    with pytest.raises(ArgumentError):
        dropout_apply(np.ones(3), 0.5, "train")
    with pytest.raises(ArgumentError):
        dropout_apply(np.ones(3), 1.0, "infer")


def test_dropout_gradients(rng):
    R = rng.normal(size=(4, 6))

    def fn(p):
        y, mask = dropout_apply(p["x"], 0.3, "train", RngStream(11))
        return float(np.sum(y * R)), {"x": dropout_backward(R, mask)}

    assert gradient_check(fn, {"x": rng.normal(size=(4, 6))}, tolerance=TOLERANCE).passed


@pytest.mark.parametrize(
    "apply, backward, gates",
    [(lstm_apply, lstm_backward, 4), (gru_apply, gru_backward, 3)],
    ids=["lstm", "gru"],
)
@pytest.mark.parametrize("bidirectional", [False, True])
def test_recurrent_gradients(rng, apply, backward, gates, bidirectional):
    batch, steps, features, units = 2, 5, 3, 4
    width = units * (2 if bidirectional else 1)
    mask = np.ones((batch, steps))
    mask[1, 3:] = 0.0
    R_seq = rng.normal(size=(batch, steps, width))
    R_final = rng.normal(size=(batch, width))

    def fn(p):
        weights = {k: v for k, v in p.items() if k != "x"}
        seq, final, cache = apply(p["x"], weights, bidirectional, mask)
        dx, grads = backward(R_seq, R_final, cache, weights)
        loss = float(np.sum(seq * R_seq) + np.sum(final * R_final))
        return loss, {"x": dx, **grads}

    params = recurrent_params(rng, features, units, gates, bidirectional)
    params["x"] = rng.normal(size=(batch, steps, features))
    report = gradient_check(fn, params, tolerance=RECURRENT_TOLERANCE)
    assert report.passed, report


def test_masked_steps_keep_the_state(rng):
    params = recurrent_params(rng, 2, 3, 4, False)
    x = rng.normal(size=(1, 6, 2))
    mask = np.array([[1, 1, 1, 1, 0, 0]], dtype=float)
    seq, final, _ = lstm_apply(x, params, mask=mask)
    short_seq, short_final, _ = lstm_apply(x[:, :4], params)
    np.testing.assert_allclose(final, short_final)
    np.testing.assert_allclose(seq[:, :4], short_seq)
    assert not seq[:, 4:].any()


def test_recurrent_rejects_wrong_shapes(rng):
    params = recurrent_params(rng, 2, 3, 3, False)
    with pytest.raises(ArgumentError):
        gru_apply(rng.normal(size=(1, 4, 5)), params)


def test_bce_values():
    loss, _ = bce_loss(np.array([0.5]), np.array([1.0]))
    assert loss[0] == pytest.approx(np.log(2.0))
    loss, dp = bce_loss(np.array([0.0, 1.0]), np.array([1.0, 0.0]))
    np.testing.assert_allclose(loss, -np.log(1e-7), rtol=1e-6)
    assert np.all(np.isfinite(dp))


def test_adam_first_step_moves_by_the_learning_rate():
    params = {"w": np.array([1.0, -1.0])}
    params, state = adam_update(params, {"w": np.array([2.0, -0.5])}, AdamState(lr=0.001))
    np.testing.assert_allclose(params["w"], [0.999, -0.999], atol=1e-9)
    assert state.step == 1


def test_adam_minimises_a_quadratic():
    params = {"w": np.array([0.0, 10.0])}
    state = AdamState(lr=0.05)
    for _ in range(2000):
        params, state = adam_update(params, {"w": 2 * (params["w"] - 3.0)}, state)
    np.testing.assert_allclose(params["w"], 3.0, atol=0.05)


def test_adam_rejects_bad_gradients():
    with pytest.raises(NumericError):
        adam_update({"w": np.zeros(2)}, {"w": np.array([np.nan, 0.0])}, AdamState())
    with pytest.raises(ArgumentError):
        adam_update({"w": np.zeros(2)}, {"v": np.zeros(2)}, AdamState())


def test_gradient_check_catches_a_wrong_gradient(rng):
    def fn(p):
        return float(np.sum(p["w"] ** 2)), {"w": 3 * p["w"]}

    report = gradient_check(fn, {"w": rng.normal(size=4)})
    assert not report.passed
    assert report.worst_parameter == "w"


def test_rng_stream_is_reproducible():
    a, b = RngStream(5), RngStream(5)
    np.testing.assert_array_equal(a.random(4), b.random(4))
    assert a.counter == 4
