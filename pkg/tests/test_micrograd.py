import numpy as np
import pytest

from gazerisk.micrograd import (
    LSTM,
    Adam,
    AdamState,
    Conv2d,
    Linear,
    NonFiniteError,
    ShapeError,
    adam_step,
    mse,
    sigmoid,
    softmax,
)
from gazerisk.micrograd import checkpoint
from gazerisk.micrograd.layers import Module

from gradcheck import LAYER_CHECKS, TOL

SEEDS = range(20)


# ---------------------------------------------------------------------------
# finite-difference checks, 20 seeds per op


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("layer", sorted(LAYER_CHECKS))
def test_layer_gradients(layer, seed):
    assert LAYER_CHECKS[layer](seed) < TOL


# ---------------------------------------------------------------------------
# forward contracts


def test_lstm_zero_weights_give_zero_hidden():
    lstm = LSTM(3, 6)
    hs, h, c = lstm.forward(np.random.default_rng(0).normal(size=(2, 5, 3)))
    assert np.all(hs == 0) and np.all(h == 0) and np.all(c == 0)


def test_lstm_single_step_matches_hand_formula():
    rng = np.random.default_rng(3)
    lstm = LSTM(2, 3, rng)
    x = rng.normal(size=(1, 1, 2))
    h0, c0 = rng.normal(size=(1, 3)), rng.normal(size=(1, 3))
    _, h, c = lstm.forward(x, h0, c0)
    Wx, Wh, b = lstm.params["input_w"], lstm.params["recurrent_w"], lstm.params["bias"]
    z = Wx @ x[0, 0] + Wh @ h0[0] + b
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))
    i, f, g, o = sig(z[0:3]), sig(z[3:6]), np.tanh(z[6:9]), sig(z[9:12])
    c_ref = f * c0[0] + i * g
    h_ref = o * np.tanh(c_ref)
    np.testing.assert_allclose(c[0], c_ref, atol=1e-14)
    np.testing.assert_allclose(h[0], h_ref, atol=1e-14)


def test_forget_bias_initialised_to_one():
    lstm = LSTM(4, 5, np.random.default_rng(0))
    assert np.all(lstm.params["bias"][5:10] == 1.0)


def test_init_bound():
    layer = Linear(16, 8, np.random.default_rng(0))
    assert np.abs(layer.params["weight"]).max() <= 0.25


def test_shape_errors():
    with pytest.raises(ShapeError):
        Linear(3, 2).forward(np.zeros((1, 4)))
    with pytest.raises(ShapeError):
        LSTM(3, 2).forward(np.zeros((1, 4, 2)))
    with pytest.raises(ShapeError):
        Conv2d(3, 2).forward(np.zeros((1, 2, 5, 5)))
    with pytest.raises(ShapeError):
        mse(np.zeros(3), np.zeros(4))


def test_non_finite_forward_raises():
    layer = Linear(2, 2, np.random.default_rng(0))
    with pytest.raises(NonFiniteError):
        layer.forward(np.array([[np.nan, 0.0]]))
    with pytest.raises(NonFiniteError):
        softmax(np.array([np.inf, 0.0]))


def test_softmax_examples():
    np.testing.assert_allclose(softmax(np.zeros(3)), np.full(3, 1 / 3), atol=1e-15)
    assert mse(np.ones((2, 2)), np.ones((2, 2)))[0] == 0.0
    big = softmax(np.array([1000.0, 0.0, -1000.0]))
    assert np.all(np.isfinite(big)) and abs(big.sum() - 1) < 1e-12


def test_softmax_sums_to_one_and_translation_invariant():
    rng = np.random.default_rng(0)
    for _ in range(200):
        z = rng.normal(size=(4, 3)) * 10
        p = softmax(z)
        assert np.all(np.abs(p.sum(axis=1) - 1.0) <= 1e-12)
        np.testing.assert_allclose(softmax(z + rng.normal() * 50), p, atol=1e-12)


def test_sigmoid_matches_logistic():
    x = np.linspace(-30, 30, 101)
    np.testing.assert_allclose(sigmoid(x), 1 / (1 + np.exp(-x)), atol=1e-15)


def test_conv_matches_direct_loop():
    rng = np.random.default_rng(1)
    conv = Conv2d(2, 3, 3, stride=2, padding=1, rng=rng)
    x = rng.normal(size=(1, 2, 6, 6))
    out = conv.forward(x)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    W, b = conv.params["weight"], conv.params["bias"]
    for o in range(3):
        for i in range(3):
            for j in range(3):
                ref = (xp[0, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * W[o]).sum() + b[o]
                assert abs(out[0, o, i, j] - ref) < 1e-12


# ---------------------------------------------------------------------------
# Adam


def test_adam_first_step_has_magnitude_lr():
    p = {"w": np.array([1.0, -2.0, 3.0])}
    g = {"w": np.array([0.5, -4.0, 1e-3])}
    adam_step(AdamState(lr=1e-3), p, g)
    np.testing.assert_allclose(p["w"] - np.array([1.0, -2.0, 3.0]), -1e-3 * np.sign(g["w"]), rtol=1e-4)


def test_adam_zero_gradient_leaves_params():
    p = {"w": np.array([1.0, 2.0])}
    before = p["w"].copy()
    state = AdamState()
    for _ in range(5):
        adam_step(state, p, {"w": np.zeros(2)})
    assert np.array_equal(p["w"], before)


def test_adam_non_finite_gradient_aborts_without_change():
    p = {"a": np.array([1.0]), "b": np.array([2.0])}
    state = AdamState()
    with pytest.raises(NonFiniteError):
        adam_step(state, p, {"a": np.array([1.0]), "b": np.array([np.nan])})
    assert p["a"][0] == 1.0 and p["b"][0] == 2.0 and state.step == 0 and not state.m


def test_adam_monotone_on_convex_quadratic():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(4, 4))
    Q = A @ A.T + np.eye(4)
    x = {"x": rng.normal(size=4) * 3}
    state = AdamState(lr=1e-2)
    losses = []
    for _ in range(200):
        losses.append(0.5 * x["x"] @ Q @ x["x"])
        adam_step(state, x, {"x": Q @ x["x"]})
    tail = np.array(losses[10:])
    assert np.all(np.diff(tail) <= 0)
    assert losses[-1] < 0.5 * losses[0]


def test_adam_bound_to_module():
    layer = Linear(2, 1, np.random.default_rng(0))
    opt = Adam(layer, lr=0.1)
    opt.zero_grad()
    layer.forward(np.ones((1, 2)))
    layer.backward(np.ones((1, 1)))
    before = layer.params["weight"].copy()
    opt.step()
    np.testing.assert_allclose(layer.params["weight"], before - 0.1, rtol=1e-6)


# ---------------------------------------------------------------------------
# checkpoints


class _Pair(Module):
    def __init__(self, rng):
        super().__init__()
        self.add_child("fc", Linear(3, 2, rng))
        self.add_child("rnn", LSTM(2, 4, rng))


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    net = _Pair(np.random.default_rng(0))
    tensors = net.state_dict()
    tensors["norm/mean"] = np.array([0.1, -2.5, np.pi])
    path = tmp_path / "m.ckpt"
    checkpoint.save(path, tensors, {"kind": "x"})
    loaded, meta = checkpoint.load(path)
    assert meta == {"kind": "x"}
    assert set(loaded) == set(tensors)
    for k in tensors:
        assert loaded[k].shape == tensors[k].shape
        assert loaded[k].tobytes() == tensors[k].tobytes()
    checkpoint.save(tmp_path / "again.ckpt", loaded, meta)
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()


def test_checkpoint_rejects_bad_magic_and_version(tmp_path):
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.decode(b"NOPE" + bytes(20))
    blob = bytearray(checkpoint.encode({"a": np.zeros(2)}))
    blob[4] = 99
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.decode(bytes(blob))
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.load(tmp_path / "missing.ckpt")


def test_load_state_dict_checks_shapes():
    net = _Pair(np.random.default_rng(0))
    state = net.state_dict()
    state["fc.weight"] = np.zeros((5, 5))
    with pytest.raises(ShapeError):
        net.load_state_dict(state)
    with pytest.raises(KeyError):
        net.load_state_dict({})
