"""Layers with hand-written backward passes.

Every layer caches what its backward pass needs during ``forward`` and
accumulates parameter gradients into ``self.grads`` during ``backward``.
A layer therefore supports one forward/backward pair at a time; call
``zero_grad`` between optimiser steps.

All arrays are float64. Activations are checked for NaN/Inf after every
forward op.
"""

from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np


class NonFiniteError(FloatingPointError):
    pass


class ShapeError(ValueError):
    pass


def check_finite(x: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite values produced by {where}")
    return x


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 + 0.5 * np.tanh(0.5 * x)


class Module:
    """Container of named parameters and child modules."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.children: dict[str, Module] = {}

    def add_param(self, name: str, value: np.ndarray) -> np.ndarray:
        value = np.ascontiguousarray(value, dtype=np.float64)
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        return value

    def add_child(self, name: str, module: "Module") -> "Module":
        self.children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, value in self.params.items():
            yield prefix + name, value
        for cname, child in self.children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def named_grads(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, value in self.grads.items():
            yield prefix + name, value
        for cname, child in self.children.items():
            yield from child.named_grads(f"{prefix}{cname}.")

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        if missing:
            raise KeyError(f"missing tensors: {sorted(missing)}")
        for name, target in own.items():
            src = np.asarray(state[name], dtype=np.float64)
            if src.shape != target.shape:
                raise ShapeError(f"{name}: expected {target.shape}, got {src.shape}")
            target[...] = src

    def zero_grad(self) -> None:
        for _, g in self.named_grads():
            g.fill(0.0)

    def n_parameters(self) -> int:
        return sum(p.size for _, p in self.named_parameters())


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        if rng is None:
            self.add_param("weight", np.zeros((n_out, n_in)))
            self.add_param("bias", np.zeros(n_out))
        else:
            self.add_param("weight", uniform_init(rng, (n_out, n_in), n_in))
            self.add_param("bias", uniform_init(rng, (n_out,), n_in))
        self._x = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"Linear expects last dim {self.n_in}, got {x.shape}")
        self._x = x
        return check_finite(x @ self.params["weight"].T + self.params["bias"], "Linear")

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x = self._x
        x2 = x.reshape(-1, self.n_in)
        dy2 = dy.reshape(-1, self.n_out)
        self.grads["weight"] += dy2.T @ x2
        self.grads["bias"] += dy2.sum(axis=0)
        return dy @ self.params["weight"]


class Tanh:
    """Stateful tanh so the backward pass can reuse the forward output."""

    def __init__(self):
        self._y = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._y = np.tanh(x)
        return check_finite(self._y, "tanh")

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return dy * (1.0 - self._y ** 2)


class LSTM(Module):
    """Single-layer LSTM over batch-major sequences ``(B, T, I)``.

    Gate blocks in the stacked weights are ordered input, forget, cell,
    output. Besides whole-sequence ``forward``/``backward`` the layer
    exposes ``step``/``step_backward`` for decoders that feed outputs back
    in as inputs.
    """

    def __init__(self, n_in: int, hidden: int, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.n_in, self.hidden = n_in, hidden
        H = hidden
        if rng is None:
            self.add_param("input_w", np.zeros((4 * H, n_in)))
            self.add_param("recurrent_w", np.zeros((4 * H, H)))
            self.add_param("bias", np.zeros(4 * H))
        else:
            self.add_param("input_w", uniform_init(rng, (4 * H, n_in), H))
            self.add_param("recurrent_w", uniform_init(rng, (4 * H, H), H))
            bias = uniform_init(rng, (4 * H,), H)
            bias[H:2 * H] = 1.0
            self.add_param("bias", bias)
        self._seq = None

    # -- single step -------------------------------------------------------

    def _cell(self, xw: np.ndarray, h: np.ndarray, c: np.ndarray):
        H = self.hidden
        z = xw + h @ self.params["recurrent_w"].T
        z[:, 2 * H:3 * H] *= 2.0
        a = np.tanh(0.5 * z)
        i = 0.5 + 0.5 * a[:, :H]
        f = 0.5 + 0.5 * a[:, H:2 * H]
        g = a[:, 2 * H:3 * H]
        o = 0.5 + 0.5 * a[:, 3 * H:]
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        check_finite(c_new, "LSTM")
        return h_new, c_new, (h, c, i, f, g, o, tc)

    def _cell_backward(self, cache, dh: np.ndarray, dc: np.ndarray):
        h_prev, c_prev, i, f, g, o, tc = cache
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc ** 2)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dc_prev = dc * f
        dz = np.concatenate(
            [di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g ** 2), do * o * (1.0 - o)],
            axis=1,
        )
        self.grads["recurrent_w"] += dz.T @ h_prev
        dh_prev = dz @ self.params["recurrent_w"]
        return dz, dh_prev, dc_prev

    def zero_state(self, batch: int) -> tuple[np.ndarray, np.ndarray]:
        return np.zeros((batch, self.hidden)), np.zeros((batch, self.hidden))

    def step(self, x: np.ndarray, h: np.ndarray, c: np.ndarray):
        """One recurrence step. Returns ``(h, c, cache)``."""
        xw = x @ self.params["input_w"].T + self.params["bias"]
        h_new, c_new, cache = self._cell(xw, h, c)
        return h_new, c_new, (x, cache)

    def step_backward(self, cache, dh: np.ndarray, dc: np.ndarray):
        """Backward through one :meth:`step`. Returns ``(dx, dh_prev, dc_prev)``."""
        x, cell_cache = cache
        dz, dh_prev, dc_prev = self._cell_backward(cell_cache, dh, dc)
        self.grads["input_w"] += dz.T @ x
        self.grads["bias"] += dz.sum(axis=0)
        return dz @ self.params["input_w"], dh_prev, dc_prev

    # -- whole sequence ----------------------------------------------------

    def forward(self, x: np.ndarray, h0: Optional[np.ndarray] = None, c0: Optional[np.ndarray] = None):
        """Run the sequence. Returns ``(hidden_seq (B,T,H), h_T, c_T)``."""
        if x.ndim != 3 or x.shape[2] != self.n_in:
            raise ShapeError(f"LSTM expects (B, T, {self.n_in}), got {x.shape}")
        B, T, _ = x.shape
        if h0 is None or c0 is None:
            zh, zc = self.zero_state(B)
            h0 = zh if h0 is None else h0
            c0 = zc if c0 is None else c0
        xw = x @ self.params["input_w"].T + self.params["bias"]
        h, c = h0, c0
        hs = np.empty((B, T, self.hidden))
        caches = []
        for t in range(T):
            h, c, cache = self._cell(xw[:, t], h, c)
            hs[:, t] = h
            caches.append(cache)
        self._seq = (x, caches)
        return hs, h, c

    def backward(self, dhs: Optional[np.ndarray], dh_last: Optional[np.ndarray] = None, dc_last: Optional[np.ndarray] = None):
        """Backward through :meth:`forward`. Returns ``(dx, dh0, dc0)``.

        ``dhs`` is the gradient w.r.t. every hidden output (or None when
        only the final state is used); ``dh_last``/``dc_last`` add gradient
        on the final state.
        """
        x, caches = self._seq
        B, T, _ = x.shape
        H = self.hidden
        dh = np.zeros((B, H)) if dh_last is None else dh_last.copy()
        dc = np.zeros((B, H)) if dc_last is None else dc_last.copy()
        dzs = np.empty((B, T, 4 * H))
        for t in reversed(range(T)):
            if dhs is not None:
                dh = dh + dhs[:, t]
            dz, dh, dc = self._cell_backward(caches[t], dh, dc)
            dzs[:, t] = dz
        dz2 = dzs.reshape(B * T, 4 * H)
        self.grads["input_w"] += dz2.T @ x.reshape(B * T, self.n_in)
        self.grads["bias"] += dz2.sum(axis=0)
        dx = dzs @ self.params["input_w"]
        return dx, dh, dc


class Conv2d(Module):
    """2-D convolution on ``(B, C, H, W)`` inputs via im2col."""

    def __init__(self, c_in: int, c_out: int, kernel: int = 3, stride: int = 1, padding: int = 0,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.c_in, self.c_out = c_in, c_out
        self.kernel, self.stride, self.padding = kernel, stride, padding
        fan_in = c_in * kernel * kernel
        shape = (c_out, c_in, kernel, kernel)
        if rng is None:
            self.add_param("weight", np.zeros(shape))
            self.add_param("bias", np.zeros(c_out))
        else:
            self.add_param("weight", uniform_init(rng, shape, fan_in))
            self.add_param("bias", uniform_init(rng, (c_out,), fan_in))
        self._cache = None

    def output_size(self, size: int) -> int:
        return (size + 2 * self.padding - self.kernel) // self.stride + 1

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ShapeError(f"Conv2d expects (B, {self.c_in}, H, W), got {x.shape}")
        B, C, Hin, Win = x.shape
        k, s, p = self.kernel, self.stride, self.padding
        Ho, Wo = self.output_size(Hin), self.output_size(Win)
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
        win = win[:, :, ::s, ::s][:, :, :Ho, :Wo]  # (B, C, Ho, Wo, k, k)
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * k * k)
        wmat = self.params["weight"].reshape(self.c_out, -1)
        out = cols @ wmat.T + self.params["bias"]
        self._cache = (x.shape, xp.shape, cols, Ho, Wo)
        out = out.reshape(B, Ho, Wo, self.c_out).transpose(0, 3, 1, 2)
        return check_finite(np.ascontiguousarray(out), "Conv2d")

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x_shape, xp_shape, cols, Ho, Wo = self._cache
        B, C, Hin, Win = x_shape
        k, s, p = self.kernel, self.stride, self.padding
        dy2 = dy.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, self.c_out)
        wmat = self.params["weight"].reshape(self.c_out, -1)
        self.grads["weight"] += (dy2.T @ cols).reshape(self.params["weight"].shape)
        self.grads["bias"] += dy2.sum(axis=0)
        dcols = (dy2 @ wmat).reshape(B, Ho, Wo, C, k, k)
        dxp = np.zeros(xp_shape)
        for di in range(k):
            for dj in range(k):
                dxp[:, :, di:di + s * Ho:s, dj:dj + s * Wo:s] += dcols[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
        if p:
            return dxp[:, :, p:p + Hin, p:p + Win]
        return dxp


# ---------------------------------------------------------------------------
# stateless functions and losses


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    check_finite(z, "softmax input")
    shifted = z - z.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(p: np.ndarray, dp: np.ndarray) -> np.ndarray:
    return p * (dp - (dp * p).sum(axis=-1, keepdims=True))


def cross_entropy(p: np.ndarray, labels: np.ndarray, eps: float = 1e-300) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood of integer ``labels`` under probabilities ``p``.

    Returns the loss and its gradient w.r.t. ``p``.
    """
    labels = np.asarray(labels, dtype=int)
    B = p.shape[0]
    picked = p[np.arange(B), labels]
    loss = float(-np.log(np.maximum(picked, eps)).mean())
    dp = np.zeros_like(p)
    dp[np.arange(B), labels] = -1.0 / (np.maximum(picked, eps) * B)
    return loss, dp


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Fused softmax + cross-entropy. Returns ``(loss, probs, dlogits)``."""
    labels = np.asarray(labels, dtype=int)
    p = softmax(logits)
    B = p.shape[0]
    shifted = logits - logits.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1))
    loss = float((log_z - shifted[np.arange(B), labels]).mean())
    d = p.copy()
    d[np.arange(B), labels] -= 1.0
    return loss, p, d / B


def mse(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all elements, with its gradient."""
    if pred.shape != target.shape:
        raise ShapeError(f"mse shapes differ: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float((diff ** 2).mean()), 2.0 * diff / diff.size
