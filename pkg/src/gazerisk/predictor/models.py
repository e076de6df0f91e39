"""Network definitions with explicit forward/backward passes.

Every net takes ``x`` of shape ``(B, 20, F)`` (normalised feature window)
and ``raster`` of shape ``(B, 3, 32, 32)`` or None when its feature set has
no context. Trajectory outputs are in units of ``pos_scale`` metres; the
bundle layer converts them back.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..micrograd import LSTM, Conv2d, Linear, Module, Tanh, ShapeError, softmax_cross_entropy
from ..scenegen import GRID, PRED_STEPS
from .features import FeatureSet

N_MODES = 3
CONTEXT_DIM = 128


def _rng(seed: Optional[int], k: int):
    return None if seed is None else np.random.default_rng([seed, k])


class ContextEncoder(Module):
    """conv(3->8, s2) -> tanh -> conv(8->16, s2) -> tanh -> FC(1024->128) -> tanh."""

    def __init__(self, seed: Optional[int] = None):
        super().__init__()
        self.conv1 = self.add_child("conv1", Conv2d(3, 8, 3, stride=2, padding=1, rng=_rng(seed, 1)))
        self.conv2 = self.add_child("conv2", Conv2d(8, 16, 3, stride=2, padding=1, rng=_rng(seed, 2)))
        side = self.conv2.output_size(self.conv1.output_size(GRID))
        self.flat = 16 * side * side
        self.fc = self.add_child("fc", Linear(self.flat, CONTEXT_DIM, _rng(seed, 3)))
        self.act1, self.act2, self.act3 = Tanh(), Tanh(), Tanh()
        self._shape = None

    def forward(self, raster: np.ndarray) -> np.ndarray:
        if raster.ndim != 4 or raster.shape[1:] != (3, GRID, GRID):
            raise ShapeError(f"raster must be (B, 3, {GRID}, {GRID}), got {raster.shape}")
        a = self.act1.forward(self.conv1.forward(np.asarray(raster, dtype=np.float64)))
        a = self.act2.forward(self.conv2.forward(a))
        self._shape = a.shape
        return self.act3.forward(self.fc.forward(a.reshape(len(a), -1)))

    def backward(self, dfeat: np.ndarray) -> np.ndarray:
        d = self.fc.backward(self.act3.backward(dfeat)).reshape(self._shape)
        d = self.conv2.backward(self.act2.backward(d))
        return self.conv1.backward(self.act1.backward(d))


class _EncoderBase(Module):
    """LSTM over the window, optionally fused with the context feature."""

    def __init__(self, feature_set: FeatureSet, hidden: int, seed: Optional[int]):
        super().__init__()
        self.feature_set = feature_set
        self.hidden = hidden
        self.encoder = self.add_child("encoder", LSTM(feature_set.n_features, hidden, _rng(seed, 10)))
        self.context = self.add_child("context", ContextEncoder(seed)) if feature_set.context else None
        self.fused_dim = hidden + (CONTEXT_DIM if self.context is not None else 0)

    def encode(self, x: np.ndarray, raster: Optional[np.ndarray]) -> np.ndarray:
        _, h, _ = self.encoder.forward(x)
        if self.context is None:
            return h
        if raster is None:
            raise ShapeError(f"feature set {self.feature_set.name} needs a raster")
        return np.concatenate([h, self.context.forward(raster)], axis=1)

    def encode_backward(self, dfused: np.ndarray) -> None:
        H = self.hidden
        self.encoder.backward(None, dfused[:, :H])
        if self.context is not None:
            self.context.backward(dfused[:, H:])


class IntentionNet(_EncoderBase):
    """Window (+ context) -> 3 maneuver logits."""

    kind = "di"

    def __init__(self, feature_set: FeatureSet, hidden: int = 128, seed: Optional[int] = None):
        super().__init__(feature_set, hidden, seed)
        self.head = self.add_child("head", Linear(self.fused_dim, N_MODES, _rng(seed, 20)))

    def forward(self, x, raster=None) -> np.ndarray:
        return self.head.forward(self.encode(x, raster))

    def backward(self, dlogits: np.ndarray) -> None:
        self.encode_backward(self.head.backward(dlogits))

    def loss(self, batch: dict, train: bool = True) -> float:
        logits = self.forward(batch["x"], batch.get("raster"))
        loss, _, dlogits = softmax_cross_entropy(logits, batch["labels"])
        if train:
            self.backward(dlogits)
        return loss


class _DecoderBase(_EncoderBase):
    """Encoder whose fused feature initialises a decoder LSTM through FC(fused -> 2H)."""

    def __init__(self, feature_set, hidden, seed, dec_in: int):
        super().__init__(feature_set, hidden, seed)
        self.bridge = self.add_child("bridge", Linear(self.fused_dim, 2 * hidden, _rng(seed, 30)))
        self.decoder = self.add_child("decoder", LSTM(dec_in, hidden, _rng(seed, 31)))
        self._h0 = None

    def init_state(self, x, raster):
        z = self.bridge.forward(self.encode(x, raster))
        H = self.hidden
        h0 = np.tanh(z[:, :H])
        self._h0 = h0
        return h0, z[:, H:].copy()

    def init_backward(self, dh0, dc0) -> None:
        dz = np.concatenate([dh0 * (1.0 - self._h0 ** 2), dc0], axis=1)
        self.encode_backward(self.bridge.backward(dz))


class TrajectoryNet(_DecoderBase):
    """Multimodal decoder: zero step input, FC(H -> 2N) per step.

    Output shape ``(B, 10, 3, 2)``: step, mode, (x, y).
    """

    kind = "mt"

    def __init__(self, feature_set: FeatureSet, hidden: int = 128, seed: Optional[int] = None):
        super().__init__(feature_set, hidden, seed, dec_in=2)
        self.head = self.add_child("head", Linear(hidden, 2 * N_MODES, _rng(seed, 40)))

    def forward(self, x, raster=None) -> np.ndarray:
        h0, c0 = self.init_state(x, raster)
        B = len(x)
        hs, _, _ = self.decoder.forward(np.zeros((B, PRED_STEPS, 2)), h0, c0)
        return self.head.forward(hs).reshape(B, PRED_STEPS, N_MODES, 2)

    def backward(self, dout: np.ndarray) -> None:
        B = len(dout)
        dhs = self.head.backward(dout.reshape(B, PRED_STEPS, 2 * N_MODES))
        _, dh0, dc0 = self.decoder.backward(dhs)
        self.init_backward(dh0, dc0)

    def loss(self, batch: dict, train: bool = True) -> float:
        """MSE on the mode matching each record's maneuver label."""
        out = self.forward(batch["x"], batch.get("raster"))
        labels = np.asarray(batch["labels"], dtype=int)
        idx = np.arange(len(out))
        diff = out[idx, :, labels, :] - batch["future"]
        loss = float((diff ** 2).mean())
        if train:
            dout = np.zeros_like(out)
            dout[idx, :, labels, :] = 2.0 * diff / diff.size
            self.backward(dout)
        return loss


class FeedbackNet(_DecoderBase):
    """Single-mode decoder whose step input is its previous output."""

    kind = "ff"

    def __init__(self, feature_set: FeatureSet, hidden: int = 128, seed: Optional[int] = None):
        super().__init__(feature_set, hidden, seed, dec_in=2)
        self.head = self.add_child("head", Linear(hidden, 2, _rng(seed, 40)))
        self._steps = None

    def forward(self, x, raster=None) -> np.ndarray:
        h, c = self.init_state(x, raster)
        B = len(x)
        W, b = self.head.params["weight"], self.head.params["bias"]
        prev = np.zeros((B, 2))
        outs, steps = [], []
        for _ in range(PRED_STEPS):
            h, c, cache = self.decoder.step(prev, h, c)
            prev = h @ W.T + b
            outs.append(prev)
            steps.append((cache, h))
        self._steps = steps
        return np.stack(outs, axis=1)

    def backward(self, dout: np.ndarray) -> None:
        W = self.head.params["weight"]
        B = len(dout)
        dh = np.zeros((B, self.hidden))
        dc = np.zeros((B, self.hidden))
        dnext = np.zeros((B, 2))  # gradient arriving through the fed-back input
        for t in reversed(range(PRED_STEPS)):
            cache, h = self._steps[t]
            dy = dout[:, t] + dnext
            self.head.grads["weight"] += dy.T @ h
            self.head.grads["bias"] += dy.sum(axis=0)
            dnext, dh, dc = self.decoder.step_backward(cache, dh + dy @ W, dc)
        self.init_backward(dh, dc)

    def loss(self, batch: dict, train: bool = True) -> float:
        out = self.forward(batch["x"], batch.get("raster"))
        diff = out - batch["future"]
        loss = float((diff ** 2).mean())
        if train:
            self.backward(2.0 * diff / diff.size)
        return loss


class MultiPathNet(_EncoderBase):
    """FC head emitting N * (2T + 1) values: per mode, T waypoints then a logit."""

    kind = "mtp"

    def __init__(self, feature_set: FeatureSet, hidden: int = 128, seed: Optional[int] = None):
        super().__init__(feature_set, hidden, seed)
        self.block = 2 * PRED_STEPS + 1
        self.head = self.add_child("head", Linear(self.fused_dim, N_MODES * self.block, _rng(seed, 20)))

    def forward(self, x, raster=None):
        """Returns ``(trajectories (B, 3, 10, 2), logits (B, 3))``."""
        out = self.head.forward(self.encode(x, raster)).reshape(len(x), N_MODES, self.block)
        return out[:, :, :-1].reshape(len(x), N_MODES, PRED_STEPS, 2), out[:, :, -1]

    def backward(self, dtraj: np.ndarray, dlogits: np.ndarray) -> None:
        B = len(dtraj)
        dout = np.concatenate([dtraj.reshape(B, N_MODES, -1), dlogits[:, :, None]], axis=2)
        self.encode_backward(self.head.backward(dout.reshape(B, -1)))

    def loss(self, batch: dict, train: bool = True) -> float:
        """Winner-takes-all: regress the mode closest to the truth by ADE and classify it."""
        traj, logits = self.forward(batch["x"], batch.get("raster"))
        future = batch["future"]
        ade = np.linalg.norm(traj - future[:, None], axis=3).mean(axis=2)
        best = np.argmin(ade, axis=1)
        idx = np.arange(len(traj))
        diff = traj[idx, best] - future
        reg = float((diff ** 2).mean())
        ce, _, dlogits = softmax_cross_entropy(logits, best)
        if train:
            dtraj = np.zeros_like(traj)
            dtraj[idx, best] = 2.0 * diff / diff.size
            self.backward(dtraj, dlogits)
        return reg + ce


NETS = {cls.kind: cls for cls in (IntentionNet, TrajectoryNet, FeedbackNet, MultiPathNet)}
