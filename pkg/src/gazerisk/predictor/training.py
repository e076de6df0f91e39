"""Mini-batch Adam training with early stopping on validation loss."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..micrograd import Adam
from ..scenegen import RecordSet
from .bundle import TrainedModel
from .features import FEATURE_SETS, Normalizer, model_inputs
from .models import NETS

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    hidden: int = 128
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1
    seconds: float = 0.0

    def as_dict(self) -> dict:
        # wall time stays out so checkpoints are reproducible byte for byte
        return {"train_loss": self.train_loss, "val_loss": self.val_loss, "best_epoch": self.best_epoch}


def position_scale(records: RecordSet) -> float:
    """RMS future coordinate, used to bring regression targets near unit size."""
    rms = float(np.sqrt(np.mean(records.future ** 2))) if len(records) else 0.0
    return rms if rms > 1e-6 else 1.0


class _Arrays:
    """Model-ready arrays for one split."""

    def __init__(self, records: RecordSet, norm: Normalizer, feature_set, pos_scale: float):
        self.x, self.raster = model_inputs(records, norm, feature_set)
        self.labels = records.labels
        self.future = records.future / pos_scale

    def __len__(self):
        return len(self.labels)

    def batch(self, idx) -> dict:
        out = {"x": self.x[idx], "labels": self.labels[idx], "future": self.future[idx]}
        if self.raster is not None:
            out["raster"] = self.raster[idx]
        return out


def evaluate_loss(net, data: _Arrays, chunk: int = 256) -> float:
    total = 0.0
    for start in range(0, len(data), chunk):
        idx = np.arange(start, min(len(data), start + chunk))
        total += net.loss(data.batch(idx), train=False) * len(idx)
    return total / len(data)


def train_model(
    kind: str,
    train: RecordSet,
    val: RecordSet,
    config: TrainConfig = TrainConfig(),
    feature_set: str = "S+E+C",
    norm: Optional[Normalizer] = None,
) -> TrainedModel:
    """Train one network. The weights with the lowest validation loss are kept."""
    if len(train) == 0 or len(val) == 0:
        raise ValueError("training and validation splits must be nonempty")
    fs = FEATURE_SETS[feature_set]
    norm = norm or Normalizer.fit(train)
    scale = position_scale(train)
    net = NETS[kind](fs, config.hidden, seed=config.seed)
    opt = Adam(net, lr=config.lr)
    tr, va = _Arrays(train, norm, fs, scale), _Arrays(val, norm, fs, scale)
    rng = np.random.default_rng([config.seed, 7])
    hist = History()
    best, best_state, bad = np.inf, net.state_dict(), 0
    started = time.perf_counter()
    for epoch in range(config.max_epochs):
        order = rng.permutation(len(tr))
        running = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            opt.zero_grad()
            running += net.loss(tr.batch(idx)) * len(idx)
            opt.step()
        hist.train_loss.append(running / len(tr))
        hist.val_loss.append(evaluate_loss(net, va))
        log.info("%s/%s epoch %d train %.5f val %.5f", kind, feature_set, epoch, hist.train_loss[-1], hist.val_loss[-1])
        if hist.val_loss[-1] < best:
            best, best_state, bad = hist.val_loss[-1], net.state_dict(), 0
            hist.best_epoch = epoch
        else:
            bad += 1
            if bad >= config.patience:
                break
    net.load_state_dict(best_state)
    hist.seconds = time.perf_counter() - started
    log.info("%s/%s best epoch %d after %.1f s", kind, feature_set, hist.best_epoch, hist.seconds)
    meta = {"seed": config.seed, "history": hist.as_dict(), "n_train": len(train), "n_val": len(val)}
    return TrainedModel(net, norm, scale, meta)


def train_di(train, val, config: TrainConfig = TrainConfig(), feature_set: str = "S+E+C") -> TrainedModel:
    return train_model("di", train, val, config, feature_set)


def train_mt(train, val, config: TrainConfig = TrainConfig(), feature_set: str = "S+E+C") -> TrainedModel:
    """The intention model is trained separately and is untouched here."""
    return train_model("mt", train, val, config, feature_set)


def train_ff(train, val, config: TrainConfig = TrainConfig(), feature_set: str = "S+E+C") -> TrainedModel:
    return train_model("ff", train, val, config, feature_set)


def train_mtp(train, val, config: TrainConfig = TrainConfig(), feature_set: str = "S+C") -> TrainedModel:
    return train_model("mtp", train, val, config, feature_set)
