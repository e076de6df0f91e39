"""Trained networks with their normalisation, checkpoint I/O and batched inference."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..geometry import Trajectory
from ..micrograd import checkpoint, softmax
from ..scenegen import RecordSet
from .features import FEATURE_SETS, Normalizer, model_inputs
from .models import NETS, N_MODES
from .modes import IntentionDist, ModeSet, filter_trajectory

PARAM_PREFIX = "param/"
INFER_CHUNK = 256


@dataclass
class TrainedModel:
    net: object
    norm: Normalizer
    pos_scale: float = 1.0
    meta: dict = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return self.net.kind

    @property
    def feature_set(self):
        return self.net.feature_set

    def tensors(self) -> dict[str, np.ndarray]:
        out = {PARAM_PREFIX + k: v for k, v in self.net.state_dict().items()}
        out[checkpoint.NORM_PREFIX + "mean"] = self.norm.mean
        out[checkpoint.NORM_PREFIX + "std"] = self.norm.std
        out[checkpoint.NORM_PREFIX + "pos_scale"] = np.array([self.pos_scale])
        return out

    def save(self, path) -> None:
        meta = dict(self.meta)
        meta.update(kind=self.kind, feature_set=self.feature_set.name, hidden=self.net.hidden)
        checkpoint.save(path, self.tensors(), meta)

    @classmethod
    def load(cls, path) -> "TrainedModel":
        tensors, meta = checkpoint.load(path)
        try:
            net_cls = NETS[meta["kind"]]
            fs = FEATURE_SETS[meta["feature_set"]]
        except KeyError as exc:
            raise checkpoint.CheckpointError(f"{path}: unknown model description {exc}") from exc
        net = net_cls(fs, int(meta["hidden"]))
        net.load_state_dict({k[len(PARAM_PREFIX):]: v for k, v in tensors.items() if k.startswith(PARAM_PREFIX)})
        p = checkpoint.NORM_PREFIX
        norm = Normalizer(tensors[p + "mean"], tensors[p + "std"])
        return cls(net, norm, float(tensors[p + "pos_scale"][0]), meta)

    # -- batched inference ------------------------------------------------

    def _chunks(self, records: RecordSet):
        for start in range(0, len(records), INFER_CHUNK):
            part = records.subset(slice(start, start + INFER_CHUNK))
            yield model_inputs(part, self.norm, self.feature_set)

    def raw_outputs(self, records: RecordSet):
        outs = [self.net.forward(x, r) for x, r in self._chunks(records)]
        if isinstance(outs[0], tuple):
            return tuple(np.concatenate(parts) for parts in zip(*outs))
        return np.concatenate(outs)


def intent_probs(model: TrainedModel, records: RecordSet) -> np.ndarray:
    """``(N, 3)`` maneuver probabilities from an intention model."""
    if len(records) == 0:
        return np.zeros((0, N_MODES))
    return softmax(model.raw_outputs(records))


def mode_trajectories(model: TrainedModel, records: RecordSet) -> np.ndarray:
    """``(N, 3, 10, 2)`` per-maneuver trajectories in metres from a multimodal model."""
    return np.transpose(model.raw_outputs(records), (0, 2, 1, 3)) * model.pos_scale


def single_trajectories(model: TrainedModel, records: RecordSet) -> np.ndarray:
    """``(N, 10, 2)`` from the feedback baseline."""
    return model.raw_outputs(records) * model.pos_scale


def multipath_outputs(model: TrainedModel, records: RecordSet):
    """``(trajectories (N, 3, 10, 2), probs (N, 3))`` from the multipath baseline."""
    traj, logits = model.raw_outputs(records)
    return traj * model.pos_scale, softmax(logits)


@dataclass
class ModelBundle:
    """The intention model and the multimodal trajectory model used together."""

    di: TrainedModel
    mt: TrainedModel

    def predict(self, records: RecordSet):
        """``(probs (N, 3), trajectories (N, 3, 10, 2), selected index (N,))``."""
        probs = intent_probs(self.di, records)
        trajs = mode_trajectories(self.mt, records)
        return probs, trajs, np.argmax(probs, axis=1)


def _one(record) -> RecordSet:
    return RecordSet.from_records([record])


def predict_intention(record, model: TrainedModel) -> IntentionDist:
    return IntentionDist(intent_probs(model, _one(record))[0])


def predict_multimodal(record, bundle: ModelBundle) -> ModeSet:
    probs, trajs, _ = bundle.predict(_one(record))
    return ModeSet.from_arrays(probs[0], trajs[0])


def predict_trajectory(record, bundle: ModelBundle):
    """Filtered output: ``(selected maneuver, Trajectory)``."""
    return filter_trajectory(predict_multimodal(record, bundle))


def ff_lstm_predict(record, model: TrainedModel) -> Trajectory:
    return Trajectory(single_trajectories(model, _one(record))[0])


def mtp_lstm_predict(record, model: TrainedModel) -> ModeSet:
    traj, probs = multipath_outputs(model, _one(record))
    return ModeSet.from_arrays(probs[0], traj[0])


def encode_context(raster: np.ndarray, encoder) -> np.ndarray:
    """128-d context feature of one ``(3, 32, 32)`` raster."""
    return encoder.forward(np.asarray(raster, dtype=np.float64)[None])[0]


def load_model(path, expected_kind: Optional[str] = None) -> TrainedModel:
    model = TrainedModel.load(path)
    if expected_kind is not None and model.kind != expected_kind:
        raise checkpoint.CheckpointError(f"{path} holds a {model.kind} model, expected {expected_kind}")
    return model
