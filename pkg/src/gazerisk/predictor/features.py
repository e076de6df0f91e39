"""Feature windows: column selection, AOI scaling and z-scoring."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..aoi import IMAGE_HEIGHT, IMAGE_WIDTH
from ..scenegen import RecordSet

# raw columns after the steer angle is appended to the 9 observation columns
RAW_COLUMNS = ("px", "py", "vx", "vy", "theta", "mu_x", "mu_y", "sigma_x", "sigma_y", "steer")
_AOI_SCALE = np.array([1, 1, 1, 1, 1, IMAGE_WIDTH, IMAGE_HEIGHT, IMAGE_WIDTH, IMAGE_HEIGHT, 1], dtype=float)


@dataclass(frozen=True)
class FeatureSet:
    """Which inputs a model sees: state/AOI/steer columns and the raster."""

    name: str
    columns: tuple
    context: bool

    @property
    def n_features(self) -> int:
        return len(self.columns)


FEATURE_SETS = {
    "S": FeatureSet("S", (0, 1, 2, 3, 4), False),
    "S+E": FeatureSet("S+E", tuple(range(9)), False),
    "S+E+C": FeatureSet("S+E+C", tuple(range(9)), True),
    "S+E+C+O": FeatureSet("S+E+C+O", tuple(range(10)), True),
    # the multimodal baseline: everything but the gaze
    "S+C": FeatureSet("S+C", (0, 1, 2, 3, 4), True),
}


def raw_matrix(obs: np.ndarray, steer: np.ndarray) -> np.ndarray:
    """``(N, 20, 10)`` observation columns plus steer, AOI pixels scaled to [0, 1]."""
    obs = np.asarray(obs, dtype=float)
    steer = np.asarray(steer, dtype=float).reshape(obs.shape[0], obs.shape[1], 1)
    return np.concatenate([obs, steer], axis=2) / _AOI_SCALE


@dataclass
class Normalizer:
    """Per-column z-score statistics taken from the training split."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, records: RecordSet) -> "Normalizer":
        if len(records) == 0:
            raise ValueError("cannot fit normalisation on an empty split")
        rows = raw_matrix(records.obs, records.steer).reshape(-1, len(RAW_COLUMNS))
        std = rows.std(axis=0)
        return cls(rows.mean(axis=0), np.where(std < 1e-12, 1.0, std))

    @classmethod
    def identity(cls) -> "Normalizer":
        return cls(np.zeros(len(RAW_COLUMNS)), np.ones(len(RAW_COLUMNS)))

    def transform(self, obs: np.ndarray, steer: np.ndarray, feature_set: FeatureSet) -> np.ndarray:
        z = (raw_matrix(obs, steer) - self.mean) / self.std
        return np.ascontiguousarray(z[..., list(feature_set.columns)])

    def tensors(self) -> dict[str, np.ndarray]:
        return {"mean": self.mean.copy(), "std": self.std.copy()}


def model_inputs(records: RecordSet, norm: Normalizer, feature_set: FeatureSet):
    """``(x, raster)`` arrays for a model; raster is None without context."""
    x = norm.transform(records.obs, records.steer, feature_set)
    raster = records.raster.astype(np.float64) if feature_set.context else None
    return x, raster
