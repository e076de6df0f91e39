"""Maneuver distributions, mode sets and the trajectory filter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import Trajectory
from .models import N_MODES


@dataclass(frozen=True)
class IntentionDist:
    """Probabilities of going straight, turning right, turning left."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float).reshape(N_MODES)
        if np.any(p < 0) or np.any(p > 1) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"not a distribution over {N_MODES} maneuvers: {p}")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def argmax(self) -> int:
        return int(np.argmax(self.probs))


@dataclass(frozen=True)
class ModeSet:
    probs: IntentionDist
    trajectories: tuple

    def __post_init__(self):
        if len(self.trajectories) != N_MODES:
            raise ValueError(f"expected {N_MODES} trajectories, got {len(self.trajectories)}")
        object.__setattr__(self, "trajectories", tuple(
            t if isinstance(t, Trajectory) else Trajectory(t) for t in self.trajectories))

    @classmethod
    def from_arrays(cls, probs: np.ndarray, trajs: np.ndarray) -> "ModeSet":
        """``trajs`` is ``(3, T, 2)``."""
        return cls(IntentionDist(probs), tuple(Trajectory(t) for t in trajs))


def filter_trajectory(modes: ModeSet) -> tuple[int, Trajectory]:
    """Pick the trajectory of the most probable maneuver; ties go to the lowest index."""
    i = int(np.argmax(modes.probs.probs))
    return i, modes.trajectories[i]
