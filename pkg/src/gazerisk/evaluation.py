"""Trajectory and intention metrics, alarm auditing and CSV tables."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

HORIZON_STEPS = {0.9: 3, 2.1: 7, 3.0: 10}
EXCEEDANCE_THRESHOLDS = (1.0, 2.0, 3.0, 4.0)


class MetricError(ValueError):
    pass


# ---------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True)
class TrajMetrics:
    horizon: float
    ade: float
    fde: float
    sde: float
    n: int
    exceedance: tuple = ()


def displacement(pred: np.ndarray, true: np.ndarray) -> np.ndarray:
    pred, true = np.asarray(pred, dtype=float), np.asarray(true, dtype=float)
    if pred.shape != true.shape:
        raise MetricError(f"prediction shape {pred.shape} differs from truth {true.shape}")
    return np.linalg.norm(pred - true, axis=-1)


def traj_metrics(pred: np.ndarray, true: np.ndarray, horizon: float = 3.0) -> TrajMetrics:
    """ADE, FDE and SDE up to ``horizon`` over ``(N, T, 2)`` trajectory pairs.

    SDE is the root of the mean squared displacement over all records and
    steps, so ADE <= SDE always holds.
    """
    if horizon not in HORIZON_STEPS:
        raise MetricError(f"horizon must be one of {sorted(HORIZON_STEPS)}")
    d = displacement(pred, true)
    if d.ndim != 2 or d.shape[0] == 0:
        raise MetricError("need a nonempty (N, T) set of trajectories")
    k = HORIZON_STEPS[horizon]
    if d.shape[1] < k:
        raise MetricError(f"trajectories have {d.shape[1]} steps, horizon needs {k}")
    d = d[:, :k]
    fde = d[:, -1]
    return TrajMetrics(
        horizon=horizon,
        ade=float(d.mean()),
        fde=float(fde.mean()),
        sde=float(np.sqrt(np.mean(d ** 2))),
        n=len(d),
        exceedance=exceedance_table(fde),
    )


def exceedance_table(fde: Sequence[float], thresholds: Sequence[float] = EXCEEDANCE_THRESHOLDS) -> tuple:
    """Fraction of records whose final error is above each threshold."""
    fde = np.asarray(fde, dtype=float)
    if len(fde) == 0:
        return tuple(0.0 for _ in thresholds)
    return tuple(float(np.mean(fde > t)) for t in thresholds)


# ---------------------------------------------------------------------------
# intentions


@dataclass(frozen=True)
class IntentMetrics:
    confusion: np.ndarray  # rows: true class, columns: predicted class
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    t2m: tuple = ()
    t2m_missing: int = 0

    @property
    def mean_t2m(self) -> Optional[float]:
        return float(np.mean(self.t2m)) if self.t2m else None


def confusion_matrix(pred: Sequence[int], true: Sequence[int], n_classes: int = 3) -> np.ndarray:
    pred, true = np.asarray(pred, dtype=int), np.asarray(true, dtype=int)
    if pred.shape != true.shape:
        raise MetricError("prediction and label series differ in length")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    return cm


def _ratio(num, den):
    return np.divide(num, den, out=np.zeros(len(num)), where=den > 0)


def intent_metrics(pred, true, t2m: Iterable[Optional[float]] = (), n_classes: int = 3) -> IntentMetrics:
    """Per-class precision/recall/F1 plus T2M over turn events.

    Events whose T2M is None (no stable correct prediction) are counted in
    ``t2m_missing`` and left out of the mean.
    """
    cm = confusion_matrix(pred, true, n_classes)
    tp = np.diag(cm).astype(float)
    precision = _ratio(tp, cm.sum(axis=0).astype(float))
    recall = _ratio(tp, cm.sum(axis=1).astype(float))
    f1 = _ratio(2 * precision * recall, precision + recall)
    t2m = list(t2m)
    found = tuple(float(v) for v in t2m if v is not None)
    return IntentMetrics(cm, precision, recall, f1, found, len(t2m) - len(found))


def first_stable_correct(times, predictions, turn_class: int, steer_onset: float,
                         min_hold: float = 0.2) -> Optional[float]:
    """Earliest time from which the prediction stays on ``turn_class``.

    The run must last through the steer onset and for at least ``min_hold``
    seconds, so one stray correct frame does not count.
    """
    times = np.asarray(times, dtype=float)
    ok = np.asarray(predictions) == turn_class
    start = None
    for t, good in zip(times, ok):
        if not good:
            start = None
            continue
        if start is None:
            start = t
        if t >= steer_onset - 1e-9 and t - start >= min_hold - 1e-9:
            return float(start)
    return None


def time_to_maneuver(times, predictions, turn_class: int, steer_onset: float,
                     min_hold: float = 0.2) -> Optional[float]:
    """Steer onset minus the first stable correct time; positive means ahead of the driver."""
    t = first_stable_correct(times, predictions, turn_class, steer_onset, min_hold)
    return None if t is None else round(steer_onset - t, 10)


# ---------------------------------------------------------------------------
# alarms


@dataclass(frozen=True)
class AlarmEvent:
    time: float
    obstacle: int


@dataclass(frozen=True)
class Conflict:
    obstacle: int
    collision_time: float


@dataclass
class AuditResult:
    true_alarms: int = 0
    false_alarms: int = 0
    missed: int = 0
    leads: list = field(default_factory=list)

    def __iadd__(self, other: "AuditResult"):
        self.true_alarms += other.true_alarms
        self.false_alarms += other.false_alarms
        self.missed += other.missed
        self.leads.extend(other.leads)
        return self

    def as_tuple(self):
        return self.true_alarms, self.false_alarms, self.missed


def alarm_audit(alarms: Sequence[AlarmEvent], conflicts: Sequence[Conflict]) -> AuditResult:
    """Classify alarms against scripted collisions of one episode.

    An alarm is true when it starts before a scripted collision with the
    obstacle it flags (lead = collision time - onset), false otherwise. A
    conflict with no true alarm is missed.
    """
    result = AuditResult()
    warned = set()
    for alarm in alarms:
        match = [c for c in conflicts if c.obstacle == alarm.obstacle and alarm.time < c.collision_time]
        if match:
            c = min(match, key=lambda c: c.collision_time)
            result.true_alarms += 1
            if id(c) not in warned:
                result.leads.append(round(c.collision_time - alarm.time, 10))
            warned.add(id(c))
        else:
            result.false_alarms += 1
    result.missed = sum(1 for c in conflicts if id(c) not in warned)
    return result


# ---------------------------------------------------------------------------
# CSV


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "" if math.isnan(v) else repr(v)
    if v is None:
        return ""
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
