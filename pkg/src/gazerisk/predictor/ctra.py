"""Constant turn rate and acceleration propagation."""

from __future__ import annotations

import math

import numpy as np

from ..geometry import Trajectory, VehicleState
from ..scenegen import FRAME_DT, PRED_STEPS

OMEGA_GUARD = 1e-4
FIT_SAMPLES = 6  # 0.5 s of 10 Hz history, both ends included


def ctra_positions(x0, y0, theta0, v0, accel, yaw_rate, times) -> np.ndarray:
    """Positions ``(len(times), 2)`` under constant acceleration and yaw rate.

    Below the guard the closed form loses precision, so the same integral is
    evaluated as a series in ``yaw_rate`` up to second order; at exactly zero
    this is the constant-acceleration straight line.
    """
    t = np.asarray(times, dtype=float)
    w, a = float(yaw_rate), float(accel)
    c0, s0 = math.cos(theta0), math.sin(theta0)
    if abs(w) >= OMEGA_GUARD:
        th = theta0 + w * t
        v = v0 + a * t
        x = x0 + (v * np.sin(th) - v0 * s0) / w + a * (np.cos(th) - c0) / w ** 2
        y = y0 + (-v * np.cos(th) + v0 * c0) / w + a * (np.sin(th) - s0) / w ** 2
        return np.stack([x, y], axis=1)
    i0 = v0 * t + a * t ** 2 / 2
    i1 = v0 * t ** 2 / 2 + a * t ** 3 / 3
    i2 = v0 * t ** 3 / 3 + a * t ** 4 / 4
    x = x0 + i0 * c0 - w * i1 * s0 - 0.5 * w ** 2 * i2 * c0
    y = y0 + i0 * s0 + w * i1 * c0 - 0.5 * w ** 2 * i2 * s0
    return np.stack([x, y], axis=1)


def ctra_predict(state: VehicleState, accel: float, yaw_rate: float,
                 horizon: float = 3.0, step: float = 0.3) -> Trajectory:
    n = int(round(horizon / step))
    times = step * np.arange(1, n + 1)
    pts = ctra_positions(state.pose.x, state.pose.y, state.pose.heading, state.speed, accel, yaw_rate, times)
    return Trajectory(pts, step)


def estimate_motion(rows: np.ndarray, dt: float = FRAME_DT, n: int = FIT_SAMPLES) -> tuple[float, float]:
    """Least-squares acceleration and yaw rate over the last ``n`` state rows."""
    tail = np.asarray(rows, dtype=float)[-n:]
    t = dt * np.arange(len(tail))
    speed = np.hypot(tail[:, 2], tail[:, 3])
    heading = np.unwrap(tail[:, 4])
    accel = np.polyfit(t, speed, 1)[0]
    yaw_rate = np.polyfit(t, heading, 1)[0]
    return float(accel), float(yaw_rate)


def ctra_from_window(obs: np.ndarray, steps: int = PRED_STEPS, step: float = 0.3) -> np.ndarray:
    """CTRA waypoints ``(steps, 2)`` from one raw (unnormalised) observation window."""
    accel, yaw_rate = estimate_motion(obs[:, :5])
    state = VehicleState.from_array(obs[-1, :5])
    return ctra_predict(state, accel, yaw_rate, steps * step, step).waypoints.copy()


def ctra_batch(obs: np.ndarray) -> np.ndarray:
    return np.stack([ctra_from_window(o) for o in obs]) if len(obs) else np.zeros((0, PRED_STEPS, 2))
