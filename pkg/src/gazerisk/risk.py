"""Particle collision probability, horizon aggregation, risk variants and alarms.

Everything here works in the ego frame of the assessment tick, the frame
the predictors emit trajectories in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .evaluation import AlarmEvent
from .geometry import OrientedRect, Trajectory, obb_intersect_many
from .riskstats import StepErrorModel, chi2_2dof_quantile


class RiskError(ValueError):
    pass


@dataclass(frozen=True)
class RiskConfig:
    n_particles: int = 2000
    threshold: float = 0.40
    consecutive_hits: int = 3
    assessment_rate: float = 10.0
    risk_horizon: float = 2.1
    pred_step: float = 0.3
    level: float = 0.95
    ego_length: float = 4.5
    ego_width: float = 1.8
    ped_length: float = 0.5
    ped_width: float = 0.5

    def __post_init__(self):
        if self.n_particles < 100:
            raise RiskError("n_particles must be at least 100")
        if not 0.0 < self.threshold < 1.0:
            raise RiskError("threshold must lie in (0, 1)")

    @property
    def horizon_steps(self) -> int:
        return int(round(self.risk_horizon / self.pred_step))


def particle_rng(seed: int, tick: int, step: int, stream: int = 0) -> np.random.Generator:
    """Counter-derived stream so each (tick, step) draw is independent of evaluation order."""
    return np.random.default_rng([int(seed), int(tick), int(step), int(stream)])


def sample_particles(model: StepErrorModel, n: int, rng, level: float = 0.95) -> np.ndarray:
    """``n`` error-frame draws from the model's Gaussian, truncated to its confidence ellipse."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    q = chi2_2dof_quantile(level)
    chol = np.linalg.cholesky(model.cov_array)
    out = np.empty((n, 2))
    have, drawn = 0, 0
    while have < n:
        if drawn > 100 * n:
            raise RiskError("rejection sampling exceeded its retry budget")
        want = n - have
        z = rng.standard_normal((want + want // 10 + 8, 2))
        drawn += len(z)
        z = z[np.einsum("ij,ij->i", z, z) <= q][:want]
        out[have:have + len(z)] = z
        have += len(z)
    return out @ chol.T + model.mean_array


def particle_centers(waypoint, heading: float, errors: np.ndarray) -> np.ndarray:
    """Plausible true positions: the waypoint minus each error, rotated out of the error frame."""
    c, s = math.cos(heading), math.sin(heading)
    world = np.stack([c * errors[:, 0] - s * errors[:, 1], s * errors[:, 0] + c * errors[:, 1]], axis=1)
    return np.asarray(waypoint, dtype=float)[None, :] - world


def obstacle_rects(positions: np.ndarray, config: RiskConfig) -> list[OrientedRect]:
    return [OrientedRect((p[0], p[1]), 0.0, config.ped_length, config.ped_width) for p in np.asarray(positions).reshape(-1, 2)]


def collision_counts(centers: np.ndarray, heading: float, obstacles: Sequence[OrientedRect],
                     config: RiskConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-particle any-hit mask and per-obstacle hit counts."""
    hit = np.zeros(len(centers), dtype=bool)
    per = np.zeros(len(obstacles), dtype=np.int64)
    for j, obs in enumerate(obstacles):
        h = obb_intersect_many(centers, heading, config.ego_length, config.ego_width, obs)
        per[j] = int(h.sum())
        hit |= h
    return hit, per


def collision_probability(waypoint, model: Optional[StepErrorModel], heading: float,
                          obstacles: Sequence[OrientedRect], config: RiskConfig, rng) -> float:
    """Fraction of particle rectangles overlapping any obstacle."""
    if model is None:
        raise RiskError("no error model for this step")
    if not obstacles:
        return 0.0
    errors = sample_particles(model, config.n_particles, rng, config.level)
    hit, _ = collision_counts(particle_centers(waypoint, heading, errors), heading, obstacles, config)
    return float(hit.mean())


@dataclass(frozen=True)
class HorizonRisk:
    p_max: float
    step: int  # 1-based step of the maximum, 0 when nothing is at risk
    obstacle: int  # index of the obstacle hit most often at that step, -1 if none
    per_step: tuple


def horizon_risk(traj: np.ndarray, models: Sequence[StepErrorModel], obstacle_tracks: np.ndarray,
                 config: RiskConfig, seed: int = 0, tick: int = 0, stream: int = 0) -> HorizonRisk:
    """Maximum particle collision probability over the steps inside the risk horizon.

    ``traj`` is ``(T, 2)`` and ``obstacle_tracks`` ``(n_obstacles, T', 2)``
    with positions at the same future steps; only the first
    ``config.horizon_steps`` are read.
    """
    k = config.horizon_steps
    traj = np.asarray(traj, dtype=float)
    if k < 1 or len(traj) < k:
        raise RiskError("trajectory shorter than the risk horizon")
    if len(models) < k:
        raise RiskError(f"need error models for steps 1..{k}")
    tracks = np.asarray(obstacle_tracks, dtype=float)
    if tracks.size == 0:
        tracks = np.zeros((0, k, 2))
    if tracks.ndim != 3 or tracks.shape[1] < k:
        raise RiskError(f"obstacle tracks must be (n, >={k}, 2), got {tracks.shape}")
    headings = Trajectory(traj[:k]).chord_headings()
    probs, counts = [], []
    for t in range(k):
        obstacles = obstacle_rects(tracks[:, t], config)
        if not obstacles:
            probs.append(0.0)
            counts.append(np.zeros(0, dtype=np.int64))
            continue
        errors = sample_particles(models[t], config.n_particles, particle_rng(seed, tick, t + 1, stream), config.level)
        hit, per = collision_counts(particle_centers(traj[t], headings[t], errors), headings[t], obstacles, config)
        probs.append(float(hit.mean()))
        counts.append(per)
    p_max, step = horizon_max(probs, config)
    if step == 0:
        return HorizonRisk(0.0, 0, -1, tuple(probs))
    return HorizonRisk(p_max, step, int(np.argmax(counts[step - 1])), tuple(probs))


def horizon_max(per_step: Sequence[float], config: RiskConfig = RiskConfig()) -> tuple[float, int]:
    """Largest probability among the in-horizon steps and its 1-based step (0 if all zero)."""
    k = config.horizon_steps
    if k < 1 or len(per_step) == 0:
        raise RiskError("empty risk horizon")
    probs = np.asarray(per_step[:k], dtype=float)
    best = int(np.argmax(probs))
    if probs[best] <= 0.0:
        return 0.0, 0
    return float(probs[best]), best + 1


def extrapolate_obstacles(previous: np.ndarray, current: np.ndarray, steps: int,
                          dt: float = 0.1, pred_step: float = 0.3) -> np.ndarray:
    """Constant-velocity tracks ``(n, steps, 2)`` from the last two observed positions."""
    previous = np.asarray(previous, dtype=float).reshape(-1, 2)
    current = np.asarray(current, dtype=float).reshape(-1, 2)
    vel = (current - previous) / dt
    times = pred_step * np.arange(1, steps + 1)
    return current[:, None, :] + vel[:, None, :] * times[None, :, None]


def ctra_ra(traj: np.ndarray, obstacle_tracks: np.ndarray, config: RiskConfig) -> tuple[int, int]:
    """Binary risk: 1 when the ego outline on any in-horizon waypoint overlaps an obstacle.

    Returns ``(flag, obstacle index or -1)``.
    """
    k = config.horizon_steps
    traj = np.asarray(traj, dtype=float)[:k]
    headings = Trajectory(traj).chord_headings()
    tracks = np.asarray(obstacle_tracks, dtype=float)
    for t in range(k):
        for j in range(len(tracks)):
            rect = OrientedRect((tracks[j, t, 0], tracks[j, t, 1]), 0.0, config.ped_length, config.ped_width)
            if obb_intersect_many(traj[t:t + 1], headings[t], config.ego_length, config.ego_width, rect)[0]:
                return 1, j
    return 0, -1


def mtp_ra(probs: np.ndarray, trajs: np.ndarray, models, obstacle_tracks, config: RiskConfig,
           seed: int = 0, tick: int = 0) -> tuple[float, HorizonRisk]:
    """Probability-weighted sum of each mode's horizon maximum.

    Returns the expected risk and the horizon result of the mode contributing most.
    """
    per_mode = [horizon_risk(trajs[i], models, obstacle_tracks, config, seed, tick, stream=i + 1)
                for i in range(len(probs))]
    contrib = [float(p) * r.p_max for p, r in zip(probs, per_mode)]
    total = min(1.0, max(0.0, float(sum(contrib))))
    return total, per_mode[int(np.argmax(contrib))]


def alarm_stream(p_c: Sequence[float], config: RiskConfig = RiskConfig()) -> list[int]:
    """Sample indices where an alarm fires.

    A run of samples above the threshold raises one alarm at its
    ``consecutive_hits``-th sample; any sample at or below the threshold
    resets the count.
    """
    onsets, run = [], 0
    for i, p in enumerate(p_c):
        if p > config.threshold:
            run += 1
            if run == config.consecutive_hits:
                onsets.append(i)
        else:
            run = 0
    return onsets


@dataclass
class RiskTrace:
    """Per-tick risk of one method over one episode."""

    method: str
    times: list = field(default_factory=list)
    p_c: list = field(default_factory=list)
    argmax_step: list = field(default_factory=list)
    obstacle: list = field(default_factory=list)
    alarm: list = field(default_factory=list)

    def add(self, t: float, p: float, step: int, obstacle: int) -> None:
        self.times.append(float(t))
        self.p_c.append(float(p))
        self.argmax_step.append(int(step))
        self.obstacle.append(int(obstacle))

    def finalize(self, config: RiskConfig) -> list[AlarmEvent]:
        onsets = set(alarm_stream(self.p_c, config))
        self.alarm = [i in onsets for i in range(len(self.p_c))]
        return [AlarmEvent(self.times[i], self.obstacle[i]) for i in sorted(onsets)]

    def rows(self):
        for i in range(len(self.times)):
            yield (self.times[i], self.p_c[i], self.argmax_step[i], self.obstacle[i], int(self.alarm[i]) if self.alarm else 0)
