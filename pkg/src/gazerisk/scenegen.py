"""Synthetic intersection episodes and the sliding-window dataset built from them.

An episode is one approach to a four-way intersection at constant speed.
The ego either continues straight or makes a 90 degree turn; the driver's
gaze jumps toward the turn side ``gaze_lead`` seconds before the steering
wheel crosses the onset threshold. World frame: the ego starts at the
origin heading +x along a road centred on y = 0; the crossing road is
centred on x = ``cross_x``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from . import aoi as aoi_mod
from .geometry import OrientedRect, obb_intersect, state_rows_to_frame

STRAIGHT, RIGHT, LEFT = 0, 1, 2
CLASS_NAMES = ("straight", "right", "left")

FRAME_DT = 0.1
SIM_DT = 0.01
GAZE_PER_FRAME = 9
OBS_STEPS = 20
PRED_STEPS = 10
PRED_STRIDE = 3  # frames per prediction step (0.3 s)
WINDOW_FRAMES = OBS_STEPS + PRED_STEPS * PRED_STRIDE - 1  # 49: frame span of a 5 s window

GRID = 32
CELL = 1.5
ROAD_HALF_WIDTH = 3.5
CROSSWALK_WIDTH = 3.0
TAU_RANGE = (0.3, 2.4)

FEATURE_NAMES = ("px", "py", "vx", "vy", "theta", "mu_x", "mu_y", "sigma_x", "sigma_y")


class ScenarioError(ValueError):
    pass


def derive_rng(seed: int, *counters: int) -> np.random.Generator:
    """Independent generator for a (seed, counters...) tuple."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *map(int, counters)]))


@dataclass(frozen=True)
class PedestrianScript:
    """Constant-velocity pedestrian.

    With ``collide_time`` set, the start position is ignored and solved so
    the pedestrian stands on the ego's ground-truth path at that time.
    """

    x: float = 0.0
    y: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    on_path: bool = False
    collide_time: Optional[float] = None


@dataclass(frozen=True)
class ScenarioConfig:
    turn: int = STRAIGHT
    gaze_lead: float = 1.35
    approach_speed: float = 10.0
    gaze_shift: float = 400.0
    gaze_noise: float = 30.0
    pedestrians: tuple = ()
    seed: int = 0
    duration: float = 12.0
    turn_start: float = 5.0
    ramp_duration: float = 1.5
    turn_radius: float = 8.0
    wheelbase: float = 2.7
    wander_heading: float = 0.0
    wander_freq: float = 0.25
    steer_threshold: float = math.radians(5.0)

    def validate(self) -> None:
        if self.turn not in (STRAIGHT, RIGHT, LEFT):
            raise ScenarioError(f"turn must be 0, 1 or 2, got {self.turn}")
        if not (TAU_RANGE[0] <= self.gaze_lead <= TAU_RANGE[1]):
            raise ScenarioError(f"gaze lead {self.gaze_lead} s outside {TAU_RANGE}")
        if self.approach_speed <= 0:
            raise ScenarioError("approach speed must be positive")
        if self.duration < 5.0:
            raise ScenarioError("episodes must be at least 5 s long")


@dataclass
class Episode:
    episode_id: str
    config: ScenarioConfig
    states: np.ndarray  # (N, 5) world [px, py, vx, vy, theta]
    steer: np.ndarray  # (N,)
    gaze: np.ndarray  # (9N, 3) [u, v, t]
    aoi: np.ndarray  # (N, 5) [mu_x, mu_y, sigma_x, sigma_y, rho]
    ped_pos: np.ndarray  # (N, P, 2)
    ped_vel: np.ndarray  # (P, 2)
    labels: np.ndarray  # (N,)
    meta: dict = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return len(self.states)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_frames) * FRAME_DT

    def raster(self, k: int) -> np.ndarray:
        return scene_raster(self.states[k], self.meta["cross_x"], self.ped_pos[k])

    @property
    def rasters(self) -> np.ndarray:
        """All frames' rasters, ``(N, 3, 32, 32)``; recomputed on each access."""
        return np.stack([self.raster(k) for k in range(self.n_frames)])


# ---------------------------------------------------------------------------
# steering and kinematics


def _ramp(s: np.ndarray) -> np.ndarray:
    s = np.clip(s, 0.0, 1.0)
    return 0.5 * (1.0 - np.cos(np.pi * s))


def turn_profile(config: ScenarioConfig) -> tuple[float, float]:
    """Peak steer angle and hold time giving a 90 degree heading change.

    The peak starts at ``atan(L / R)``; when the two raised-cosine ramps
    alone already exceed 90 degrees the hold is zero and the peak is
    lowered by bisection.
    """
    v, L, r = config.approach_speed, config.wheelbase, config.ramp_duration
    s = (np.arange(2000) + 0.5) / 2000.0

    def ramp_heading(peak):
        return float(np.mean(v * np.tan(peak * _ramp(s)) / L) * r)

    peak = math.atan(L / config.turn_radius)
    full = ramp_heading(peak)
    rate = v * math.tan(peak) / L
    hold = (math.pi / 2 - 2 * full) / rate
    if hold >= 0:
        return peak, hold
    lo, hi = 0.0, peak
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if 2 * ramp_heading(mid) > math.pi / 2:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi), 0.0


def steer_angle(config: ScenarioConfig, t: np.ndarray, peak: float, hold: float) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    v, L = config.approach_speed, config.wheelbase
    w = 2 * math.pi * config.wander_freq
    # lane-keeping wander whose heading is a zero-start sinusoid
    wander = np.arctan(L * config.wander_heading * w * np.cos(w * t) / v)
    if config.turn == STRAIGHT:
        return wander
    sign = 1.0 if config.turn == LEFT else -1.0
    r = config.ramp_duration
    t1 = t - config.turn_start
    up = _ramp(t1 / r)
    down = 1.0 - _ramp((t1 - r - hold) / r)
    return wander + sign * peak * np.minimum(up, down)


def simulate_ego(config: ScenarioConfig, dt: float = SIM_DT, include_turn: bool = True):
    """Integrate the kinematic model at ``dt``.

    The yaw rate is held at its mid-step value over each step and the
    position advanced along the exact arc, so positions and the stored
    velocities agree to second order in ``dt``.

    Returns ``(t, states (n, 5), steer)``.
    """
    cfg = config if include_turn else replace(config, turn=STRAIGHT)
    peak, hold = turn_profile(cfg)
    n = int(round(cfg.duration / dt))
    t = np.arange(n) * dt
    steer = steer_angle(cfg, t, peak, hold)
    mid_steer = steer_angle(cfg, t + dt / 2, peak, hold)
    v, L = cfg.approach_speed, cfg.wheelbase
    x = np.zeros(n)
    y = np.zeros(n)
    th = np.zeros(n)
    for i in range(n - 1):
        w = v * math.tan(mid_steer[i]) / L
        th1 = th[i] + w * dt
        if abs(w) > 1e-9:
            x[i + 1] = x[i] + v / w * (math.sin(th1) - math.sin(th[i]))
            y[i + 1] = y[i] - v / w * (math.cos(th1) - math.cos(th[i]))
        else:
            x[i + 1] = x[i] + v * dt * math.cos(th[i])
            y[i + 1] = y[i] + v * dt * math.sin(th[i])
        th[i + 1] = th1
    states = np.stack([x, y, v * np.cos(th), v * np.sin(th), th], axis=1)
    return t, states, steer


def turn_extent(config: ScenarioConfig) -> tuple[float, float]:
    """Forward and lateral displacement of the turn manoeuvre alone."""
    cfg = replace(config, turn=LEFT, wander_heading=0.0, turn_start=0.0)
    peak, hold = turn_profile(cfg)
    cfg = replace(cfg, duration=2 * cfg.ramp_duration + hold + 0.05)
    _, st, _ = simulate_ego(cfg)
    return float(st[-1, 0]), float(st[-1, 1])


# ---------------------------------------------------------------------------
# scene raster


def _cell_offsets() -> np.ndarray:
    idx = np.arange(GRID)
    ahead = (GRID / 2 - 0.5 - idx) * CELL  # row 0 is farthest ahead
    left = (GRID / 2 - 0.5 - idx) * CELL  # column 0 is farthest left
    xx, yy = np.meshgrid(ahead, left, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel()], axis=1)


_CELLS = _cell_offsets()


def scene_raster(state: np.ndarray, cross_x: float, peds: Optional[np.ndarray] = None) -> np.ndarray:
    """Ego-centred, ego-aligned ``(3, 32, 32)`` occupancy grid.

    Channels: drivable road, crosswalk zones, pedestrians.
    """
    c, s = math.cos(state[4]), math.sin(state[4])
    wx = state[0] + c * _CELLS[:, 0] - s * _CELLS[:, 1]
    wy = state[1] + s * _CELLS[:, 0] + c * _CELLS[:, 1]
    on_main = np.abs(wy) <= ROAD_HALF_WIDTH
    on_cross = np.abs(wx - cross_x) <= ROAD_HALF_WIDTH
    road = on_main | on_cross
    dx, dy = np.abs(wx - cross_x), np.abs(wy)
    band_lo, band_hi = ROAD_HALF_WIDTH, ROAD_HALF_WIDTH + CROSSWALK_WIDTH
    crosswalk = ((dx > band_lo) & (dx <= band_hi) & on_main) | ((dy > band_lo) & (dy <= band_hi) & on_cross)
    agents = np.zeros_like(road)
    if peds is not None and len(peds):
        reach = CELL / 2 + 0.25
        for px, py in np.asarray(peds).reshape(-1, 2):
            agents |= (np.abs(wx - px) <= reach) & (np.abs(wy - py) <= reach)
    grid = np.stack([road, crosswalk, agents]).astype(np.float32)
    return grid.reshape(3, GRID, GRID)


# ---------------------------------------------------------------------------
# episodes


def _first_contact(ego: np.ndarray, ped: np.ndarray, ego_dims, ped_dims) -> Optional[int]:
    for k in range(len(ego)):
        a = OrientedRect((ego[k, 0], ego[k, 1]), ego[k, 4], *ego_dims)
        b = OrientedRect((ped[k, 0], ped[k, 1]), 0.0, *ped_dims)
        if obb_intersect(a, b):
            return k
    return None


def generate_episode(
    config: ScenarioConfig,
    episode_id: str = "ep00000",
    ego_dims=(4.5, 1.8),
    ped_dims=(0.5, 0.5),
) -> Episode:
    """Simulate one episode at 100 Hz and sample it at 10 Hz."""
    config.validate()
    rng = derive_rng(config.seed, 1)
    stride = int(round(FRAME_DT / SIM_DT))
    t_fine, fine, steer_fine = simulate_ego(config)
    states = fine[::stride]
    steer = steer_fine[::stride]
    n = len(states)
    times = np.arange(n) * FRAME_DT

    peak, hold = turn_profile(config)
    fwd, _ = turn_extent(config)
    k_start = int(round(config.turn_start / SIM_DT))
    if k_start < len(fine):
        cross_x = float(fine[k_start, 0] + fwd)
    else:
        # the turn would start after the episode ends; extend the approach
        cross_x = float(fine[-1, 0] + config.approach_speed * (config.turn_start - t_fine[-1]) + fwd)
    turn_end = config.turn_start + 2 * config.ramp_duration + hold

    meta = {
        "turn_start": config.turn_start,
        "turn_end": turn_end,
        "cross_x": cross_x,
        "peak_steer": peak,
        "hold": hold,
    }

    labels = np.zeros(n, dtype=np.int64)
    gaze_offset = np.zeros(n * GAZE_PER_FRAME)
    gaze_t = (np.arange(n)[:, None] * FRAME_DT + np.arange(GAZE_PER_FRAME)[None, :] / 90.0).ravel()
    if config.turn != STRAIGHT:
        above = np.nonzero((np.abs(steer) > config.steer_threshold) & (times >= config.turn_start))[0]
        if len(above) == 0:
            raise ScenarioError("turn never crosses the steering threshold")
        k_cross = int(above[0])
        k_shift = k_cross - int(round(config.gaze_lead / FRAME_DT))
        if k_shift < int(round(1.0 / FRAME_DT)):
            raise ScenarioError("gaze shift falls inside the first second of the episode")
        k_end = min(n, int(math.ceil(turn_end / FRAME_DT - 1e-9)))
        labels[k_shift:k_end] = config.turn
        side = 1.0 if config.turn == RIGHT else -1.0
        frame_of_sample = np.repeat(np.arange(n), GAZE_PER_FRAME)
        gaze_offset[(frame_of_sample >= k_shift) & (frame_of_sample < k_end)] = side * config.gaze_shift
        meta.update(steer_cross=k_cross * FRAME_DT, gaze_shift_time=k_shift * FRAME_DT)

    u = aoi_mod.IMAGE_WIDTH / 2 + gaze_offset + rng.normal(0.0, config.gaze_noise, n * GAZE_PER_FRAME)
    v = aoi_mod.IMAGE_HEIGHT / 2 + rng.normal(0.0, config.gaze_noise, n * GAZE_PER_FRAME)
    u = np.clip(u, 0.0, aoi_mod.IMAGE_WIDTH)
    v = np.clip(v, 0.0, aoi_mod.IMAGE_HEIGHT)
    gaze = np.stack([u, v, gaze_t], axis=1)
    aoi = fit_aoi_frames(gaze, n)

    n_ped = len(config.pedestrians)
    ped_vel = np.zeros((n_ped, 2))
    ped_pos = np.zeros((n, n_ped, 2))
    conflicts = []
    for j, script in enumerate(config.pedestrians):
        vel = np.array([script.vx, script.vy], dtype=float)
        if script.collide_time is not None:
            kc = int(round(script.collide_time / SIM_DT))
            start = fine[kc, :2] - vel * script.collide_time
        else:
            start = np.array([script.x, script.y], dtype=float)
        ped_vel[j] = vel
        ped_pos[:, j] = start[None, :] + times[:, None] * vel[None, :]
        # ground-truth conflict: outlines overlap on the 100 Hz path; the
        # collision instant is the closest approach of the two centres
        ped_fine = start[None, :] + t_fine[:, None] * vel[None, :]
        dist = np.hypot(fine[:, 0] - ped_fine[:, 0], fine[:, 1] - ped_fine[:, 1])
        near = np.nonzero(dist < math.hypot(*ego_dims) / 2 + math.hypot(*ped_dims) / 2)[0]
        if len(near):
            k0 = _first_contact(fine[near], ped_fine[near], ego_dims, ped_dims)
            if k0 is not None:
                k_contact = int(near[k0])
                seg = slice(k_contact, min(len(fine), k_contact + int(round(1.0 / SIM_DT))))
                k_impact = k_contact + int(np.argmin(dist[seg]))
                conflicts.append(
                    {"obstacle": j, "collision_time": float(t_fine[k_impact]), "first_contact": float(t_fine[k_contact])}
                )
    meta["conflicts"] = conflicts

    return Episode(
        episode_id=episode_id,
        config=config,
        states=states,
        steer=steer,
        gaze=gaze,
        aoi=aoi,
        ped_pos=ped_pos,
        ped_vel=ped_vel,
        labels=labels,
        meta=meta,
    )


def fit_aoi_frames(gaze: np.ndarray, n_frames: int) -> np.ndarray:
    """Per-frame AOI parameters ``[mu_x, mu_y, sigma_x, sigma_y, rho]``."""
    samples = [aoi_mod.GazeSample(float(u), float(v), float(t)) for u, v, t in gaze]
    series = aoi_mod.aoi_series(samples, n_frames, FRAME_DT)
    return np.array([[a.mu_x, a.mu_y, a.sigma_x, a.sigma_y, a.rho] for a in series])


# ---------------------------------------------------------------------------
# corpus


@dataclass(frozen=True)
class CorpusSpec:
    """How many episodes of each manoeuvre to generate and how to vary them."""

    straight: int = 12
    right: int = 8
    left: int = 10
    tau_mean: float = 1.35
    tau_std: float = 0.45
    turn_start_range: tuple = (4.5, 5.5)
    wander_heading_range: tuple = (0.02, 0.06)
    wander_freq_range: tuple = (0.15, 0.35)
    duration: float = 12.0
    max_pedestrians: int = 2

    @property
    def n_episodes(self) -> int:
        return self.straight + self.right + self.left


def sample_tau(rng: np.random.Generator, mean: float = 1.35, std: float = 0.45) -> float:
    """Clipped-normal gaze lead on the support observed for real drivers."""
    return float(np.clip(rng.normal(mean, std), *TAU_RANGE))


def _random_pedestrians(rng: np.random.Generator, cross_x: float, count: int) -> tuple:
    peds = []
    for _ in range(count):
        # a walker on one of the four crosswalks, moving across the road
        arm = int(rng.integers(4))
        offset = ROAD_HALF_WIDTH + CROSSWALK_WIDTH / 2
        speed = float(rng.uniform(0.0, 1.5)) * (1 if rng.random() < 0.5 else -1)
        along = float(rng.uniform(-ROAD_HALF_WIDTH - 4, ROAD_HALF_WIDTH + 4))
        if arm < 2:
            x = cross_x + (offset if arm == 0 else -offset)
            peds.append(PedestrianScript(x=x, y=along - speed * 6.0, vy=speed))
        else:
            y = offset if arm == 2 else -offset
            peds.append(PedestrianScript(x=cross_x + along - speed * 6.0, y=y, vx=speed))
    return tuple(peds)


def corpus_configs(spec: CorpusSpec, seed: int) -> list[ScenarioConfig]:
    """Deterministic list of scenario configs, one per episode."""
    turns = [STRAIGHT] * spec.straight + [RIGHT] * spec.right + [LEFT] * spec.left
    order = derive_rng(seed, 0).permutation(len(turns))
    configs = []
    for idx, pos in enumerate(order):
        rng = derive_rng(seed, 2, idx)
        base = ScenarioConfig(
            turn=turns[pos],
            gaze_lead=sample_tau(rng, spec.tau_mean, spec.tau_std),
            turn_start=float(rng.uniform(*spec.turn_start_range)),
            wander_heading=float(rng.uniform(*spec.wander_heading_range)),
            wander_freq=float(rng.uniform(*spec.wander_freq_range)),
            duration=spec.duration,
            seed=int(rng.integers(2 ** 62)),
        )
        fwd, _ = turn_extent(base)
        cross_x = base.approach_speed * base.turn_start + fwd
        n_ped = int(rng.integers(spec.max_pedestrians + 1))
        configs.append(replace(base, pedestrians=_random_pedestrians(rng, cross_x, n_ped)))
    return configs


def generate_corpus(spec: CorpusSpec, seed: int) -> list[Episode]:
    return [generate_episode(cfg, f"ep{i:05d}") for i, cfg in enumerate(corpus_configs(spec, seed))]


# ---------------------------------------------------------------------------
# windowed records


@dataclass
class EpisodeRecord:
    episode_id: str
    t0: float
    obs: np.ndarray  # (20, 9)
    raster: np.ndarray  # (3, 32, 32) float32
    label: int
    future: np.ndarray  # (10, 2)
    steer: np.ndarray  # (20,)


@dataclass
class RecordSet:
    """Column-oriented batch of records."""

    episode_ids: np.ndarray  # (N,) str
    t0: np.ndarray
    obs: np.ndarray  # (N, 20, 9)
    raster: np.ndarray  # (N, 3, 32, 32) float32
    labels: np.ndarray  # (N,)
    future: np.ndarray  # (N, 10, 2)
    steer: np.ndarray  # (N, 20)

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "RecordSet":
        return RecordSet(
            self.episode_ids[idx], self.t0[idx], self.obs[idx], self.raster[idx],
            self.labels[idx], self.future[idx], self.steer[idx],
        )

    def record(self, i: int) -> EpisodeRecord:
        return EpisodeRecord(
            str(self.episode_ids[i]), float(self.t0[i]), self.obs[i], self.raster[i],
            int(self.labels[i]), self.future[i], self.steer[i],
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self.record(i)

    @classmethod
    def from_records(cls, records: Sequence[EpisodeRecord]) -> "RecordSet":
        if not records:
            return cls.empty()
        return cls(
            np.array([r.episode_id for r in records]),
            np.array([r.t0 for r in records], dtype=float),
            np.stack([r.obs for r in records]).astype(float),
            np.stack([r.raster for r in records]).astype(np.float32),
            np.array([r.label for r in records], dtype=np.int64),
            np.stack([r.future for r in records]).astype(float),
            np.stack([r.steer for r in records]).astype(float),
        )

    @classmethod
    def empty(cls) -> "RecordSet":
        return cls(
            np.array([], dtype=str), np.zeros(0), np.zeros((0, OBS_STEPS, 9)),
            np.zeros((0, 3, GRID, GRID), dtype=np.float32), np.zeros(0, dtype=np.int64),
            np.zeros((0, PRED_STEPS, 2)), np.zeros((0, OBS_STEPS)),
        )

    @classmethod
    def concat(cls, sets: Sequence["RecordSet"]) -> "RecordSet":
        sets = [s for s in sets if len(s)]
        if not sets:
            return cls.empty()
        return cls(*(np.concatenate([getattr(s, f) for s in sets]) for f in (
            "episode_ids", "t0", "obs", "raster", "labels", "future", "steer")))


def observation_window(episode: Episode, k0: int):
    """Observation rows, raster and steering for the window ending at frame ``k0``."""
    if k0 < OBS_STEPS - 1:
        raise ScenarioError(f"frame {k0} has less than {OBS_STEPS} frames of history")
    anchor = episode.states[k0]
    rows = state_rows_to_frame(episode.states[k0 - OBS_STEPS + 1:k0 + 1], anchor)
    obs = np.concatenate([rows, episode.aoi[k0 - OBS_STEPS + 1:k0 + 1, :4]], axis=1)
    return obs, episode.raster(k0), episode.steer[k0 - OBS_STEPS + 1:k0 + 1].copy()


def future_positions(episode: Episode, k0: int) -> np.ndarray:
    anchor = episode.states[k0]
    idx = k0 + PRED_STRIDE * np.arange(1, PRED_STEPS + 1)
    return state_rows_to_frame(episode.states[idx], anchor)[:, :2]


def window_dataset(episodes: Iterable[Episode], stride: float = 0.1) -> RecordSet:
    """One record per window position of length 5 s, moved by ``stride``.

    Observations cover the first 2 s and the ground truth the last 3 s;
    everything is expressed in the ego frame at the window's current time.
    """
    step = max(1, int(round(stride / FRAME_DT)))
    sets = []
    for ep in episodes:
        recs = []
        for k0 in range(OBS_STEPS - 1, ep.n_frames - PRED_STEPS * PRED_STRIDE, step):
            obs, raster, steer = observation_window(ep, k0)
            recs.append(EpisodeRecord(
                ep.episode_id, round(k0 * FRAME_DT, 10), obs, raster, int(ep.labels[k0]),
                future_positions(ep, k0), steer,
            ))
        sets.append(RecordSet.from_records(recs))
    return RecordSet.concat(sets)


def split_dataset(records: RecordSet, ratios=(3, 1, 1), seed: int = 0):
    """Split by episode so no episode contributes to two splits.

    Episodes are shuffled within each manoeuvre and dealt out in the
    repeating pattern given by the integer ``ratios``, so every split gets
    its share of each manoeuvre.
    """
    ids = sorted(set(records.episode_ids.tolist()))
    if len(ids) < 5:
        raise ScenarioError(f"need at least 5 episodes to split, got {len(ids)}")
    maneuver = {}
    for eid, label in zip(records.episode_ids.tolist(), records.labels.tolist()):
        maneuver[eid] = max(maneuver.get(eid, 0), int(label))
    rng = derive_rng(seed, 3)
    ordered = []
    for cls in range(3):
        members = [e for e in ids if maneuver[e] == cls]
        ordered.extend(members[i] for i in rng.permutation(len(members)))
    pattern = [k for k, r in enumerate(ratios) for _ in range(int(r))]
    total = sum(ratios)
    quota = [int(round(len(ids) * r / total)) for r in ratios[:-1]]
    quota.append(len(ids) - sum(quota))
    groups = tuple([] for _ in ratios)
    for i, eid in enumerate(ordered):
        k = pattern[i % len(pattern)]
        if len(groups[k]) >= quota[k]:
            k = max(range(len(ratios)), key=lambda j: quota[j] - len(groups[j]))
        groups[k].append(eid)
    return tuple(records.subset(np.isin(records.episode_ids, g)) for g in groups), groups


def class_counts(records: RecordSet) -> dict[str, int]:
    counts = np.bincount(records.labels, minlength=3)
    return {name: int(c) for name, c in zip(CLASS_NAMES, counts)}


# ---------------------------------------------------------------------------
# JSON-lines files
#
# Floats go through ``json``, which writes the shortest decimal string that
# reads back to the same double, so a save/load round trip is exact.


def record_to_json(rec: EpisodeRecord) -> str:
    return json.dumps({
        "episode_id": rec.episode_id,
        "t0": float(rec.t0),
        "obs": np.asarray(rec.obs, dtype=float).tolist(),
        "raster": np.asarray(rec.raster, dtype=np.float32).ravel().astype(float).tolist(),
        "label": int(rec.label),
        "future": np.asarray(rec.future, dtype=float).tolist(),
        "steer": np.asarray(rec.steer, dtype=float).tolist(),
    }, separators=(",", ":"))


def record_from_json(line: str) -> EpisodeRecord:
    d = json.loads(line)
    steer = d.get("steer")
    return EpisodeRecord(
        episode_id=d["episode_id"],
        t0=float(d["t0"]),
        obs=np.array(d["obs"], dtype=float).reshape(OBS_STEPS, 9),
        raster=np.array(d["raster"], dtype=np.float32).reshape(3, GRID, GRID),
        label=int(d["label"]),
        future=np.array(d["future"], dtype=float).reshape(PRED_STEPS, 2),
        steer=np.zeros(OBS_STEPS) if steer is None else np.array(steer, dtype=float),
    )


def write_records(path, records: Iterable[EpisodeRecord], append: bool = False) -> int:
    n = 0
    with open(path, "a" if append else "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(record_to_json(rec) + "\n")
            n += 1
    return n


def read_records(path) -> RecordSet:
    with open(path, encoding="utf-8") as fh:
        return RecordSet.from_records([record_from_json(line) for line in fh if line.strip()])


def _config_to_dict(config: ScenarioConfig) -> dict:
    d = asdict(config)
    d["pedestrians"] = [asdict(p) for p in config.pedestrians]
    return d


def _config_from_dict(d: dict) -> ScenarioConfig:
    d = dict(d)
    d["pedestrians"] = tuple(PedestrianScript(**p) for p in d.get("pedestrians", ()))
    return ScenarioConfig(**d)


def episode_to_json(ep: Episode) -> str:
    return json.dumps({
        "episode_id": ep.episode_id,
        "config": _config_to_dict(ep.config),
        "states": ep.states.tolist(),
        "steer": ep.steer.tolist(),
        "gaze": ep.gaze.tolist(),
        "aoi": ep.aoi.tolist(),
        "ped_pos": ep.ped_pos.tolist(),
        "ped_vel": ep.ped_vel.tolist(),
        "labels": ep.labels.tolist(),
        "meta": ep.meta,
    }, separators=(",", ":"))


def episode_from_json(line: str) -> Episode:
    d = json.loads(line)
    n = len(d["states"])
    n_ped = len(d["ped_vel"])
    return Episode(
        episode_id=d["episode_id"],
        config=_config_from_dict(d["config"]),
        states=np.array(d["states"], dtype=float).reshape(n, 5),
        steer=np.array(d["steer"], dtype=float),
        gaze=np.array(d["gaze"], dtype=float).reshape(-1, 3),
        aoi=np.array(d["aoi"], dtype=float).reshape(n, 5),
        ped_pos=np.array(d["ped_pos"], dtype=float).reshape(n, n_ped, 2),
        ped_vel=np.array(d["ped_vel"], dtype=float).reshape(n_ped, 2),
        labels=np.array(d["labels"], dtype=np.int64),
        meta=d["meta"],
    )


def write_episodes(path, episodes: Iterable[Episode], append: bool = False) -> int:
    n = 0
    with open(path, "a" if append else "w", encoding="utf-8") as fh:
        for ep in episodes:
            fh.write(episode_to_json(ep) + "\n")
            n += 1
    return n


def read_episodes(path) -> list[Episode]:
    with open(path, encoding="utf-8") as fh:
        return [episode_from_json(line) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# scripted risk suite


def _min_center_distance(ep_states: np.ndarray, ped: PedestrianScript, dt: float = FRAME_DT) -> float:
    t = np.arange(len(ep_states)) * dt
    px = ped.x + ped.vx * t
    py = ped.y + ped.vy * t
    return float(np.min(np.hypot(ep_states[:, 0] - px, ep_states[:, 1] - py)))


def _bait_pedestrian(config: ScenarioConfig, target_x: float, lateral: float) -> PedestrianScript:
    """Park a pedestrian where the ego's constant-yaw-rate path, taken just before the turn, reaches ``target_x``."""
    _, ego, _ = simulate_ego(config, dt=FRAME_DT)
    k = int(round((config.turn_start - 0.2) / FRAME_DT))
    x, y, _, _, th = ego[k]
    w = (ego[k + 1, 4] - ego[k - 1, 4]) / (2 * FRAME_DT) / config.approach_speed  # curvature
    ds = 0.05
    while x < target_x:
        x += ds * math.cos(th)
        y += ds * math.sin(th)
        th += w * ds
    return PedestrianScript(x=x - lateral * math.sin(th), y=y + lateral * math.cos(th))


def risk_suite(seed: int, n_turns: int = 20, n_conflicts: int = 8, n_bait: int = 4) -> list[Episode]:
    """Turn episodes with scripted pedestrians for alarm auditing.

    ``n_conflicts`` episodes put a walking pedestrian on the ego's true path
    late in the turn. ``n_bait`` episodes park a pedestrian on the straight
    continuation of the approach road, which only a straight-line
    prediction runs into (``meta["bait"]``). The rest place pedestrians at
    least 8 m from the ego at all times.
    """
    if n_conflicts + n_bait > n_turns:
        raise ScenarioError("more scripted conflicts and baits than turns")
    episodes = []
    for i in range(n_turns):
        rng = derive_rng(seed, 4, i)
        kind = "conflict" if i < n_conflicts else ("bait" if i < n_conflicts + n_bait else "clear")
        tau = float(rng.uniform(1.6, 2.1)) if kind == "bait" else sample_tau(rng)
        base = ScenarioConfig(
            turn=RIGHT if i % 2 else LEFT,
            gaze_lead=tau,
            turn_start=float(rng.uniform(4.5, 5.5)),
            wander_heading=float(rng.uniform(0.02, 0.06)),
            wander_freq=float(rng.uniform(0.15, 0.35)),
            seed=int(rng.integers(2 ** 62)),
        )
        fwd, _ = turn_extent(base)
        cross_x = base.approach_speed * base.turn_start + fwd
        if kind == "conflict":
            speed = float(rng.uniform(0.8, 1.4)) * (1 if rng.random() < 0.5 else -1)
            when = base.turn_start + float(rng.uniform(2.5, 3.5))
            peds = (PedestrianScript(vx=speed, on_path=True, collide_time=when),)
        elif kind == "bait":
            peds = (_bait_pedestrian(base, cross_x + float(rng.uniform(4.0, 5.5)), float(rng.uniform(-0.3, 0.3))),)
        else:
            _, ego, _ = simulate_ego(base, dt=FRAME_DT)
            while True:
                cand = PedestrianScript(
                    x=cross_x + float(rng.uniform(-25, 25)),
                    y=float(rng.uniform(-25, 25)),
                    vx=float(rng.uniform(-1, 1)),
                    vy=float(rng.uniform(-1, 1)),
                )
                if _min_center_distance(ego, cand) >= 8.0:
                    break
            peds = (cand,)
        ep = generate_episode(replace(base, pedestrians=peds), f"risk{i:03d}")
        if (kind == "conflict") != bool(ep.meta["conflicts"]):
            raise ScenarioError(f"scripted {kind} episode {i} has conflicts {ep.meta['conflicts']}")
        ep.meta["kind"] = kind
        ep.meta["bait"] = kind == "bait"
        episodes.append(ep)
    return episodes


def episode_ticks(episode: Episode, first: int = OBS_STEPS - 1) -> RecordSet:
    """One record per frame from ``first`` to the end, for online evaluation.

    Frames too close to the end for a full future get NaN ground truth.
    """
    recs = []
    last_full = episode.n_frames - 1 - PRED_STEPS * PRED_STRIDE
    for k0 in range(first, episode.n_frames):
        obs, raster, steer = observation_window(episode, k0)
        future = future_positions(episode, k0) if k0 <= last_full else np.full((PRED_STEPS, 2), np.nan)
        recs.append(EpisodeRecord(episode.episode_id, round(k0 * FRAME_DT, 10), obs, raster,
                                  int(episode.labels[k0]), future, steer))
    return RecordSet.from_records(recs)
