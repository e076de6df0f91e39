"""Visual area-of-interest fitting and gaze/steering onset analysis.

Gaze arrives at 90 Hz in image pixels. Each 10 Hz video frame gets a
bivariate Gaussian fitted to the gaze points that fall inside it; the
horizontal centre of that Gaussian is then used to find when the driver's
attention moved relative to when the steering wheel started turning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

IMAGE_WIDTH = 1920
IMAGE_HEIGHT = 1080
SIGMA_FLOOR = 1e-6
FRAME_DT = 0.1


class FewerThanTwoSamples(ValueError):
    pass


class SeriesTooShort(ValueError):
    pass


@dataclass(frozen=True)
class GazeSample:
    u: float
    v: float
    t: float


@dataclass(frozen=True)
class AoiGaussian:
    mu_x: float
    mu_y: float
    sigma_x: float
    sigma_y: float
    rho: float = 0.0

    def __post_init__(self):
        if self.sigma_x < SIGMA_FLOOR or self.sigma_y < SIGMA_FLOOR:
            raise ValueError("AOI sigmas must be at least the floor")
        if abs(self.rho) > 1.0:
            raise ValueError(f"|rho| must be <= 1, got {self.rho}")

    def features(self) -> tuple[float, float, float, float]:
        """The four parameters fed to the models; rho is deliberately left out."""
        return (self.mu_x, self.mu_y, self.sigma_x, self.sigma_y)


DEFAULT_AOI = AoiGaussian(IMAGE_WIDTH / 2, IMAGE_HEIGHT / 2, SIGMA_FLOOR, SIGMA_FLOOR, 0.0)


def fit_aoi(samples: Sequence[GazeSample], sigma_floor: float = SIGMA_FLOOR) -> AoiGaussian:
    """Fit the AOI Gaussian to the gaze points of one frame.

    Uses Bessel-corrected standard deviations. A sigma below ``sigma_floor``
    is clamped and the correlation is then reported as 0.
    """
    if len(samples) < 2:
        raise FewerThanTwoSamples(f"need at least 2 gaze samples, got {len(samples)}")
    pts = np.array([(s.u, s.v) for s in samples], dtype=float)
    mu = pts.mean(axis=0)
    centred = pts - mu
    n = len(pts)
    var = (centred ** 2).sum(axis=0) / (n - 1)
    cov = (centred[:, 0] * centred[:, 1]).sum() / (n - 1)
    sx, sy = math.sqrt(var[0]), math.sqrt(var[1])
    if sx < sigma_floor or sy < sigma_floor:
        return AoiGaussian(mu[0], mu[1], max(sx, sigma_floor), max(sy, sigma_floor), 0.0)
    rho = min(1.0, max(-1.0, cov / (sx * sy)))
    return AoiGaussian(mu[0], mu[1], sx, sy, rho)


def frame_index(t: float, frame_dt: float = FRAME_DT) -> int:
    # the small offset keeps samples stamped exactly on a boundary in the later frame
    return int(math.floor(t / frame_dt + 1e-9))


def aoi_series(
    gaze: Iterable[GazeSample],
    n_frames: int,
    frame_dt: float = FRAME_DT,
    initial: AoiGaussian = DEFAULT_AOI,
) -> list[AoiGaussian]:
    """Group gaze into frames ``[k dt, (k+1) dt)`` and fit one AOI per frame.

    Frames with fewer than two samples repeat the previous frame's AOI
    (``initial`` for the very first frame).
    """
    bins: list[list[GazeSample]] = [[] for _ in range(n_frames)]
    for s in gaze:
        k = frame_index(s.t, frame_dt)
        if 0 <= k < n_frames:
            bins[k].append(s)
    out = []
    previous = initial
    for group in bins:
        try:
            previous = fit_aoi(group)
        except FewerThanTwoSamples:
            pass
        out.append(previous)
    return out


@dataclass(frozen=True)
class OnsetParams:
    k: float = 2.0
    confirm_frames: int = 3
    baseline_s: float = 1.0
    frame_dt: float = FRAME_DT
    steer_threshold: float = math.radians(5.0)
    steer_quiet_s: float = 1.0


def detect_aoi_onset(
    mu_x: Sequence[float],
    params: OnsetParams = OnsetParams(),
    sigma_base: Optional[float] = None,
    t_start: float = 0.0,
) -> Optional[float]:
    """Time at which the horizontal AOI centre departs from its recent median.

    A frame is an exceedance when it differs from the median of the
    preceding ``baseline_s`` of frames by more than ``k * sigma_base``;
    the onset is the first frame of a run of ``confirm_frames``
    exceedances. ``sigma_base`` defaults to the sample std of the first
    ``baseline_s`` of the series.
    """
    series = np.asarray(mu_x, dtype=float)
    n_base = int(round(params.baseline_s / params.frame_dt))
    if len(series) < n_base:
        raise SeriesTooShort(f"need at least {n_base} frames, got {len(series)}")
    if sigma_base is None:
        sigma_base = float(np.std(series[:n_base], ddof=1)) if n_base > 1 else 0.0
    threshold = params.k * sigma_base
    run = 0
    for i in range(n_base, len(series)):
        ref = np.median(series[i - n_base:i])
        if abs(series[i] - ref) > threshold:
            run += 1
            if run == params.confirm_frames:
                return t_start + (i - run + 1) * params.frame_dt
        else:
            run = 0
    return None


def detect_steer_onset(
    steer: Sequence[float],
    params: OnsetParams = OnsetParams(),
    t_start: float = 0.0,
) -> Optional[float]:
    """First time |steer| exceeds the threshold after a quiet period."""
    series = np.abs(np.asarray(steer, dtype=float))
    if len(series) == 0:
        raise SeriesTooShort("empty steering series")
    n_quiet = int(round(params.steer_quiet_s / params.frame_dt))
    below = 0
    for i, value in enumerate(series):
        if value > params.steer_threshold:
            if below >= n_quiet:
                return t_start + i * params.frame_dt
            below = 0
        else:
            below += 1
    return None


@dataclass(frozen=True)
class OnsetReport:
    aoi_onset: Optional[float]
    steer_onset: Optional[float]

    @property
    def leading_time(self) -> Optional[float]:
        if self.aoi_onset is None or self.steer_onset is None:
            return None
        return self.steer_onset - self.aoi_onset


def onset_report(mu_x: Sequence[float], steer: Sequence[float], params: OnsetParams = OnsetParams()) -> OnsetReport:
    return OnsetReport(detect_aoi_onset(mu_x, params), detect_steer_onset(steer, params))


@dataclass
class LeadTimeSummary:
    leading_times: list[float]
    excluded: int
    mean: float = float("nan")
    std: float = float("nan")
    min: float = float("nan")
    max: float = float("nan")
    bin_edges: np.ndarray = field(default_factory=lambda: np.array([]))
    counts: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))


def leading_time_distribution(reports: Iterable[OnsetReport], bin_width: float = 0.3, max_lead: float = 3.0) -> LeadTimeSummary:
    """Summarise leading times over turn events.

    Events missing either onset are skipped and counted in ``excluded``.
    The histogram uses ``bin_width`` bins on [0, max_lead]; values outside
    that range land in the first or last bin.
    """
    leads, excluded = [], 0
    for rep in reports:
        lt = rep.leading_time
        if lt is None:
            excluded += 1
        else:
            leads.append(lt)
    edges = np.round(np.arange(0.0, max_lead + bin_width / 2, bin_width), 10)
    summary = LeadTimeSummary(leads, excluded, bin_edges=edges, counts=np.zeros(len(edges) - 1, dtype=int))
    if leads:
        arr = np.asarray(leads)
        summary.mean = float(arr.mean())
        summary.std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
        summary.min = float(arr.min())
        summary.max = float(arr.max())
        summary.counts, _ = np.histogram(np.clip(arr, edges[0], edges[-1]), bins=edges)
    return summary
