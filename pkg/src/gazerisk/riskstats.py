"""Per-step prediction-error statistics.

Errors are ``prediction - truth`` expressed in a frame whose x-axis is the
true direction of motion at that step (along-track) and whose y-axis is
perpendicular to it (cross-track).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

MIN_SAMPLES = 30
REGULARIZATION = 1e-9
MIN_SPEED = 0.1


class ErrorModelError(ValueError):
    pass


@dataclass(frozen=True)
class ErrorSample:
    step: int
    e_x: float
    e_y: float


def decompose_error(pred, true, direction) -> tuple[float, float]:
    """Rotate ``pred - true`` into the frame whose x-axis is ``direction``."""
    dx, dy = float(direction[0]), float(direction[1])
    norm = math.hypot(dx, dy)
    if norm == 0.0:
        raise ErrorModelError("motion direction is undefined")
    c, s = dx / norm, dy / norm
    ex, ey = float(pred[0]) - float(true[0]), float(pred[1]) - float(true[1])
    return c * ex + s * ey, -s * ex + c * ey


def motion_headings(true: np.ndarray, step: float = 0.3, initial: Optional[float] = 0.0,
                    min_speed: float = MIN_SPEED) -> np.ndarray:
    """Direction of travel at each step of ``(N, T, 2)`` ground-truth paths.

    Each step uses the chord from the previous waypoint (the origin for step
    1). Chords slower than ``min_speed`` reuse the previous direction,
    starting from ``initial``; with ``initial=None`` that is an error.
    """
    true = np.asarray(true, dtype=float)
    pts = np.concatenate([np.zeros_like(true[:, :1]), true], axis=1)
    d = np.diff(pts, axis=1)
    ok = np.hypot(d[..., 0], d[..., 1]) / step >= min_speed
    raw = np.arctan2(d[..., 1], d[..., 0])
    out = np.empty(raw.shape)
    prev = np.full(len(true), np.nan if initial is None else float(initial))
    for t in range(true.shape[1]):
        prev = np.where(ok[:, t], raw[:, t], prev)
        out[:, t] = prev
    if np.any(np.isnan(out)):
        raise ErrorModelError("standstill at the first step with no initial heading")
    return out


def error_samples(pred: np.ndarray, true: np.ndarray, step: float = 0.3) -> np.ndarray:
    """``(N, T, 2)`` along/cross-track errors for paths in the ego frame."""
    pred, true = np.asarray(pred, dtype=float), np.asarray(true, dtype=float)
    th = motion_headings(true, step)
    c, s = np.cos(th), np.sin(th)
    e = pred - true
    return np.stack([c * e[..., 0] + s * e[..., 1], -s * e[..., 0] + c * e[..., 1]], axis=-1)


@dataclass(frozen=True)
class StepErrorModel:
    step: int
    mean: tuple
    cov: tuple  # ((s_xx, s_xy), (s_xy, s_yy))
    n: int

    @property
    def mean_array(self) -> np.ndarray:
        return np.array(self.mean, dtype=float)

    @property
    def cov_array(self) -> np.ndarray:
        return np.array(self.cov, dtype=float)

    def mahalanobis2(self, points: np.ndarray) -> np.ndarray:
        d = np.atleast_2d(np.asarray(points, dtype=float)) - self.mean_array
        return np.einsum("ij,jk,ik->i", d, np.linalg.inv(self.cov_array), d)

    @property
    def std(self) -> tuple[float, float]:
        c = self.cov_array
        return math.sqrt(c[0, 0]), math.sqrt(c[1, 1])


def fit_step_model(samples: np.ndarray, step: int, min_samples: int = MIN_SAMPLES,
                   reg: float = REGULARIZATION) -> StepErrorModel:
    samples = np.asarray(samples, dtype=float).reshape(-1, 2)
    if len(samples) < min_samples:
        raise ErrorModelError(f"step {step}: {len(samples)} samples, need at least {min_samples}")
    mean = samples.mean(axis=0)
    d = samples - mean
    cov = d.T @ d / (len(samples) - 1)
    cov = 0.5 * (cov + cov.T) + reg * np.eye(2)
    return StepErrorModel(step, tuple(mean.tolist()), tuple(map(tuple, cov.tolist())), len(samples))


def fit_step_models(errors: np.ndarray, min_samples: int = MIN_SAMPLES,
                    reg: float = REGULARIZATION) -> list[StepErrorModel]:
    """One model per step from ``(N, T, 2)`` errors pooled over maneuvers."""
    errors = np.asarray(errors, dtype=float)
    return [fit_step_model(errors[:, t], t + 1, min_samples, reg) for t in range(errors.shape[1])]


def gaussian_pdf(model: StepErrorModel, points) -> np.ndarray:
    cov = model.cov_array
    det = np.linalg.det(cov)
    if not det > 0:
        raise ErrorModelError(f"step {model.step}: covariance is singular")
    m2 = model.mahalanobis2(points)
    return np.exp(-0.5 * m2) / (2.0 * math.pi * math.sqrt(det))


def chi2_2dof_quantile(level: float) -> float:
    """Quantile of the chi-square distribution with two degrees of freedom."""
    if not 0.0 < level < 1.0:
        raise ErrorModelError(f"confidence level must lie in (0, 1), got {level}")
    return -2.0 * math.log1p(-level)


def confidence_boundary(model: StepErrorModel, level: float = 0.95) -> float:
    """Squared Mahalanobis radius of the ``level`` confidence ellipse."""
    return chi2_2dof_quantile(level)


def inside_boundary(model: StepErrorModel, points, level: float = 0.95) -> np.ndarray:
    return model.mahalanobis2(points) <= confidence_boundary(model, level)


# ---------------------------------------------------------------------------
# kernel density


@dataclass(frozen=True)
class KdeResult:
    xs: np.ndarray
    ys: np.ndarray
    density: np.ndarray  # (len(xs), len(ys)), density[i, j] at (xs[i], ys[j])
    x_std: float
    y_std: float
    corr: float
    bandwidth: tuple

    @property
    def mass(self) -> float:
        return float(self.density.sum() * (self.xs[1] - self.xs[0]) * (self.ys[1] - self.ys[0]))


def kde2d(samples, grid: int = 100, span: float = 4.0, bandwidth: Optional[Sequence[float]] = None) -> KdeResult:
    """Product-Gaussian KDE on a ``grid x grid`` lattice over mean +/- ``span`` std.

    The default bandwidth per axis is Silverman's rule for two dimensions,
    ``std * n ** (-1/6)``.
    """
    s = np.asarray(samples, dtype=float).reshape(-1, 2)
    n = len(s)
    if n < 2:
        raise ErrorModelError("KDE needs at least two samples")
    mean = s.mean(axis=0)
    std = s.std(axis=0, ddof=1)
    if np.any(std <= 0):
        raise ErrorModelError("KDE samples are degenerate along an axis")
    h = std * n ** (-1.0 / 6.0) if bandwidth is None else np.asarray(bandwidth, dtype=float)
    xs = np.linspace(mean[0] - span * std[0], mean[0] + span * std[0], grid)
    ys = np.linspace(mean[1] - span * std[1], mean[1] + span * std[1], grid)
    kx = np.exp(-0.5 * ((xs[:, None] - s[None, :, 0]) / h[0]) ** 2) / (math.sqrt(2 * math.pi) * h[0])
    ky = np.exp(-0.5 * ((ys[:, None] - s[None, :, 1]) / h[1]) ** 2) / (math.sqrt(2 * math.pi) * h[1])
    density = kx @ ky.T / n
    d = s - mean
    corr = float((d[:, 0] @ d[:, 1]) / math.sqrt((d[:, 0] @ d[:, 0]) * (d[:, 1] @ d[:, 1])))
    return KdeResult(xs, ys, density, float(std[0]), float(std[1]), corr, (float(h[0]), float(h[1])))


# ---------------------------------------------------------------------------
# CSV

CSV_HEADER = ("step", "mean_x", "mean_y", "s_xx", "s_xy", "s_yy", "n")


def write_step_models(path, models: Sequence[StepErrorModel]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for m in models:
            w.writerow([m.step, repr(m.mean[0]), repr(m.mean[1]), repr(m.cov[0][0]),
                        repr(m.cov[0][1]), repr(m.cov[1][1]), m.n])


def read_step_models(path) -> list[StepErrorModel]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        sxy = float(r["s_xy"])
        out.append(StepErrorModel(int(r["step"]), (float(r["mean_x"]), float(r["mean_y"])),
                                  ((float(r["s_xx"]), sxy), (sxy, float(r["s_yy"]))), int(r["n"])))
    return sorted(out, key=lambda m: m.step)
