"""Planar frames, vehicle states and oriented-rectangle overlap tests."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * math.pi


def normalize_angle(angle: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    wrapped = math.fmod(angle + math.pi, TWO_PI)
    if wrapped <= 0.0:
        wrapped += TWO_PI
    return wrapped - math.pi


def normalize_angles(angles: np.ndarray) -> np.ndarray:
    wrapped = np.fmod(np.asarray(angles, dtype=float) + np.pi, TWO_PI)
    wrapped = np.where(wrapped <= 0.0, wrapped + TWO_PI, wrapped)
    return wrapped - np.pi


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    heading: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "heading", normalize_angle(float(self.heading)))


@dataclass(frozen=True)
class VehicleState:
    pose: Pose2D
    vx: float = 0.0
    vy: float = 0.0

    def __post_init__(self):
        values = (self.pose.x, self.pose.y, self.pose.heading, self.vx, self.vy)
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"non-finite vehicle state: {values}")

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)

    def as_array(self) -> np.ndarray:
        """[px, py, vx, vy, theta] row, the order used by feature windows."""
        return np.array([self.pose.x, self.pose.y, self.vx, self.vy, self.pose.heading])

    @classmethod
    def from_array(cls, row: Sequence[float]) -> "VehicleState":
        px, py, vx, vy, theta = (float(v) for v in row[:5])
        return cls(Pose2D(px, py, theta), vx, vy)


@dataclass(frozen=True)
class Trajectory:
    waypoints: np.ndarray
    step: float = 0.3

    def __post_init__(self):
        pts = np.array(self.waypoints, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(pts)):
            raise ValueError("trajectory contains non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "waypoints", pts)

    def __len__(self) -> int:
        return len(self.waypoints)

    def chord_headings(self, origin=(0.0, 0.0), initial_heading: float = 0.0) -> np.ndarray:
        """Direction of travel at each waypoint, from the chord arriving at it.

        A zero-length chord inherits the previous direction, starting from
        ``initial_heading``.
        """
        pts = np.vstack([np.asarray(origin, dtype=float)[None, :], self.waypoints])
        deltas = np.diff(pts, axis=0)
        headings = np.empty(len(deltas))
        previous = initial_heading
        for i, (dx, dy) in enumerate(deltas):
            if math.hypot(dx, dy) > 1e-9:
                previous = math.atan2(dy, dx)
            headings[i] = previous
        return headings


@dataclass(frozen=True)
class OrientedRect:
    center: tuple[float, float]
    heading: float
    length: float
    width: float

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise ValueError(f"rectangle extents must be positive, got {self.length}x{self.width}")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "heading", normalize_angle(float(self.heading)))

    @property
    def area(self) -> float:
        return self.length * self.width

    def axes(self) -> np.ndarray:
        c, s = math.cos(self.heading), math.sin(self.heading)
        return np.array([[c, s], [-s, c]])

    def corners(self) -> np.ndarray:
        """Corners in counter-clockwise order."""
        hl, hw = self.length / 2.0, self.width / 2.0
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        return local @ rotation(self.heading).T + np.asarray(self.center)


# ---------------------------------------------------------------------------
# frame transforms


def to_ego_frame(states: Sequence[VehicleState], anchor: VehicleState) -> list[VehicleState]:
    """Express world-frame states in the frame of ``anchor``.

    The anchor maps to pose (0, 0, 0); velocities are rotated with positions.
    """
    rot = rotation(-anchor.pose.heading)
    origin = np.array([anchor.pose.x, anchor.pose.y])
    out = []
    for st in states:
        p = rot @ (np.array([st.pose.x, st.pose.y]) - origin)
        v = rot @ np.array([st.vx, st.vy])
        out.append(VehicleState(Pose2D(p[0], p[1], st.pose.heading - anchor.pose.heading), v[0], v[1]))
    return out


def from_ego_frame(states: Sequence[VehicleState], anchor: VehicleState) -> list[VehicleState]:
    """Inverse of :func:`to_ego_frame`."""
    rot = rotation(anchor.pose.heading)
    origin = np.array([anchor.pose.x, anchor.pose.y])
    out = []
    for st in states:
        p = rot @ np.array([st.pose.x, st.pose.y]) + origin
        v = rot @ np.array([st.vx, st.vy])
        out.append(VehicleState(Pose2D(p[0], p[1], st.pose.heading + anchor.pose.heading), v[0], v[1]))
    return out


def points_to_frame(points: np.ndarray, origin, heading: float) -> np.ndarray:
    """World points (n, 2) into the frame at ``origin`` rotated by ``heading``."""
    pts = np.asarray(points, dtype=float) - np.asarray(origin, dtype=float)
    return pts @ rotation(-heading).T


def points_from_frame(points: np.ndarray, origin, heading: float) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    return pts @ rotation(heading).T + np.asarray(origin, dtype=float)


# ---------------------------------------------------------------------------
# separating-axis tests

# projections closer than this count as touching
TANGENCY_EPS = 1e-9


def _half_extent(axis: np.ndarray, rect_axes: np.ndarray, hl: float, hw: float) -> float:
    return hl * abs(axis @ rect_axes[0]) + hw * abs(axis @ rect_axes[1])


def obb_intersect(a: OrientedRect, b: OrientedRect, eps: float = TANGENCY_EPS) -> bool:
    """True iff the closed rectangles share at least one point.

    Touching edges or corners count as an intersection.
    """
    ax_a, ax_b = a.axes(), b.axes()
    d = np.array(b.center) - np.array(a.center)
    ha = (a.length / 2.0, a.width / 2.0)
    hb = (b.length / 2.0, b.width / 2.0)
    for axis in (ax_a[0], ax_a[1], ax_b[0], ax_b[1]):
        gap = abs(d @ axis) - _half_extent(axis, ax_a, *ha) - _half_extent(axis, ax_b, *hb)
        if gap > eps:
            return False
    return True


def obb_intersect_many(
    centers: np.ndarray,
    headings: np.ndarray,
    length: float,
    width: float,
    other: OrientedRect,
    eps: float = TANGENCY_EPS,
) -> np.ndarray:
    """Vectorised :func:`obb_intersect` of n same-sized rectangles against one.

    ``centers`` is (n, 2) and ``headings`` (n,) or scalar. Returns a boolean
    mask of length n.
    """
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    n = len(centers)
    headings = np.broadcast_to(np.asarray(headings, dtype=float), (n,))
    c, s = np.cos(headings), np.sin(headings)
    # (n, 2, 2): rows are the long and short axes of each rectangle
    axes_a = np.stack([np.stack([c, s], axis=1), np.stack([-s, c], axis=1)], axis=1)
    axes_b = other.axes()
    d = np.asarray(other.center)[None, :] - centers
    hla, hwa = length / 2.0, width / 2.0
    hlb, hwb = other.length / 2.0, other.width / 2.0

    hit = np.ones(n, dtype=bool)
    for k in range(2):
        axis = axes_a[:, k, :]
        ra = hla if k == 0 else hwa
        rb = hlb * np.abs(axis @ axes_b[0]) + hwb * np.abs(axis @ axes_b[1])
        gap = np.abs(np.einsum("ij,ij->i", d, axis)) - ra - rb
        hit &= gap <= eps
    for k in range(2):
        axis = axes_b[k]
        ra = hla * np.abs(axes_a[:, 0, :] @ axis) + hwa * np.abs(axes_a[:, 1, :] @ axis)
        rb = hlb if k == 0 else hwb
        gap = np.abs(d @ axis) - ra - rb
        hit &= gap <= eps
    return hit


def state_rows_to_frame(rows: np.ndarray, anchor: np.ndarray) -> np.ndarray:
    """Vectorised :func:`to_ego_frame` on ``[px, py, vx, vy, theta]`` rows."""
    rows = np.asarray(rows, dtype=float)
    ax, ay, ath = anchor[0], anchor[1], anchor[4]
    c, s = math.cos(ath), math.sin(ath)
    dx, dy = rows[:, 0] - ax, rows[:, 1] - ay
    out = np.empty_like(rows)
    out[:, 0] = c * dx + s * dy
    out[:, 1] = -s * dx + c * dy
    out[:, 2] = c * rows[:, 2] + s * rows[:, 3]
    out[:, 3] = -s * rows[:, 2] + c * rows[:, 3]
    out[:, 4] = normalize_angles(rows[:, 4] - ath)
    return out
