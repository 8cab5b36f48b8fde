"""SE(2) poses and small convex-polygon helpers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Map an angle to (-pi, pi]."""
    t = math.remainder(theta, TWO_PI)
    if t <= -math.pi:
        t += TWO_PI
    return t


def rot(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Pose2:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))

    @classmethod
    def identity(cls) -> Pose2:
        return cls(0.0, 0.0, 0.0)

    def compose(self, other: Pose2) -> Pose2:
        """self * other: express `other` (given in this frame) in the parent frame."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )

    def inverse(self) -> Pose2:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2(-(c * self.x + s * self.y), -(-s * self.x + c * self.y), -self.theta)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform (n, 2) points from this frame to the parent frame."""
        pts = np.asarray(points, dtype=float)
        return pts @ rot(self.theta).T + np.array([self.x, self.y])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(3)
        m[:2, :2] = rot(self.theta)
        m[:2, 2] = (self.x, self.y)
        return m


def compose(a: Pose2, b: Pose2) -> Pose2:
    return a.compose(b)


def invert(p: Pose2) -> Pose2:
    return p.inverse()


def polygon_area(vertices: np.ndarray) -> float:
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def polygon_centroid(vertices: np.ndarray) -> np.ndarray:
    x, y = vertices[:, 0], vertices[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = 0.5 * cross.sum()
    cx = ((x + xn) * cross).sum() / (6.0 * a)
    cy = ((y + yn) * cross).sum() / (6.0 * a)
    return np.array([cx, cy])


def polygon_inertia_per_mass(vertices: np.ndarray) -> float:
    """Polar second moment about the origin divided by area (uniform density)."""
    x, y = vertices[:, 0], vertices[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    j = (cross * (x * x + x * xn + xn * xn + y * y + y * yn + yn * yn)).sum() / 12.0
    return float(j / polygon_area(vertices))


def is_convex_ccw(vertices: np.ndarray, tol: float = 0.0) -> bool:
    v = np.asarray(vertices, dtype=float)
    e = np.roll(v, -1, axis=0) - v
    en = np.roll(e, -1, axis=0)
    cross = e[:, 0] * en[:, 1] - e[:, 1] * en[:, 0]
    return bool(np.all(cross > tol))


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain; CCW, collinear points dropped."""
    pts = sorted(map(tuple, np.asarray(points, dtype=float)))
    if len(pts) <= 2:
        return np.array(pts)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def point_segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom == 0.0 else min(max(float((p - a) @ ab) / denom, 0.0), 1.0)
    return float(np.hypot(*(a + t * ab - p)))


def _segments_intersect(a, b, c, d) -> bool:
    def orient(p, q, r):
        return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])

    o1, o2 = orient(a, b, c), orient(a, b, d)
    o3, o4 = orient(c, d, a), orient(c, d, b)
    return (o1 * o2 < 0) and (o3 * o4 < 0)


def point_in_convex(p: np.ndarray, vertices: np.ndarray) -> bool:
    e = np.roll(vertices, -1, axis=0) - vertices
    rel = p - vertices
    return bool(np.all(e[:, 0] * rel[:, 1] - e[:, 1] * rel[:, 0] >= 0.0))


def segment_polygon_distance(a: np.ndarray, b: np.ndarray, vertices: np.ndarray) -> float:
    """Euclidean distance between a segment and a convex polygon (0 if they overlap)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if point_in_convex(a, vertices) or point_in_convex(b, vertices):
        return 0.0
    n = len(vertices)
    best = math.inf
    for i in range(n):
        c, d = vertices[i], vertices[(i + 1) % n]
        if _segments_intersect(a, b, c, d):
            return 0.0
        best = min(
            best,
            point_segment_distance(a, c, d),
            point_segment_distance(b, c, d),
            point_segment_distance(c, a, b),
        )
    return best
