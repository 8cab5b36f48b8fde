"""Object outlines: banana, bottle, camera.

Each outline is a convex CCW polygon recentred on its area centroid. One scale
per object type; per-instance scale variation is not modelled.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import convex_hull, is_convex_ccw, polygon_centroid, polygon_inertia_per_mass

SHAPE_IDS = ("banana", "bottle", "camera")


@dataclass(frozen=True)
class ObjectShape:
    id: str
    vertices: np.ndarray  # object frame, unscaled
    scale: float = 1.0
    elongated: bool = False
    mass: float = 1.0
    points: np.ndarray = field(init=False, repr=False, compare=False)
    inertia: float = field(init=False, repr=False, compare=False)
    circumradius: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 5:
            raise ValueError(f"{self.id}: need >= 5 vertices, got shape {v.shape}")
        if not is_convex_ccw(v):
            raise ValueError(f"{self.id}: polygon must be convex and counter-clockwise")
        if self.scale <= 0 or self.mass <= 0:
            raise ValueError(f"{self.id}: scale and mass must be positive")
        c = polygon_centroid(v)
        if np.hypot(*c) > 1e-9:
            v = v - c
        v.setflags(write=False)
        pts = v * self.scale
        pts.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "inertia", self.mass * polygon_inertia_per_mass(pts))
        object.__setattr__(self, "circumradius", float(np.max(np.hypot(pts[:, 0], pts[:, 1]))))

    def principal_axis(self) -> np.ndarray:
        """Unit direction of the largest-variance axis of the scaled vertices."""
        cov = np.cov(self.points.T)
        w, vec = np.linalg.eigh(cov)
        axis = vec[:, np.argmax(w)]
        # fix the sign so the axis is reproducible
        if axis[0] < 0 or (axis[0] == 0 and axis[1] < 0):
            axis = -axis
        return axis

    def edge_vertices(self) -> tuple[np.ndarray, np.ndarray]:
        """The two extremal vertices along the principal axis (object frame)."""
        proj = self.points @ self.principal_axis()
        return self.points[int(np.argmin(proj))], self.points[int(np.argmax(proj))]

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "vertices": self.vertices.tolist(),
            "scale": self.scale,
            "elongated": self.elongated,
            "mass": self.mass,
        }


def _banana_outline() -> np.ndarray:
    # hull of a bent capsule: centreline arc of radius 0.09 spanning +-40 deg,
    # half-thickness 0.017
    rc, half, span = 0.09, 0.017, math.radians(40)
    outer = [
        ((rc + half) * math.sin(a), (rc + half) * math.cos(a) - rc)
        for a in np.linspace(-span, span, 6)
    ]
    caps = []
    for sgn in (-1.0, 1.0):
        a = sgn * span
        cx, cy = rc * math.sin(a), rc * math.cos(a) - rc
        # cap tip along the tangent, then inner end
        tx, ty = sgn * math.cos(a), -sgn * math.sin(a)
        caps.append((cx + half * tx, cy + half * ty))
        caps.append(((rc - half) * math.sin(a), (rc - half) * math.cos(a) - rc))
    return convex_hull(np.array(outer + caps))


_OUTLINES = {
    "banana": _banana_outline(),
    "bottle": np.array(
        [
            (0.025, -0.042), (0.025, 0.018), (0.018, 0.033), (0.008, 0.042),
            (-0.008, 0.042), (-0.018, 0.033), (-0.025, 0.018), (-0.025, -0.042),
        ]
    ),
    "camera": np.array(
        [
            (-0.034, -0.021), (0.029, -0.023), (0.036, -0.002), (0.030, 0.019),
            (0.004, 0.026), (-0.021, 0.024), (-0.036, 0.008),
        ]
    ),
}

_DEFAULTS = {
    "banana": dict(scale=1.0, elongated=True, mass=1.2),
    "bottle": dict(scale=1.0, elongated=False, mass=2.5),
    "camera": dict(scale=1.0, elongated=False, mass=2.5),
}


def get_shape(shape_id: str) -> ObjectShape:
    if shape_id not in _OUTLINES:
        raise KeyError(f"unknown object id {shape_id!r}; known: {', '.join(SHAPE_IDS)}")
    return ObjectShape(shape_id, _OUTLINES[shape_id].copy(), **_DEFAULTS[shape_id])


def load_shape(path: str | Path) -> ObjectShape:
    """Shape override from JSON: {"id", "vertices": [[x, y], ...], "scale", "elongated"}."""
    data = json.loads(Path(path).read_text())
    missing = {"id", "vertices", "scale", "elongated"} - data.keys()
    if missing:
        raise ValueError(f"{path}: missing keys {sorted(missing)}")
    return ObjectShape(
        data["id"],
        np.asarray(data["vertices"], dtype=float),
        scale=float(data["scale"]),
        elongated=bool(data["elongated"]),
        mass=float(data.get("mass", 1.0)),
    )


def shape_library(overrides: dict[str, str] | None = None) -> dict[str, ObjectShape]:
    lib = {sid: get_shape(sid) for sid in SHAPE_IDS}
    for sid, path in (overrides or {}).items():
        lib[sid] = load_shape(path)
    return lib
