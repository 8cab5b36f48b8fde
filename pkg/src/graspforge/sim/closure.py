"""Planar force-closure test over friction-cone edge wrenches."""

from __future__ import annotations

import numpy as np
from scipy.spatial import ConvexHull, QhullError


def contact_wrenches(contacts, mu: float, center=(0.0, 0.0)) -> np.ndarray:
    """Primitive wrenches (fx, fy, torque) of each contact's friction-cone edges.

    Frictionless contacts contribute their normal only.
    """
    c = np.asarray(center, dtype=float)
    rows = []
    for ct in contacts:
        n = np.asarray(ct.normal, dtype=float)
        t = np.array([-n[1], n[0]])
        r = np.asarray(ct.point, dtype=float) - c
        edges = [n] if mu == 0 else [n + mu * t, n - mu * t]
        for f in edges:
            rows.append((f[0], f[1], r[0] * f[1] - r[1] * f[0]))
    return np.array(rows, dtype=float).reshape(-1, 3)


def check_force_closure(contacts, mu: float, center=(0.0, 0.0), tol: float = 1e-9) -> bool:
    """True iff the origin is strictly inside the convex hull of the contact wrenches."""
    if len(contacts) < 2:
        return False
    w = contact_wrenches(contacts, mu, center)
    if np.linalg.matrix_rank(w, tol=1e-10) < 3:
        return False
    try:
        hull = ConvexHull(w)
    except QhullError:
        return False
    # facets satisfy normal . x + offset <= 0 inside; at the origin that is offset
    return bool(np.all(hull.equations[:, -1] < -tol))
