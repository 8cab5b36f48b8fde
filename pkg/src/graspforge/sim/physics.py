"""Penalty-contact integrator, drop test and contact extraction.

The hand is kinematic: its capsules (palm + 6 phalanges, common radius) are
fixed while the object integrates. Normal forces are springs on penetration
depth with a one-sided damper; friction is solved at velocity level with a
few projected Gauss-Seidel sweeps, each contact impulse clipped to
mu * N * dt, which gives true sticking without tangential springs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from .geometry import Pose2
from .hand import HandModel, forward_kinematics

GRAVITY = 9.81
MAX_CONTACTS = 128


class SimulationDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class SimParams:
    dt: float = 1.0 / 240.0
    duration: float = 1.0
    k_n: float = 5000.0
    contact_damping: float = 40.0
    mu: float = 0.8
    linear_damping: float = 2.0
    angular_damping: float = 0.5
    contact_eps: float = 1e-4
    gravity: float = GRAVITY
    drop_threshold: float = 0.025
    blowup_speed: float = 50.0
    friction_iters: int = 6

    def vector(self) -> np.ndarray:
        return np.array(
            [
                self.dt,
                self.k_n,
                self.contact_damping,
                self.mu,
                self.linear_damping,
                self.angular_damping,
                self.blowup_speed,
                float(self.friction_iters),
            ]
        )


@dataclass(frozen=True)
class Contact:
    point: np.ndarray
    normal: np.ndarray  # unit, pointing into the object
    depth: float
    body_part: str


@dataclass(frozen=True)
class WorldState:
    joints: np.ndarray
    object_pose: Pose2
    shape: object
    object_velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    gravity: tuple[float, float] = (0.0, 0.0)
    time: float = 0.0
    extras: dict = field(default_factory=dict, compare=False)


def gravity_vector(tilt: float, magnitude: float = GRAVITY) -> tuple[float, float]:
    """Gravity rotated by `tilt` radians from straight down."""
    return (magnitude * math.sin(tilt), -magnitude * math.cos(tilt))


# --------------------------------------------------------------------------
# numba kernels


@numba.njit(cache=True, nogil=True)
def _closest_on_segment(px, py, ax, ay, bx, by):
    abx, aby = bx - ax, by - ay
    den = abx * abx + aby * aby
    t = 0.0
    if den > 0.0:
        t = ((px - ax) * abx + (py - ay) * aby) / den
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
    return ax + t * abx, ay + t * aby, t


@numba.njit(cache=True, nogil=True)
def _find_contacts(poly, caps, radius, out, parts):
    """Fill `out` rows with (px, py, nx, ny, depth); return the count.

    poly: (n, 2) world vertices (CCW). caps: (m, 4) capsule axes.
    Two detectors: polygon vertices inside a capsule (interior of the axis
    only), and capsule end points within `radius` of (or inside) the polygon.
    """
    n = poly.shape[0]
    m = caps.shape[0]
    k = 0
    cx = 0.0
    cy = 0.0
    for i in range(n):
        cx += poly[i, 0]
        cy += poly[i, 1]
    cx /= n
    cy /= n
    ts = np.empty(out.shape[0])
    for j in range(m):
        ax, ay, bx, by = caps[j, 0], caps[j, 1], caps[j, 2], caps[j, 3]
        k0 = k
        for i in range(n):
            vx, vy = poly[i, 0], poly[i, 1]
            qx, qy, t = _closest_on_segment(vx, vy, ax, ay, bx, by)
            if t <= 0.0 or t >= 1.0:
                continue
            dx, dy = vx - qx, vy - qy
            d = math.sqrt(dx * dx + dy * dy)
            if d >= radius or k >= out.shape[0]:
                continue
            if d > 1e-12:
                nx, ny = dx / d, dy / d
            else:
                # vertex on the axis: push along the axis normal towards the centroid
                nx, ny = -(by - ay), bx - ax
                ln = math.sqrt(nx * nx + ny * ny)
                nx, ny = nx / ln, ny / ln
                if nx * (cx - qx) + ny * (cy - qy) < 0.0:
                    nx, ny = -nx, -ny
            out[k, 0] = vx
            out[k, 1] = vy
            out[k, 2] = nx
            out[k, 3] = ny
            out[k, 4] = radius - d
            parts[k] = j
            ts[k] = t
            k += 1
        # order by position along the capsule, not by vertex index, so that
        # mirrored scenes visit contacts in the same order
        for a in range(k0 + 1, k):
            b = a
            while b > k0 and ts[b - 1] > ts[b]:
                for c in range(5):
                    tmp = out[b, c]
                    out[b, c] = out[b - 1, c]
                    out[b - 1, c] = tmp
                tmp = ts[b]
                ts[b] = ts[b - 1]
                ts[b - 1] = tmp
                b -= 1
    # capsule end points: palm ends, and the far end of every phalanx
    for j in range(m):
        for e in range(2):
            if j > 0 and e == 0:
                continue
            ex, ey = caps[j, 2 * e], caps[j, 2 * e + 1]
            inside = True
            best = 1e300
            bqx = bqy = 0.0
            pen = 1e300
            pnx = pny = 0.0
            for i in range(n):
                ax, ay = poly[i, 0], poly[i, 1]
                bx, by = poly[(i + 1) % n, 0], poly[(i + 1) % n, 1]
                exx, eyy = bx - ax, by - ay
                ln = math.sqrt(exx * exx + eyy * eyy)
                # outward edge normal of a CCW polygon
                onx, ony = eyy / ln, -exx / ln
                sd = (ex - ax) * onx + (ey - ay) * ony
                if sd > 0.0:
                    inside = False
                if -sd < pen:
                    pen = -sd
                    pnx, pny = onx, ony
                qx, qy, t = _closest_on_segment(ex, ey, ax, ay, bx, by)
                d2 = (qx - ex) ** 2 + (qy - ey) ** 2
                if d2 < best:
                    best = d2
                    bqx, bqy = qx, qy
            if k >= out.shape[0]:
                continue
            if inside:
                out[k, 0] = ex - pnx * pen
                out[k, 1] = ey - pny * pen
                out[k, 2] = -pnx
                out[k, 3] = -pny
                out[k, 4] = radius + pen
                parts[k] = j
                k += 1
            else:
                d = math.sqrt(best)
                if d < radius and d > 1e-12:
                    out[k, 0] = bqx
                    out[k, 1] = bqy
                    out[k, 2] = (bqx - ex) / d
                    out[k, 3] = (bqy - ey) / d
                    out[k, 4] = radius - d
                    parts[k] = j
                    k += 1
    return k


@numba.njit(cache=True, nogil=True)
def _world_poly(local, x, y, th, out):
    c, s = math.cos(th), math.sin(th)
    for i in range(local.shape[0]):
        out[i, 0] = x + c * local[i, 0] - s * local[i, 1]
        out[i, 1] = y + s * local[i, 0] + c * local[i, 1]


@numba.njit(cache=True, nogil=True)
def _simulate(local, mass, inertia, state, caps, radius, gx, gy, params, n_steps):
    """Integrate `n_steps`; state = (x, y, th, vx, vy, w) updated in place.

    Returns 0 on success, 1 if the speed bound was exceeded.
    """
    dt, kn, kd, mu = params[0], params[1], params[2], params[3]
    lin, ang, blow = params[4], params[5], params[6]
    iters = int(params[7])
    n = local.shape[0]
    poly = np.empty((n, 2))
    con = np.empty((128, 5))
    parts = np.empty(128, dtype=np.int64)
    normal_f = np.empty(128)
    lam = np.empty(128)
    lin_f = 1.0 / (1.0 + dt * lin)
    ang_f = 1.0 / (1.0 + dt * ang)
    for _ in range(n_steps):
        x, y, th, vx, vy, w = state[0], state[1], state[2], state[3], state[4], state[5]
        _world_poly(local, x, y, th, poly)
        k = _find_contacts(poly, caps, radius, con, parts)
        fx = mass * gx
        fy = mass * gy
        tq = 0.0
        for i in range(k):
            rx, ry = con[i, 0] - x, con[i, 1] - y
            nx, ny = con[i, 2], con[i, 3]
            vpx, vpy = vx - w * ry, vy + w * rx
            vn = vpx * nx + vpy * ny
            f = kn * con[i, 4] - kd * vn
            if f < 0.0:
                f = 0.0
            normal_f[i] = f
            fx += f * nx
            fy += f * ny
            tq += rx * f * ny - ry * f * nx
        vx = (vx + dt * fx / mass) * lin_f
        vy = (vy + dt * fy / mass) * lin_f
        w = (w + dt * tq / inertia) * ang_f
        for i in range(k):
            lam[i] = 0.0
        for _it in range(iters):
            for i in range(k):
                bound = mu * normal_f[i] * dt
                if bound <= 0.0:
                    continue
                rx, ry = con[i, 0] - x, con[i, 1] - y
                tx, ty = -con[i, 3], con[i, 2]
                vt = (vx - w * ry) * tx + (vy + w * rx) * ty
                rt = rx * ty - ry * tx
                keff = 1.0 / mass + rt * rt / inertia
                new = lam[i] - vt / keff
                if new > bound:
                    new = bound
                elif new < -bound:
                    new = -bound
                d = new - lam[i]
                lam[i] = new
                vx += d * tx / mass
                vy += d * ty / mass
                w += d * rt / inertia
        state[0] = x + dt * vx
        state[1] = y + dt * vy
        state[2] = th + dt * w
        state[3] = vx
        state[4] = vy
        state[5] = w
        if math.sqrt(vx * vx + vy * vy) > blow:
            return 1
    return 0


# --------------------------------------------------------------------------
# Python surface


_PART_NAMES = ("palm", "f0_prox", "f0_dist", "f1_prox", "f1_dist", "f2_prox", "f2_dist")


def find_contacts(hand: HandModel, joints: np.ndarray, object_pose: Pose2, shape) -> list[Contact]:
    kin = forward_kinematics(hand, joints)
    poly = object_pose.apply(shape.points)
    out = np.empty((MAX_CONTACTS, 5))
    parts = np.empty(MAX_CONTACTS, dtype=np.int64)
    k = _find_contacts(poly, kin.capsules, hand.phalanx_radius, out, parts)
    return [
        Contact(out[i, :2].copy(), out[i, 2:4].copy(), float(out[i, 4]), _PART_NAMES[parts[i]])
        for i in range(k)
    ]


def simulate(
    shape,
    pose: Pose2,
    velocity,
    capsules: np.ndarray,
    radius: float,
    gravity,
    params: SimParams,
    n_steps: int,
) -> tuple[Pose2, tuple[float, float, float]]:
    # theta is integrated unwrapped inside the kernel and wrapped on the way out
    state = np.array([pose.x, pose.y, pose.theta, *velocity], dtype=float)
    flag = _simulate(
        shape.points,
        shape.mass,
        shape.inertia,
        state,
        np.ascontiguousarray(capsules, dtype=float),
        float(radius),
        float(gravity[0]),
        float(gravity[1]),
        params.vector(),
        int(n_steps),
    )
    if flag:
        raise SimulationDiverged(
            f"object speed exceeded {params.blowup_speed}; check k_n/dt configuration"
        )
    return Pose2(state[0], state[1], state[2]), (state[3], state[4], state[5])


def step_contacts(state: WorldState, hand: HandModel, params: SimParams = SimParams()) -> WorldState:
    """One semi-implicit Euler step of the object against the kinematic hand."""
    kin = forward_kinematics(hand, state.joints)
    pose, vel = simulate(
        state.shape,
        state.object_pose,
        state.object_velocity,
        kin.capsules,
        hand.phalanx_radius,
        state.gravity,
        params,
        1,
    )
    return replace(state, object_pose=pose, object_velocity=vel, time=state.time + params.dt)


def drop_reward(y_initial: float, y_final: float, threshold: float = 0.025) -> int:
    """0 if the vertical deviation is at most `threshold`, else -1."""
    return 0 if abs(y_final - y_initial) <= threshold else -1


@dataclass(frozen=True)
class DropResult:
    reward: int
    final_pose: Pose2
    final_velocity: tuple[float, float, float]


def drop_test_full(
    state: WorldState,
    hand: HandModel,
    tilt: float = 0.0,
    params: SimParams = SimParams(),
    duration: float | None = None,
) -> DropResult:
    duration = params.duration if duration is None else duration
    n_steps = int(round(duration / params.dt))
    kin = forward_kinematics(hand, state.joints)
    g = gravity_vector(tilt, params.gravity)
    pose, vel = simulate(
        state.shape,
        state.object_pose,
        state.object_velocity,
        kin.capsules,
        hand.phalanx_radius,
        g,
        params,
        n_steps,
    )
    reward = drop_reward(state.object_pose.y, pose.y, params.drop_threshold)
    return DropResult(reward, pose, vel)


def drop_test(
    state: WorldState,
    hand: HandModel,
    tilt: float = 0.0,
    params: SimParams = SimParams(),
    duration: float | None = None,
) -> int:
    return drop_test_full(state, hand, tilt, params, duration).reward
