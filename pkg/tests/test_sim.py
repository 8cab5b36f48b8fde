import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import linprog

from conftest import TILTS, closed_grasp
from graspforge.sim import (
    DEFAULT_A,
    DEFAULT_S,
    N_ARM,
    SHAPE_IDS,
    Contact,
    HandModel,
    ObjectShape,
    Pose2,
    SimParams,
    SimulationDiverged,
    WorldState,
    check_force_closure,
    collide,
    drop_reward,
    drop_test,
    drop_test_full,
    find_contacts,
    forward_kinematics,
    gravity_vector,
    invert,
    load_shape,
    place_object_relative,
    sample_robot_pose,
    step_contacts,
    wrap_angle,
)
from graspforge.sim.closure import contact_wrenches
from graspforge.sim.geometry import is_convex_ccw, polygon_centroid
from graspforge.sim.hand import robot_pose_from_weights
from graspforge.sim.physics import simulate

finite = st.floats(-5.0, 5.0, allow_nan=False)
angles = st.floats(-10.0, 10.0, allow_nan=False)
poses = st.builds(Pose2, finite, finite, angles)


def assert_pose_close(a: Pose2, b: Pose2, tol=1e-12):
    assert abs(a.x - b.x) <= tol and abs(a.y - b.y) <= tol
    assert abs(wrap_angle(a.theta - b.theta)) <= tol


# --------------------------------------------------------------------------
# Pose2


@given(angles)
def test_wrap_angle_range(theta):
    w = wrap_angle(theta)
    assert -math.pi < w <= math.pi
    assert abs(math.sin(w) - math.sin(theta)) < 1e-9 and abs(math.cos(w) - math.cos(theta)) < 1e-9


def test_wrap_angle_boundary():
    assert wrap_angle(math.pi) == math.pi
    assert wrap_angle(-math.pi) == math.pi


@given(poses)
def test_compose_with_inverse_is_identity(p):
    assert_pose_close(p.compose(invert(p)), Pose2.identity())
    assert_pose_close(invert(p).compose(p), Pose2.identity())


@given(poses, poses, poses)
def test_compose_associative(a, b, c):
    assert_pose_close(a.compose(b).compose(c), a.compose(b.compose(c)), 1e-11)


@given(poses, poses)
def test_compose_matches_matrix_product(a, b):
    m = a.as_matrix() @ b.as_matrix()
    c = a.compose(b)
    assert np.allclose(c.as_matrix(), m, atol=1e-12)


# --------------------------------------------------------------------------
# forward kinematics


def _rz(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _tx(d):
    m = np.eye(3)
    m[0, 2] = d
    return m


def fk_oracle(hand: HandModel, q):
    """Homogeneous-matrix chain, written independently of forward_kinematics."""
    T = np.eye(3)
    for k in range(N_ARM):
        T = T @ _rz(q[k]) @ _tx(hand.arm_link_lengths[k])
    tips = []
    for f in range(3):
        F = T @ _tx(hand.finger_attach_offsets[f]) @ _rz(hand.finger_base_angles[f])
        for j in range(2):
            F = F @ _rz(hand.flex_signs[f] * q[N_ARM + 2 * f + j]) @ _tx(hand.phalanx_lengths[f][j])
        tips.append(F[:2, 2])
    normal = T[:2, :2] @ np.array([0.0, -1.0])
    return T[:2, 2], normal, np.array(tips)


def test_fk_zero_pose_unit_links():
    hand = HandModel(arm_link_lengths=(1.0, 1.0, 1.0))
    kin = forward_kinematics(hand, np.zeros(9))
    assert np.allclose(kin.palm_center, [3.0, 0.0], atol=1e-15)
    assert np.allclose(kin.palm_normal, [0.0, -1.0], atol=1e-15)


def test_fk_first_joint_quarter_turn():
    hand = HandModel(arm_link_lengths=(1.0, 1.0, 1.0))
    q = np.zeros(9)
    q[0] = math.pi / 2
    kin = forward_kinematics(hand, q)
    assert np.allclose(kin.palm_center, [0.0, 3.0], atol=1e-12)


def test_fk_matches_matrix_chain_oracle(hand):
    rng = np.random.default_rng(11)
    for _ in range(500):
        q = rng.uniform(hand.limits[:, 0], hand.limits[:, 1])
        kin = forward_kinematics(hand, q)
        center, normal, tips = fk_oracle(hand, q)
        assert np.max(np.abs(kin.palm_center - center)) <= 1e-12
        assert np.max(np.abs(kin.palm_normal - normal)) <= 1e-12
        assert np.max(np.abs(kin.fingertips - tips)) <= 1e-12
        assert abs(np.linalg.norm(kin.palm_normal) - 1.0) < 1e-12


def test_fk_rejects_wrong_length(hand):
    with pytest.raises(ValueError):
        forward_kinematics(hand, np.zeros(8))


def test_hand_model_validation():
    with pytest.raises(ValueError):
        HandModel(phalanx_radius=0.0)
    with pytest.raises(ValueError):
        HandModel(joint_limits=((0.0, 0.0),) * 9)


# --------------------------------------------------------------------------
# robot pose sampling


def test_robot_pose_zero_weights_is_s():
    assert np.array_equal(robot_pose_from_weights(DEFAULT_S, DEFAULT_A, (0, 0, 0)), np.array(DEFAULT_S))


def test_robot_pose_unit_weights():
    r = robot_pose_from_weights(DEFAULT_S, DEFAULT_A, (1, 1, 1))
    assert np.allclose(r, [math.pi / 2, -5 * math.pi / 12, math.pi / 3], atol=1e-15)


def test_robot_pose_statistics(hand):
    rng = np.random.default_rng(3)
    draws = np.array([sample_robot_pose(hand, rng)[:N_ARM] for _ in range(10_000)])
    s, a = np.array(DEFAULT_S), np.array(DEFAULT_A)
    lo, hi = s - a, s + a
    assert np.all(draws >= lo) and np.all(draws <= hi)
    coverage = (draws.max(0) - draws.min(0)) / (hi - lo)
    assert np.all(coverage >= 0.99)


def test_robot_pose_hand_joints_open(hand):
    q = sample_robot_pose(hand, np.random.default_rng(0))
    assert np.array_equal(q[N_ARM:], np.array(hand.open_pose))


def test_robot_pose_out_of_limits_rejected():
    hand = HandModel()
    with pytest.raises(ValueError):
        sample_robot_pose(hand, np.random.default_rng(0), s=(3.0, 0.0, 0.0), a=(0.5, 0.1, 0.1))


# --------------------------------------------------------------------------
# placement


def test_place_identity_base():
    rel = Pose2(0.3, -0.2, 0.7)
    assert place_object_relative(Pose2.identity(), rel) == rel


def test_place_pure_translation():
    assert_pose_close(place_object_relative(Pose2(1, 0, 0), Pose2(0, 2, 0)), Pose2(1, 2, 0))


@given(poses, poses)
def test_place_round_trip(base, rel):
    world = place_object_relative(base, rel)
    assert_pose_close(invert(base).compose(world), rel, 1e-11)


# --------------------------------------------------------------------------
# shapes


def test_shape_library_invariants(shapes):
    counts = {"banana": 10, "bottle": 8, "camera": 7}
    for sid in SHAPE_IDS:
        sh = shapes[sid]
        assert len(sh.vertices) == counts[sid]
        assert is_convex_ccw(sh.vertices)
        assert np.allclose(polygon_centroid(sh.vertices), 0.0, atol=1e-12)
        assert sh.elongated == (sid == "banana")


def test_shape_rejects_clockwise():
    sq = np.array([[0, 0], [0, 1], [1, 1], [1, 0], [0.5, -0.2]], dtype=float)
    with pytest.raises(ValueError):
        ObjectShape("bad", sq)


def test_shape_json_override(tmp_path, shapes):
    p = tmp_path / "shape.json"
    p.write_text(json.dumps(shapes["camera"].to_json()))
    sh = load_shape(p)
    assert np.array_equal(sh.points, shapes["camera"].points)


# --------------------------------------------------------------------------
# dynamics


def test_free_fall_velocity_update(hand, shapes):
    params = SimParams(linear_damping=0.0)
    state = WorldState(np.zeros(9), Pose2(10.0, 10.0, 0.0), shapes["bottle"], gravity=(0.0, -9.81))
    nxt = step_contacts(state, hand, params)
    assert nxt.object_velocity[0] == 0.0
    assert abs(nxt.object_velocity[1] - (-9.81 * params.dt)) < 1e-15
    assert abs(nxt.time - params.dt) < 1e-18


def _wide_palm_scene():
    hand = HandModel(palm_half_width=0.4, finger_attach_offsets=(-0.38, 0.36, 0.38))
    q = np.zeros(9)
    q[0] = math.pi  # palm normal points up
    box = ObjectShape("box", np.array([[-0.05, -0.03], [0.05, -0.03], [0.06, 0], [0.05, 0.03], [-0.05, 0.03], [-0.06, 0]]))
    kin = forward_kinematics(hand, q)
    pose = Pose2(kin.palm_center[0], hand.phalanx_radius + 0.03, 0.0)
    return hand, q, box, pose


def test_object_rests_on_wide_palm():
    hand, q, box, pose = _wide_palm_scene()
    res = drop_test_full(WorldState(q, pose, box), hand, 0.0, SimParams())
    assert abs(res.final_pose.y - pose.y) < 0.005
    assert res.reward == 0


def test_mirror_symmetry(hand, shapes):
    params = SimParams()
    for sid in SHAPE_IDS:
        sh = shapes[sid]
        q, pose, _ = closed_grasp(hand, sh)
        caps = forward_kinematics(hand, q).capsules
        mirrored = ObjectShape("m", (sh.points * [-1.0, 1.0])[::-1].copy(), mass=sh.mass)
        for tilt in TILTS:
            g = gravity_vector(tilt)
            for vel in ((0.0, 0.0, 0.0), (0.1, -0.05, 0.5)):
                a, va = simulate(sh, pose, vel, caps, hand.phalanx_radius, g, params, 240)
                b, vb = simulate(
                    mirrored,
                    Pose2(-pose.x, pose.y, -pose.theta),
                    (-vel[0], vel[1], -vel[2]),
                    caps * [-1.0, 1.0, -1.0, 1.0],
                    hand.phalanx_radius,
                    (-g[0], g[1]),
                    params,
                    240,
                )
                assert abs(a.x + b.x) <= 1e-12 and abs(a.y - b.y) <= 1e-12
                assert abs(wrap_angle(a.theta + b.theta)) <= 1e-12
                assert np.allclose([va[0], va[1], va[2]], [-vb[0], vb[1], -vb[2]], atol=1e-12)


def test_kinetic_energy_never_increases_without_gravity(hand, shapes):
    # random poses and velocities around the arm base, gravity off
    params = SimParams(gravity=0.0)
    rng = np.random.default_rng(5)
    sh = shapes["bottle"]
    for _ in range(5):
        state = WorldState(np.zeros(9), Pose2(*rng.uniform(-1, 1, 2), rng.uniform(-3, 3)), sh,
                           object_velocity=tuple(rng.normal(size=3)))
        ke_prev = math.inf
        for _ in range(60):
            state = step_contacts(state, hand, params)
            vx, vy, w = state.object_velocity
            ke = 0.5 * sh.mass * (vx * vx + vy * vy) + 0.5 * sh.inertia * w * w
            assert ke <= ke_prev + 1e-15
            ke_prev = ke


def test_zero_gravity_rest_stays_at_rest(hand, shapes):
    sh = shapes["camera"]
    q, _, arm = closed_grasp(hand, sh)
    # object placed away from every finger, no initial velocity
    pose = Pose2(5.0, 5.0, 0.3)
    res = drop_test_full(WorldState(q, pose, sh), hand, 0.0, SimParams(gravity=0.0))
    assert res.final_pose == pose and res.final_velocity == (0.0, 0.0, 0.0)


def test_divergence_is_signalled(hand, shapes):
    sh = shapes["bottle"]
    q, pose, _ = closed_grasp(hand, sh)
    stiff = SimParams(k_n=5e8, dt=1.0 / 30.0, contact_damping=0.0, linear_damping=0.0)
    with pytest.raises(SimulationDiverged):
        drop_test(WorldState(q, pose, sh), hand, 0.0, stiff)


# --------------------------------------------------------------------------
# drop test


def test_drop_reward_boundary():
    assert drop_reward(0.0, -0.025) == 0
    assert drop_reward(0.0, 0.025) == 0
    assert drop_reward(0.0, -np.nextafter(0.025, 1.0)) == -1
    assert drop_reward(0.0, -0.5) == -1


def test_unsupported_object_falls(hand, shapes):
    state = WorldState(np.zeros(9), Pose2(10.0, 10.0, 0.0), shapes["banana"])
    res = drop_test_full(state, hand, 0.0)
    assert res.reward == -1
    assert state.object_pose.y - res.final_pose.y > 0.25


def test_tripod_fixture_holds_at_all_tilts(hand, params, shapes):
    for sid in SHAPE_IDS:
        q, pose, _ = closed_grasp(hand, shapes[sid])
        contacts = find_contacts(hand, q, pose, shapes[sid])
        assert {c.body_part[:2] for c in contacts} == {"f0", "f1", "f2"}
        for tilt in TILTS:
            assert drop_test(WorldState(q, pose, shapes[sid]), hand, tilt, params) == 0


def test_drop_test_deterministic(hand, params, shapes):
    q, pose, _ = closed_grasp(hand, shapes["camera"])
    a = drop_test_full(WorldState(q, pose, shapes["camera"]), hand, 0.3, params)
    b = drop_test_full(WorldState(q, pose, shapes["camera"]), hand, 0.3, params)
    assert a == b


def _fixture_set(hand, shapes):
    """(contacts, world state, expect_closure) for pinch, tripod and single-contact grasps."""
    out = []
    for sid in SHAPE_IDS:
        sh = shapes[sid]
        q, pose, arm = closed_grasp(hand, sh)
        pinch = q.copy()
        pinch[N_ARM + 2 : N_ARM + 4] = 0.0  # middle finger open
        single = arm.copy()
        single[N_ARM : N_ARM + 2] = q[N_ARM : N_ARM + 2]  # only finger 0 closed
        for joints in (q, pinch, single):
            out.append((find_contacts(hand, joints, pose, sh), WorldState(joints, pose, sh)))
    return out


def test_force_closure_agrees_with_drop_test(hand, params, shapes):
    n_closed = n_open = 0
    for contacts, state in _fixture_set(hand, shapes):
        centre = (state.object_pose.x, state.object_pose.y)
        closed = check_force_closure(contacts, params.mu, centre)
        reward = drop_test(state, hand, 0.0, params)
        if closed:
            n_closed += 1
            assert reward == 0
        fingers = {c.body_part[:2] for c in contacts}
        if len(fingers) == 1:
            n_open += 1
            assert not closed
            assert reward == -1
    assert n_closed >= 6 and n_open >= 3


def test_contacts_have_unit_normals(hand, shapes):
    for contacts, _ in _fixture_set(hand, shapes):
        for c in contacts:
            assert abs(np.linalg.norm(c.normal) - 1.0) < 1e-9
            assert c.depth >= 0.0


# --------------------------------------------------------------------------
# force closure


def closure_lp_oracle(contacts, mu, center=(0.0, 0.0)) -> bool:
    """Origin strictly inside conv(W) iff W spans R^3 and some strictly positive combination is zero."""
    w = contact_wrenches(contacts, mu, center)
    if len(w) == 0 or np.linalg.matrix_rank(w, tol=1e-10) < 3:
        return False
    m = len(w)
    # variables (lambda_1..m, s): maximise s with lambda_i >= s, sum lambda = 1, W^T lambda = 0
    c = np.zeros(m + 1)
    c[-1] = -1.0
    a_eq = np.zeros((4, m + 1))
    a_eq[:3, :m] = w.T
    a_eq[3, :m] = 1.0
    b_eq = np.array([0.0, 0.0, 0.0, 1.0])
    a_ub = np.hstack([-np.eye(m), np.ones((m, 1))])
    res = linprog(c, A_ub=a_ub, b_ub=np.zeros(m), A_eq=a_eq, b_eq=b_eq, bounds=[(0, None)] * m + [(None, None)])
    return bool(res.status == 0 and -res.fun > 1e-9)


def disk_contact(angle):
    p = np.array([math.cos(angle), math.sin(angle)])
    return Contact(p, -p, 0.0, "test")


def test_single_contact_never_closes():
    assert not check_force_closure([disk_contact(0.0)], 0.8)


def test_antipodal_disk_closes():
    cs = [disk_contact(0.0), disk_contact(math.pi)]
    assert check_force_closure(cs, 0.3)
    assert closure_lp_oracle(cs, 0.3)


def test_frictionless_tripod_on_disk():
    # Every normal passes through the disk centre, so no contact can resist a
    # torque about it: both the hull test and the LP oracle report no closure.
    cs = [disk_contact(k * 2 * math.pi / 3) for k in range(3)]
    assert not closure_lp_oracle(cs, 0.0)
    assert not check_force_closure(cs, 0.0)
    # with friction the same tripod does close
    assert check_force_closure(cs, 0.5) and closure_lp_oracle(cs, 0.5)


def test_force_closure_matches_lp_oracle():
    rng = np.random.default_rng(2)
    agree = 0
    for _ in range(300):
        k = int(rng.integers(2, 5))
        pts = rng.uniform(-1, 1, (k, 2))
        normals = rng.normal(size=(k, 2))
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        cs = [Contact(p, n, 0.0, "x") for p, n in zip(pts, normals)]
        mu = float(rng.uniform(0.0, 1.0))
        assert check_force_closure(cs, mu) == closure_lp_oracle(cs, mu)
        agree += 1
    assert agree == 300


# --------------------------------------------------------------------------
# collision


def test_collide_far_object(hand, shapes):
    assert not collide(hand, np.zeros(9), Pose2(10.0, 10.0, 0.0), shapes["bottle"])


def test_collide_on_palm_centre(hand, shapes):
    q = np.array(DEFAULT_S + (0.0,) * 6)
    kin = forward_kinematics(hand, q)
    assert collide(hand, q, Pose2(*kin.palm_center, 0.0), shapes["bottle"])


def test_collide_tangent_is_not_penetration():
    hand = HandModel()
    q = np.zeros(9)
    kin = forward_kinematics(hand, q)
    # palm runs along the x axis with the fingers below it; rest the box's flat
    # bottom edge (y = -0.02) exactly `gap` above the palm line
    box = ObjectShape("box", np.array([[-0.02, -0.02], [0.02, -0.02], [0.03, 0.0], [0.02, 0.02], [-0.02, 0.02]]))
    eps = 1e-4
    gap = hand.phalanx_radius + eps
    pose = Pose2(kin.palm_center[0], kin.palm_center[1] + gap + 0.02, 0.0)
    assert not collide(hand, q, pose, box, eps)
    closer = Pose2(pose.x, pose.y - 3 * eps, pose.theta)
    assert collide(hand, q, closer, box, eps)


def test_hand_radius_override_is_a_copy(hand):
    thin = hand.with_radius(0.008)
    assert thin.phalanx_radius == 0.008 and hand.phalanx_radius == 0.01
    assert replace(thin, phalanx_radius=0.01) == hand
