import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import closed_grasp
from graspforge.dataset import (
    DEFAULT_TILTS_DEG,
    DatasetFormatError,
    DatasetManifest,
    GraspRecord,
    SeedConfig,
    generate_seed_grasps,
    load_records,
    nominal_rel_pose,
    passes_all_tilts,
    preselect,
    save_records,
    tilts_from_degrees,
)
from graspforge.sim import DEFAULT_S, N_ARM, SHAPE_IDS, Pose2, SimParams, WorldState, drop_test, replay
from graspforge.sim.trial import place

TILTS = tilts_from_degrees(DEFAULT_TILTS_DEG)


@pytest.fixture(scope="module")
def mixed(shapes):
    """Half-flawed seed sets for every object."""
    out = []
    for i, sid in enumerate(SHAPE_IDS):
        out += generate_seed_grasps(shapes[sid], 40, 0.5, np.random.default_rng(100 + i))
    return out


def test_generate_rejects_empty(shapes):
    with pytest.raises(ValueError):
        generate_seed_grasps(shapes["banana"], 0, 0.0, np.random.default_rng(0))


def test_generate_rejects_bad_fraction(shapes):
    with pytest.raises(ValueError):
        generate_seed_grasps(shapes["banana"], 5, 1.5, np.random.default_rng(0))


def test_flawed_count_exact(shapes):
    recs = generate_seed_grasps(shapes["camera"], 1000, 0.4, np.random.default_rng(7))
    assert len(recs) == 1000
    assert sum(r.synthetic_flawed for r in recs) == 400
    assert len({r.record_id for r in recs}) == 1000


def test_clean_seeds_mostly_hold(hand, params, shapes):
    for sid in SHAPE_IDS:
        recs = generate_seed_grasps(shapes[sid], 100, 0.0, np.random.default_rng(1))
        ok = sum(replay(hand, params, DEFAULT_S, r.rel_pose, r.targets, shapes[sid]).reward == 0 for r in recs)
        assert ok >= 90, (sid, ok)


def test_generator_deterministic(shapes):
    a = generate_seed_grasps(shapes["bottle"], 20, 0.3, np.random.default_rng(9))
    b = generate_seed_grasps(shapes["bottle"], 20, 0.3, np.random.default_rng(9))
    assert a == b


def test_targets_within_limits(hand, mixed):
    lim = hand.hand_limits
    for r in mixed:
        assert np.all(r.targets >= lim[:, 0]) and np.all(r.targets <= lim[:, 1])
        assert all(math.isfinite(v) for v in (r.rel_pose.x, r.rel_pose.y, r.rel_pose.theta))


def test_nominal_placement_is_collision_free(hand, shapes):
    for sid in SHAPE_IDS:
        pl = place(hand, DEFAULT_S, nominal_rel_pose(shapes[sid], SeedConfig()), shapes[sid])
        assert not pl.collided


# --------------------------------------------------------------------------
# preselect


def test_preselect_empty():
    assert preselect([], {}) == []


def test_preselect_rejects_empty_tilt_set(mixed, shapes):
    with pytest.raises(ValueError):
        preselect(mixed[:1], shapes, tilts=[])


def test_preselect_exact_semantics(hand, params, shapes, mixed):
    kept = preselect(mixed, shapes, hand, params)
    oracle = [
        r for r in mixed
        if all(replay(hand, params, DEFAULT_S, r.rel_pose, r.targets, shapes[r.object_id], t).reward == 0 for t in TILTS)
    ]
    assert kept == oracle


def test_preselect_subset_order_idempotent(shapes, mixed):
    kept = preselect(mixed, shapes)
    index = {r.record_id: i for i, r in enumerate(mixed)}
    pos = [index[r.record_id] for r in kept]
    assert pos == sorted(pos)
    assert preselect(kept, shapes) == kept


def test_single_tilt_is_superset(shapes, mixed):
    full = {r.record_id for r in preselect(mixed, shapes)}
    upright = {r.record_id for r in preselect(mixed, shapes, tilts=[0.0])}
    assert full <= upright


def test_preselect_parallel_matches_serial(shapes, mixed):
    assert preselect(mixed, shapes, workers=3) == preselect(mixed, shapes)


def test_marginal_record_excluded(hand, shapes):
    # Bottle pinched between the outer fingers with low friction: holds upright
    # and at every tilt except the -25 deg extreme. In this hand geometry the
    # negative side is the harder one; the marginal case is mirrored accordingly.
    sh = shapes["bottle"]
    params = SimParams(mu=0.2)
    q, _, _ = closed_grasp(hand, sh)
    targets = q[N_ARM:].copy()
    targets[2:4] = 0.0
    rec = GraspRecord("bottle-marginal", "bottle", sh.scale, nominal_rel_pose(sh, SeedConfig()), tuple(targets))
    per_tilt = [replay(hand, params, DEFAULT_S, rec.rel_pose, rec.targets, sh, t).reward for t in TILTS]
    assert per_tilt == [-1, 0, 0, 0, 0]
    assert preselect([rec], shapes, hand, params) == []
    assert preselect([rec], shapes, hand, params, tilts=TILTS[1:]) == [rec]


def test_retention_tracks_clean_fraction(hand, params, shapes):
    # retained fraction vs the clean records that pass every tilt by exhaustive replay
    for i, sid in enumerate(SHAPE_IDS):
        recs = generate_seed_grasps(shapes[sid], 60, 0.5, np.random.default_rng(200 + i))
        kept = preselect(recs, shapes, hand, params)
        clean_pass = sum(
            (not r.synthetic_flawed) and passes_all_tilts(r, shapes[sid], hand, params, TILTS) for r in recs
        )
        assert abs(len(kept) - clean_pass) / len(recs) <= 0.10


def test_preselect_removes_flawed(shapes, mixed):
    kept = {r.record_id for r in preselect(mixed, shapes)}
    flawed = [r for r in mixed if r.synthetic_flawed]
    removed = sum(r.record_id not in kept for r in flawed)
    assert removed / len(flawed) >= 0.8


def test_preselect_ignores_hidden_flag(shapes, mixed):
    # flipping the ground-truth tag must not change the filter's decisions
    flipped = [GraspRecord(r.record_id, r.object_id, r.scale, r.rel_pose, r.hand_joint_targets, not r.synthetic_flawed)
               for r in mixed[:30]]
    a = [r.record_id for r in preselect(mixed[:30], shapes)]
    b = [r.record_id for r in preselect(flipped, shapes)]
    assert a == b


# --------------------------------------------------------------------------
# storage

floats = st.floats(allow_nan=False, allow_infinity=False, width=64)


@st.composite
def records(draw):
    n = draw(st.integers(0, 30))
    out = []
    for i in range(n):
        out.append(
            GraspRecord(
                record_id=f"r{i}",
                object_id=draw(st.sampled_from(SHAPE_IDS)),
                scale=draw(st.floats(0.1, 10.0)),
                rel_pose=Pose2(draw(floats.filter(lambda v: abs(v) < 1e6)), draw(floats.filter(lambda v: abs(v) < 1e6)),
                               draw(st.floats(-3.1, 3.1))),
                hand_joint_targets=tuple(draw(st.lists(floats, min_size=6, max_size=6))),
                synthetic_flawed=draw(st.booleans()),
            )
        )
    return out


@given(records())
def test_round_trip_property(tmp_path_factory, recs):
    path = tmp_path_factory.mktemp("rt") / "d.jsonl"
    save_records(path, recs)
    assert load_records(path) == recs


def test_round_trip_1000(tmp_path, shapes):
    rng = np.random.default_rng(0)
    recs = [
        GraspRecord(f"x{i}", SHAPE_IDS[i % 3], float(rng.uniform(0.5, 2)), Pose2(*rng.normal(size=3)),
                    tuple(rng.normal(size=6)), bool(rng.integers(2)))
        for i in range(1000)
    ]
    save_records(tmp_path / "d.jsonl", recs)
    back = load_records(tmp_path / "d.jsonl")
    assert back == recs
    for a, b in zip(recs, back):
        assert a.rel_pose.as_array().tobytes() == b.rel_pose.as_array().tobytes()


def test_empty_file(tmp_path):
    p = tmp_path / "e.jsonl"
    p.write_text("")
    assert load_records(p) == []


def test_truncated_line_reports_line_number(tmp_path, mixed):
    p = tmp_path / "t.jsonl"
    save_records(p, mixed[:3])
    text = p.read_text()
    p.write_text(text[: len(text) - 20])
    with pytest.raises(DatasetFormatError, match=":3:"):
        load_records(p)


def test_unknown_object_rejected(tmp_path, mixed):
    d = mixed[0].to_json()
    d["object_id"] = "teapot"
    p = tmp_path / "u.jsonl"
    p.write_text(json.dumps(d) + "\n")
    with pytest.raises(DatasetFormatError, match="teapot"):
        load_records(p)


def test_duplicate_id_rejected(tmp_path, mixed):
    p = tmp_path / "dup.jsonl"
    save_records(p, [mixed[0], mixed[0]])
    with pytest.raises(DatasetFormatError, match="duplicate"):
        load_records(p)


def test_manifest_round_trip_and_monotone(tmp_path):
    m = DatasetManifest(["banana"], {"seed": 10, "phase1": 6, "phase2": 6, "phase3": 4}, 3, "abc")
    m.save(tmp_path / "m.json")
    assert DatasetManifest.load(tmp_path / "m.json") == m
    with pytest.raises(ValueError):
        DatasetManifest(["banana"], {"seed": 1, "phase1": 2}, 0, "x").save(tmp_path / "bad.json")


def test_grip_is_stable_in_fixture_world(hand, params, shapes):
    # the closed-grasp fixture used across the suite is itself a valid record
    q, pose, _ = closed_grasp(hand, shapes["banana"])
    assert drop_test(WorldState(q, pose, shapes["banana"]), hand, 0.0, params) == 0
