"""Acceptance criteria 1-10, each printed as one PASS/FAIL line.

The desk, multi-seed and smoke pipeline runs are session fixtures; set
GRASPFORGE_ACCEPT_DIR to keep their run directories (an already complete
directory is reused as-is, including its recorded stage timings).
"""

import csv
import json
import math
import os
import time
import zlib
from pathlib import Path

import numpy as np
import pytest

import test_nn
from graspforge.cli import resolve_config_path
from graspforge.config import load_config, with_out
from graspforge.dataset import load_records
from graspforge.diffusion import (
    DiffusionPolicy,
    MinMaxNormalizer,
    PolicyConfig,
    build_training_windows,
    cosine_schedule,
    ddpm_sample,
    train_policy,
)
from graspforge.pipeline import STAGES, run_pipeline
from graspforge.poses import bounds_from_document, quartile_stats, sample_valid_pose
from graspforge.rl import EnvConfig, run_grasp_trial
from graspforge.rl.enhance import Episode, load_episodes
from graspforge.rl.env import arm_pose
from graspforge.sim import N_ARM, HandModel, forward_kinematics, place_object_relative, shape_library
from graspforge.sim.physics import drop_reward
from test_diffusion import reference_sample, window_oracle, zero_predictor
from test_poses import sort_interpolate
from test_sim import fk_oracle

pytestmark = pytest.mark.slow

ABLATION_STAGES = ("gen-seed", "preselect", "train-rl-static", "train-rl-random", "ablate")


def announce(capsys, n, title, ok, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n}: {title}: {detail}")


def _base_dir(tmp_path_factory, name):
    keep = os.environ.get("GRASPFORGE_ACCEPT_DIR")
    if keep:
        return Path(keep) / name
    return tmp_path_factory.mktemp(name) / "run"


def _run(cfg_name, out, seed=None, stages=STAGES):
    cfg = with_out(load_config(resolve_config_path(cfg_name)), str(out), seed)
    t0 = time.perf_counter()
    report = run_pipeline(cfg, stages=stages)
    wall = time.perf_counter() - t0
    timings = json.loads((Path(out) / "timings.json").read_text())
    return {"cfg": cfg, "root": Path(out), "report": report, "wall": wall, "timings": timings}


@pytest.fixture(scope="session")
def desk(tmp_path_factory):
    return _run("desk", _base_dir(tmp_path_factory, "desk"))


@pytest.fixture(scope="session")
def ablation_seeds(tmp_path_factory, desk):
    runs = [desk]
    for seed in (1, 2):
        runs.append(_run("desk", _base_dir(tmp_path_factory, f"desk-seed{seed}"), seed, ABLATION_STAGES))
    return runs


@pytest.fixture(scope="session")
def smoke_pair(tmp_path_factory):
    # always fresh: this criterion is about re-running
    return [_run("smoke", tmp_path_factory.mktemp(f"smoke{i}") / "run") for i in range(2)]


# --------------------------------------------------------------------------


def test_c1_rl_convergence(desk, capsys):
    root, cfg = desk["root"], desk["cfg"]
    finals = {}
    for obj in cfg.objects:
        with open(root / f"metrics_rl_static_{obj}.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == cfg.rl.epochs_static
        finals[obj] = float(rows[-1]["success_rate"])
    n_train = {o: min(cfg.rl.max_records, sum(r.object_id == o for r in load_records(root / "phase1.jsonl")))
               for o in cfg.objects}
    rate = float(np.mean(list(finals.values())))
    secs = desk["timings"]["train-rl-static"]
    ok = rate >= 0.90 and secs <= 15 * 60
    announce(capsys, 1, "Phase 2 success >= 90% within 15 min", ok,
             f"final-epoch success {rate:.3f} {finals}, records {n_train}, "
             f"{cfg.rl.epochs_static} epochs x {cfg.rl.episodes_per_epoch} episodes, {secs / 60:.1f} min")
    assert ok


def test_c2_diffusion_success(desk, capsys):
    root, cfg = desk["root"], desk["cfg"]
    ev = json.loads((root / "eval.json").read_text())
    t = desk["timings"]
    secs = sum(t[s] for s in ("record", "stats", "sample-poses", "train-diffusion", "eval"))
    best = {o: desk["report"]["diffusion"][o]["best"] for o in cfg.objects}
    ok = ev["mean"] >= 0.60 and secs <= 45 * 60 and cfg.diffusion.iterations == 5000 \
        and cfg.record.episodes_per_object == 200 and cfg.diffusion.val_episodes == 50
    announce(capsys, 2, "diffusion validation success >= 60% within 45 min", ok,
             f"eval mean {ev['mean']:.3f} {({o: ev[o] for o in cfg.objects})}, best during training {best}, "
             f"record+train+eval {secs / 60:.1f} min")
    assert ok


def test_c3_ablation_ordering(ablation_seeds, capsys):
    rows = [json.loads((r["root"] / "ablation.json").read_text())["mean"] for r in ablation_seeds]
    none = float(np.mean([r["none"] for r in rows]))
    static = float(np.mean([r["static_actor"] for r in rows]))
    rand = float(np.mean([r["random_actor"] for r in rows]))
    ok = none < static <= rand and static - none >= 0.10
    announce(capsys, 3, "ablation none < static <= random (3 seeds)", ok,
             f"none {none:.3f}, static {static:.3f}, random {rand:.3f}; per seed {rows}")
    assert ok


def test_c4_retention(desk, capsys):
    root = desk["root"]
    sets = {n: load_records(root / f"{n}.jsonl") for n in ("seeds", "phase1", "phase2", "phase3")}
    ids = {n: {r.record_id for r in v} for n, v in sets.items()}
    nested = ids["phase1"] <= ids["seeds"] and ids["phase2"] <= ids["phase1"] and ids["phase3"] <= ids["phase2"]
    flawed = [r for r in sets["seeds"] if r.synthetic_flawed]
    removed = sum(r.record_id not in ids["phase1"] for r in flawed) / len(flawed)
    frac = len(flawed) / len(sets["seeds"])
    ok = nested and removed >= 0.80 and desk["cfg"].seedgen.flaw_fraction == 0.4
    announce(capsys, 4, "retention nested and Phase 1 removes >= 80% of flawed", ok,
             f"counts {[len(v) for v in sets.values()]}, flawed fraction {frac:.2f}, removed {removed:.3f}")
    assert ok


def test_c5_schedule(capsys):
    T, s = 50, 0.008
    f = [math.cos(((t / T + s) / (1 + s)) * math.pi / 2) ** 2 for t in range(T + 1)]
    abar = [f[t] / f[0] for t in range(T + 1)]
    betas = np.array([min(1 - abar[t] / abar[t - 1], 0.999) for t in range(1, T + 1)])
    sch = cosine_schedule(T)
    err = max(np.max(np.abs(sch.betas - betas)), np.max(np.abs(sch.alpha_bars - np.cumprod(1 - betas))))
    ok = err <= 1e-12 and bool(np.all(np.diff(sch.alpha_bars) < 0)) and bool(np.all(sch.betas <= 0.999))
    announce(capsys, 5, "cosine schedule matches the closed form", ok, f"max abs error {err:.2e}")
    assert ok


def test_c6_gradient_suite(capsys):
    failures = []
    for op in sorted(test_nn.OPS):
        for i in range(test_nn.N_INSTANCES):
            build, arrays = test_nn.OPS[op](np.random.default_rng([zlib.crc32(op.encode()), i]))
            try:
                test_nn.check_grads(build, arrays)
            except AssertionError as exc:
                failures.append((op, i, str(exc)))
    try:
        test_nn.test_unet_parameter_gradients()
        test_nn.test_unet_input_gradients_elementwise()
    except AssertionError as exc:
        failures.append(("unet", -1, str(exc)))
    ok = not failures
    announce(capsys, 6, "finite-difference gradient checks", ok,
             f"{len(test_nn.OPS)} ops x {test_nn.N_INSTANCES} instances + U-Net, rel err <= {test_nn.TOL}; "
             f"failures {failures[:3]}")
    assert ok


def test_c7_oracles(capsys):
    rng = np.random.default_rng(0)
    q_err = 0.0
    for _ in range(1000):
        x = rng.normal(scale=rng.uniform(0.01, 10), size=int(rng.integers(4, 80)))
        st = quartile_stats(x)
        q_err = max(q_err, abs(st.q1 - sort_interpolate(x, 0.25)), abs(st.q3 - sort_interpolate(x, 0.75)))
    w_bad = 0
    for _ in range(100):
        n = int(rng.integers(1, 60))
        obs, acts = rng.normal(size=(n, 25)), rng.normal(size=(n, 6))
        for t, w in enumerate(build_training_windows(obs, acts)):
            h, a = window_oracle(obs, acts, t)
            w_bad += not (np.array_equal(w.obs_history, h) and np.array_equal(w.actions, a))
    hand = HandModel()
    fk_err = 0.0
    for _ in range(500):
        q = rng.uniform(hand.limits[:, 0], hand.limits[:, 1])
        kin = forward_kinematics(hand, q)
        center, normal, tips = fk_oracle(hand, q)
        fk_err = max(fk_err, np.max(np.abs(kin.palm_center - center)), np.max(np.abs(kin.palm_normal - normal)),
                     np.max(np.abs(kin.fingertips - tips)))
    sch = cosine_schedule(50)
    d_err = 0.0
    for seed in range(5):
        got = ddpm_sample(zero_predictor, {}, np.zeros((1, 4)), sch, np.random.default_rng(seed), (8, 6))[0]
        want = reference_sample(sch, np.random.default_rng(seed), (8, 6))
        d_err = max(d_err, float(np.max(np.abs(got - want))))
    ok = q_err <= 1e-12 and w_bad == 0 and fk_err <= 1e-12 and d_err <= 1e-12
    announce(capsys, 7, "oracle equivalences", ok,
             f"quantile {q_err:.1e} (1000 cases), window mismatches {w_bad} (100 episodes), "
             f"FK {fk_err:.1e}, ddpm {d_err:.1e}")
    assert ok


# -- criterion 8 helpers: an independent geometry re-check


def _pt_seg(p, a, b):
    ab = b - a
    den = float(ab @ ab)
    t = 0.0 if den == 0 else min(max(float((p - a) @ ab) / den, 0.0), 1.0)
    return float(np.linalg.norm(a + t * ab - p))


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _inside(p, poly):
    n = len(poly)
    return all(_cross(poly[i], poly[(i + 1) % n], p) >= 0 for i in range(n))


def _seg_poly(a, b, poly):
    if _inside(a, poly) or _inside(b, poly):
        return 0.0
    n = len(poly)
    best = math.inf
    for i in range(n):
        c, d = poly[i], poly[(i + 1) % n]
        d1, d2 = _cross(a, b, c), _cross(a, b, d)
        d3, d4 = _cross(c, d, a), _cross(c, d, b)
        if d1 * d2 < 0 and d3 * d4 < 0:
            return 0.0
        best = min(best, _pt_seg(a, c, d), _pt_seg(b, c, d), _pt_seg(c, a, b), _pt_seg(d, a, b))
    return best


def _recheck(hand, q, world, shape, b, rel):
    kin = forward_kinematics(hand, q)
    poly = world.apply(shape.points)
    c = np.array([world.x, world.y])
    palm, finger = kin.capsules[0], kin.capsules[3]
    bad = []
    if not all(lo <= v <= hi for v, lo, hi in zip((rel.x, rel.y, rel.theta), b.a, b.b)):
        bad.append("box")
    if np.linalg.norm(c - kin.palm_center) > b.d_max_palm:
        bad.append("d_max_palm")
    if np.linalg.norm(c - 0.5 * (finger[:2] + finger[2:])) > b.d_max_finger:
        bad.append("d_max_finger")
    if _seg_poly(palm[:2], palm[2:], poly) < b.d_min_palm:
        bad.append("d_min_palm")
    if _seg_poly(finger[:2], finger[2:], poly) < b.d_min_finger:
        bad.append("d_min_finger")
    if shape.elongated and b.theta_min is not None:
        for vert in shape.edge_vertices():
            e = world.apply(vert[None, :])[0] - kin.palm_center
            ang = math.acos(max(-1.0, min(1.0, float(kin.palm_normal @ e) / np.linalg.norm(e))))
            if not b.theta_min <= ang <= b.theta_max:
                bad.append("edge_angle")
    limit = hand.phalanx_radius - 1e-4
    if any(_seg_poly(cap[:2], cap[2:], poly) < limit for cap in kin.capsules):
        bad.append("collision")
    return bad


def test_c8_environment_contracts(desk, capsys):
    root, cfg = desk["root"], desk["cfg"]
    shapes = shape_library()
    env = EnvConfig()
    # rewards over random trials with random residuals
    phase3 = load_records(root / "phase3.jsonl")
    rng = np.random.default_rng(8)
    rewards = set()
    for i in range(300):
        rec = phase3[i % len(phase3)]
        tr = run_grasp_trial(env, rec, shapes[rec.object_id], "random", lambda o: rng.uniform(-0.3, 0.3, 6), rng)
        rewards.add(tr.reward)
    # deviations exactly representable in binary: 0.025 both ways, then just above
    boundary = (drop_reward(0.0, 0.025), drop_reward(0.0, -0.025), drop_reward(0.0, 0.0250001))
    # recorded streams: logged targets and executed joint motion per step
    clamp = cfg.record.clamp
    n_eps = worst_logged = worst_exec = 0.0
    for obj in cfg.objects:
        for ep in load_episodes(root / f"enhanced_{obj}.jsonl"):
            n_eps += 1
            hand_q = ep.obs[:, N_ARM:N_ARM + 6]
            worst_exec = max(worst_exec, float(np.max(np.abs(np.diff(hand_q, axis=0)), initial=0.0)))
            worst_logged = max(worst_logged, float(np.max(np.abs(np.diff(ep.actions, axis=0)), initial=0.0)))
    # 1000 sampled validation poses, re-checked independently
    docs = json.loads((root / "pose_stats.json").read_text())
    violations = []
    for i in range(1000):
        obj = cfg.objects[i % len(cfg.objects)]
        b = bounds_from_document(docs[obj])
        q = np.concatenate([arm_pose(env, "random", rng), env.hand.open_pose])
        rel = sample_valid_pose(b, env.hand, q, shapes[obj], rng, cfg.sampler.max_tries)
        world = place_object_relative(forward_kinematics(env.hand, q).hand_base, rel)
        violations += _recheck(env.hand, q, world, shapes[obj], b, rel)
    ok = rewards <= {-1, 0} and boundary == (0, 0, -1) and worst_exec <= clamp + 1e-12 \
        and worst_logged <= clamp + 1e-12 and not violations
    announce(capsys, 8, "environment contracts", ok,
             f"rewards seen {sorted(rewards)}, boundary {boundary}, {int(n_eps)} episodes: max executed step "
             f"{worst_exec:.6f}, max logged-target step {worst_logged:.6f} ({cfg.record.action_mode} mode), "
             f"pose violations {len(violations)}/1000")
    assert ok


def test_c9_determinism(smoke_pair, capsys):
    a, b = smoke_pair
    names = sorted(p.name for p in a["root"].iterdir() if p.suffix == ".csv") + ["report.json", "report.txt"]
    differ = [n for n in names if (a["root"] / n).read_bytes() != (b["root"] / n).read_bytes()]
    others = sorted(p.name for p in a["root"].iterdir() if p.name != "timings.json")
    differ_all = [n for n in others if (a["root"] / n).read_bytes() != (b["root"] / n).read_bytes()]
    ok = not differ and a["wall"] <= 600 and b["wall"] <= 600
    announce(capsys, 9, "smoke pipeline bit-identical across runs", ok,
             f"{len(names)} CSV/report files compared, differing {differ}; other artifacts differing {differ_all}; "
             f"runtimes {a['wall']:.0f} s and {b['wall']:.0f} s")
    assert ok


def test_c10_single_mode(capsys):
    t0 = time.perf_counter()
    hand = HandModel()
    rng = np.random.default_rng(0)
    c = np.array([0.6, 0.9, 0.4, 1.1, 0.3, 0.8])
    eps = [Episode(f"e{i}", "banana", np.zeros(9), rng.normal(size=(30, 25)), np.repeat(c[None], 30, axis=0))
           for i in range(10)]
    cfg = PolicyConfig(widths=(16, 32), batch_size=16)
    policy = DiffusionPolicy.create(cfg, np.concatenate([e.obs for e in eps]), np.concatenate([e.actions for e in eps]),
                                    rng, hand)
    # a degenerate dataset range would map every sample onto c by construction;
    # normalize over the joint limits instead so the network has to find the mode
    policy.action_norm = MinMaxNormalizer(hand.hand_limits[:, 0].copy(), hand.hand_limits[:, 1].copy())
    train_policy(policy, eps, 3000, rng)
    blocks = policy.sample(rng.normal(size=(20, 2, 25)), [np.random.default_rng(100 + i) for i in range(20)])
    err = float(np.max(np.abs(blocks - c)))
    secs = time.perf_counter() - t0
    ok = err <= 0.05 and secs <= 300
    announce(capsys, 10, "constant-action toy converges to the mode", ok,
             f"max |a - c| {err:.4f} over 20 blocks, {secs:.0f} s")
    assert ok
