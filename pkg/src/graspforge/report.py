"""Run report: retention, RL curves, diffusion validation, ablation. Reads only."""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .dataset import load_records

RETENTION = (("seed", "seeds.jsonl"), ("phase1", "phase1.jsonl"), ("phase2", "phase2.jsonl"), ("phase3", "phase3.jsonl"))


class ReportError(RuntimeError):
    pass


def _rows(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def retention_table(counts: list[tuple[str, int]]) -> list[dict]:
    """Stage-over-stage ratios; the first stage has ratio 1."""
    out = []
    prev = None
    for name, n in counts:
        ratio = 1.0 if prev is None else (n / prev if prev else 0.0)
        out.append({"stage": name, "count": n, "ratio": ratio})
        prev = n
    return out


def build_report(root: str | Path) -> dict:
    root = Path(root)
    cfg_path = root / "config.json"
    missing = []
    if not cfg_path.exists():
        missing.append("config.json (any stage)")
    for stage, name in (("gen-seed", "seeds.jsonl"), ("preselect", "phase1.jsonl"),
                        ("train-rl-static", "phase2.jsonl"), ("train-rl-random", "phase3.jsonl"),
                        ("eval", "eval.json"), ("ablate", "ablation.json")):
        if not (root / name).exists():
            missing.append(f"{name} (stage {stage})")
    if missing:
        raise ReportError(f"{root}: missing artifacts: " + "; ".join(missing))
    meta = json.loads(cfg_path.read_text())
    cfg = meta["config"]
    objects = list(cfg["objects"])

    sets = {name: load_records(root / f, objects) for name, f in RETENTION}
    retention = {"all": retention_table([(n, len(sets[n])) for n, _ in RETENTION])}
    for obj in objects:
        retention[obj] = retention_table([(n, sum(r.object_id == obj for r in sets[n])) for n, _ in RETENTION])

    rl = {}
    for mode in ("static", "random"):
        for obj in objects:
            p = root / f"metrics_rl_{mode}_{obj}.csv"
            if not p.exists():
                raise ReportError(f"missing {p.name}; re-run stage train-rl-{mode}")
            rows = _rows(p)
            rl[f"{mode}/{obj}"] = {
                "epochs": len(rows),
                "final_success_rate": float(rows[-1]["success_rate"]) if rows else None,
                "best_success_rate": max(float(r["success_rate"]) for r in rows) if rows else None,
            }

    diffusion = {}
    for obj in objects:
        p = root / f"metrics_diffusion_{obj}.csv"
        if not p.exists():
            raise ReportError(f"missing {p.name}; re-run stage train-diffusion")
        rows = _rows(p)
        rates = [float(r["mean_success_rate"]) for r in rows]
        diffusion[obj] = {
            "curve": [[int(r["iteration"]), float(r["mean_success_rate"])] for r in rows],
            "best": max(rates) if rates else None,
            "final": rates[-1] if rates else None,
        }

    return {
        "seed": cfg["seed"],
        "config_hash": meta["config_hash"],
        "objects": objects,
        "retention": retention,
        "rl": rl,
        "diffusion": diffusion,
        "eval": json.loads((root / "eval.json").read_text()),
        "ablation": json.loads((root / "ablation.json").read_text()),
    }


def render_text(report: dict) -> str:
    lines = [f"run seed {report['seed']}  config {report['config_hash']}", "", "retention (stage-over-stage)"]
    lines.append(f"  {'set':<8}" + "".join(f"{r['stage']:>14}" for r in report["retention"]["all"]))
    for key, rows in report["retention"].items():
        lines.append(f"  {key:<8}" + "".join(f"{r['count']:>7d} {r['ratio']:>6.3f}" for r in rows))
    lines += ["", "RL success (final / best over epochs)"]
    for key, v in report["rl"].items():
        lines.append(f"  {key:<16} {v['final_success_rate']:>6.3f} {v['best_success_rate']:>6.3f}  ({v['epochs']} epochs)")
    lines += ["", "diffusion validation success (best / final / eval)"]
    for obj in report["objects"]:
        d = report["diffusion"][obj]
        lines.append(f"  {obj:<10} {d['best']:>6.3f} {d['final']:>6.3f} {report['eval'][obj]:>6.3f}")
    lines.append(f"  {'mean eval':<10} {report['eval']['mean']:>20.3f}")
    lines += ["", "ablation, random-pose success", f"  {'object':<10}{'none':>8}{'static':>8}{'random':>8}"]
    for key, row in report["ablation"].items():
        lines.append(f"  {key:<10}{row['none']:>8.3f}{row['static_actor']:>8.3f}{row['random_actor']:>8.3f}")
    return "\n".join(lines) + "\n"


def write_report(root: str | Path, report: dict) -> None:
    """Write report.json and report.txt, leaving files untouched when already identical."""
    root = Path(root)
    for name, text in (
        ("report.json", json.dumps(report, indent=1, sort_keys=True) + "\n"),
        ("report.txt", render_text(report)),
    ):
        path = root / name
        if not path.exists() or path.read_text() != text:
            path.write_text(text)
