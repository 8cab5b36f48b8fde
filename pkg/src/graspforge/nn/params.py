"""Named parameter storage, Adam, and the checkpoint file format."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autograd import Tensor


@dataclass
class ParamStore:
    params: dict[str, np.ndarray] = field(default_factory=dict)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        value = np.array(value, dtype=np.float64)
        self.params[name] = value
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)

    def leaves(self, requires_grad: bool = True) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self.params.items()}

    def copy(self) -> ParamStore:
        return ParamStore(
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.m.items()},
            {k: v.copy() for k, v in self.v.items()},
            self.step,
        )

    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def digest(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.params):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.params[k]).tobytes())
        return h.hexdigest()[:16]


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    # gain for a = sqrt(5), i.e. bound = 1 / sqrt(fan_in)
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(store: ParamStore, grads: dict[str, np.ndarray], hp: AdamConfig = AdamConfig()) -> ParamStore:
    """Bias-corrected Adam, in place. Returns the store for chaining."""
    for name, g in grads.items():
        if name not in store.params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != store.params[name].shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != {store.params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    store.step += 1
    t = store.step
    c1 = 1.0 - hp.beta1**t
    c2 = 1.0 - hp.beta2**t
    for name, g in grads.items():
        m = store.m[name]
        v = store.v[name]
        m *= hp.beta1
        m += (1.0 - hp.beta1) * g
        v *= hp.beta2
        v += (1.0 - hp.beta2) * g * g
        store.params[name] -= hp.lr * (m / c1) / (np.sqrt(v / c2) + hp.eps)
    return store


def polyak_update(target: ParamStore, source: ParamStore, tau: float) -> None:
    # written as a difference so identical stores stay bit-identical
    for k, v in source.params.items():
        target.params[k] += tau * (v - target.params[k])


# --------------------------------------------------------------------------
# checkpoint: <stem>.json manifest + <stem>.bin little-endian float64 payload


def save_checkpoint(path: str | Path, store: ParamStore, extra: dict | None = None) -> None:
    path = Path(path)
    entries = []
    blobs = []
    for group, tensors in (("param", store.params), ("adam_m", store.m), ("adam_v", store.v)):
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f8")
            entries.append({"group": group, "name": name, "shape": list(arr.shape)})
            blobs.append(arr.tobytes())
    manifest = {"format": "graspforge-ckpt/1", "step": store.step, "tensors": entries, "extra": extra or {}}
    path.with_suffix(".bin").write_bytes(b"".join(blobs))
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path: str | Path) -> tuple[ParamStore, dict]:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    payload = path.with_suffix(".bin").read_bytes()
    store = ParamStore(step=int(manifest["step"]))
    offset = 0
    groups = {"param": store.params, "adam_m": store.m, "adam_v": store.v}
    for e in manifest["tensors"]:
        n = int(np.prod(e["shape"], dtype=np.int64)) if e["shape"] else 1
        arr = np.frombuffer(payload, dtype="<f8", count=n, offset=offset).reshape(e["shape"]).astype(np.float64)
        offset += 8 * n
        groups[e["group"]][e["name"]] = arr
    if offset != len(payload):
        raise ValueError(f"{path}: payload has {len(payload) - offset} trailing bytes")
    return store, manifest.get("extra", {})
