"""Actor/critic MLPs and the conditional 1D U-Net noise predictor."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .params import ParamStore, kaiming_uniform

# --------------------------------------------------------------------------
# MLP: four linear layers, ReLU between, optional tanh head


def init_mlp(store: ParamStore, prefix: str, widths, rng: np.random.Generator) -> None:
    """widths = (in, h1, h2, h3, out) for the four-layer default."""
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        store.add(f"{prefix}.{i}.w", kaiming_uniform(rng, (a, b), a))
        store.add(f"{prefix}.{i}.b", kaiming_uniform(rng, (b,), a))


def mlp_forward(P: dict, prefix: str, x, n_layers: int = 4, head: str = "linear", bound: float = 1.0) -> Tensor:
    h = x if isinstance(x, Tensor) else Tensor(x)
    w0 = P[f"{prefix}.0.w"]
    if h.shape[-1] != w0.shape[0]:
        raise ValueError(f"{prefix}: input width {h.shape[-1]} != {w0.shape[0]}")
    for i in range(n_layers):
        h = ag.linear(h, P[f"{prefix}.{i}.w"], P[f"{prefix}.{i}.b"])
        if i < n_layers - 1:
            h = ag.relu(h)
    if head == "tanh":
        h = ag.tanh(h) * bound
    elif head != "linear":
        raise ValueError(f"unknown head {head!r}")
    return h


def as_tensors(store_or_dict) -> dict:
    if isinstance(store_or_dict, ParamStore):
        return {k: Tensor(v) for k, v in store_or_dict.params.items()}
    return store_or_dict


# --------------------------------------------------------------------------
# conditional U-Net


@dataclass(frozen=True)
class UNetConfig:
    action_dim: int = 6
    cond_dim: int = 50  # obs_horizon * obs_dim
    widths: tuple[int, int] = (32, 64)
    kernel: int = 5
    group_size: int = 8
    embed_dim: int = 32


def _init_conv(store, name, cin, cout, k, rng):
    store.add(f"{name}.w", kaiming_uniform(rng, (cout, cin, k), cin * k))
    store.add(f"{name}.b", kaiming_uniform(rng, (cout,), cin * k))


def _init_linear(store, name, cin, cout, rng):
    store.add(f"{name}.w", kaiming_uniform(rng, (cin, cout), cin))
    store.add(f"{name}.b", kaiming_uniform(rng, (cout,), cin))


def _init_resblock(store, name, cin, cout, cfg: UNetConfig, film_in: int, rng):
    _init_conv(store, f"{name}.conv0", cin, cout, cfg.kernel, rng)
    store.add(f"{name}.gn0.g", np.ones(cout))
    store.add(f"{name}.gn0.b", np.zeros(cout))
    _init_conv(store, f"{name}.conv1", cout, cout, cfg.kernel, rng)
    store.add(f"{name}.gn1.g", np.ones(cout))
    store.add(f"{name}.gn1.b", np.zeros(cout))
    store.add(f"{name}.film.w", kaiming_uniform(rng, (film_in, 2 * cout), film_in))
    # scale starts at 1 and shift at 0
    store.add(f"{name}.film.b", np.concatenate([np.ones(cout), np.zeros(cout)]))
    if cin != cout:
        _init_conv(store, f"{name}.skip", cin, cout, 1, rng)


def init_unet(store: ParamStore, cfg: UNetConfig, rng: np.random.Generator, prefix: str = "unet") -> None:
    w1, w2 = cfg.widths
    e = cfg.embed_dim
    film_in = e + cfg.cond_dim
    _init_linear(store, f"{prefix}.step0", e, 4 * e, rng)
    _init_linear(store, f"{prefix}.step1", 4 * e, e, rng)
    _init_resblock(store, f"{prefix}.enc1", cfg.action_dim, w1, cfg, film_in, rng)
    _init_conv(store, f"{prefix}.down1", w1, w1, 3, rng)
    _init_resblock(store, f"{prefix}.enc2", w1, w2, cfg, film_in, rng)
    _init_conv(store, f"{prefix}.down2", w2, w2, 3, rng)
    _init_resblock(store, f"{prefix}.mid", w2, w2, cfg, film_in, rng)
    _init_conv(store, f"{prefix}.up2", w2, w2, 3, rng)
    _init_resblock(store, f"{prefix}.dec2", 2 * w2, w1, cfg, film_in, rng)
    _init_conv(store, f"{prefix}.up1", w1, w1, 3, rng)
    _init_resblock(store, f"{prefix}.dec1", 2 * w1, w1, cfg, film_in, rng)
    _init_conv(store, f"{prefix}.final0", w1, w1, cfg.kernel, rng)
    store.add(f"{prefix}.final_gn.g", np.ones(w1))
    store.add(f"{prefix}.final_gn.b", np.zeros(w1))
    _init_conv(store, f"{prefix}.final1", w1, cfg.action_dim, 1, rng)


def film(h: Tensor, cond: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Feature-wise affine: h (B, C, L) scaled and shifted by a projection of cond."""
    C = h.shape[1]
    ss = ag.linear(cond, w, b)  # (B, 2C)
    scale = ag.reshape(ss[:, :C], (-1, C, 1))
    shift = ag.reshape(ss[:, C:], (-1, C, 1))
    return h * scale + shift


def _conv(P, name, x, stride=1, padding=0):
    return ag.conv1d(x, P[f"{name}.w"], P[f"{name}.b"], stride=stride, padding=padding)


def _resblock(P, name, x, cond_act, cfg: UNetConfig):
    pad = cfg.kernel // 2
    h = _conv(P, f"{name}.conv0", x, padding=pad)
    cout = h.shape[1]
    groups = max(cout // cfg.group_size, 1)
    h = ag.mish(ag.group_norm(h, groups, P[f"{name}.gn0.g"], P[f"{name}.gn0.b"]))
    h = film(h, cond_act, P[f"{name}.film.w"], P[f"{name}.film.b"])
    h = _conv(P, f"{name}.conv1", h, padding=pad)
    h = ag.mish(ag.group_norm(h, groups, P[f"{name}.gn1.g"], P[f"{name}.gn1.b"]))
    res = _conv(P, f"{name}.skip", x) if f"{name}.skip.w" in P else x
    return h + res


def unet_forward(P: dict, noisy_actions, cond, t, cfg: UNetConfig, prefix: str = "unet") -> Tensor:
    """Predict the noise in `noisy_actions` (B, H, A) given cond (B, cond_dim) and step t (B,)."""
    x = noisy_actions if isinstance(noisy_actions, Tensor) else Tensor(noisy_actions)
    if x.data.ndim != 3 or x.shape[2] != cfg.action_dim:
        raise ValueError(f"expected (batch, horizon, {cfg.action_dim}) actions, got {x.shape}")
    B, H, _ = x.shape
    if H % 4:
        raise ValueError(f"prediction horizon {H} must be divisible by 4")
    c = cond if isinstance(cond, Tensor) else Tensor(cond)
    if c.shape != (B, cfg.cond_dim):
        raise ValueError(f"expected cond shape {(B, cfg.cond_dim)}, got {c.shape}")
    tt = t if isinstance(t, Tensor) else Tensor(np.broadcast_to(np.asarray(t, dtype=float), (B,)))

    emb = ag.sinusoidal_embedding(tt, cfg.embed_dim)
    emb = ag.linear(emb, P[f"{prefix}.step0.w"], P[f"{prefix}.step0.b"])
    emb = ag.linear(ag.mish(emb), P[f"{prefix}.step1.w"], P[f"{prefix}.step1.b"])
    cond_act = ag.mish(ag.concat([emb, c], axis=1))

    h0 = ag.transpose(x, (0, 2, 1))  # (B, A, H)
    e1 = _resblock(P, f"{prefix}.enc1", h0, cond_act, cfg)
    d1 = _conv(P, f"{prefix}.down1", e1, stride=2, padding=1)
    e2 = _resblock(P, f"{prefix}.enc2", d1, cond_act, cfg)
    d2 = _conv(P, f"{prefix}.down2", e2, stride=2, padding=1)
    m = _resblock(P, f"{prefix}.mid", d2, cond_act, cfg)
    u2 = _conv(P, f"{prefix}.up2", ag.upsample_nearest(m, 2), padding=1)
    u2 = _resblock(P, f"{prefix}.dec2", ag.concat([u2, e2], axis=1), cond_act, cfg)
    u1 = _conv(P, f"{prefix}.up1", ag.upsample_nearest(u2, 2), padding=1)
    u1 = _resblock(P, f"{prefix}.dec1", ag.concat([u1, e1], axis=1), cond_act, cfg)
    w1 = cfg.widths[0]
    f = _conv(P, f"{prefix}.final0", u1, padding=cfg.kernel // 2)
    f = ag.mish(ag.group_norm(f, max(w1 // cfg.group_size, 1), P[f"{prefix}.final_gn.g"], P[f"{prefix}.final_gn.b"]))
    out = _conv(P, f"{prefix}.final1", f)
    return ag.transpose(out, (0, 2, 1))
