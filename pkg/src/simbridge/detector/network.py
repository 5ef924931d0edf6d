"""Domain-aware BEV network with hand-written gradients.

Layout per cell, batched as ``(B, H, W, C)``::

    input layer (per domain) -> ReLU -> fc1 -> ReLU -> 3x3 mix -> ReLU -> fc2 -> ReLU = BEV map
    BEV map -> 1x1 head -> [objectness, class logits, 8 box terms]

Only the input layers are domain specific; everything after them is shared.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rng import keyed_generator, normal
from .features import BevGridConfig

N_BOX = 8
SHARED = "shared"
PRIOR_PROB = 0.01


@dataclass(frozen=True)
class DetectorConfig:
    grid: BevGridConfig = BevGridConfig()
    d_feat: int = 32
    n_cls: int = 4
    sim_channels: int = 4
    real_channels: int = 6
    domain_aware: bool = True

    @property
    def head_dim(self) -> int:
        return 1 + self.n_cls + N_BOX

    def input_layers(self) -> dict:
        """Input layer name -> channel count."""
        if self.domain_aware:
            return {"sim": self.sim_channels, "real": self.real_channels}
        return {SHARED: max(self.sim_channels, self.real_channels)}

    def layer_for(self, domain: str) -> str:
        return domain if self.domain_aware else SHARED


def im2col3(x: np.ndarray) -> np.ndarray:
    """``(B, H, W, C)`` -> ``(B, H, W, 9C)`` zero-padded 3x3 neighbourhoods, row-major taps."""
    b, h, w, c = x.shape
    pad = np.zeros((b, h + 2, w + 2, c), dtype=x.dtype)
    pad[:, 1:-1, 1:-1] = x
    cols = np.empty((b, h, w, 9 * c), dtype=x.dtype)
    for k in range(9):
        dy, dx = divmod(k, 3)
        cols[..., k * c:(k + 1) * c] = pad[:, dy:dy + h, dx:dx + w]
    return cols


def col2im3(cols: np.ndarray, c: int) -> np.ndarray:
    b, h, w, _ = cols.shape
    pad = np.zeros((b, h + 2, w + 2, c), dtype=cols.dtype)
    for k in range(9):
        dy, dx = divmod(k, 3)
        pad[:, dy:dy + h, dx:dx + w] += cols[..., k * c:(k + 1) * c]
    return pad[:, 1:-1, 1:-1]


def _mm(x, w):
    # (..., a) @ (a, b) via a 2-D matmul
    return (x.reshape(-1, x.shape[-1]) @ w).reshape(x.shape[:-1] + (w.shape[1],))


def _wgrad(x, d):
    return x.reshape(-1, x.shape[-1]).T @ d.reshape(-1, d.shape[-1])


class BevDetector:
    """Parameters live in ``self.params`` (name -> array); ``self.groups`` maps name -> group.

    Groups are ``"shared"`` for trunk and head parameters and ``"domain:<name>"``
    for input layers.
    """

    def __init__(self, cfg: DetectorConfig = DetectorConfig(), seed: int = 0):
        self.cfg = cfg
        self.params: dict = {}
        self.groups: dict = {}
        rng = keyed_generator(seed, 0xD37)
        d = cfg.d_feat

        def add(name, arr, group):
            self.params[name] = arr
            self.groups[name] = group

        def he(fan_in, fan_out):
            return normal(rng, np.sqrt(2.0 / fan_in), (fan_in, fan_out))

        # one draw for all input layers: the per-domain layers start identical on
        # the channels they have in common, and equal to the shared layer
        layers = cfg.input_layers()
        base = he(max(layers.values()), d)
        for dom, ch in layers.items():
            grp = SHARED if dom == SHARED else f"domain:{dom}"
            add(f"input.{dom}.W", base[:ch].copy(), grp)
            add(f"input.{dom}.b", np.zeros(d), grp)
        add("trunk.fc1.W", he(d, d), SHARED)
        add("trunk.fc1.b", np.zeros(d), SHARED)
        add("trunk.mix.W", he(9 * d, d), SHARED)
        add("trunk.mix.b", np.zeros(d), SHARED)
        add("trunk.fc2.W", he(d, d), SHARED)
        add("trunk.fc2.b", np.zeros(d), SHARED)
        head_w = normal(rng, 0.01, (d, cfg.head_dim))
        head_b = np.zeros(cfg.head_dim)
        head_b[0] = -np.log((1 - PRIOR_PROB) / PRIOR_PROB)
        add("head.W", head_w, SHARED)
        add("head.b", head_b, SHARED)

    # ------------------------------------------------------------------ registry
    def domain_specific(self) -> list:
        return sorted(n for n, g in self.groups.items() if g.startswith("domain:"))

    def shared(self) -> list:
        return sorted(n for n, g in self.groups.items() if g == SHARED)

    def n_params(self, names=None) -> int:
        names = self.params if names is None else names
        return int(sum(self.params[n].size for n in names))

    def domain_fraction(self) -> float:
        """Share of parameters that exist only for one domain."""
        return self.n_params(self.domain_specific()) / self.n_params()

    def copy(self) -> "BevDetector":
        other = object.__new__(BevDetector)
        other.cfg = self.cfg
        other.params = {k: v.copy() for k, v in self.params.items()}
        other.groups = dict(self.groups)
        return other

    # ------------------------------------------------------------------ compute
    def prepare_input(self, x: np.ndarray, domain: str) -> np.ndarray:
        layer = self.cfg.layer_for(domain)
        ch = self.params[f"input.{layer}.W"].shape[0]
        if x.shape[-1] == ch:
            return x
        if not self.cfg.domain_aware and x.shape[-1] < ch:
            # single shared input layer: missing channels are fed as zeros
            pad = np.zeros(x.shape[:-1] + (ch - x.shape[-1],), dtype=x.dtype)
            return np.concatenate([x, pad], axis=-1)
        raise ValueError(f"{domain} input has {x.shape[-1]} channels, "
                         f"input layer {layer!r} expects {ch}")

    def forward(self, x: np.ndarray, domain: str):
        """``x`` is ``(B, H, W, C)`` normalized pillars. Returns ``(bev, out, cache)``."""
        p = self.params
        layer = self.cfg.layer_for(domain)
        if f"input.{layer}.W" not in p:
            raise KeyError(f"no input layer for domain {domain!r}")
        x = self.prepare_input(np.asarray(x, dtype=np.float64), domain)
        a0 = _mm(x, p[f"input.{layer}.W"]) + p[f"input.{layer}.b"]
        h0 = np.maximum(a0, 0.0)
        a1 = _mm(h0, p["trunk.fc1.W"]) + p["trunk.fc1.b"]
        h1 = np.maximum(a1, 0.0)
        cols = im2col3(h1)
        a2 = _mm(cols, p["trunk.mix.W"]) + p["trunk.mix.b"]
        h2 = np.maximum(a2, 0.0)
        a3 = _mm(h2, p["trunk.fc2.W"]) + p["trunk.fc2.b"]
        bev = np.maximum(a3, 0.0)
        out = _mm(bev, p["head.W"]) + p["head.b"]
        cache = (layer, x, a0, h0, a1, h1, cols, a2, h2, a3, bev)
        return bev, out, cache

    def backward(self, cache, d_out: np.ndarray | None = None, d_bev: np.ndarray | None = None) -> dict:
        """Gradients for every parameter touched by this forward pass."""
        p = self.params
        layer, x, a0, h0, a1, h1, cols, a2, h2, a3, bev = cache
        g = {}
        d = np.zeros_like(bev) if d_bev is None else np.array(d_bev, dtype=np.float64)
        if d_out is not None:
            g["head.W"] = _wgrad(bev, d_out)
            g["head.b"] = d_out.reshape(-1, d_out.shape[-1]).sum(0)
            d += _mm(d_out, p["head.W"].T)
        else:
            g["head.W"] = np.zeros_like(p["head.W"])
            g["head.b"] = np.zeros_like(p["head.b"])
        d *= a3 > 0
        g["trunk.fc2.W"] = _wgrad(h2, d)
        g["trunk.fc2.b"] = d.reshape(-1, d.shape[-1]).sum(0)
        d = _mm(d, p["trunk.fc2.W"].T) * (a2 > 0)
        g["trunk.mix.W"] = _wgrad(cols, d)
        g["trunk.mix.b"] = d.reshape(-1, d.shape[-1]).sum(0)
        d = col2im3(_mm(d, p["trunk.mix.W"].T), h1.shape[-1]) * (a1 > 0)
        g["trunk.fc1.W"] = _wgrad(h0, d)
        g["trunk.fc1.b"] = d.reshape(-1, d.shape[-1]).sum(0)
        d = _mm(d, p["trunk.fc1.W"].T) * (a0 > 0)
        g[f"input.{layer}.W"] = _wgrad(x, d)
        g[f"input.{layer}.b"] = d.reshape(-1, d.shape[-1]).sum(0)
        return g


def split_head(out: np.ndarray, n_cls: int):
    """Objectness ``(...,)``, class logits ``(..., n_cls)``, box terms ``(..., 8)``."""
    return out[..., 0], out[..., 1:1 + n_cls], out[..., 1 + n_cls:]
