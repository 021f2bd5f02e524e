"""The agent network: conv or MLP trunk, GRU memory, and three head kinds.

Heads: policy logits (linear), state value (linear), and zero or more
auxiliary decoders predicting the scaled pixel GVF. Each decoder is three
dense layers hidden -> 256 -> 512 -> d with sigmoid, sigmoid, linear.

Initialization draws every parameter from its own RNG stream keyed by
(seed, parameter name). Adding or removing a head therefore never shifts
the draws of any other parameter, which downstream byte-identity checks
rely on.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class NetConfig:
    input_shape: tuple            # (C, H, W)
    n_actions: int = 4
    trunk: str = "conv"           # "conv" | "mlp"
    conv_layers: tuple = ((8, 3, 1), (16, 3, 2), (16, 3, 1))   # (out_channels, kernel, stride)
    fc_size: int = 128
    hidden_size: int = 128
    decoder_sizes: tuple = (256, 512)
    aux_heads: int = 0
    policy_scale: float = 0.01
    dtype: str = "float32"

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        self.conv_layers = tuple(tuple(int(v) for v in layer) for layer in self.conv_layers)
        self.decoder_sizes = tuple(int(v) for v in self.decoder_sizes)
        self.validate()

    @property
    def d(self) -> int:
        c, h, w = self.input_shape
        return c * h * w

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def conv_output_shape(self) -> tuple:
        c, h, w = self.input_shape
        for i, (out, k, s) in enumerate(self.conv_layers):
            h2 = (h - k) // s + 1
            w2 = (w - k) // s + 1
            if k > h or k > w or h2 < 1 or w2 < 1:
                raise ValueError(
                    f"conv layer {i} ({out}ch {k}x{k} stride {s}) empties the {h}x{w} input spatially")
            c, h, w = out, h2, w2
        return c, h, w

    def flat_trunk_input(self) -> int:
        if self.trunk == "conv":
            c, h, w = self.conv_output_shape()
            return c * h * w
        return self.d

    def validate(self):
        if self.trunk not in ("conv", "mlp"):
            raise ValueError(f"unknown trunk kind '{self.trunk}'")
        if self.trunk == "mlp" and self.conv_layers:
            raise ValueError("mlp trunk takes no conv_layers; set conv_layers to []")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got '{self.dtype}'")
        if self.n_actions < 2:
            raise ValueError("need at least 2 actions")
        if len(self.input_shape) != 3:
            raise ValueError(f"input_shape must be (C,H,W), got {self.input_shape}")
        if self.trunk == "conv":
            self.conv_output_shape()
        if self.aux_heads < 0:
            raise ValueError("aux_heads must be >= 0")


def _stream(seed: int, name: str) -> np.random.Generator:
    digest = hashlib.blake2s(f"{seed}:{name}".encode(), digest_size=8).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))


def _uniform(seed, name, shape, fan_in, scale=1.0):
    limit = math.sqrt(3.0 / fan_in)
    w = _stream(seed, name).uniform(-limit, limit, size=shape)
    return w * scale


class AgentNet:
    def __init__(self, config: NetConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    @classmethod
    def init(cls, seed: int, config: NetConfig) -> "AgentNet":
        """Deterministic per-name initialization; biases zero, weights
        fan-in-scaled uniform, policy weights shrunk to start near-uniform."""
        cfg = config
        dt = cfg.np_dtype
        spec: dict[str, np.ndarray] = {}

        def put(name, arr):
            spec[name] = np.ascontiguousarray(arr.astype(dt))

        def zeros(name, shape):
            spec[name] = np.zeros(shape, dtype=dt)

        if cfg.trunk == "conv":
            cin = cfg.input_shape[0]
            for i, (cout, k, _s) in enumerate(cfg.conv_layers):
                put(f"conv{i}.w", _uniform(seed, f"conv{i}.w", (cout, cin, k, k), cin * k * k))
                zeros(f"conv{i}.b", (cout,))
                cin = cout
        flat = cfg.flat_trunk_input()
        put("fc.w", _uniform(seed, "fc.w", (flat, cfg.fc_size), flat))
        zeros("fc.b", (cfg.fc_size,))

        fs, hs = cfg.fc_size, cfg.hidden_size
        for gate in ("z", "r", "h"):
            put(f"gru.w{gate}", _uniform(seed, f"gru.w{gate}", (fs, hs), fs))
            put(f"gru.u{gate}", _uniform(seed, f"gru.u{gate}", (hs, hs), hs))
            zeros(f"gru.b{gate}", (hs,))

        put("policy.w", _uniform(seed, "policy.w", (hs, cfg.n_actions), hs, scale=cfg.policy_scale))
        zeros("policy.b", (cfg.n_actions,))
        put("value.w", _uniform(seed, "value.w", (hs, 1), hs))
        zeros("value.b", (1,))

        sizes = (hs,) + cfg.decoder_sizes + (cfg.d,)
        for j in range(cfg.aux_heads):
            for layer in range(len(sizes) - 1):
                name = f"tdae{j}.l{layer}.w"
                put(name, _uniform(seed, name, (sizes[layer], sizes[layer + 1]), sizes[layer]))
                zeros(f"tdae{j}.l{layer}.b", (sizes[layer + 1],))

        params = {name: Tensor(arr, requires_grad=True) for name, arr in spec.items()}
        return cls(cfg, params)

    # -- forward pieces (Tensor in, Tensor out; record iff a tape is active) --

    def trunk(self, obs: Tensor) -> Tensor:
        """[B,C,H,W] observations in [0,1] -> [B,fc_size] features."""
        p = self.params
        x = obs
        if self.config.trunk == "conv":
            for i, (_out, _k, s) in enumerate(self.config.conv_layers):
                x = ad.relu(ad.add_chan_bias(ad.conv2d(x, p[f"conv{i}.w"], s), p[f"conv{i}.b"]))
        x = ad.reshape(x, (x.shape[0], int(np.prod(x.shape[1:]))))
        return ad.relu(ad.add_bias(ad.matmul(x, p["fc.w"]), p["fc.b"]))

    def gru(self, x: Tensor, h: Tensor) -> Tensor:
        """One GRU step over a batch: x[B,fc], h[B,hid] -> h'[B,hid]."""
        p = self.params
        z = ad.sigmoid(ad.add_bias(ad.add(ad.matmul(x, p["gru.wz"]), ad.matmul(h, p["gru.uz"])), p["gru.bz"]))
        r = ad.sigmoid(ad.add_bias(ad.add(ad.matmul(x, p["gru.wr"]), ad.matmul(h, p["gru.ur"])), p["gru.br"]))
        cand = ad.tanh(ad.add_bias(ad.add(ad.matmul(x, p["gru.wh"]), ad.matmul(ad.mul(r, h), p["gru.uh"])), p["gru.bh"]))
        return ad.add(ad.mul(ad.sub(1.0, z), h), ad.mul(z, cand))

    def policy_head(self, h: Tensor) -> Tensor:
        p = self.params
        return ad.add_bias(ad.matmul(h, p["policy.w"]), p["policy.b"])

    def value_head(self, h: Tensor) -> Tensor:
        p = self.params
        v = ad.add_bias(ad.matmul(h, p["value.w"]), p["value.b"])
        return ad.reshape(v, (h.shape[0],))

    def decoder(self, j: int, h: Tensor) -> Tensor:
        """Scaled GVF prediction psi~ = (1-gamma) * Psi, one head."""
        p = self.params
        n_layers = len(self.config.decoder_sizes) + 1
        x = h
        for layer in range(n_layers - 1):
            x = ad.sigmoid(ad.add_bias(ad.matmul(x, p[f"tdae{j}.l{layer}.w"]), p[f"tdae{j}.l{layer}.b"]))
        last = n_layers - 1
        return ad.add_bias(ad.matmul(x, p[f"tdae{j}.l{last}.w"]), p[f"tdae{j}.l{last}.b"])

    # -- inference conveniences (tape off, numpy in/out) --

    def step_inference(self, obs: np.ndarray, h: np.ndarray):
        """Policy step for rollouts: returns (logits, h') as arrays."""
        ot, ht = Tensor(obs), Tensor(h)
        x = self.trunk(ot)
        h2 = self.gru(x, ht)
        return self.policy_head(h2).data, h2.data

    def bootstrap_inference(self, obs: np.ndarray, h: np.ndarray, heads: list[int]):
        """Value and selected decoder outputs for next-state targets."""
        ot, ht = Tensor(obs), Tensor(h)
        x = self.trunk(ot)
        h2 = self.gru(x, ht)
        values = self.value_head(h2).data
        psis = {j: self.decoder(j, h2).data for j in heads}
        return values, psis

    @property
    def n_params(self) -> int:
        return sum(int(p.data.size) for p in self.params.values())

    def param_vector_norm(self) -> float:
        return float(np.sqrt(sum(float(np.dot(p.data.reshape(-1), p.data.reshape(-1)))
                                 for p in self.params.values())))
