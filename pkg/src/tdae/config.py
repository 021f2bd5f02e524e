"""Experiment configuration: a strict JSON schema covering scenario, network,
rollout, loss weights, auxiliary heads, optimizer, and run bookkeeping.

Parsing is deliberately unforgiving: any key the schema does not know is an
error naming the full dotted path, so a typo like "lamda_v" cannot silently
fall back to a default. Every config round-trips losslessly through
to_json_dict()/from_json_dict().
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .envs import ScenarioConfig
from .network import NetConfig
from .returns import TDAESpec
from .rollout import RolloutConfig

_SCENARIO_KEYS = (
    "kind", "grid_size", "view", "view_radius", "timeout", "k",
    "items_per_color", "indicator_visible_steps", "x",
    "chain_p", "chain_r", "chain_terminal", "chain_start",
)
_NETWORK_KEYS = ("trunk", "conv_layers", "fc_size", "hidden_size",
                 "decoder_sizes", "policy_scale")
_ROLLOUT_KEYS = ("workers", "segment_length")
_OPTIMIZER_KEYS = ("lr", "decay", "eps", "clip_norm")
_SWEEP_KEYS = ("gamma_aux", "lambda_tdae", "segment_length")


def _check_keys(d: dict, allowed, path: str):
    for k in d:
        if k not in allowed:
            raise ValueError(f"unknown config key '{path}{k}'")


@dataclass
class ExperimentConfig:
    scenario: dict
    output_dir: str
    total_frames: int
    network: dict = field(default_factory=dict)
    rollout: dict = field(default_factory=dict)
    gamma: float = 0.99
    lambda_v: float = 0.5
    lambda_h: float = 0.001
    auxiliary: list = field(default_factory=list)   # [{"gamma_aux": g, "lambda_tdae": l}, ...]
    optimizer: dict = field(default_factory=dict)
    eval_every_frames: int = 25000
    eval_episodes: int = 50
    eval_action_selection: str = "sample"           # "sample" | "argmax"
    seeds: list = field(default_factory=lambda: [0])
    dtype: str = "float32"
    sweep: dict = field(default_factory=dict)

    def __post_init__(self):
        _check_keys(self.scenario, _SCENARIO_KEYS, "scenario.")
        _check_keys(self.network, _NETWORK_KEYS, "network.")
        _check_keys(self.rollout, _ROLLOUT_KEYS, "rollout.")
        _check_keys(self.optimizer, _OPTIMIZER_KEYS, "optimizer.")
        _check_keys(self.sweep, _SWEEP_KEYS, "sweep.")
        for i, head in enumerate(self.auxiliary):
            _check_keys(head, ("gamma_aux", "lambda_tdae"), f"auxiliary[{i}].")
            TDAESpec(**head)  # range checks
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0,1], got {self.gamma}")
        if self.eval_action_selection not in ("sample", "argmax"):
            raise ValueError("eval_action_selection must be 'sample' or 'argmax'")
        if self.total_frames < 1:
            raise ValueError("total_frames must be positive")
        if self.eval_every_frames < 1:
            raise ValueError("eval_every_frames must be positive")
        if self.eval_episodes < 1:
            raise ValueError("eval_episodes must be positive")
        if not self.seeds:
            raise ValueError("seeds list cannot be empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds list has duplicates")
        self.scenario_config()  # surface scenario errors at parse time
        self.net_config()

    # --- derived objects -------------------------------------------------

    def scenario_config(self) -> ScenarioConfig:
        return ScenarioConfig(**self.scenario)

    def net_config(self) -> NetConfig:
        scen = self.scenario_config()
        kw = dict(self.network)
        trunk = kw.pop("trunk", "conv")
        if "conv_layers" in kw:
            kw["conv_layers"] = tuple(tuple(l) for l in kw["conv_layers"])
        elif trunk == "mlp":
            kw["conv_layers"] = ()
        if "decoder_sizes" in kw:
            kw["decoder_sizes"] = tuple(kw["decoder_sizes"])
        return NetConfig(input_shape=scen.obs_shape, trunk=trunk,
                         aux_heads=len(self.auxiliary), dtype=self.dtype, **kw)

    def rollout_config(self) -> RolloutConfig:
        return RolloutConfig(**self.rollout)

    def aux_specs(self) -> list:
        return [TDAESpec(**h) for h in self.auxiliary]

    def optimizer_kwargs(self) -> dict:
        return dict(self.optimizer)

    # --- serialization ---------------------------------------------------

    def to_json_dict(self) -> dict:
        d = {
            "scenario": dict(self.scenario),
            "network": dict(self.network),
            "rollout": dict(self.rollout),
            "gamma": self.gamma,
            "lambda_v": self.lambda_v,
            "lambda_h": self.lambda_h,
            "auxiliary": [dict(h) for h in self.auxiliary],
            "optimizer": dict(self.optimizer),
            "total_frames": self.total_frames,
            "eval_every_frames": self.eval_every_frames,
            "eval_episodes": self.eval_episodes,
            "eval_action_selection": self.eval_action_selection,
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
            "dtype": self.dtype,
        }
        if self.sweep:
            d["sweep"] = dict(self.sweep)
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ValueError("config root must be a JSON object")
        known = ("scenario", "network", "rollout", "gamma", "lambda_v",
                 "lambda_h", "auxiliary", "optimizer", "total_frames",
                 "eval_every_frames", "eval_episodes", "eval_action_selection",
                 "seeds", "output_dir", "dtype", "sweep")
        _check_keys(d, known, "")
        for req in ("scenario", "output_dir", "total_frames"):
            if req not in d:
                raise ValueError(f"config is missing required key '{req}'")
        return cls(**d)


def load_config(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"{path} is not valid JSON: {e}") from None
    return ExperimentConfig.from_json_dict(raw)
