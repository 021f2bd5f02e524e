"""Synchronous advantage actor-critic with temporally extended pixel
prediction heads, on a self-contained tape autodiff core and pixel
gridworlds."""

__version__ = "0.1.0"

from .autodiff import Tensor, backward, no_record, tape
from .config import ExperimentConfig, load_config
from .envs import ScenarioConfig, analytic_values, make_env
from .experiment import evaluate, load_agent, run, sweep
from .gradcheck import check_gradients
from .network import AgentNet, NetConfig
from .optim import RMSProp
from .returns import (LossBreakdown, SegmentBatch, TDAESpec,
                      brute_force_return_oracle, nstep_returns, tdae_loss,
                      tdae_target, total_loss)
from .rollout import RolloutConfig, collect_segment, init_workers, train_update

__all__ = [
    "__version__",
    "Tensor", "tape", "no_record", "backward", "check_gradients",
    "NetConfig", "AgentNet", "RMSProp",
    "ScenarioConfig", "make_env", "analytic_values",
    "SegmentBatch", "TDAESpec", "LossBreakdown",
    "nstep_returns", "brute_force_return_oracle",
    "tdae_target", "tdae_loss", "total_loss",
    "RolloutConfig", "init_workers", "collect_segment", "train_update",
    "ExperimentConfig", "load_config", "run", "evaluate", "sweep", "load_agent",
]
