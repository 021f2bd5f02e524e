"""Synchronous multi-worker experience collection and the batched update.

W environment instances advance in lock-step: each of the n steps runs one
batched forward over all W current observations, samples one action per
worker from its own RNG stream, and steps every environment. Episodes that
end are reset in place with a zeroed recurrent state; the boundary stays
visible to the update through the terminated/truncated flags.

The update re-runs the GRU over each row from its stored (detached) initial
hidden state, so backpropagation through time is truncated at segment
boundaries, computes bootstrap values and next-state predictions without
gradient, assembles the combined loss, and takes one optimizer step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward, tape
from .envs import PHASE_TRAIN, ScenarioConfig, make_env
from .network import AgentNet
from .optim import RMSProp
from .returns import (LossBreakdown, SegmentBatch, TDAESpec, a2c_loss,
                      nstep_returns, tdae_loss, tdae_target, total_loss)

# SeedSequence namespaces for action sampling; environment layout streams
# use envs.PHASE_* with four-integer keys, these use three.
ACTIONS_TRAIN = 3
ACTIONS_EVAL = 4
ACTIONS_TRACE = 5


@dataclass
class RolloutConfig:
    workers: int = 16
    segment_length: int = 128
    action_selection: str = "sample"   # "sample" | "argmax"

    def __post_init__(self):
        if self.workers < 1 or self.segment_length < 1:
            raise ValueError("workers and segment_length must be >= 1")
        if self.action_selection not in ("sample", "argmax"):
            raise ValueError(f"unknown action_selection '{self.action_selection}'")


class WorkerSlot:
    """One worker: environment, current observation, recurrent state, and a
    private action-sampling stream."""

    __slots__ = ("env", "obs", "h", "rng", "ep_return", "index")

    def __init__(self, env, obs, hidden_size, dtype, run_seed, index):
        self.env = env
        self.obs = obs
        self.h = np.zeros(hidden_size, dtype=dtype)
        self.rng = np.random.default_rng(np.random.SeedSequence([run_seed, ACTIONS_TRAIN, index]))
        self.ep_return = 0.0
        self.index = index


def init_workers(scenario: ScenarioConfig, rcfg: RolloutConfig, net: AgentNet, run_seed: int):
    dt = net.config.np_dtype
    slots = []
    for i in range(rcfg.workers):
        env = make_env(scenario, run_seed, PHASE_TRAIN, i)
        obs = env.reset().astype(dt)
        slots.append(WorkerSlot(env, obs, net.config.hidden_size, dt, run_seed, i))
    return slots


def sample_action(probs_row: np.ndarray, rng) -> int:
    """Inverse-CDF sample from a probability row using one uniform draw."""
    cum = np.cumsum(probs_row)
    a = int(np.searchsorted(cum, rng.random(), side="right"))
    return min(a, len(probs_row) - 1)


def collect_segment(net: AgentNet, slots: list, rcfg: RolloutConfig):
    """Advance all workers n lock-steps; returns (SegmentBatch, completed
    episode returns). Inference only: nothing is recorded."""
    w = len(slots)
    n = rcfg.segment_length
    dt = net.config.np_dtype
    shape = slots[0].env.obs_shape

    observations = np.empty((w, n) + shape, dtype=dt)
    next_observations = np.empty((w, n) + shape, dtype=dt)
    actions = np.empty((w, n), dtype=np.int64)
    rewards = np.empty((w, n), dtype=np.float64)
    terminated = np.zeros((w, n), dtype=bool)
    truncated = np.zeros((w, n), dtype=bool)

    obs_batch = np.stack([s.obs for s in slots])
    h_batch = np.stack([s.h for s in slots])
    initial_hidden = h_batch.copy()
    completed = []

    argmax = rcfg.action_selection == "argmax"
    for t in range(n):
        logits, h_new = net.step_inference(obs_batch, h_batch)
        observations[:, t] = obs_batch
        if argmax:
            acts = np.argmax(logits, axis=1)
        else:
            probs = ad.softmax_probs(logits.astype(np.float64))
            acts = np.array([sample_action(probs[i], slots[i].rng) for i in range(w)])
        for i, slot in enumerate(slots):
            try:
                res = slot.env.step(int(acts[i]))
            except Exception as e:
                raise RuntimeError(f"worker {slot.index} failed at lock-step {t}: {e}") from e
            next_observations[i, t] = res.obs
            rewards[i, t] = res.reward
            terminated[i, t] = res.terminated
            truncated[i, t] = res.truncated
            slot.ep_return += res.reward
            if res.terminated or res.truncated:
                completed.append(slot.ep_return)
                slot.ep_return = 0.0
                obs_batch[i] = slot.env.reset().astype(dt)
                h_new[i] = 0.0
            else:
                obs_batch[i] = res.obs
        actions[:, t] = acts
        h_batch = h_new

    for i, slot in enumerate(slots):
        slot.obs = obs_batch[i].copy()
        slot.h = h_batch[i].copy()   # carried into the next segment

    batch = SegmentBatch(observations, actions, rewards, terminated, truncated,
                         next_observations, initial_hidden)
    return batch, completed


def train_update(net: AgentNet, optimizer: RMSProp, batch: SegmentBatch,
                 gamma: float, lambda_v: float, lambda_h: float,
                 aux_specs: list, update_index: int = 0) -> LossBreakdown:
    """One A2C(+TD-AE) update on a collected segment."""
    cfg = net.config
    dt = cfg.np_dtype
    w, n = batch.worker_count, batch.segment_length
    hid = cfg.hidden_size

    # Time-major flattening: row t*W + i is worker i at step t.
    obs_tm = np.ascontiguousarray(batch.observations.transpose(1, 0, 2, 3, 4)).reshape((n * w,) + batch.observations.shape[2:])
    next_tm = np.ascontiguousarray(batch.next_observations.transpose(1, 0, 2, 3, 4)).reshape(obs_tm.shape)
    actions_tm = np.ascontiguousarray(batch.actions.T).reshape(-1)
    term_tm = np.ascontiguousarray(batch.terminated.T).reshape(-1)

    # Hidden-state keep masks: zero where the previous transition in the row
    # ended an episode, mirroring the in-place resets during collection.
    keep = (~(batch.terminated | batch.truncated)).astype(dt)

    active = [j for j, s in enumerate(aux_specs) if s.lambda_tdae != 0.0]

    with tape():
        x_all = net.trunk(Tensor(obs_tm))
        h = Tensor(batch.initial_hidden.astype(dt, copy=True))   # detached: TBPTT stops here
        hs = []
        for t in range(n):
            if t > 0:
                mask = np.ascontiguousarray(np.broadcast_to(keep[:, t - 1][:, None], (w, hid)))
                h = ad.mul(h, Tensor(mask))
            h = net.gru(ad.slice_rows(x_all, t * w, (t + 1) * w), h)
            hs.append(h)
        h_all = ad.concat_rows(hs)

        logits = net.policy_head(h_all)
        values = net.value_head(h_all)
        psis = {j: net.decoder(j, h_all) for j in active}

        with ad.no_record():
            values_next, psi_next = net.bootstrap_inference(next_tm, h_all.data, active)

        g = nstep_returns(batch.rewards, batch.terminated, batch.truncated,
                          values_next.reshape(n, w).T, gamma)
        g_tm = np.ascontiguousarray(g.T).reshape(-1)

        policy_loss, value_loss, entropy_term = a2c_loss(logits, values, actions_tm, g_tm)
        tdae_terms = []
        for j in active:
            target = tdae_target(obs_tm, psi_next[j], term_tm, aux_specs[j])
            tdae_terms.append((tdae_loss(psis[j], target), aux_specs[j].lambda_tdae))

        total, breakdown = total_loss(policy_loss, value_loss, entropy_term,
                                      tdae_terms, lambda_v, lambda_h)
        _abort_on_nan(breakdown, update_index)
        grads = backward(total)

    named = {}
    for name, p in net.params.items():
        garr = grads.get(p)
        if garr is not None:
            named[name] = garr
    optimizer.step(named)
    return breakdown


def _abort_on_nan(b: LossBreakdown, update_index: int):
    terms = [("policy_loss", b.policy_loss), ("value_loss", b.value_loss),
             ("entropy_loss", b.entropy_loss), ("total", b.total)]
    terms += [(f"tdae_loss[{j}]", v) for j, v in enumerate(b.tdae_losses)]
    for name, v in terms:
        if not np.isfinite(v):
            raise FloatingPointError(f"{name} is non-finite at update {update_index}")
