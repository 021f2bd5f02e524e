"""Return and TD mathematics: n-step returns, the A2C loss terms, and the
scaled pixel-GVF (TD-AE) loss, plus a brute-force summation oracle.

Conventions used throughout:
  - rewards[w][t] is R_{t+1}, the reward of transition t in worker row w.
  - next_values[w][t] is V(S_{t+1}) for that transition, computed without
    gradient; it is consulted when the transition truncates or when it is
    the last of the row, and ignored on termination.
  - Termination cuts the return (discount 0 across the boundary);
    truncation bootstraps. Return arithmetic is float64 regardless of the
    training dtype.
  - The auxiliary head predicts the scaled quantity psi~ = (1-gamma)*Psi
    directly, so its fixed point for a constant pixel x is x itself and the
    TD error needs no post-hoc rescaling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class SegmentBatch:
    """W x n block of transitions; the unit of one update.

    next_observations[w][t] is the observation produced by transition t
    before any in-place reset (the final observation of the old episode when
    the transition ended it), which is exactly what both bootstrap rules
    need. The spec-level single bootstrap observation per row is its last
    column.
    """

    observations: np.ndarray        # [W, n, C, H, Wd]
    actions: np.ndarray             # [W, n] int
    rewards: np.ndarray             # [W, n] float64
    terminated: np.ndarray          # [W, n] bool
    truncated: np.ndarray           # [W, n] bool
    next_observations: np.ndarray   # [W, n, C, H, Wd]
    initial_hidden: np.ndarray      # [W, hidden]

    @property
    def worker_count(self) -> int:
        return self.observations.shape[0]

    @property
    def segment_length(self) -> int:
        return self.observations.shape[1]

    @property
    def transitions(self) -> int:
        return self.worker_count * self.segment_length

    @property
    def bootstrap_obs(self) -> np.ndarray:
        return self.next_observations[:, -1]

    def validate(self):
        w, n = self.observations.shape[:2]
        for name in ("actions", "rewards", "terminated", "truncated"):
            if getattr(self, name).shape != (w, n):
                raise ValueError(f"SegmentBatch.{name} has shape {getattr(self, name).shape}, want {(w, n)}")
        if self.next_observations.shape != self.observations.shape:
            raise ValueError("next_observations shape differs from observations")
        if np.any(self.terminated & self.truncated):
            raise ValueError("a transition cannot be both terminated and truncated")


@dataclass
class TDAESpec:
    gamma_aux: float
    lambda_tdae: float

    def __post_init__(self):
        if not 0.0 <= self.gamma_aux < 1.0:
            raise ValueError(f"gamma_aux must be in [0,1), got {self.gamma_aux} (the (1-gamma) scale divides by 1-gamma)")
        if self.lambda_tdae < 0:
            raise ValueError("lambda_tdae must be >= 0")


@dataclass
class LossBreakdown:
    """Scalar loss terms of one update. entropy_loss is the negative mean
    entropy (the term multiplied by lambda_h), so

        total = policy_loss + lambda_v * value_loss
              + lambda_h * entropy_loss + sum_j lambda_j * tdae_losses[j]

    reassembles exactly, in that order."""

    policy_loss: float
    value_loss: float
    entropy_loss: float
    tdae_losses: tuple
    total: float

    @property
    def tdae_loss(self) -> float:
        return float(sum(self.tdae_losses)) if self.tdae_losses else 0.0

    @property
    def mean_entropy(self) -> float:
        return -self.entropy_loss


def nstep_returns(rewards: np.ndarray, terminated: np.ndarray, truncated: np.ndarray,
                  next_values: np.ndarray, gamma: float) -> np.ndarray:
    """Backward-recursion n-step returns G[w][t], float64.

    G_t = R_{t+1} + gamma * tail, where the tail is 0 on termination, the
    bootstrap value V(S_{t+1}) on truncation or at the row end, and G_{t+1}
    otherwise.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0,1], got {gamma}")
    r = np.asarray(rewards, dtype=np.float64)
    term = np.asarray(terminated, dtype=bool)
    trunc = np.asarray(truncated, dtype=bool)
    nv = np.asarray(next_values, dtype=np.float64)
    w, n = r.shape
    g = np.empty((w, n), dtype=np.float64)
    tail = nv[:, n - 1]
    g[:, n - 1] = r[:, n - 1] + gamma * np.where(term[:, n - 1], 0.0, tail)
    for t in range(n - 2, -1, -1):
        tail = np.where(term[:, t], 0.0, np.where(trunc[:, t], nv[:, t], g[:, t + 1]))
        g[:, t] = r[:, t] + gamma * tail
    return g


def brute_force_return_oracle(rewards, terminated, truncated, next_values, gamma: float) -> np.ndarray:
    """Independent oracle: explicit forward summation, no recursion.

    For each (w, t), sums gamma^k * R over the episode suffix inside the
    row, stopping at termination, and adds the discounted bootstrap value on
    truncation or when the row runs out.
    """
    r = np.asarray(rewards, dtype=np.float64)
    term = np.asarray(terminated, dtype=bool)
    trunc = np.asarray(truncated, dtype=bool)
    nv = np.asarray(next_values, dtype=np.float64)
    w, n = r.shape
    g = np.zeros((w, n), dtype=np.float64)
    for i in range(w):
        for t in range(n):
            total = 0.0
            power = 1.0
            for k in range(t, n):
                total += power * r[i, k]
                if term[i, k]:
                    break
                if trunc[i, k] or k == n - 1:
                    total += power * gamma * nv[i, k]
                    break
                power *= gamma
            g[i, t] = total
    return g


def a2c_loss(logits: Tensor, values: Tensor, actions: np.ndarray, returns: np.ndarray):
    """The three A2C terms over flattened transitions.

    logits [B,|A|] and values [B] are live tensors; actions and returns are
    plain arrays (returns are treated as constants, so the value loss is the
    usual semi-gradient MSE and the advantage carries no gradient).
    Returns (policy_loss, value_loss, entropy_term) tensors, where
    entropy_term is the negative mean entropy.
    """
    dt = values.dtype
    g = np.asarray(returns, dtype=dt)
    adv = g - values.data                       # stop-gradient advantage
    logp = ad.softmax_logprob(logits, actions)
    policy_loss = ad.mul(ad.reduce_mean(ad.mul(logp, Tensor(adv))), -1.0)
    value_loss = ad.reduce_mean(ad.square(ad.sub(values, Tensor(g))))
    entropy_term = ad.mul(ad.reduce_mean(ad.policy_entropy(logits)), -1.0)
    return policy_loss, value_loss, entropy_term


def tdae_target(observations: np.ndarray, psi_next: np.ndarray,
                terminated: np.ndarray, spec: TDAESpec) -> np.ndarray:
    """Constant per-pixel TD(0) target for the scaled prediction:

        target = (1-gamma) * X_t + gamma * psi~(S_{t+1})

    with the bootstrap zeroed on terminated transitions (the target then
    degenerates to (1-gamma) * X_t). All inputs are arrays; the result is a
    detached constant by construction.
    """
    gamma = spec.gamma_aux
    x = np.asarray(observations)
    x = x.reshape(x.shape[0], -1)
    pn = np.asarray(psi_next).reshape(x.shape)
    alive = (~np.asarray(terminated, dtype=bool)).astype(x.dtype).reshape(-1, 1)
    return (1.0 - gamma) * x + gamma * (pn * alive)


def tdae_loss(psi: Tensor, target: np.ndarray) -> Tensor:
    """Mean squared scaled TD error over all pixels and transitions."""
    return ad.reduce_mean(ad.square(ad.sub(psi, Tensor(np.asarray(target, dtype=psi.dtype)))))


def total_loss(policy_loss: Tensor, value_loss: Tensor, entropy_term: Tensor,
               tdae_terms, lambda_v: float, lambda_h: float):
    """Weighted sum; returns (total tensor, LossBreakdown).

    tdae_terms: list of (loss tensor, lambda) for the active heads; heads
    with weight zero must be skipped by the caller (they then contribute
    nothing anywhere, which is what makes a zero-weight head byte-identical
    to an absent one).
    """
    total = policy_loss
    total = ad.add(total, ad.mul(value_loss, lambda_v))
    total = ad.add(total, ad.mul(entropy_term, lambda_h))
    for loss_t, lam in tdae_terms:
        total = ad.add(total, ad.mul(loss_t, float(lam)))
    breakdown = LossBreakdown(
        policy_loss=policy_loss.item(),
        value_loss=value_loss.item(),
        entropy_loss=entropy_term.item(),
        tdae_losses=tuple(loss_t.item() for loss_t, _ in tdae_terms),
        total=total.item(),
    )
    return total, breakdown
