"""RMSProp with global gradient-norm clipping.

Update rule (per parameter, after clipping):

    s <- decay * s + (1 - decay) * g^2
    p <- p - lr * g / (sqrt(s) + eps)

eps sits outside the square root. Clipping rescales the whole gradient set
by clip_norm / ||g||_global when the global norm exceeds clip_norm, so the
post-clip global norm never exceeds clip_norm. Only parameters that appear
in the grads map are touched at all: absent parameters keep both their
values and their accumulator state byte-for-byte, which is what makes a
zero-weight auxiliary head indistinguishable from a removed one.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class RMSProp:
    def __init__(self, params: dict[str, Tensor], lr: float = 7e-4,
                 decay: float = 0.99, eps: float = 1e-5, clip_norm: float = 0.5):
        self.params = params
        self.lr = lr
        self.decay = decay
        self.eps = eps
        self.clip_norm = clip_norm
        self.sq = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.step_count = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        """One clipped RMSProp update over the named gradients."""
        sq_sum = 0.0
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter '{name}' at step {self.step_count}")
            sq_sum += float(np.dot(g.reshape(-1), g.reshape(-1)))
        gnorm = float(np.sqrt(sq_sum))
        scale = self.clip_norm / gnorm if gnorm > self.clip_norm else 1.0

        for name, g in grads.items():
            p = self.params[name]
            if scale != 1.0:
                g = g * scale
            s = self.sq[name]
            s *= self.decay
            s += (1.0 - self.decay) * (g * g)
            p.data -= self.lr * g / (np.sqrt(s) + self.eps)
        self.step_count += 1

    def global_norm(self, grads: dict[str, np.ndarray]) -> float:
        return float(np.sqrt(sum(float(np.dot(g.reshape(-1), g.reshape(-1))) for g in grads.values())))
