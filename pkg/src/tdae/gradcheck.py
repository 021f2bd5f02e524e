"""Finite-difference gradient checking.

The oracle is the two-sided central difference (f(p+h) - f(p-h)) / 2h,
evaluated coordinate by coordinate with the tape off, compared against one
recorded backward pass. Only meaningful in 64-bit precision: in float32 the
cancellation noise at h=1e-5 swamps the comparison, so that is rejected
outright rather than reported as a huge error.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, backward, tape


def check_gradients(f, params, h: float = 1e-5) -> float:
    """Worst relative error between backward() and central differences.

    f: zero-argument callable returning a scalar Tensor, closing over the
       parameter tensors so that perturbing their buffers changes its value.
    params: dict name -> Tensor (names only feed error messages) or an
       iterable of Tensors.
    Never mutates parameters beyond restoring each perturbed coordinate.
    """
    if isinstance(params, dict):
        named = list(params.items())
    else:
        named = [(f"param{i}", p) for i, p in enumerate(params)]
    for name, p in named:
        if p.dtype != np.float64:
            raise ValueError(f"check_gradients requires float64 parameters, {name} is {p.dtype}")

    with tape():
        loss = f()
        grads = backward(loss, params=[p for _, p in named])

    worst = 0.0
    for name, p in named:
        analytic = grads[p].reshape(-1)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f().item()
            flat[i] = orig - h
            fm = f().item()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            err = abs(analytic[i] - numeric) / max(abs(analytic[i]), abs(numeric), 1e-4)
            if err > worst:
                worst = err
    return worst
