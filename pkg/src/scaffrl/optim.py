"""Adam with global-norm gradient clipping."""

from __future__ import annotations

import numpy as np

from .errors import TrainingError
from .layers import ParamSet


def adam_step(params: ParamSet, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
              grad_clip: float = 100.0):
    """Clip the global gradient norm, apply one Adam update, zero gradients."""
    sq = 0.0
    for t in params.tensors.values():
        sq += float(np.dot(t.grad.ravel(), t.grad.ravel()))
    if not np.isfinite(sq):
        for name, t in params.tensors.items():
            if not np.isfinite(t.grad).all():
                raise TrainingError(f"non-finite gradient in parameter {name!r}")
        raise TrainingError("non-finite gradient norm")
    norm = np.sqrt(sq)
    scale = grad_clip / norm if (grad_clip > 0 and norm > grad_clip) else 1.0

    params.step += 1
    b1, b2 = betas
    t_step = params.step
    corr1 = 1.0 - b1 ** t_step
    corr2 = 1.0 - b2 ** t_step
    for name, t in params.tensors.items():
        g = t.grad if scale == 1.0 else t.grad * scale
        t.m *= b1
        t.m += (1.0 - b1) * g
        t.v *= b2
        t.v += (1.0 - b2) * (g * g)
        m_hat = t.m / corr1
        v_hat = t.v / corr2
        t.value -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(t.value.dtype, copy=False)
        if not np.isfinite(t.value).all():
            raise TrainingError(f"non-finite value in parameter {name!r} after update")
        t.grad[...] = 0.0
