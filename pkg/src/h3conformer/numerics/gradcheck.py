"""Central finite-difference oracle for tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import GradTape, NonFiniteError, Tensor


def numeric_grad(f: Callable[[], Tensor], param: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to every entry of ``param``."""
    out = np.zeros(param.shape)
    flat = param.data.reshape(-1)
    gflat = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f().item()
        flat[i] = orig - h
        fm = f().item()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return out


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` closes over ``params`` (and its input) and returns a scalar Tensor.
    Per parameter tensor the error is ``max|analytic - numeric|`` divided by
    ``max(max|analytic|, max|numeric|, 1e-8)``; the worst tensor is returned.
    """
    for p in params:
        p.requires_grad = True
        p.grad = None
    with GradTape() as tape:
        loss = f()
    if not np.isfinite(loss.data).all():
        raise NonFiniteError("non-finite loss in grad_check")
    tape.backward(loss)
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros(p.shape)
        numeric = numeric_grad(f, p, h)
        if not np.isfinite(numeric).all():
            raise NonFiniteError("non-finite finite-difference gradient")
        scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
        worst = max(worst, float(np.abs(analytic - numeric).max(initial=0.0) / scale))
    return worst
