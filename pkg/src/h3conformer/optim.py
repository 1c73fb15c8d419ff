"""AdamW with decoupled weight decay and a warmup-then-cosine learning-rate schedule."""

from __future__ import annotations

import math

import numpy as np

from .numerics import Tensor


def cosine_lr(step: int, total_steps: int, max_lr: float, warmup_frac: float = 0.05) -> float:
    """Learning rate at global ``step`` (0-based) of a ``total_steps`` run.

    Linear warmup reaches ``max_lr`` at the first post-warmup step, after which
    a half cosine decays it to zero at the final step.
    """
    if total_steps < 1:
        raise ValueError("total_steps must be positive")
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    warm = int(round(warmup_frac * total_steps))
    if step < warm:
        return max_lr * (step + 1) / (warm + 1)
    span = total_steps - 1 - warm
    if span <= 0:
        return max_lr
    return 0.5 * max_lr * (1.0 + math.cos(math.pi * (step - warm) / span))


class AdamW:
    """Adam moments plus ``p <- p * (1 - lr * weight_decay)`` applied separately."""

    def __init__(self, params: dict[str, Tensor], betas=(0.9, 0.98), eps: float = 1e-8,
                 weight_decay: float = 0.01, grad_clip: float | None = None):
        self.params = params
        for p in params.values():
            p.requires_grad = True
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def grad_norm(self) -> float:
        return math.sqrt(sum(float((p.grad ** 2).sum()) for p in self.params.values()
                             if p.grad is not None))

    def step(self, lr: float) -> float:
        """Apply one update; returns the pre-clipping gradient norm."""
        norm = self.grad_norm()
        if not math.isfinite(norm):
            raise FloatingPointError("non-finite gradient norm")
        scale = 1.0
        if self.grad_clip is not None and norm > self.grad_clip:
            scale = self.grad_clip / norm
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            p.data *= 1.0 - lr * self.weight_decay
            if p.grad is None:
                g = np.zeros_like(p.data)
            else:
                g = p.grad * scale
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return norm

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for k in self.params:
            out[f"adam.m.{k}"] = self.m[k]
            out[f"adam.v.{k}"] = self.v[k]
        return out

    def load_state(self, tensors: dict[str, np.ndarray], t: int) -> None:
        for k in self.params:
            for kind, store in (("m", self.m), ("v", self.v)):
                name = f"adam.{kind}.{k}"
                if name not in tensors:
                    raise KeyError(name)
                store[k] = np.array(tensors[name], dtype=np.float64)
        self.t = int(t)
