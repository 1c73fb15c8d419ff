"""Softmax multi-head self-attention and linear attention."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .numerics import Tensor, as_tensor, ops


class AttentionMode(str, Enum):
    BIDIRECTIONAL = "bidirectional"
    CAUSAL = "causal"


class MHSAParams:
    """Bias-free query/key/value/output projections, each ``d x d``."""

    def __init__(self, Wq, Wk, Wv, Wo, heads: int = 8):
        self.Wq, self.Wk, self.Wv, self.Wo = (
            Tensor(np.asarray(W, dtype=np.float64), name=n)
            for W, n in ((Wq, "Wq"), (Wk, "Wk"), (Wv, "Wv"), (Wo, "Wo")))
        d = self.Wq.shape[0]
        for W in (self.Wq, self.Wk, self.Wv, self.Wo):
            if W.shape != (d, d):
                raise ValueError(f"projection must be {d}x{d}, got {W.shape}")
            if not np.isfinite(W.data).all():
                raise ValueError("non-finite projection weights")
        if heads < 1 or d % heads:
            raise ValueError(f"model dim {d} not divisible by {heads} heads")
        self.heads = heads

    @classmethod
    def initialize(cls, d: int, heads: int, rng: np.random.Generator) -> "MHSAParams":
        s = 1.0 / np.sqrt(d)
        return cls(*(rng.normal(0.0, s, (d, d)) for _ in range(4)), heads=heads)

    @property
    def d(self) -> int:
        return self.Wq.shape[0]

    @property
    def head_dim(self) -> int:
        return self.d // self.heads

    def parameters(self) -> dict[str, Tensor]:
        return {"Wq": self.Wq, "Wk": self.Wk, "Wv": self.Wv, "Wo": self.Wo}


def _split_heads(x: Tensor, heads: int) -> Tensor:
    B, L, d = x.shape
    return ops.transpose(ops.reshape(x, (B, L, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    B, H, L, dh = x.shape
    return ops.reshape(ops.transpose(x, (0, 2, 1, 3)), (B, L, H * dh))


def mhsa_forward(x, p: MHSAParams, mode: AttentionMode | str = AttentionMode.BIDIRECTIONAL,
                 key_mask: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product attention over ``x`` of shape (L, d) or (B, L, d).

    ``key_mask`` (B, L) marks valid frames in a padded batch.
    """
    x = as_tensor(x)
    squeeze = x.ndim == 2
    if squeeze:
        x = ops.reshape(x, (1,) + x.shape)
    B, L, d = x.shape
    if d != p.d:
        raise ValueError(f"input dim {d} does not match attention dim {p.d}")
    if L < 1:
        raise ValueError("empty sequence")
    mode = AttentionMode(mode)
    q = _split_heads(x @ p.Wq, p.heads)
    k = _split_heads(x @ p.Wk, p.heads)
    v = _split_heads(x @ p.Wv, p.heads)
    scores = (q @ ops.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(p.head_dim))
    mask = None
    if mode is AttentionMode.CAUSAL:
        mask = np.tril(np.ones((L, L), dtype=bool))
    if key_mask is not None:
        km = np.asarray(key_mask, dtype=bool)[:, None, None, :]
        mask = km if mask is None else (mask & km)
    weights = ops.softmax(scores, axis=-1, mask=mask)
    out = _merge_heads(weights @ v) @ p.Wo
    return ops.reshape(out, (L, d)) if squeeze else out


def default_feature_map(x: Tensor) -> Tensor:
    """Strictly positive map ``1 + softplus(x)``."""
    return ops.softplus(x) + 1.0


def linear_attention_forward(Q, K, V, phi=default_feature_map) -> Tensor:
    """Causal linear attention via running sums of ``phi(K_j) V_j^T`` and ``phi(K_j)``.

    ``Q``, ``K``, ``V`` are shaped (..., L, d_h).
    """
    Q, K, V = as_tensor(Q), as_tensor(K), as_tensor(V)
    if not (Q.shape == K.shape and Q.shape[:-1] == V.shape[:-1]):
        raise ValueError("query/key/value shapes disagree")
    fq, fk = phi(Q), phi(K)
    axis = fk.ndim - 2
    lead = fk.shape
    outer = ops.reshape(fk, lead + (1,)) * ops.reshape(V, V.shape[:-1] + (1, V.shape[-1]))
    S = ops.cumsum(outer, axis=axis)
    z = ops.cumsum(fk, axis=axis)
    num = ops.sum(ops.reshape(fq, lead + (1,)) * S, axis=-2)
    den = ops.sum(fq * z, axis=-1, keepdims=True)
    if np.abs(den.data).min() < 1e-12:
        raise ZeroDivisionError("linear attention denominator vanished")
    return num / den


# ---------------------------------------------------------------- streaming

@dataclass
class MHSACache:
    """Growing key/value cache for causal streaming; keeps the full history."""

    keys: np.ndarray      # (H, capacity, d_h)
    values: np.ndarray
    length: int = 0

    @classmethod
    def empty(cls, p: MHSAParams, capacity: int = 256) -> "MHSACache":
        shape = (p.heads, capacity, p.head_dim)
        return cls(np.zeros(shape), np.zeros(shape), 0)

    def append(self, k: np.ndarray, v: np.ndarray) -> None:
        n = k.shape[1]
        need = self.length + n
        if need > self.keys.shape[1]:
            cap = max(need, 2 * self.keys.shape[1])
            grow = lambda a: np.concatenate(
                [a, np.zeros((a.shape[0], cap - a.shape[1], a.shape[2]))], axis=1)
            self.keys, self.values = grow(self.keys), grow(self.values)
        self.keys[:, self.length:need] = k
        self.values[:, self.length:need] = v
        self.length = need


def mhsa_stream(cache: MHSACache, x: np.ndarray, p: MHSAParams) -> np.ndarray:
    """Causal attention for a chunk ``x`` (C, d) of new frames, updating ``cache``."""
    C, d = x.shape
    H, dh = p.heads, p.head_dim
    q = (x @ p.Wq.data).reshape(C, H, dh).transpose(1, 0, 2)
    k = (x @ p.Wk.data).reshape(C, H, dh).transpose(1, 0, 2)
    v = (x @ p.Wv.data).reshape(C, H, dh).transpose(1, 0, 2)
    start = cache.length
    cache.append(k, v)
    T = cache.length
    scores = q @ cache.keys[:, :T].transpose(0, 2, 1) / np.sqrt(dh)
    if C > 1:
        allowed = np.arange(T)[None, :] <= (start + np.arange(C))[:, None]
        scores = np.where(allowed, scores, -np.inf)
    scores -= scores.max(axis=-1, keepdims=True)
    w = np.exp(scores)
    w /= w.sum(axis=-1, keepdims=True)
    out = (w @ cache.values[:, :T]).transpose(1, 0, 2).reshape(C, d)
    return out @ p.Wo.data
