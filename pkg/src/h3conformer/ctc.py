"""CTC objective, greedy decoding and token error rate.

Token id 0 is the blank; labels use ids ``1..V``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .numerics import Tensor, as_tensor, ops
from .numerics.tensor import record

BLANK = 0


class CTCError(ValueError):
    """No valid alignment exists, or labels are malformed."""


def min_frames(labels: Sequence[int]) -> int:
    """Fewest frames that can emit ``labels``: one per token plus a blank between repeats."""
    labels = list(labels)
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def _extended(labels: Sequence[int]) -> np.ndarray:
    ext = np.zeros(2 * len(labels) + 1, dtype=np.int64)
    ext[1::2] = labels
    return ext


def _lse3(a, b, c):
    return np.logaddexp(np.logaddexp(a, b), c)


def ctc_nll(log_probs, labels: Sequence[Sequence[int]], lengths=None) -> Tensor:
    """Per-utterance negative log-likelihood from log-probabilities (B, T, V+1).

    Runs the forward recursion in log space and differentiates through the
    forward-backward state posteriors.
    """
    log_probs = as_tensor(log_probs)
    lp = log_probs.data
    B, T, V1 = lp.shape
    if len(labels) != B:
        raise CTCError("one label sequence per batch item required")
    lengths = np.full(B, T) if lengths is None else np.asarray(lengths, dtype=np.int64)
    for b, lab in enumerate(labels):
        lab = list(lab)
        if any(t == BLANK or not 0 < t < V1 for t in lab):
            raise CTCError(f"labels must lie in [1, {V1 - 1}] (item {b})")
        if not 1 <= lengths[b] <= T:
            raise CTCError(f"invalid input length {lengths[b]} (item {b})")
        if min_frames(lab) > lengths[b]:
            raise CTCError(f"label of length {len(lab)} cannot align to {lengths[b]} frames "
                           f"(item {b}, needs {min_frames(lab)})")
    S = 2 * max((len(l) for l in labels), default=0) + 1
    ext = np.zeros((B, S), dtype=np.int64)
    S_b = np.zeros(B, dtype=np.int64)
    for b, lab in enumerate(labels):
        e = _extended(list(lab))
        ext[b, :len(e)] = e
        S_b[b] = len(e)
    valid_s = np.arange(S)[None, :] < S_b[:, None]
    skip = np.zeros((B, S), dtype=bool)
    skip[:, 2:] = (ext[:, 2:] != BLANK) & (ext[:, 2:] != ext[:, :-2])
    skip &= valid_s
    neg = -np.inf
    emit = np.take_along_axis(lp, np.broadcast_to(ext[:, None, :], (B, T, S)), axis=2)
    emit = np.where(valid_s[:, None, :], emit, neg)

    alpha = np.full((B, T, S), neg)
    alpha[:, 0, 0] = emit[:, 0, 0]
    if S > 1:
        alpha[:, 0, 1] = emit[:, 0, 1]
    for t in range(1, T):
        prev = alpha[:, t - 1]
        s1 = np.concatenate([np.full((B, 1), neg), prev[:, :-1]], axis=1)
        s2 = np.concatenate([np.full((B, 2), neg), prev[:, :-2]], axis=1)[:, :S]
        s2 = np.where(skip, s2, neg)
        alpha[:, t] = _lse3(prev, s1, s2) + emit[:, t]
    rows = np.arange(B)
    last = alpha[rows, lengths - 1]
    end = last[rows, S_b - 1]
    end2 = np.where(S_b > 1, last[rows, np.maximum(S_b - 2, 0)], neg)
    log_like = np.logaddexp(end, end2)
    if not np.isfinite(log_like).all():
        raise CTCError("no valid alignment")

    def bw(g):
        beta = np.full((B, T, S), neg)
        init = np.full((B, S), neg)
        init[rows, S_b - 1] = 0.0
        two = S_b > 1
        init[rows[two], S_b[two] - 2] = 0.0
        skip_next = np.zeros((B, S), dtype=bool)
        skip_next[:, :-2] = skip[:, 2:]
        for t in range(T - 1, -1, -1):
            if t == T - 1:
                rec = np.full((B, S), neg)
            else:
                nxt = beta[:, t + 1] + emit[:, t + 1]
                n1 = np.concatenate([nxt[:, 1:], np.full((B, 1), neg)], axis=1)
                n2 = np.concatenate([nxt[:, 2:], np.full((B, 2), neg)], axis=1)[:, :S]
                n2 = np.where(skip_next, n2, neg)
                rec = _lse3(nxt, n1, n2)
            at_end = (lengths - 1 == t)[:, None]
            beta[:, t] = np.where(at_end, init, rec)
        post = alpha + beta - log_like[:, None, None]
        post = np.where((np.arange(T)[None, :] < lengths[:, None])[:, :, None], post, neg)
        occ = np.zeros((B, T, V1))
        w = np.exp(post)
        for b in range(B):
            np.add.at(occ[b], (slice(None), ext[b, :S_b[b]]), w[b, :, :S_b[b]])
        return (-occ * np.asarray(g).reshape(B, 1, 1),)

    return record("ctc_nll", -log_like, (log_probs,), bw)


def ctc_loss(logits, labels, lengths=None, reduction: str = "mean") -> Tensor:
    """CTC loss from unnormalised logits (T, V+1) or (B, T, V+1).

    A single 2-D utterance takes a single label sequence.
    """
    logits = as_tensor(logits)
    if logits.ndim == 2:
        logits = ops.reshape(logits, (1,) + logits.shape)
        labels = [labels]
    nll = ctc_nll(ops.log_softmax(logits, axis=-1), labels, lengths)
    if reduction == "none":
        return nll
    if reduction == "sum":
        return ops.sum(nll)
    if reduction == "mean":
        return ops.mean(nll)
    raise ValueError(f"unknown reduction {reduction!r}")


def ctc_greedy_decode(logits, length: int | None = None) -> list[int]:
    """Frame-wise argmax, collapse repeats, drop blanks."""
    logits = np.asarray(logits.data if isinstance(logits, Tensor) else logits)
    if length is not None:
        logits = logits[:length]
    best = logits.argmax(axis=-1)
    out = []
    prev = None
    for tok in best.tolist():
        if tok != prev and tok != BLANK:
            out.append(tok)
        prev = tok
    return out


def edit_distance(hyp: Sequence, ref: Sequence) -> int:
    prev = list(range(len(ref) + 1))
    for i, h in enumerate(hyp, 1):
        cur = [i] + [0] * len(ref)
        for j, r in enumerate(ref, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (h != r))
        prev = cur
    return prev[-1]


def token_error_rate(hyp: Sequence, ref: Sequence) -> float:
    return edit_distance(list(hyp), list(ref)) / max(1, len(ref))
