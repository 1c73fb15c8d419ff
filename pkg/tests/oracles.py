"""Slow, obviously-correct reference implementations used as test oracles.

Nothing here imports the fast paths under test except parameter containers.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def naive_conv(u, k):
    L = len(u)
    return np.array([sum(k[t - j] * u[j] for j in range(t + 1)) for t in range(L)])


def dense_state_space(A, B, C, D, u):
    """y_t = C x_t + D u_t with x_t = A x_{t-1} + B u_t and x_0 = 0, any dense A."""
    x = np.zeros(A.shape[0], dtype=np.result_type(A, B, complex))
    out = []
    for ut in u:
        x = A @ x + B * ut
        out.append((C @ x).real + D * ut)
    return np.array(out)


def dense_kernel(A, B, C, L):
    """k_j = C A^j B via explicit dense matrix powers."""
    return np.array([(C @ np.linalg.matrix_power(A, j) @ B).real for j in range(L)])


def shift_matrix(N):
    return np.eye(N, k=-1)


def mhsa_bruteforce(x, Wq, Wk, Wv, Wo, heads, causal):
    """Per-head nested loops: O_i = sum_j exp(q.k/sqrt(dh)) V_j / sum_j exp(q.k/sqrt(dh))."""
    L, d = x.shape
    dh = d // heads
    Q, K, V = x @ Wq, x @ Wk, x @ Wv
    out = np.zeros((L, d))
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        for i in range(L):
            num = np.zeros(dh)
            den = 0.0
            for j in range(L):
                if causal and j > i:
                    continue
                s = math.exp(float(Q[i, sl] @ K[j, sl]) / math.sqrt(dh))
                num += s * V[j, sl]
                den += s
            out[i, sl] = num / den
    return out @ Wo


def linear_attention_bruteforce(Q, K, V, phi):
    """O_i = sum_{j<=i} phi(Q_i).phi(K_j) V_j / sum_{j<=i} phi(Q_i).phi(K_j)."""
    L = Q.shape[0]
    out = np.zeros_like(V, dtype=float)
    for i in range(L):
        num = np.zeros(V.shape[1])
        den = 0.0
        for j in range(i + 1):
            s = float(phi(Q[i]) @ phi(K[j]))
            num += s * V[j]
            den += s
        out[i] = num / den
    return out


def unnormalized_linear_attention(x, Wq, Wk, Wv, Wo, heads):
    """O_i = Q_i^T sum_{j<=i} K_j V_j^T per head, identity feature map, no denominator."""
    L, d = x.shape
    dh = d // heads
    Q, K, V = x @ Wq, x @ Wk, x @ Wv
    out = np.zeros((L, d))
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        S = np.zeros((dh, dh))
        for i in range(L):
            S += np.outer(K[i, sl], V[i, sl])
            out[i, sl] = Q[i, sl] @ S
    return out @ Wo


def _collapse(path):
    out = []
    prev = None
    for s in path:
        if s != prev and s != 0:
            out.append(s)
        prev = s
    return out


def ctc_enumerate(logits, labels):
    """-log of the summed probability of every frame path that collapses to ``labels``."""
    T, V1 = logits.shape
    logp = logits - np.log(np.exp(logits - logits.max(1, keepdims=True)).sum(1,
                                                                            keepdims=True)) \
        - logits.max(1, keepdims=True)
    total = 0.0
    for path in itertools.product(range(V1), repeat=T):
        if _collapse(path) == list(labels):
            total += math.exp(sum(logp[t, s] for t, s in enumerate(path)))
    return -math.log(total) if total > 0 else math.inf


def ctc_enumerate_all(logits):
    """``ctc_enumerate`` for every reachable label string at once, keyed by tuple."""
    T, V1 = logits.shape
    m = logits.max(1, keepdims=True)
    logp = logits - m - np.log(np.exp(logits - m).sum(1, keepdims=True))
    paths = np.array(list(itertools.product(range(V1), repeat=T)))
    scores = logp[np.arange(T), paths].sum(1)
    groups: dict[tuple, list[float]] = {}
    for path, s in zip(paths, scores):
        groups.setdefault(tuple(_collapse(tuple(path))), []).append(s)
    return {k: -np.logaddexp.reduce(v) for k, v in groups.items()}
