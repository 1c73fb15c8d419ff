"""H3 mixing layer: ``Q * SSM_diag(SSM_shift(K) * V)`` per head.

Within each head the shifted keys and the values form a ``d_h x d_h`` outer
product at every frame; a diagonal SSM runs over time on each entry of that
matrix (replacing the running sum of linear attention) and the query
contracts it back to ``d_h`` outputs.  There is no normalising denominator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attention import MHSAParams
from .numerics import Tensor, as_tensor, ops
from .numerics.fft import next_pow2
from .ssm import DiagSSM, ShiftSSM, ssm_apply


class H3Params:
    """Projections plus the shift bank (one SSM per key channel) and diagonal bank.

    With ``shared_diag`` the diagonal bank holds one SSM per head applied to
    all ``d_h**2`` entries; otherwise one per (head, i, j).
    """

    def __init__(self, Wq, Wk, Wv, Wo, heads: int, shift: ShiftSSM, diag: DiagSSM,
                 shared_diag: bool = True):
        proj = MHSAParams(Wq, Wk, Wv, Wo, heads=heads)
        self.Wq, self.Wk, self.Wv, self.Wo = proj.Wq, proj.Wk, proj.Wv, proj.Wo
        self.heads = heads
        self.shift = shift
        self.diag = diag
        self.shared_diag = shared_diag
        d, dh = self.d, self.head_dim
        if shift.channels != d:
            raise ValueError(f"shift bank needs {d} channels, has {shift.channels}")
        want = heads if shared_diag else heads * dh * dh
        if diag.channels != want:
            raise ValueError(f"diagonal bank needs {want} channels, has {diag.channels}")

    @classmethod
    def initialize(cls, d: int, heads: int, rng: np.random.Generator, shift_state: int = 4,
                   diag_state: int = 16, shared_diag: bool = True) -> "H3Params":
        if heads < 1 or d % heads:
            raise ValueError(f"model dim {d} not divisible by {heads} heads")
        s = 1.0 / np.sqrt(d)
        Ws = [rng.normal(0.0, s, (d, d)) for _ in range(4)]
        dh = d // heads
        shift = ShiftSSM.initialize(d, shift_state, rng)
        diag = DiagSSM.initialize(heads if shared_diag else heads * dh * dh, diag_state, rng)
        return cls(*Ws, heads=heads, shift=shift, diag=diag, shared_diag=shared_diag)

    @property
    def d(self) -> int:
        return self.Wq.shape[0]

    @property
    def head_dim(self) -> int:
        return self.d // self.heads

    def parameters(self) -> dict[str, Tensor]:
        params = {"Wq": self.Wq, "Wk": self.Wk, "Wv": self.Wv, "Wo": self.Wo}
        params.update({f"shift.{k}": v for k, v in self.shift.parameters().items()})
        params.update({f"diag.{k}": v for k, v in self.diag.parameters().items()})
        return params

    def _bank_shape(self) -> tuple[int, int, int]:
        dh = self.head_dim
        return (self.heads, 1, 1) if self.shared_diag else (self.heads, dh, dh)


def h3_forward(x, p: H3Params) -> Tensor:
    """Full-sequence H3 over ``x`` of shape (L, d) or (B, L, d) via kernel convolutions."""
    x = as_tensor(x)
    squeeze = x.ndim == 2
    if squeeze:
        x = ops.reshape(x, (1,) + x.shape)
    B, L, d = x.shape
    if d != p.d:
        raise ValueError(f"input dim {d} does not match H3 dim {p.d}")
    if L < 1:
        raise ValueError("empty sequence")
    H, dh = p.heads, p.head_dim
    # channel-major layout (B, d, L) so the SSMs run along the last axis
    q = ops.transpose(x @ p.Wq, (0, 2, 1))
    k = ops.transpose(x @ p.Wk, (0, 2, 1))
    v = ops.transpose(x @ p.Wv, (0, 2, 1))
    k = ssm_apply(p.shift, k)
    q = ops.reshape(q, (B, H, dh, 1, L))
    k = ops.reshape(k, (B, H, dh, 1, L))
    v = ops.reshape(v, (B, H, 1, dh, L))
    outer = k * v                                           # (B, H, dh, dh, L)
    bank = p._bank_shape()
    kern = ops.reshape(p.diag.kernel_tensor(L), bank + (L,))
    dd = ops.reshape(p.diag.d, bank + (1,))
    S = ops.causal_conv(outer, kern) + dd * outer
    out = ops.sum(q * S, axis=2)                            # (B, H, dh, L)
    out = ops.transpose(ops.reshape(out, (B, d, L)), (0, 2, 1)) @ p.Wo
    return ops.reshape(out, (L, d)) if squeeze else out


# ---------------------------------------------------------------- streaming

@dataclass
class H3StreamState:
    shift: np.ndarray   # (d, N_shift) window, newest first
    diag: np.ndarray    # (H, d_h, d_h, N_diag) complex

    @classmethod
    def zeros(cls, p: H3Params) -> "H3StreamState":
        dh = p.head_dim
        return cls(np.zeros((p.d, p.shift.state_size)),
                   np.zeros((p.heads, dh, dh, p.diag.state_size), dtype=np.complex128))


class _DiagView:
    """Diagonal-bank parameters broadcast to (H, I, J, N) for the step kernels."""

    def __init__(self, p: H3Params):
        shape = p._bank_shape() + (p.diag.state_size,)
        self.a = p.diag.a.reshape(shape)
        self.b = p.diag.b.reshape(shape)
        self.c = p.diag.c.reshape(shape)
        self.d = p.diag.d.data.reshape(p._bank_shape())
        self._toeplitz: dict[int, tuple] = {}

    def chunk_terms(self, C: int) -> tuple:
        terms = self._toeplitz.get(C)
        if terms is None:
            t = np.arange(C)
            carry = self.c[..., None] * self.a[..., None] ** (t + 1)       # (H,I,J,N,C)
            inject = self.b[..., None] * self.a[..., None] ** (C - 1 - t)  # (H,I,J,N,C)
            k = (self.c * self.b)[..., None] * self.a[..., None] ** t
            k = k.sum(axis=-2).real                                         # (H,I,J,C)
            lag = t[:, None] - t[None, :]
            toep = np.where(lag >= 0, k[..., np.clip(lag, 0, None)], 0.0)   # (H,I,J,C,C)
            terms = (carry, inject, toep, self.a ** C)
            self._toeplitz[C] = terms
        return terms


def h3_stream(state: H3StreamState, x: np.ndarray, p: H3Params,
              view: _DiagView | None = None) -> tuple[H3StreamState, np.ndarray]:
    """Process a chunk ``x`` (C, d) of new frames with carried state."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    C, d = x.shape
    H, dh = p.heads, p.head_dim
    if state.shift.shape != (d, p.shift.state_size) or \
            state.diag.shape != (H, dh, dh, p.diag.state_size):
        raise ValueError("stream state does not match H3 parameters")
    view = view or _DiagView(p)
    q = x @ p.Wq.data
    k = x @ p.Wk.data
    v = x @ p.Wv.data
    # shift SSM: window of past keys (oldest first) followed by the chunk
    N = p.shift.state_size
    hist = np.concatenate([state.shift[:, :N - 1][:, ::-1], k.T], axis=1)
    cs = p.shift.c.data
    ks = p.shift.d.data[:, None] * k.T
    for i in range(N):
        ks = ks + cs[:, i:i + 1] * hist[:, N - 1 - i:N - 1 - i + C]
    new_shift = hist[:, ::-1][:, :N]
    ks = ks.reshape(H, dh, C)
    vs = v.T.reshape(H, dh, C)
    M = ks[:, :, None, :] * vs[:, None, :, :]              # (H, dh, dh, C)
    carry, inject, toep, aC = view.chunk_terms(C)
    S = (state.diag[..., None] * carry).sum(axis=-2).real
    S = S + (toep * M[..., None, :]).sum(axis=-1) + view.d[..., None] * M
    new_diag = aC * state.diag + (inject * M[..., None, :]).sum(axis=-1)
    qs = q.T.reshape(H, dh, C)
    out = (qs[:, :, None, :] * S).sum(axis=1)              # (H, dh, C)
    y = out.reshape(d, C).T @ p.Wo.data
    return H3StreamState(np.ascontiguousarray(new_shift), new_diag), y


def h3_step(state: H3StreamState, x_t, p: H3Params,
            view: _DiagView | None = None) -> tuple[H3StreamState, np.ndarray]:
    """One frame of streaming H3; O(d*N_shift + H*d_h^2*N_diag) per call."""
    state, y = h3_stream(state, np.asarray(x_t, dtype=np.float64)[None, :], p, view)
    return state, y[0]


# ------------------------------------------------------------------- costing

def _fft_flops(n: int) -> float:
    # radix-2 complex transform; a length-1 transform is a copy
    return 5.0 * n * math.log2(n) if n > 1 else 1.0


def h3_flop_estimate(p: H3Params, L: int) -> dict[str, float]:
    """Closed-form flop counts for one full-sequence H3 forward."""
    d, H, dh = p.d, p.heads, p.head_dim
    n = next_pow2(2 * L - 1)
    channels = H * dh * dh
    diag_sets = p.diag.channels
    est = {
        "projections": 4 * 2.0 * L * d * d,
        "shift_ssm": 2.0 * d * p.shift.state_size * L,
        "outer_product": float(L * channels),
        "diag_kernel": 8.0 * diag_sets * p.diag.state_size * L,
        # input transform, inverse transform, pointwise product (kernel spectra
        # are per bank entry and counted once per channel for simplicity)
        "diag_ssm": channels * (3 * _fft_flops(n) + 6.0 * n),
        "contraction": 2.0 * L * channels,
    }
    est["total"] = sum(est.values())
    return est
