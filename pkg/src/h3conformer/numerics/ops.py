"""Differentiable primitives over :class:`Tensor`.

Each primitive computes its forward value with numpy and hands ``record`` a
closure for the vector-Jacobian product.  Broadcasting is supported for the
elementwise binary ops; everything else takes explicit shapes.
"""

from __future__ import annotations

import builtins

import numpy as np

from . import fft as _fft
from .tensor import Tensor, as_tensor, record


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ----------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return record("add", a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return record("sub", a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return record("mul", ad * bd, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        ga = _unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return record("div", out, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return record("neg", -a.data, (a,), lambda g: (-g,))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return record("power", ad ** p, (a,), lambda g: (g * p * ad ** (p - 1),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return record("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return record("log", np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return record("sqrt", out, (a,), lambda g: (g * 0.5 / out,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return record("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return record("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return record("relu", a.data * mask, (a,), lambda g: (g * mask,))


def silu(a) -> Tensor:
    """Swish activation ``x * sigmoid(x)``."""
    a = as_tensor(a)
    ad = a.data
    s = _sigmoid(ad)
    return record("silu", ad * s, (a,), lambda g: (g * (s + ad * s * (1.0 - s)),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    out = np.maximum(ad, 0.0) + np.log1p(np.exp(-np.abs(ad)))
    return record("softplus", out, (a,), lambda g: (g * _sigmoid(ad),))


def glu(a, axis: int = -1) -> Tensor:
    """Gated linear unit: first half times sigmoid of the second half."""
    a = as_tensor(a)
    x1, x2 = np.split(a.data, 2, axis=axis)
    s = _sigmoid(x2)

    def bw(g):
        return (np.concatenate([g * s, g * x1 * s * (1.0 - s)], axis=axis),)

    return record("glu", x1 * s, (a,), bw)


# ------------------------------------------------------------------ reductions

def sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return record("sum", np.asarray(out), (a,), bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if bd.ndim > 1 \
                else np.multiply.outer(g, bd)
        if b.requires_grad:
            if ad.ndim == 1:
                gb = np.multiply.outer(ad, g)
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return record("matmul", ad @ bd, (a, b), bw)


# -------------------------------------------------------------------- shaping

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return record("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return record("transpose", a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def _is_fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    fancy = _is_fancy(index)

    def bw(g):
        full = np.zeros(shape)
        if fancy:
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return record("getitem", a.data[index], (a,), bw)


def concat(tensors, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return record("concat", np.concatenate([t.data for t in ts], axis=axis), tuple(ts), bw)


def pad_time(a, left: int, right: int = 0, axis: int = 1) -> Tensor:
    """Zero-pad one axis."""
    a = as_tensor(a)
    widths = [(0, 0)] * a.ndim
    widths[axis] = (left, right)
    n = a.shape[axis]

    def bw(g):
        sl = [builtins.slice(None)] * a.ndim
        sl[axis] = builtins.slice(left, left + n)
        return (g[tuple(sl)],)

    return record("pad", np.pad(a.data, widths), (a,), bw)


# ------------------------------------------------------------ normalisation

def softmax(a, axis: int = -1, mask=None) -> Tensor:
    """Softmax along ``axis``; entries where ``mask`` is False get weight 0."""
    a = as_tensor(a)
    x = a.data
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return record("softmax", out, (a,), bw)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    lse = m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))
    out = x - lse

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return record("log_softmax", out, (a,), bw)


def layer_norm(a, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis, then scale and shift."""
    a, gamma, beta = as_tensor(a), as_tensor(gamma), as_tensor(beta)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data

    def bw(g):
        gg = _unbroadcast(g * xhat, gd.shape) if gamma.requires_grad else None
        gb = _unbroadcast(g, beta.shape) if beta.requires_grad else None
        gx = None
        if a.requires_grad:
            gh = g * gd
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, gg, gb

    return record("layer_norm", xhat * gd + beta.data, (a, gamma, beta), bw)


# -------------------------------------------------------------- convolution

def depthwise_conv1d(x, w, causal: bool) -> Tensor:
    """Per-channel convolution over time.

    ``x``: (B, T, C); ``w``: (C, K).  Causal mode left-pads K-1 frames; otherwise
    padding is centred (K must be odd).  Output has the same length as ``x``.
    """
    x, w = as_tensor(x), as_tensor(w)
    B, T, C = x.shape
    K = w.shape[1]
    left = K - 1 if causal else (K - 1) // 2
    right = K - 1 - left
    xp = np.pad(x.data, ((0, 0), (left, right), (0, 0)))
    wd = w.data
    out = np.zeros((B, T, C))
    for k in range(K):
        out += xp[:, k:k + T, :] * wd[:, k]

    def bw(g):
        gx = gw = None
        if x.requires_grad:
            gp = np.zeros_like(xp)
            for k in range(K):
                gp[:, k:k + T, :] += g * wd[:, k]
            gx = gp[:, left:left + T, :]
        if w.requires_grad:
            gw = np.stack([(g * xp[:, k:k + T, :]).sum(axis=(0, 1)) for k in range(K)], axis=1)
        return gx, gw

    return record("depthwise_conv1d", out, (x, w), bw)


def strided_conv1d(x, w, b, stride: int) -> Tensor:
    """Causal strided convolution over time.

    ``x``: (B, T, Cin); ``w``: (K, Cin, Cout); ``b``: (Cout,).  Output frame i
    sees input frames ``stride*i - K + 1 .. stride*i``; length is ceil(T/stride).
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    B, T, Cin = x.shape
    K, _, Cout = w.shape
    Tout = -(-T // stride)
    xp = np.pad(x.data, ((0, 0), (K - 1, 0), (0, 0)))
    # frame i of the output reads padded rows stride*i .. stride*i + K - 1
    idx = stride * np.arange(Tout)[:, None] + np.arange(K)[None, :]
    cols = xp[:, idx, :].reshape(B, Tout, K * Cin)
    wmat = w.data.reshape(K * Cin, Cout)
    out = cols @ wmat + b.data

    def bw(g):
        gx = gw = gb = None
        if x.requires_grad:
            gcols = (g @ wmat.T).reshape(B, Tout, K, Cin)
            gp = np.zeros_like(xp)
            np.add.at(gp, (slice(None), idx), gcols)
            gx = gp[:, K - 1:, :]
        if w.requires_grad:
            gw = np.tensordot(cols, g, axes=([0, 1], [0, 1])).reshape(K, Cin, Cout)
        if b.requires_grad:
            gb = g.sum(axis=(0, 1))
        return gx, gw, gb

    return record("strided_conv1d", out, (x, w, b), bw)


def fft_causal_conv(u, k) -> Tensor:
    """Causal convolution along the last axis via FFT, differentiable in both inputs.

    ``k`` broadcasts against ``u`` over the leading axes.  The backward pass
    reuses the forward spectra; adjoints are cross-correlations.
    """
    u, k = as_tensor(u), as_tensor(k)
    L = u.shape[-1]
    if k.shape[-1] != L:
        raise ValueError(f"length mismatch: input {L}, kernel {k.shape[-1]}")
    n = _fft.next_pow2(2 * L - 1)
    U = _fft.rfft_pow2(u.data, n)
    Kf = _fft.rfft_pow2(k.data, n)
    y = _fft.irfft_pow2(U * Kf, n)[..., :L]

    def bw(g):
        G = _fft.rfft_pow2(g, n)
        gu = gk = None
        if u.requires_grad:
            gu = _unbroadcast(_fft.irfft_pow2(G * np.conj(Kf), n)[..., :L], u.shape)
        if k.requires_grad:
            spec = _unbroadcast(G * np.conj(U), k.shape[:-1] + (G.shape[-1],))
            gk = _fft.irfft_pow2(spec, n)[..., :L]
        return gu, gk

    return record("fft_causal_conv", y, (u, k), bw)


DIRECT_CONV_MAX = 128


def _toeplitz(k: np.ndarray) -> np.ndarray:
    """Upper-triangular Toeplitz stack ``T[..., j, t] = k[..., t - j]`` (zero for t < j)."""
    L = k.shape[-1]
    lag = np.arange(L)[None, :] - np.arange(L)[:, None]
    T = k[..., np.clip(lag, 0, None)]
    T[..., lag < 0] = 0.0
    return T


def direct_causal_conv(u, k) -> Tensor:
    """Same contract as :func:`fft_causal_conv`, computed as a batched Toeplitz matmul.

    Cheaper than the FFT route for short sequences.
    """
    u, k = as_tensor(u), as_tensor(k)
    L = u.shape[-1]
    if k.shape[-1] != L:
        raise ValueError(f"length mismatch: input {L}, kernel {k.shape[-1]}")
    lead = np.broadcast_shapes(u.shape[:-1], k.shape[:-1])
    nd = len(lead)
    kb = k.data.reshape((1,) * (nd - (k.ndim - 1)) + k.shape)
    own = [i for i in range(nd) if kb.shape[i] != 1]        # axes with their own kernel
    shared = [i for i in range(nd) if kb.shape[i] == 1]
    perm = own + shared
    n_own = int(np.prod([lead[i] for i in own]))
    n_shared = int(np.prod([lead[i] for i in shared]))
    ub = np.broadcast_to(u.data, lead + (L,)).transpose(perm + [nd]).reshape(n_own, n_shared, L)
    T = _toeplitz(np.broadcast_to(kb, tuple(lead[i] if i in own else 1 for i in range(nd)) + (L,))
                  .transpose(perm + [nd]).reshape(n_own, L))
    inv = np.argsort(perm + [nd])
    permuted = tuple(lead[i] for i in perm) + (L,)
    y = np.matmul(ub, T).reshape(permuted).transpose(inv)

    def bw(g):
        gb = np.ascontiguousarray(g).transpose(perm + [nd]).reshape(n_own, n_shared, L)
        gu = gk = None
        if u.requires_grad:
            gu = np.matmul(gb, T.transpose(0, 2, 1)).reshape(permuted).transpose(inv)
            gu = _unbroadcast(gu, u.shape)
        if k.requires_grad:
            gT = np.matmul(ub.transpose(0, 2, 1), gb)
            flat = np.stack([np.trace(gT, offset=m, axis1=1, axis2=2) for m in range(L)], -1)
            own_shape = tuple(lead[i] for i in own) + (1,) * len(shared) + (L,)
            gk = flat.reshape(own_shape).transpose(inv)
            gk = _unbroadcast(gk, k.shape)
        return gu, gk

    return record("direct_causal_conv", y, (u, k), bw)


def causal_conv(u, k) -> Tensor:
    """Causal convolution along the last axis; Toeplitz matmul for short inputs, FFT otherwise."""
    L = as_tensor(u).shape[-1]
    return direct_causal_conv(u, k) if L <= DIRECT_CONV_MAX else fft_causal_conv(u, k)


def cumsum(a, axis: int = 0) -> Tensor:
    a = as_tensor(a)
    out = _fft.cumsum(a.data, axis)

    def bw(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return record("cumsum", out, (a,), bw)


def diag_ssm_kernel(w_re, w_im, log_rate, theta, L: int) -> Tensor:
    """Real kernel ``k[..., j] = Re(sum_n w_n * a_n**j)`` for j = 0..L-1.

    ``a_n = exp(-exp(log_rate_n) + i*theta_n)``.  All parameter tensors share
    the shape (..., N); the result has shape (..., L).
    """
    w_re, w_im, log_rate, theta = map(as_tensor, (w_re, w_im, log_rate, theta))
    rate = np.exp(log_rate.data)
    z = -rate + 1j * theta.data
    j = np.arange(L)
    P = np.exp(z[..., None] * j)          # (..., N, L)
    w = w_re.data + 1j * w_im.data
    out = np.einsum("...n,...nl->...l", w, P).real

    def bw(g):
        # g: (..., L)
        gP = P * g[..., None, :]          # (..., N, L)
        s0 = gP.sum(axis=-1)
        s1 = (gP * j).sum(axis=-1)
        gw_re = s0.real
        gw_im = -s0.imag
        ws1 = w * s1
        g_re_z = ws1.real
        g_im_z = -ws1.imag
        return gw_re, gw_im, g_re_z * (-rate), g_im_z

    return record("diag_ssm_kernel", out, (w_re, w_im, log_rate, theta), bw)
