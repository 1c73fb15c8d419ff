"""Radix-2 FFT, FFT-based causal convolution and prefix sums.

All transforms act on the last axis and are vectorised over leading axes.
Power-of-two lengths use an iterative radix-2 transform; other lengths go
through Bluestein's chirp-z identity on top of it, so results are always the
exact DFT of the input length.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np


def next_pow2(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


@lru_cache(maxsize=64)
def _bit_reversal(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=256)
def _twiddles(size: int, inverse: bool) -> np.ndarray:
    sign = 1.0 if inverse else -1.0
    return np.exp(sign * 2j * np.pi * np.arange(size // 2) / size)


def _fft_pow2(x: np.ndarray, inverse: bool) -> np.ndarray:
    n = x.shape[-1]
    lead = x.shape[:-1]
    a = np.asarray(x, dtype=np.complex128)[..., _bit_reversal(n)]
    b = np.empty_like(a)
    size = 2
    while size <= n:
        half = size // 2
        av = a.reshape(lead + (n // size, size))
        bv = b.reshape(lead + (n // size, size))
        even = av[..., :half]
        odd = av[..., half:] if size == 2 else av[..., half:] * _twiddles(size, inverse)
        np.add(even, odd, out=bv[..., :half])
        np.subtract(even, odd, out=bv[..., half:])
        a, b = b, a
        size *= 2
    return a


@lru_cache(maxsize=64)
def _real_twiddles(n: int) -> tuple[np.ndarray, np.ndarray]:
    w = np.exp(-2j * np.pi * np.arange(n // 2 + 1) / n)
    return 0.5 * (1 - 1j * w), 0.5 * (1 + 1j * w)


def rfft_pow2(x: np.ndarray, n: int | None = None) -> np.ndarray:
    """Non-negative-frequency half of the DFT of real ``x`` zero-padded to ``n`` (a power of two).

    Packs even and odd samples into one half-length complex transform.
    """
    x = np.asarray(x, dtype=np.float64)
    L = x.shape[-1]
    n = L if n is None else n
    if n & (n - 1) or n < L:
        raise ValueError(f"transform length {n} must be a power of two >= {L}")
    if n < 4:
        buf = np.zeros(x.shape[:-1] + (n,))
        buf[..., :L] = x
        return _fft_pow2(buf, False)[..., :n // 2 + 1]
    h = n // 2
    z = np.zeros(x.shape[:-1] + (h,), dtype=np.complex128)
    ev = x[..., 0::2]
    od = x[..., 1::2]
    z.real[..., :ev.shape[-1]] = ev
    z.imag[..., :od.shape[-1]] = od
    Z = _fft_pow2(z, False)
    Zk = np.concatenate([Z, Z[..., :1]], axis=-1)
    A, B = _real_twiddles(n)
    return A * Zk + B * np.conj(Zk[..., ::-1])


def irfft_pow2(X: np.ndarray, n: int) -> np.ndarray:
    """Inverse of :func:`rfft_pow2`: the length-``n`` real signal with half-spectrum ``X``."""
    if n < 4:
        full = np.concatenate([X, np.conj(X[..., 1:n - n // 2][..., ::-1])], axis=-1)
        return _fft_pow2(full, True).real / n
    h = n // 2
    A, B = _real_twiddles(n)
    z = np.conj(A[:h]) * X[..., :h] + np.conj(B[:h]) * np.conj(X[..., h:0:-1])
    z = _fft_pow2(z, True) / h
    out = np.empty(X.shape[:-1] + (n,))
    out[..., 0::2] = z.real
    out[..., 1::2] = z.imag
    return out


@lru_cache(maxsize=64)
def _chirp(n: int) -> np.ndarray:
    k = np.arange(n, dtype=np.int64)
    # k^2 mod 2n keeps the phase argument small and exact
    return np.exp(-1j * np.pi * ((k * k) % (2 * n)) / n)


def _bluestein(x: np.ndarray, inverse: bool) -> np.ndarray:
    n = x.shape[-1]
    w = _chirp(n)
    if inverse:
        w = np.conj(w)
    m = next_pow2(2 * n - 1)
    a = np.zeros(x.shape[:-1] + (m,), dtype=np.complex128)
    a[..., :n] = x * w
    b = np.zeros(m, dtype=np.complex128)
    b[:n] = np.conj(w)
    b[m - n + 1:] = np.conj(w[1:])[::-1]
    conv = _fft_pow2(_fft_pow2(a, False) * _fft_pow2(b, False), True) / m
    return conv[..., :n] * w


def fft(x) -> np.ndarray:
    """Discrete Fourier transform along the last axis."""
    x = np.asarray(x)
    n = x.shape[-1] if x.ndim else 0
    if n == 0:
        raise ValueError("fft of an empty sequence")
    if n & (n - 1) == 0:
        return _fft_pow2(x, False)
    return _bluestein(x, False)


def ifft(x) -> np.ndarray:
    """Inverse of :func:`fft`."""
    x = np.asarray(x)
    n = x.shape[-1] if x.ndim else 0
    if n == 0:
        raise ValueError("ifft of an empty sequence")
    if n & (n - 1) == 0:
        return _fft_pow2(x, True) / n
    return _bluestein(x, True) / n


def padded_spectrum(x: np.ndarray, n: int) -> np.ndarray:
    """FFT of ``x`` zero-padded along the last axis to power-of-two length ``n``."""
    L = x.shape[-1]
    if L == n:
        return _fft_pow2(x, False)
    buf = np.zeros(x.shape[:-1] + (n,), dtype=np.complex128)
    buf[..., :L] = x
    return _fft_pow2(buf, False)


def causal_convolve(u, k) -> np.ndarray:
    """Causal convolution ``y[t] = sum_{j<=t} k[t-j] u[j]`` along the last axis.

    ``u`` and ``k`` must share the last-axis length and broadcast elsewhere.
    Runs in O(L log L) by zero-padding to at least 2L-1 before transforming.
    """
    u = np.asarray(u, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    L = u.shape[-1]
    if k.shape[-1] != L:
        raise ValueError(f"length mismatch: input {L}, kernel {k.shape[-1]}")
    if L == 0:
        raise ValueError("empty sequence")
    n = next_pow2(2 * L - 1)
    return irfft_pow2(rfft_pow2(u, n) * rfft_pow2(k, n), n)[..., :L]


def naive_causal_convolve(u, k) -> np.ndarray:
    """O(L^2) reference for :func:`causal_convolve` (1-D)."""
    u = np.asarray(u, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if u.shape != k.shape:
        raise ValueError("length mismatch")
    L = len(u)
    y = np.zeros(L)
    for t in range(L):
        acc = 0.0
        for j in range(t + 1):
            acc += k[t - j] * u[j]
        y[t] = acc
    return y


def cumsum(x, axis: int = 0) -> np.ndarray:
    x = np.asarray(x)
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"axis {axis} out of range for {x.ndim}-d input")
    return np.cumsum(x, axis=axis)
