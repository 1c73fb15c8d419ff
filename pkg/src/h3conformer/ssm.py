"""Diagonal and shift state-space layers.

Both layers map real sequences to real sequences through the recurrence

    x_t = A x_{t-1} + B u_t,    y_t = Re(C x_t) + D u_t,    x_0 = 0

and can be evaluated three ways that agree to rounding error: a sequential
scan, an FFT convolution with the materialised impulse response, and a
single-step update for streaming.

Inputs are shaped ``(C, L)`` for ``C`` channels (a 1-D ``(L,)`` input is
accepted when ``C == 1``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import Tensor, causal_convolve, ops
from .numerics.tensor import NonFiniteError


@dataclass(frozen=True)
class SSMKernel:
    k: np.ndarray  # (C, L)
    L: int


def _as_channels(u, channels: int) -> tuple[np.ndarray, bool]:
    u = np.asarray(u, dtype=np.float64)
    squeeze = u.ndim == 1
    if squeeze:
        u = u[None, :]
    if u.ndim != 2 or u.shape[0] != channels:
        raise ValueError(f"expected input of shape ({channels}, L), got {u.shape}")
    if u.shape[1] < 1:
        raise ValueError("sequence length must be at least 1")
    if not np.isfinite(u).all():
        raise NonFiniteError("non-finite input sequence")
    return u, squeeze


class DiagSSM:
    """SSM with diagonal complex ``A``, one independent system per channel.

    ``a_n = exp(-exp(log_rate_n) + i*theta_n)`` so ``|a_n| < 1`` for any real
    parameters.  ``from_poles`` bypasses the parameterisation (and its
    stability guarantee) for exact test configurations such as an integrator.
    """

    def __init__(self, log_rate, theta, b, c, d):
        b = np.asarray(b, dtype=np.complex128)
        c = np.asarray(c, dtype=np.complex128)
        self.log_rate = Tensor(np.asarray(log_rate, dtype=np.float64), name="log_rate")
        self.theta = Tensor(np.asarray(theta, dtype=np.float64), name="theta")
        self.b_re = Tensor(b.real.copy(), name="b_re")
        self.b_im = Tensor(b.imag.copy(), name="b_im")
        self.c_re = Tensor(c.real.copy(), name="c_re")
        self.c_im = Tensor(c.imag.copy(), name="c_im")
        self.d = Tensor(np.asarray(d, dtype=np.float64).reshape(-1), name="d")
        self._poles: np.ndarray | None = None
        self._cache: tuple | None = None
        shapes = {t.shape for t in (self.log_rate, self.theta, self.b_re, self.c_re)}
        if len(shapes) != 1 or self.log_rate.ndim != 2:
            raise ValueError("diagonal SSM parameters must all be shaped (channels, N)")
        if self.d.shape != (self.channels,):
            raise ValueError("d must hold one value per channel")

    @classmethod
    def initialize(cls, channels: int, state_size: int, rng: np.random.Generator,
                   min_radius: float = 0.85, max_radius: float = 0.999) -> "DiagSSM":
        radius = rng.uniform(min_radius, max_radius, size=(channels, state_size))
        log_rate = np.log(-np.log(radius))
        theta = np.broadcast_to(np.pi * np.arange(state_size) / state_size,
                                (channels, state_size)).copy()
        b = np.ones((channels, state_size), dtype=np.complex128)
        # unit-variance impulse response at init
        scale = np.sqrt((1.0 - radius ** 2) / (2.0 * state_size))
        c = scale * (rng.standard_normal(radius.shape) + 1j * rng.standard_normal(radius.shape))
        return cls(log_rate, theta, b, c, np.ones(channels))

    @classmethod
    def from_poles(cls, a, b, c, d) -> "DiagSSM":
        """Build from explicit diagonal entries of ``A`` with no stability constraint."""
        a = np.atleast_2d(np.asarray(a, dtype=np.complex128))
        shape = a.shape
        ssm = cls(np.zeros(shape), np.zeros(shape),
                  np.broadcast_to(b, shape), np.broadcast_to(c, shape),
                  np.broadcast_to(np.asarray(d, dtype=np.float64).reshape(-1), (shape[0],)))
        ssm._poles = a
        return ssm

    @property
    def channels(self) -> int:
        return self.log_rate.shape[0]

    @property
    def state_size(self) -> int:
        return self.log_rate.shape[1]

    @property
    def a(self) -> np.ndarray:
        if self._poles is not None:
            return self._poles
        return np.exp(-np.exp(self.log_rate.data) + 1j * self.theta.data)

    @property
    def b(self) -> np.ndarray:
        return self.b_re.data + 1j * self.b_im.data

    @property
    def c(self) -> np.ndarray:
        return self.c_re.data + 1j * self.c_im.data

    def parameters(self) -> dict[str, Tensor]:
        return {"log_rate": self.log_rate, "theta": self.theta, "b_re": self.b_re,
                "b_im": self.b_im, "c_re": self.c_re, "c_im": self.c_im, "d": self.d}

    def _fingerprint(self) -> tuple:
        return tuple(p.data.tobytes() for p in self.parameters().values())

    def kernel_tensor(self, L: int) -> Tensor:
        """Differentiable kernel, shape (C, L)."""
        if self._poles is not None:
            return Tensor(materialize_kernel(self, L).k)
        w_re = self.c_re * self.b_re - self.c_im * self.b_im
        w_im = self.c_re * self.b_im + self.c_im * self.b_re
        return ops.diag_ssm_kernel(w_re, w_im, self.log_rate, self.theta, L)

    def init_state(self) -> np.ndarray:
        return np.zeros((self.channels, self.state_size), dtype=np.complex128)


class ShiftSSM:
    """SSM whose ``A`` is the down-shift matrix and ``B = e_1``.

    The state is the window ``(u_t, u_{t-1}, ..., u_{t-N+1})`` so the impulse
    response is just the learned ``c`` vector followed by zeros.
    """

    def __init__(self, c, d):
        self.c = Tensor(np.atleast_2d(np.asarray(c, dtype=np.float64)), name="c")
        self.d = Tensor(np.asarray(d, dtype=np.float64).reshape(-1), name="d")
        if self.d.shape != (self.channels,):
            raise ValueError("d must hold one value per channel")

    @classmethod
    def initialize(cls, channels: int, state_size: int, rng: np.random.Generator) -> "ShiftSSM":
        c = rng.standard_normal((channels, state_size)) / np.sqrt(state_size)
        return cls(c, np.zeros(channels))

    @property
    def channels(self) -> int:
        return self.c.shape[0]

    @property
    def state_size(self) -> int:
        return self.c.shape[1]

    def parameters(self) -> dict[str, Tensor]:
        return {"c": self.c, "d": self.d}

    def _fingerprint(self) -> tuple:
        return (self.c.data.tobytes(), self.d.data.tobytes())

    def kernel_tensor(self, L: int) -> Tensor:
        N = self.state_size
        if L >= N:
            return ops.pad_time(self.c, 0, L - N, axis=1)
        return self.c[:, :L]

    def init_state(self) -> np.ndarray:
        return np.zeros((self.channels, self.state_size))


def materialize_kernel(ssm: DiagSSM | ShiftSSM, L: int) -> SSMKernel:
    """Impulse response ``k_j = C A^{j-1} B`` for j = 1..L, cached per length."""
    if L < 1:
        raise ValueError("kernel length must be at least 1")
    poles = getattr(ssm, "_poles", None)
    key = (L, ssm._fingerprint(), None if poles is None else poles.tobytes())
    cache = getattr(ssm, "_cache", None)
    if cache is not None and cache[0] == key:
        return cache[1]
    if isinstance(ssm, ShiftSSM):
        k = np.zeros((ssm.channels, L))
        n = min(L, ssm.state_size)
        k[:, :n] = ssm.c.data[:, :n]
    else:
        a = ssm.a
        w = ssm.c * ssm.b
        # a^j by repeated elementwise scaling; 0**0 == 1 keeps a=0 exact
        powers = np.empty(a.shape + (L,), dtype=np.complex128)
        powers[..., 0] = 1.0
        for j in range(1, L):
            powers[..., j] = powers[..., j - 1] * a
        k = np.einsum("cn,cnl->cl", w, powers).real
    kernel = SSMKernel(k=k, L=L)
    ssm._cache = (key, kernel)
    return kernel


def step(ssm: DiagSSM | ShiftSSM, state: np.ndarray, u_t) -> tuple[np.ndarray, np.ndarray]:
    """Advance the recurrence by one input frame; returns (new state, output)."""
    u_t = np.asarray(u_t, dtype=np.float64).reshape(-1)
    expected = (ssm.channels, ssm.state_size)
    if state.shape != expected:
        raise ValueError(f"state shape {state.shape} does not match {expected}")
    if isinstance(ssm, ShiftSSM):
        new = np.empty_like(state)
        new[:, 1:] = state[:, :-1]
        new[:, 0] = u_t
        y = (ssm.c.data * new).sum(axis=1) + ssm.d.data * u_t
    else:
        new = ssm.a * state + ssm.b * u_t[:, None]
        y = (ssm.c * new).sum(axis=1).real + ssm.d.data * u_t
    return new, y


def scan_recurrent(ssm: DiagSSM | ShiftSSM, u) -> np.ndarray:
    """Sequential evaluation of the recurrence from a zero state."""
    u, squeeze = _as_channels(u, ssm.channels)
    state = ssm.init_state()
    y = np.empty_like(u)
    for t in range(u.shape[1]):
        state, y[:, t] = step(ssm, state, u[:, t])
    return y[0] if squeeze else y


def forward_conv(ssm: DiagSSM | ShiftSSM, u) -> np.ndarray:
    """Kernel convolution plus feedthrough, via FFT."""
    u, squeeze = _as_channels(u, ssm.channels)
    k = materialize_kernel(ssm, u.shape[1]).k
    y = causal_convolve(u, k) + ssm.d.data[:, None] * u
    return y[0] if squeeze else y


def ssm_apply(ssm: DiagSSM | ShiftSSM, u: Tensor) -> Tensor:
    """Differentiable FFT path; ``u`` is (..., C, L)."""
    L = u.shape[-1]
    y = ops.causal_conv(u, ssm.kernel_tensor(L))
    return y + ops.reshape(ssm.d, (ssm.channels, 1)) * u
