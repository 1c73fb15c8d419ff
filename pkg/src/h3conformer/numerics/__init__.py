"""Numeric substrate: tensors, tape autodiff, FFT and convolution."""

from . import ops
from .fft import causal_convolve, cumsum, fft, ifft, naive_causal_convolve
from .gradcheck import grad_check, numeric_grad
from .tensor import GradTape, NonFiniteError, TapeError, Tensor, as_tensor, backward, is_recording

__all__ = [
    "GradTape", "NonFiniteError", "TapeError", "Tensor", "as_tensor", "backward",
    "causal_convolve", "cumsum", "fft", "grad_check", "ifft", "is_recording",
    "naive_causal_convolve", "numeric_grad", "ops",
]
