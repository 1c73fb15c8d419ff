"""Small parameterised building blocks shared by the encoder."""

from __future__ import annotations

import numpy as np

from .numerics import Tensor, as_tensor, ops


class Module:
    """Parameter container; Tensors and child objects are discovered from attributes.

    Child objects may be other Modules, lists of Modules, or anything exposing
    ``parameters() -> dict``.  Non-trainable state lives in ``self.buffers``.
    """

    training: bool = False

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(value, Tensor):
                out[name] = value
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if hasattr(item, "parameters"):
                        for k, v in item.parameters().items():
                            out[f"{name}.{i}.{k}"] = v
            elif hasattr(value, "parameters"):
                for k, v in value.parameters().items():
                    out[f"{name}.{k}"] = v
        return out

    def named_buffers(self) -> dict[str, np.ndarray]:
        out = {f"{k}": v for k, v in getattr(self, "buffers", {}).items()}
        for name, value in vars(self).items():
            children = value if isinstance(value, list) else [value]
            for i, child in enumerate(children):
                if isinstance(child, Module):
                    tag = f"{name}.{i}" if isinstance(value, list) else name
                    for k, v in child.named_buffers().items():
                        out[f"{tag}.{k}"] = v
        return out

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for value in vars(self).values():
            for child in (value if isinstance(value, list) else [value]):
                if isinstance(child, Module):
                    child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    if not training or rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep


class Linear(Module):
    def __init__(self, W, b=None):
        self.W = Tensor(np.asarray(W, dtype=np.float64))
        self.b = None if b is None else Tensor(np.asarray(b, dtype=np.float64))

    @classmethod
    def initialize(cls, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True,
                   zero: bool = False) -> "Linear":
        W = np.zeros((d_in, d_out)) if zero else rng.normal(0.0, 1.0 / np.sqrt(d_in), (d_in, d_out))
        return cls(W, np.zeros(d_out) if bias else None)

    def parameters(self) -> dict[str, Tensor]:
        return {"W": self.W} if self.b is None else {"W": self.W, "b": self.b}

    def __call__(self, x):
        y = as_tensor(x) @ self.W
        return y if self.b is None else y + self.b

    def apply(self, x: np.ndarray) -> np.ndarray:
        y = x @ self.W.data
        return y if self.b is None else y + self.b.data


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(d))
        self.beta = Tensor(np.zeros(d))
        self.eps = eps

    def __call__(self, x) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)

    def apply(self, x: np.ndarray) -> np.ndarray:
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        return xc / np.sqrt(var + self.eps) * self.gamma.data + self.beta.data


class BatchNorm(Module):
    """Normalisation over (batch, time) with running statistics for evaluation."""

    def __init__(self, d: int, eps: float = 1e-5, momentum: float = 0.1):
        self.gamma = Tensor(np.ones(d))
        self.beta = Tensor(np.zeros(d))
        self.eps = eps
        self.momentum = momentum
        self.buffers = {"running_mean": np.zeros(d), "running_var": np.ones(d)}

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        if not self.training:
            scale = 1.0 / np.sqrt(self.buffers["running_var"] + self.eps)
            return (x - self.buffers["running_mean"]) * (scale * self.gamma) + self.beta
        B, T, d = x.shape
        w = np.ones((B, T, 1)) if mask is None else np.asarray(mask, dtype=np.float64)[..., None]
        n = w.sum()
        mean = ops.sum(x * w, axis=(0, 1)) * (1.0 / n)
        xc = x - mean
        var = ops.sum(xc * xc * w, axis=(0, 1)) * (1.0 / n)
        m = self.momentum
        self.buffers["running_mean"] = (1 - m) * self.buffers["running_mean"] + m * mean.data
        self.buffers["running_var"] = (1 - m) * self.buffers["running_var"] + m * var.data
        return xc / ops.sqrt(var + self.eps) * self.gamma + self.beta


class FeedForward(Module):
    """Linear expand, swish, dropout, linear project."""

    def __init__(self, d: int, expansion: int, rng: np.random.Generator, zero_out: bool = False):
        self.w1 = Linear.initialize(d, expansion * d, rng)
        self.w2 = Linear.initialize(expansion * d, d, rng, zero=zero_out)

    def __call__(self, x, rate: float = 0.0, rng=None) -> Tensor:
        h = dropout(ops.silu(self.w1(x)), rate, rng, self.training)
        return self.w2(h)

    def apply(self, x: np.ndarray) -> np.ndarray:
        h = self.w1.apply(x)
        h = h * (0.5 * (1.0 + np.tanh(0.5 * h)))
        return self.w2.apply(h)


class ConvModule(Module):
    """Pointwise expand with GLU gating, depthwise conv, norm, swish, pointwise project.

    Causal mode left-pads the depthwise conv and normalises per frame; offline
    mode pads symmetrically and uses batch statistics.
    """

    def __init__(self, d: int, kernel: int, causal: bool, rng: np.random.Generator,
                 zero_out: bool = False):
        if not causal and kernel % 2 == 0:
            raise ValueError("offline depthwise kernel width must be odd")
        self.causal = causal
        self.pw1 = Linear.initialize(d, 2 * d, rng)
        self.dw = Tensor(rng.normal(0.0, 1.0 / np.sqrt(kernel), (d, kernel)))
        self.dw_b = Tensor(np.zeros(d))
        self.norm = LayerNorm(d) if causal else BatchNorm(d)
        self.pw2 = Linear.initialize(d, d, rng, zero=zero_out)

    @property
    def kernel(self) -> int:
        return self.dw.shape[1]

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        if mask is not None and not self.causal:
            x = x * np.asarray(mask, dtype=np.float64)[..., None]
        h = ops.glu(self.pw1(x), axis=-1)
        h = ops.depthwise_conv1d(h, self.dw, self.causal) + self.dw_b
        h = self.norm(h) if self.causal else self.norm(h, mask)
        return self.pw2(ops.silu(h))


class Frontend(Module):
    """Two causal stride-2 convolutions (x4 time reduction), ReLU after each."""

    kernel = 3
    stride = 2

    def __init__(self, feat_dim: int, d: int, rng: np.random.Generator):
        k = self.kernel
        self.conv1_w = Tensor(rng.normal(0.0, 1.0 / np.sqrt(k * feat_dim), (k, feat_dim, d)))
        self.conv1_b = Tensor(np.zeros(d))
        self.conv2_w = Tensor(rng.normal(0.0, np.sqrt(2.0 / (k * d)), (k, d, d)))
        self.conv2_b = Tensor(np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        h = ops.relu(ops.strided_conv1d(x, self.conv1_w, self.conv1_b, self.stride))
        return ops.relu(ops.strided_conv1d(h, self.conv2_w, self.conv2_b, self.stride))

    @staticmethod
    def output_length(T: int) -> int:
        return -(-(-(-T // 2)) // 2)


def sinusoidal_positions(L: int, d: int, offset: int = 0) -> np.ndarray:
    pos = np.arange(offset, offset + L, dtype=np.float64)[:, None]
    i = np.arange(0, d, 2, dtype=np.float64)
    freq = np.exp(-np.log(10000.0) * i / d)
    pe = np.zeros((L, d))
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq)[:, : d // 2]
    return pe
