"""Conformer encoder with pluggable mixers (MHSA, H3, or a parallel channel split)."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np

from .attention import AttentionMode, MHSAParams, mhsa_forward
from .h3 import H3Params, h3_forward
from .layers import (ConvModule, FeedForward, Frontend, LayerNorm, Linear, Module, dropout,
                     sinusoidal_positions)
from .numerics import Tensor, as_tensor, ops
from .numerics.tensor import NonFiniteError


class Mixer(str, Enum):
    MHSA = "mhsa"
    H3 = "h3"


@dataclass(frozen=True)
class ParallelSplit:
    """Channels ``[0, d_mhsa)`` go to MHSA, ``[d_mhsa, d)`` to H3."""

    d_mhsa: int
    d_h3: int


@dataclass(frozen=True)
class BlockSpec:
    mixer: Mixer | ParallelSplit = Mixer.MHSA
    conv_kernel: int = 15
    causal: bool = False

    def token(self) -> str:
        if isinstance(self.mixer, ParallelSplit):
            return f"parallel:{self.mixer.d_mhsa}:{self.mixer.d_h3}"
        return Mixer(self.mixer).value

    @classmethod
    def from_token(cls, token: str, conv_kernel: int = 15, causal: bool = False) -> "BlockSpec":
        token = token.strip().lower()
        if token.startswith("parallel"):
            try:
                _, a, b = token.split(":")
                mixer: Mixer | ParallelSplit = ParallelSplit(int(a), int(b))
            except ValueError as exc:
                raise ValueError(f"bad parallel spec {token!r}; use parallel:D_MHSA:D_H3") from exc
        else:
            mixer = Mixer(token)
        return cls(mixer=mixer, conv_kernel=conv_kernel, causal=causal)


@dataclass
class EncoderConfig:
    layers: list[BlockSpec]
    vocab_size: int
    feat_dim: int = 80
    d: int = 256
    mhsa_heads: int = 8
    h3_heads: int = 2
    subsample_factor: int = 4
    dropout: float = 0.1
    ffn_expansion: int = 4
    shift_state: int = 4
    diag_state: int = 16
    shared_diag: bool = True
    positional: str = "sinusoidal"

    def __post_init__(self):
        self.validate()

    @property
    def causal(self) -> bool:
        return self.layers[0].causal

    def validate(self) -> None:
        if not self.layers:
            raise ValueError("encoder needs at least one layer")
        if len({b.causal for b in self.layers}) != 1:
            raise ValueError("all blocks must share the causal flag")
        if self.subsample_factor != 4:
            raise ValueError("only x4 subsampling is supported")
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be positive")
        if self.positional not in ("sinusoidal", "none"):
            raise ValueError(f"positional must be 'sinusoidal' or 'none', got {self.positional!r}")
        for b in self.layers:
            m = b.mixer
            if isinstance(m, ParallelSplit):
                if m.d_mhsa + m.d_h3 != self.d or min(m.d_mhsa, m.d_h3) < 0:
                    raise ValueError(f"parallel split {m} does not sum to d={self.d}")
                if m.d_mhsa and m.d_mhsa % self.mhsa_heads:
                    raise ValueError(f"d_mhsa={m.d_mhsa} not divisible by {self.mhsa_heads} heads")
                if m.d_h3 and m.d_h3 % self.h3_heads:
                    raise ValueError(f"d_h3={m.d_h3} not divisible by {self.h3_heads} heads")
            elif Mixer(m) is Mixer.MHSA and self.d % self.mhsa_heads:
                raise ValueError(f"d={self.d} not divisible by {self.mhsa_heads} heads")
            elif Mixer(m) is Mixer.H3 and self.d % self.h3_heads:
                raise ValueError(f"d={self.d} not divisible by {self.h3_heads} heads")

    def layer_string(self) -> str:
        return ",".join(b.token() for b in self.layers)


def make_ch4_config(total_layers: int, h3_placement, *, causal: bool = False,
                    conv_kernel: int = 15, **kwargs) -> EncoderConfig:
    """Encoder config with H3 mixers at the requested layers and MHSA elsewhere.

    ``h3_placement`` is ``"top_K"``, ``"bottom_K"`` or an explicit boolean
    sequence.  Layer 1 is closest to the input; "top" is closest to the output.
    """
    if isinstance(h3_placement, str):
        where, _, num = h3_placement.partition("_")
        k = int(num)
        if not 0 <= k <= total_layers:
            raise ValueError(f"cannot place {k} H3 layers in a {total_layers}-layer encoder")
        if where == "top":
            mask = [i >= total_layers - k for i in range(total_layers)]
        elif where == "bottom":
            mask = [i < k for i in range(total_layers)]
        else:
            raise ValueError(f"unknown placement {h3_placement!r}")
    else:
        mask = [bool(m) for m in h3_placement]
        if len(mask) != total_layers:
            raise ValueError("explicit mask length must equal total_layers")
    layers = [BlockSpec(Mixer.H3 if m else Mixer.MHSA, conv_kernel, causal) for m in mask]
    kwargs.setdefault("vocab_size", 10)
    return EncoderConfig(layers=layers, **kwargs)


def parallel_mixer_forward(x, spec: ParallelSplit, mhsa_p: MHSAParams | None,
                           h3_p: H3Params | None, mode=AttentionMode.BIDIRECTIONAL,
                           key_mask=None) -> Tensor:
    """MHSA on the leading ``d_mhsa`` channels, H3 on the rest, concatenated."""
    x = as_tensor(x)
    d = x.shape[-1]
    if spec.d_mhsa + spec.d_h3 != d:
        raise ValueError(f"split {spec} does not cover {d} channels")
    if spec.d_h3 == 0:
        return mhsa_forward(x, mhsa_p, mode, key_mask)
    if spec.d_mhsa == 0:
        return h3_forward(x, h3_p)
    left = mhsa_forward(x[..., :spec.d_mhsa], mhsa_p, mode, key_mask)
    right = h3_forward(x[..., spec.d_mhsa:], h3_p)
    return ops.concat([left, right], axis=-1)


class ConformerBlock(Module):
    """Pre-norm residual FFN, then mixer, then convolution module."""

    def __init__(self, spec: BlockSpec, cfg: EncoderConfig, rng: np.random.Generator,
                 zero_residual: bool = False):
        d = cfg.d
        self._spec = spec
        self._dropout = cfg.dropout
        self.ln_ffn = LayerNorm(d)
        self.ffn = FeedForward(d, cfg.ffn_expansion, rng, zero_out=zero_residual)
        self.ln_mix = LayerNorm(d)
        m = spec.mixer
        d_mhsa = m.d_mhsa if isinstance(m, ParallelSplit) else (d if m == Mixer.MHSA else 0)
        d_h3 = m.d_h3 if isinstance(m, ParallelSplit) else (d if m == Mixer.H3 else 0)
        self.mhsa = MHSAParams.initialize(d_mhsa, cfg.mhsa_heads, rng) if d_mhsa else None
        self.h3 = H3Params.initialize(d_h3, cfg.h3_heads, rng, cfg.shift_state,
                                      cfg.diag_state, cfg.shared_diag) if d_h3 else None
        if zero_residual:
            for p in (self.mhsa, self.h3):
                if p is not None:
                    p.Wo.data[...] = 0.0
        self.ln_conv = LayerNorm(d)
        self.conv = ConvModule(d, spec.conv_kernel, spec.causal, rng, zero_out=zero_residual)

    @property
    def spec(self) -> BlockSpec:
        return self._spec

    @property
    def mode(self) -> AttentionMode:
        return AttentionMode.CAUSAL if self._spec.causal else AttentionMode.BIDIRECTIONAL

    def mix(self, h: Tensor, key_mask=None) -> Tensor:
        m = self._spec.mixer
        if isinstance(m, ParallelSplit):
            return parallel_mixer_forward(h, m, self.mhsa, self.h3, self.mode, key_mask)
        if m == Mixer.MHSA:
            return mhsa_forward(h, self.mhsa, self.mode, key_mask)
        return h3_forward(h, self.h3)

    def __call__(self, x, mask: np.ndarray | None = None, rng=None) -> Tensor:
        rate, train = self._dropout, self.training
        x = as_tensor(x)
        squeeze = x.ndim == 2
        if squeeze:
            x = ops.reshape(x, (1,) + x.shape)
        x = x + dropout(self.ffn(self.ln_ffn(x), rate, rng), rate, rng, train)
        x = x + dropout(self.mix(self.ln_mix(x), mask), rate, rng, train)
        x = x + dropout(self.conv(self.ln_conv(x), mask), rate, rng, train)
        return ops.reshape(x, x.shape[1:]) if squeeze else x


def block_forward(x, block: ConformerBlock) -> Tensor:
    return block(x)


class Encoder(Module):
    """Frontend, optional sinusoidal positions, Conformer blocks, final norm, CTC head."""

    def __init__(self, cfg: EncoderConfig, seed: int = 0, zero_residual: bool = False):
        cfg.validate()
        self._cfg = cfg
        rng = np.random.default_rng(seed)
        self.frontend = Frontend(cfg.feat_dim, cfg.d, rng)
        self.blocks = [ConformerBlock(spec, cfg, rng, zero_residual) for spec in cfg.layers]
        self.ln_out = LayerNorm(cfg.d)
        self.head = Linear.initialize(cfg.d, cfg.vocab_size + 1, rng)

    @property
    def cfg(self) -> EncoderConfig:
        return self._cfg

    @staticmethod
    def output_lengths(lengths) -> np.ndarray:
        lengths = np.asarray(lengths)
        return -(-(-(-lengths // 2)) // 2)

    def __call__(self, feats, lengths=None, rng=None) -> tuple[Tensor, np.ndarray]:
        """Logits (B, T', V+1) and output lengths for padded features (B, T, F)."""
        feats = as_tensor(feats)
        if feats.ndim == 2:
            feats = ops.reshape(feats, (1,) + feats.shape)
        B, T, F = feats.shape
        if F != self._cfg.feat_dim:
            raise ValueError(f"feature dim {F} does not match config {self._cfg.feat_dim}")
        if not np.isfinite(feats.data).all():
            raise NonFiniteError("non-finite input features")
        lengths = np.full(B, T) if lengths is None else np.asarray(lengths)
        out_len = self.output_lengths(lengths)
        x = self.frontend(feats)
        Tp = x.shape[1]
        if self._cfg.positional == "sinusoidal":
            x = x + sinusoidal_positions(Tp, self._cfg.d)
        x = dropout(x, self._cfg.dropout, rng, self.training)
        mask = None
        if (out_len < Tp).any():
            mask = np.arange(Tp)[None, :] < out_len[:, None]
        for block in self.blocks:
            x = block(x, mask, rng)
        logits = self.head(self.ln_out(x))
        return logits, out_len


def encoder_forward(features, cfg: EncoderConfig, params: Encoder) -> np.ndarray:
    """Evaluation-mode logits for one utterance ``features`` (T, F)."""
    if params.cfg is not cfg and params.cfg != cfg:
        raise ValueError("parameters were built for a different config")
    was = params.training
    params.eval()
    try:
        logits, _ = params(np.asarray(features, dtype=np.float64)[None])
    finally:
        params.train(was)
    return logits.data[0]


def count_parameters(model: Module) -> int:
    return int(sum(p.size for p in model.parameters().values()))


def expected_parameter_count(cfg: EncoderConfig) -> int:
    """Closed-form trainable-parameter count for a config."""
    d, F, V = cfg.d, cfg.feat_dim, cfg.vocab_size
    e = cfg.ffn_expansion
    total = (3 * F * d + d) + (3 * d * d + d)            # frontend
    for spec in cfg.layers:
        total += 3 * 2 * d                               # three pre-norms
        total += (d * e * d + e * d) + (e * d * d + d)   # feedforward
        K = spec.conv_kernel
        total += (d * 2 * d + 2 * d) + (d * K + d) + 2 * d + (d * d + d)
        m = spec.mixer
        if isinstance(m, ParallelSplit):
            dm, dh3 = m.d_mhsa, m.d_h3
        else:
            dm, dh3 = (d, 0) if m == Mixer.MHSA else (0, d)
        total += 4 * dm * dm
        if dh3:
            heads = cfg.h3_heads
            head_dim = dh3 // heads
            diag_channels = heads if cfg.shared_diag else heads * head_dim * head_dim
            total += 4 * dh3 * dh3
            total += dh3 * cfg.shift_state + dh3
            total += diag_channels * (6 * cfg.diag_state + 1)
    total += 2 * d + d * (V + 1) + (V + 1)
    return total


@dataclass
class FFNWeightRow:
    layer: int
    mhsa_mean: float
    h3_mean: float


def ffn_weight_group_stats(model: Encoder) -> list[FFNWeightRow]:
    """Mean |W| of the first FFN layer, split by which mixer fed each input channel.

    Parallel layer ``i`` (1-based) writes its MHSA/H3 channels into the
    residual stream; the next feedforward to read that stream is the FFN of
    block ``i + 1``.  The final layer has no downstream FFN and is omitted.
    """
    layers = model.cfg.layers
    if not all(isinstance(b.mixer, ParallelSplit) for b in layers):
        raise ValueError("FFN weight-group analysis needs a parallel-split encoder")
    rows = []
    for i, spec in enumerate(layers[:-1]):
        W = np.abs(model.blocks[i + 1].ffn.w1.W.data)
        dm = spec.mixer.d_mhsa
        mh = float(W[:dm].mean()) if dm else float("nan")
        h3 = float(W[dm:].mean()) if spec.mixer.d_h3 else float("nan")
        rows.append(FFNWeightRow(i + 1, mh, h3))
    return rows
