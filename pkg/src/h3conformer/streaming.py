"""Frame-synchronous inference for causal encoders.

Every stateful piece (frontend convolutions, attention key/value caches, H3
states, depthwise-conv history) carries its state between calls, so feeding
an utterance in arbitrary pieces yields the same logits as the full-sequence
forward pass.
"""

from __future__ import annotations

import numpy as np

from .attention import MHSACache, mhsa_stream
from .conformer import ConformerBlock, Encoder, Mixer, ParallelSplit
from .h3 import H3StreamState, _DiagView, h3_stream
from .layers import sinusoidal_positions


def _silu(x: np.ndarray) -> np.ndarray:
    return x * (0.5 * (1.0 + np.tanh(0.5 * x)))


class _StridedConvStream:
    def __init__(self, w: np.ndarray, b: np.ndarray, stride: int):
        self.K, cin, _ = w.shape
        self.w = w.reshape(self.K * cin, -1)
        self.b = b
        self.stride = stride
        self.buf = np.zeros((self.K - 1, cin))

    def push(self, x: np.ndarray) -> np.ndarray:
        buf = np.concatenate([self.buf, x], axis=0)
        n = 0 if len(buf) < self.K else (len(buf) - self.K) // self.stride + 1
        if n == 0:
            self.buf = buf
            return np.zeros((0, self.w.shape[1]))
        idx = self.stride * np.arange(n)[:, None] + np.arange(self.K)[None, :]
        out = buf[idx].reshape(n, -1) @ self.w + self.b
        self.buf = buf[self.stride * n:]
        return np.maximum(out, 0.0)


class _BlockStream:
    def __init__(self, block: ConformerBlock):
        self.block = block
        m = block.spec.mixer
        self.split = m.d_mhsa if isinstance(m, ParallelSplit) else None
        self.cache = MHSACache.empty(block.mhsa) if block.mhsa is not None else None
        if block.h3 is not None:
            self.h3_state = H3StreamState.zeros(block.h3)
            self.h3_view = _DiagView(block.h3)
        K = block.conv.kernel
        self.conv_hist = np.zeros((K - 1, block.conv.dw.shape[0]))

    def _mix(self, h: np.ndarray) -> np.ndarray:
        b = self.block
        m = b.spec.mixer
        if isinstance(m, ParallelSplit):
            if m.d_h3 == 0:
                return mhsa_stream(self.cache, h, b.mhsa)
            if m.d_mhsa == 0:
                self.h3_state, y = h3_stream(self.h3_state, h, b.h3, self.h3_view)
                return y
            left = mhsa_stream(self.cache, h[:, :m.d_mhsa], b.mhsa)
            self.h3_state, right = h3_stream(self.h3_state, h[:, m.d_mhsa:], b.h3, self.h3_view)
            return np.concatenate([left, right], axis=1)
        if m == Mixer.MHSA:
            return mhsa_stream(self.cache, h, b.mhsa)
        self.h3_state, y = h3_stream(self.h3_state, h, b.h3, self.h3_view)
        return y

    def _conv(self, h: np.ndarray) -> np.ndarray:
        conv = self.block.conv
        g = conv.pw1.apply(h)
        d = g.shape[1] // 2
        g = g[:, :d] * (0.5 * (1.0 + np.tanh(0.5 * g[:, d:])))
        full = np.concatenate([self.conv_hist, g], axis=0)
        K = conv.kernel
        C = len(g)
        w = conv.dw.data
        out = conv.dw_b.data + sum(full[k:k + C] * w[:, k] for k in range(K))
        self.conv_hist = full[C:] if K > 1 else full[:0]
        out = conv.norm.apply(out)
        return conv.pw2.apply(_silu(out))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        b = self.block
        x = x + b.ffn.apply(b.ln_ffn.apply(x))
        x = x + self._mix(b.ln_mix.apply(x))
        return x + self._conv(b.ln_conv.apply(x))


class EncoderStream:
    """Streaming session over a causal :class:`Encoder`.

    ``chunk`` is the number of subsampled positions pushed through the
    blocks at once (1 = fully frame-synchronous).
    """

    def __init__(self, model: Encoder, chunk: int = 1):
        if not model.cfg.causal:
            raise ValueError("streaming inference requires a causal encoder")
        if chunk < 1:
            raise ValueError("chunk must be at least 1")
        self.model = model
        self.chunk = chunk
        fe = model.frontend
        self._conv1 = _StridedConvStream(fe.conv1_w.data, fe.conv1_b.data, fe.stride)
        self._conv2 = _StridedConvStream(fe.conv2_w.data, fe.conv2_b.data, fe.stride)
        self._blocks = [_BlockStream(b) for b in model.blocks]
        self._pending = np.zeros((0, model.cfg.d))
        self._position = 0

    def _run(self, x: np.ndarray) -> np.ndarray:
        d = self.model.cfg.d
        if self.model.cfg.positional == "sinusoidal":
            x = x + sinusoidal_positions(len(x), d, offset=self._position)
        self._position += len(x)
        for blk in self._blocks:
            x = blk(x)
        m = self.model
        return m.head.apply(m.ln_out.apply(x))

    def push(self, frames: np.ndarray) -> np.ndarray:
        """Feed raw feature frames (T, F); returns logits for newly completed positions."""
        frames = np.asarray(frames, dtype=np.float64)
        h = self._conv2.push(self._conv1.push(frames))
        self._pending = np.concatenate([self._pending, h], axis=0)
        outs = []
        while len(self._pending) >= self.chunk:
            outs.append(self._run(self._pending[:self.chunk]))
            self._pending = self._pending[self.chunk:]
        if not outs:
            return np.zeros((0, self.model.cfg.vocab_size + 1))
        return np.concatenate(outs, axis=0)

    def finish(self) -> np.ndarray:
        """Flush positions held back waiting for a full chunk."""
        if len(self._pending) == 0:
            return np.zeros((0, self.model.cfg.vocab_size + 1))
        out = self._run(self._pending)
        self._pending = self._pending[:0]
        return out


def stream_logits(model: Encoder, features: np.ndarray, chunk: int = 1,
                  frames_per_push: int | None = None) -> np.ndarray:
    """Run a whole utterance through an :class:`EncoderStream`."""
    s = EncoderStream(model, chunk)
    step = frames_per_push or 4 * chunk
    outs = [s.push(features[i:i + step]) for i in range(0, len(features), step)]
    outs.append(s.finish())
    return np.concatenate(outs, axis=0)
