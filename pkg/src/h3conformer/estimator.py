"""scikit-learn style wrappers: a CTC sequence recognizer and feature transformers.

``X`` is a list of ``(T_i, F)`` feature matrices; ``y`` a list of token-id lists
(ids ``1..V``; 0 is reserved for the CTC blank).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted, check_random_state

from .checkpoint import Checkpoint
from .config import TrainConfig
from .conformer import BlockSpec, EncoderConfig, make_ch4_config
from .ctc import ctc_greedy_decode
from .data import CorpusStats, FeatureSequence, compute_stats, spec_mask
from .runtime import EpochLog, evaluate, train


def check_sequences(X, n_features: int | None = None) -> list[np.ndarray]:
    """Validate a list of 2-D finite float feature matrices with a common width."""
    if isinstance(X, np.ndarray) and X.ndim == 2:
        X = [X]
    if not isinstance(X, (list, tuple)) or not X:
        raise ValueError("X must be a non-empty list of (T, F) feature matrices")
    out = []
    for i, x in enumerate(X):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ValueError(f"X[{i}] must be a non-empty 2-D matrix, got shape {x.shape}")
        if not np.isfinite(x).all():
            raise ValueError(f"X[{i}] contains NaN or Inf")
        out.append(x)
    widths = {x.shape[1] for x in out}
    if len(widths) != 1:
        raise ValueError(f"feature widths disagree: {sorted(widths)}")
    if n_features is not None and widths != {n_features}:
        raise ValueError(f"expected {n_features} features, got {widths.pop()}")
    return out


def check_label_sequences(y, n_samples: int, vocab_size: int | None = None) -> list[list[int]]:
    if len(y) != n_samples:
        raise ValueError(f"got {len(y)} label sequences for {n_samples} inputs")
    out = []
    for i, lab in enumerate(y):
        lab = [int(t) for t in lab]
        if any(t < 1 for t in lab):
            raise ValueError(f"y[{i}] uses id < 1; 0 is reserved for blank")
        if vocab_size is not None and any(t > vocab_size for t in lab):
            raise ValueError(f"y[{i}] has ids above vocab_size={vocab_size}")
        out.append(lab)
    return out


class FeatureNormalizer(TransformerMixin, BaseEstimator):
    """Per-dimension standardisation fitted on training sequences only."""

    def fit(self, X, y=None):
        X = check_sequences(X)
        self.stats_ = compute_stats(FeatureSequence(x, []) for x in X)
        self.n_features_in_ = X[0].shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "stats_")
        X = check_sequences(X, self.n_features_in_)
        return [(x - self.stats_.mean) / np.sqrt(self.stats_.var) for x in X]

    def inverse_transform(self, X):
        check_is_fitted(self, "stats_")
        X = check_sequences(X, self.n_features_in_)
        return [x * np.sqrt(self.stats_.var) + self.stats_.mean for x in X]


class SpecAugment(TransformerMixin, BaseEstimator):
    """Time and feature-band masking with the utterance mean (training-time only)."""

    def __init__(self, time_masks: int = 2, max_time_frac: float = 0.1, freq_masks: int = 2,
                 max_freq_bands: int = 8, random_state=None):
        self.time_masks = time_masks
        self.max_time_frac = max_time_frac
        self.freq_masks = freq_masks
        self.max_freq_bands = max_freq_bands
        self.random_state = random_state

    def fit(self, X, y=None):
        self.n_features_in_ = check_sequences(X)[0].shape[1]
        return self

    def transform(self, X):
        X = check_sequences(X)
        rng = np.random.default_rng(check_random_state(self.random_state).randint(2 ** 31))
        return [spec_mask(FeatureSequence(x, []), self.time_masks, self.freq_masks, rng,
                          self.max_time_frac, self.max_freq_bands).frames for x in X]


class CTCRecognizer(BaseEstimator):
    """Conformer-family encoder trained with CTC and decoded greedily.

    ``layers`` is a comma list of ``mhsa``, ``h3`` or ``parallel:A:B`` tokens, or
    a placement such as ``"top_2"`` applied to ``n_layers`` blocks.
    """

    def __init__(self, layers: str = "mhsa,mhsa", n_layers: int | None = None, d_model: int = 32,
                 mhsa_heads: int = 4, h3_heads: int = 2, conv_kernel: int = 7,
                 causal: bool = False, dropout: float = 0.1, ffn_expansion: int = 4,
                 epochs: int = 20, batch_size: int = 16, max_lr: float = 1e-3,
                 weight_decay: float = 0.01, warmup_frac: float = 0.05,
                 val_fraction: float = 0.05, augment: bool = True, vocab_size: int | None = None,
                 random_state: int = 0, verbose: bool = False):
        self.layers = layers
        self.n_layers = n_layers
        self.d_model = d_model
        self.mhsa_heads = mhsa_heads
        self.h3_heads = h3_heads
        self.conv_kernel = conv_kernel
        self.causal = causal
        self.dropout = dropout
        self.ffn_expansion = ffn_expansion
        self.epochs = epochs
        self.batch_size = batch_size
        self.max_lr = max_lr
        self.weight_decay = weight_decay
        self.warmup_frac = warmup_frac
        self.val_fraction = val_fraction
        self.augment = augment
        self.vocab_size = vocab_size
        self.random_state = random_state
        self.verbose = verbose

    def _encoder_config(self, feat_dim: int, vocab: int) -> EncoderConfig:
        common = dict(vocab_size=vocab, feat_dim=feat_dim, d=self.d_model,
                      mhsa_heads=self.mhsa_heads, h3_heads=self.h3_heads, dropout=self.dropout,
                      ffn_expansion=self.ffn_expansion)
        if self.n_layers is not None:
            return make_ch4_config(self.n_layers, self.layers, causal=self.causal,
                                   conv_kernel=self.conv_kernel, **common)
        specs = [BlockSpec.from_token(t, self.conv_kernel, self.causal)
                 for t in self.layers.split(",")]
        return EncoderConfig(layers=specs, **common)

    def fit(self, X, y):
        X = check_sequences(X)
        y = check_label_sequences(y, len(X), self.vocab_size)
        vocab = self.vocab_size or max((max(l) for l in y if l), default=1)
        cfg = TrainConfig(model=self._encoder_config(X[0].shape[1], vocab), synth=None,
                          manifest="<in-memory>", epochs=self.epochs, batch_size=self.batch_size,
                          max_lr=self.max_lr, weight_decay=self.weight_decay,
                          warmup_frac=self.warmup_frac, seed=int(self.random_state),
                          val_fraction=self.val_fraction, augment=self.augment)
        corpus = [FeatureSequence(x, lab, f"u{i:05d}") for i, (x, lab) in enumerate(zip(X, y))]

        def report(e: EpochLog):
            if self.verbose:
                print(e.line(), flush=True)

        result = train(cfg, corpus=corpus, on_epoch=report)
        self.model_ = result.model
        self.stats_: CorpusStats = result.stats
        self.history_ = result.history
        self.checkpoint_: Checkpoint = result.checkpoint
        self.vocab_size_ = vocab
        self.n_features_in_ = X[0].shape[1]
        return self

    def decision_function(self, X) -> list[np.ndarray]:
        """Per-frame logits (T', V+1) for each input."""
        check_is_fitted(self, "model_")
        X = check_sequences(X, self.n_features_in_)
        self.model_.eval()
        out = []
        for x in X:
            x = (x - self.stats_.mean) / np.sqrt(self.stats_.var)
            logits, _ = self.model_(x[None])
            out.append(logits.data[0])
        return out

    def predict(self, X) -> list[list[int]]:
        return [ctc_greedy_decode(l) for l in self.decision_function(X)]

    def token_error_rate(self, X, y) -> float:
        check_is_fitted(self, "model_")
        X = check_sequences(X, self.n_features_in_)
        y = check_label_sequences(y, len(X))
        utts = [FeatureSequence(x, lab) for x, lab in zip(X, y)]
        return evaluate((self.model_, self.stats_), utts, 1).ter

    def score(self, X, y) -> float:
        """``1 - TER`` so that larger is better."""
        return 1.0 - self.token_error_rate(X, y)


__all__ = ["CTCRecognizer", "FeatureNormalizer", "SpecAugment", "check_label_sequences",
           "check_sequences", "NotFittedError"]
