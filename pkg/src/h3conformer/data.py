"""Synthetic speech-like corpora, normalisation, masking, concatenation and feature files.

Feature file layout (little-endian)::

    b"HPF1"  u32 T  u32 F  u32 label_count  f32[T*F] frames  u32[label_count] labels

A manifest is a text file with one feature-file path per line.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAGIC = b"HPF1"
_HEADER = struct.Struct("<4sIII")


class FeatureFileError(ValueError):
    pass


@dataclass
class FeatureSequence:
    frames: np.ndarray          # (T, F)
    labels: list[int]
    utt_id: str = ""
    session: int = 0

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 2 or len(self.frames) < 1:
            raise ValueError(f"frames must be a non-empty (T, F) matrix, got {self.frames.shape}")
        if not np.isfinite(self.frames).all():
            raise ValueError(f"non-finite frames in {self.utt_id!r}")
        self.labels = [int(t) for t in self.labels]

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def feat_dim(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class SyntheticTaskConfig:
    vocab_size: int = 8
    feat_dim: int = 80
    frames_per_token: tuple[int, int] = (8, 16)
    tokens_per_utt: tuple[int, int] = (3, 10)
    gap_frames: tuple[int, int] = (0, 2)
    edge_silence: tuple[int, int] = (4, 8)
    noise: float = 0.3
    session_bias: float = 0.1
    utts_per_session: int = 24
    template_seed: int = 0
    allow_repeats: bool = False

    def validate(self) -> None:
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be at least 2")
        if self.frames_per_token[0] < 2 or self.frames_per_token[1] < self.frames_per_token[0]:
            raise ValueError("frames_per_token must satisfy 2 <= min <= max")
        if self.tokens_per_utt[0] < 1 or self.tokens_per_utt[1] < self.tokens_per_utt[0]:
            raise ValueError("tokens_per_utt must satisfy 1 <= min <= max")
        for name in ("gap_frames", "edge_silence"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ValueError(f"{name} must satisfy 0 <= min <= max")
        if self.noise < 0 or self.session_bias < 0:
            raise ValueError("noise levels must be non-negative")
        if self.feat_dim < 1 or self.utts_per_session < 1:
            raise ValueError("feat_dim and utts_per_session must be positive")


def token_templates(cfg: SyntheticTaskConfig) -> np.ndarray:
    """One fixed pattern per token (row ``t-1`` for token ``t``), unit RMS per frame.

    Rows are orthonormalised when ``vocab_size <= feat_dim``.
    """
    rng = np.random.default_rng(cfg.template_seed)
    G = rng.standard_normal((cfg.feat_dim, cfg.vocab_size))
    if cfg.vocab_size <= cfg.feat_dim:
        Q, _ = np.linalg.qr(G)
        return Q.T * np.sqrt(cfg.feat_dim)
    return (G / np.linalg.norm(G, axis=0)).T * np.sqrt(cfg.feat_dim)


def synth_generate(cfg: SyntheticTaskConfig, seed: int, count: int) -> list[FeatureSequence]:
    """Deterministic corpus of ``count`` utterances grouped into sessions."""
    cfg.validate()
    if count < 0:
        raise ValueError("count must be non-negative")
    templates = token_templates(cfg)
    rng = np.random.default_rng(seed)
    utts = []
    bias = None
    for i in range(count):
        session, pos = divmod(i, cfg.utts_per_session)
        if pos == 0:
            bias = cfg.session_bias * rng.standard_normal(cfg.feat_dim)
        n_tok = int(rng.integers(cfg.tokens_per_utt[0], cfg.tokens_per_utt[1] + 1))
        labels: list[int] = []
        while len(labels) < n_tok:
            tok = int(rng.integers(1, cfg.vocab_size + 1))
            if not cfg.allow_repeats and labels and tok == labels[-1]:
                continue
            labels.append(tok)
        lead, tail = (int(rng.integers(cfg.edge_silence[0], cfg.edge_silence[1] + 1))
                      for _ in range(2))
        pieces = [np.zeros((lead, cfg.feat_dim))]
        for tok in labels:
            gap = int(rng.integers(cfg.gap_frames[0], cfg.gap_frames[1] + 1))
            if gap:
                pieces.append(np.zeros((gap, cfg.feat_dim)))
            dur = int(rng.integers(cfg.frames_per_token[0], cfg.frames_per_token[1] + 1))
            pieces.append(np.repeat(templates[tok - 1][None, :], dur, axis=0))
        pieces.append(np.zeros((tail, cfg.feat_dim)))
        frames = np.concatenate(pieces, axis=0)
        frames = frames + bias + cfg.noise * rng.standard_normal(frames.shape)
        utts.append(FeatureSequence(frames, labels, f"s{session:04d}-u{pos:03d}", session))
    return utts


def concat_longform(utts: Sequence[FeatureSequence], k: int, start: int = 0) -> FeatureSequence:
    """Frame-wise concatenation of ``k`` consecutive utterances starting at ``start``."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if start < 0 or start + k > len(utts):
        raise ValueError(f"need {k} utterances from index {start}, have {len(utts)}")
    group = list(utts[start:start + k])
    if len({u.feat_dim for u in group}) != 1:
        raise ValueError("utterances disagree on feature dimension")
    if k == 1:
        return group[0]
    frames = np.concatenate([u.frames for u in group], axis=0)
    labels = [t for u in group for t in u.labels]
    uid = f"{group[0].utt_id}+{k - 1}" if group[0].utt_id else ""
    return FeatureSequence(frames, labels, uid, group[0].session)


def longform_groups(utts: Sequence[FeatureSequence], k: int) -> list[FeatureSequence]:
    """Non-overlapping groups of ``k`` consecutive utterances; leftovers are dropped."""
    return [concat_longform(utts, k, s) for s in range(0, len(utts) - k + 1, k)]


@dataclass
class CorpusStats:
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.var = np.asarray(self.var, dtype=np.float64)
        if (self.var <= 0).any():
            raise ValueError("feature variance must be positive in every dimension")


def compute_stats(utts: Iterable[FeatureSequence]) -> CorpusStats:
    total = None
    sq = None
    n = 0
    for u in utts:
        x = u.frames.astype(np.float64)
        total = x.sum(axis=0) if total is None else total + x.sum(axis=0)
        sq = (x * x).sum(axis=0) if sq is None else sq + (x * x).sum(axis=0)
        n += len(x)
    if n == 0:
        raise ValueError("cannot compute statistics of an empty corpus")
    mean = total / n
    var = sq / n - mean * mean
    return CorpusStats(mean, var)


def normalize(utt: FeatureSequence, stats: CorpusStats) -> FeatureSequence:
    frames = (utt.frames - stats.mean) / np.sqrt(stats.var)
    return FeatureSequence(frames, utt.labels, utt.utt_id, utt.session)


def denormalize(utt: FeatureSequence, stats: CorpusStats) -> FeatureSequence:
    frames = utt.frames * np.sqrt(stats.var) + stats.mean
    return FeatureSequence(frames, utt.labels, utt.utt_id, utt.session)


def _spans(spec, limit: int, max_width: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    if isinstance(spec, (int, np.integer)):
        spans = []
        for _ in range(int(spec)):
            w = int(rng.integers(0, max(0, min(max_width, limit)) + 1))
            s = int(rng.integers(0, limit - w + 1))
            spans.append((s, w))
        return spans
    spans = [(int(s), int(w)) for s, w in spec]
    for s, w in spans:
        if s < 0 or w < 0 or s + w > limit:
            raise ValueError(f"mask span ({s}, {w}) outside [0, {limit})")
    return spans


def spec_mask(utt: FeatureSequence, time_masks=2, freq_masks=2,
              rng: np.random.Generator | None = None, max_time_frac: float = 0.1,
              max_freq_bands: int = 8) -> FeatureSequence:
    """Replace time spans and feature bands with the utterance's mean frame.

    ``time_masks``/``freq_masks`` are either a count (spans drawn from ``rng``)
    or explicit ``(start, width)`` pairs.
    """
    rng = rng if rng is not None else np.random.default_rng()
    T, F = utt.frames.shape
    frames = utt.frames.astype(np.float64, copy=True)
    mean_row = utt.frames.mean(axis=0)
    for s, w in _spans(time_masks, T, int(max_time_frac * T), rng):
        frames[s:s + w] = mean_row
    for s, w in _spans(freq_masks, F, max_freq_bands, rng):
        frames[:, s:s + w] = mean_row[s:s + w]
    return FeatureSequence(frames, utt.labels, utt.utt_id, utt.session)


def split_train_val(utts: Sequence[FeatureSequence], fraction: float, seed: int
                    ) -> tuple[list[FeatureSequence], list[FeatureSequence]]:
    """Seeded random hold-out of ``fraction`` of the utterances (at least one)."""
    if not 0 < fraction < 1:
        raise ValueError("validation fraction must be in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(utts))
    n_val = max(1, int(round(fraction * len(utts))))
    val_idx = set(order[:n_val].tolist())
    train = [u for i, u in enumerate(utts) if i not in val_idx]
    val = [u for i, u in enumerate(utts) if i in val_idx]
    return train, val


# ------------------------------------------------------------------ file I/O

def save_features(path, utt: FeatureSequence) -> None:
    T, F = utt.frames.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, T, F, len(utt.labels)))
        fh.write(np.ascontiguousarray(utt.frames, dtype="<f4").tobytes())
        fh.write(np.asarray(utt.labels, dtype="<u4").tobytes())


def load_features(path) -> FeatureSequence:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise FeatureFileError(f"{path}: truncated header")
    magic, T, F, n_lab = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        if magic == MAGIC[::-1]:
            raise FeatureFileError(f"{path}: foreign byte order")
        raise FeatureFileError(f"{path}: bad magic {magic!r}")
    need = _HEADER.size + 4 * T * F + 4 * n_lab
    if len(blob) != need:
        raise FeatureFileError(f"{path}: expected {need} bytes, found {len(blob)}")
    off = _HEADER.size
    frames = np.frombuffer(blob, dtype="<f4", count=T * F, offset=off).reshape(T, F)
    labels = np.frombuffer(blob, dtype="<u4", count=n_lab, offset=off + 4 * T * F)
    try:
        return FeatureSequence(frames.astype(np.float32), labels.tolist(), path.stem)
    except ValueError as exc:
        raise FeatureFileError(f"{path}: {exc}") from exc


def write_corpus(utts: Sequence[FeatureSequence], out_dir) -> Path:
    """Write one feature file per utterance plus ``manifest.txt``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for u in utts:
        p = out / f"{u.utt_id}.hpf"
        save_features(p, u)
        paths.append(p)
    manifest = out / "manifest.txt"
    manifest.write_text("".join(f"{p.resolve()}\n" for p in paths))
    return manifest


def read_manifest(path) -> list[FeatureSequence]:
    base = Path(path).parent
    utts = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        p = Path(line)
        utts.append(load_features(p if p.is_absolute() else base / p))
    for u in utts:
        sess, _, _ = u.utt_id.partition("-")
        if sess.startswith("s") and sess[1:].isdigit():
            u.session = int(sess[1:])
    return utts
