"""Training loop, evaluation and the streaming real-time-factor benchmark."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .checkpoint import Checkpoint, load_into, model_tensors, restore_model
from .config import TrainConfig
from .conformer import Encoder
from .ctc import ctc_greedy_decode, ctc_loss, edit_distance, min_frames
from .data import (CorpusStats, FeatureSequence, compute_stats, concat_longform, normalize,
                   read_manifest, spec_mask, split_train_val, synth_generate)
from .numerics import GradTape, NonFiniteError
from .optim import AdamW, cosine_lr
from .streaming import stream_logits

log = logging.getLogger("h3conformer")

FRAME_SHIFT = 0.01


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    val_ter: float
    lr: float
    seconds: float

    def line(self) -> str:
        return (f"epoch {self.epoch:3d}  train_loss {self.train_loss:.4f}  "
                f"val_loss {self.val_loss:.4f}  val_ter {self.val_ter:.4f}  "
                f"lr {self.lr:.2e}  {self.seconds:.1f}s")


@dataclass
class TrainResult:
    model: Encoder
    stats: CorpusStats
    history: list[EpochLog]
    checkpoint: Checkpoint
    train_set: list[FeatureSequence] = field(repr=False, default_factory=list)
    val_set: list[FeatureSequence] = field(repr=False, default_factory=list)


# ------------------------------------------------------------------ batching

def alignable(utt: FeatureSequence) -> bool:
    """True when the ×4-subsampled utterance is long enough for its labels."""
    return min_frames(utt.labels) <= int(Encoder.output_lengths(utt.num_frames))


def collate(utts: Sequence[FeatureSequence]) -> tuple[np.ndarray, np.ndarray, list[list[int]]]:
    """Zero-pad to the longest utterance: features (B, T, F), lengths, labels."""
    lengths = np.array([u.num_frames for u in utts])
    feats = np.zeros((len(utts), lengths.max(), utts[0].feat_dim))
    for i, u in enumerate(utts):
        feats[i, :len(u.frames)] = u.frames
    return feats, lengths, [u.labels for u in utts]


def make_batches(utts: Sequence[FeatureSequence], batch_size: int,
                 rng: np.random.Generator) -> list[list[int]]:
    """Length-bucketed batches in shuffled order (similar lengths share a batch)."""
    lengths = np.array([u.num_frames for u in utts], dtype=np.float64)
    order = np.argsort(lengths + rng.uniform(0.0, 8.0, len(utts)), kind="stable")
    batches = [order[i:i + batch_size].tolist() for i in range(0, len(order), batch_size)]
    return [batches[i] for i in rng.permutation(len(batches))]


def load_corpus(cfg: TrainConfig) -> list[FeatureSequence]:
    if cfg.manifest:
        return read_manifest(cfg.manifest)
    return synth_generate(cfg.synth, cfg.synth_seed, cfg.synth_count)


def prepare_splits(cfg: TrainConfig, corpus: Sequence[FeatureSequence] | None = None):
    """Split, then fit normalisation on the training part only."""
    corpus = load_corpus(cfg) if corpus is None else list(corpus)
    kept = [u for u in corpus if alignable(u)]
    if len(kept) < len(corpus):
        log.warning("dropped %d utterances too short for their labels", len(corpus) - len(kept))
    train, val = split_train_val(kept, cfg.val_fraction, cfg.seed)
    stats = compute_stats(train)
    return [normalize(u, stats) for u in train], [normalize(u, stats) for u in val], stats


# ------------------------------------------------------------------ training

def _loss_and_ter(model: Encoder, utts: Sequence[FeatureSequence], batch_size: int):
    was = model.training
    model.eval()
    total_loss = 0.0
    edits = refs = 0
    try:
        for i in range(0, len(utts), batch_size):
            chunk = sorted(utts[i:i + batch_size], key=lambda u: u.num_frames)
            feats, lengths, labels = collate(chunk)
            logits, out_len = model(feats, lengths)
            total_loss += float(ctc_loss(logits, labels, out_len, "sum").item())
            for b, lab in enumerate(labels):
                hyp = ctc_greedy_decode(logits.data[b], int(out_len[b]))
                edits += edit_distance(hyp, lab)
                refs += len(lab)
    finally:
        model.train(was)
    return total_loss / max(1, len(utts)), edits / max(1, refs)


def fit_encoder(model: Encoder, train: Sequence[FeatureSequence], val: Sequence[FeatureSequence],
                cfg: TrainConfig, rng: np.random.Generator, *, start_epoch: int = 0,
                optimizer: AdamW | None = None,
                on_epoch: Callable[[EpochLog], None] | None = None) -> tuple[list[EpochLog], AdamW]:
    """CTC training with AdamW; the LR is a pure function of the global step."""
    if not train:
        raise ValueError("empty training set")
    opt = optimizer or AdamW(model.parameters(), (cfg.beta1, cfg.beta2), cfg.eps,
                             cfg.weight_decay, cfg.grad_clip)
    steps_per_epoch = math.ceil(len(train) / cfg.batch_size)
    total = steps_per_epoch * cfg.epochs
    history = []
    for epoch in range(start_epoch, cfg.epochs):
        t0 = time.monotonic()
        model.train()
        losses = []
        lr = cfg.max_lr
        for b, idx in enumerate(make_batches(train, cfg.batch_size, rng)):
            step = epoch * steps_per_epoch + b
            lr = cosine_lr(step, total, cfg.max_lr, cfg.warmup_frac)
            batch = [train[i] for i in idx]
            if cfg.augment:
                batch = [spec_mask(u, cfg.time_masks, cfg.freq_masks, rng, cfg.max_time_frac,
                                   cfg.max_freq_bands) for u in batch]
            feats, lengths, labels = collate(batch)
            try:
                with GradTape() as tape:
                    logits, out_len = model(feats, lengths, rng)
                    loss = ctc_loss(logits, labels, out_len, "mean")
                tape.backward(loss)
                opt.step(lr)
            except (NonFiniteError, FloatingPointError) as exc:
                raise TrainingDiverged(f"non-finite value at epoch {epoch + 1}, step {step}: "
                                       f"{exc}") from exc
            finally:
                opt.zero_grad()
            losses.append(loss.item())
        val_loss, val_ter = _loss_and_ter(model, val, cfg.batch_size) if val else (math.nan,) * 2
        entry = EpochLog(epoch + 1, float(np.mean(losses)), val_loss, val_ter, lr,
                         time.monotonic() - t0)
        history.append(entry)
        (on_epoch or (lambda e: log.info(e.line())))(entry)
    return history, opt


def _snapshot(cfg: TrainConfig, model: Encoder, stats: CorpusStats, opt: AdamW, epoch: int,
              rng: np.random.Generator) -> Checkpoint:
    tensors = model_tensors(model, stats)
    tensors.update(opt.state_tensors())
    return Checkpoint(cfg.to_ini(), tensors, epoch, opt.t, rng.bit_generator.state)


def train(cfg: TrainConfig, resume: Checkpoint | None = None,
          corpus: Sequence[FeatureSequence] | None = None,
          on_epoch: Callable[[EpochLog], None] | None = None) -> TrainResult:
    """Train from scratch or continue from ``resume``; returns the final checkpoint."""
    cfg.validate()
    train_set, val_set, stats = prepare_splits(cfg, corpus)
    model = Encoder(cfg.model, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    opt = AdamW(model.parameters(), (cfg.beta1, cfg.beta2), cfg.eps, cfg.weight_decay,
                cfg.grad_clip)
    start = 0
    if resume is not None:
        load_into(model, resume.tensors)
        opt.load_state(resume.tensors, resume.step)
        rng.bit_generator.state = resume.rng_state
        start = resume.epoch
    history, opt = fit_encoder(model, train_set, val_set, cfg, rng, start_epoch=start,
                               optimizer=opt, on_epoch=on_epoch)
    model.eval()
    ckpt = _snapshot(cfg, model, stats, opt, max(start, cfg.epochs), rng)
    return TrainResult(model, stats, history, ckpt, train_set, val_set)


# ---------------------------------------------------------------- evaluation

@dataclass
class UtteranceResult:
    utterance_id: str
    k: int
    ter: float
    hyp_len: int
    ref_len: int
    edits: int


@dataclass
class EvalResult:
    ter: float
    rows: list[UtteranceResult]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["utterance_id", "k", "ter", "hyp_len", "ref_len"])
            for r in self.rows:
                w.writerow([r.utterance_id, r.k, f"{r.ter:.6f}", r.hyp_len, r.ref_len])


def _as_model(source) -> tuple[Encoder, CorpusStats | None]:
    if isinstance(source, Checkpoint):
        return restore_model(source)
    if isinstance(source, tuple):
        return source
    return source, None


def evaluate(source, utts: Sequence[FeatureSequence], concat_k: int = 1,
             normalized: bool = False) -> EvalResult:
    """Greedy-decode groups of ``concat_k`` consecutive utterances and score token errors.

    ``source`` is a :class:`Checkpoint` or ``(model, stats)``.  Raw features are
    normalised with the stored statistics unless ``normalized`` is set.
    """
    model, stats = _as_model(source)
    if concat_k < 1:
        raise ValueError("concat_k must be at least 1")
    groups = [concat_longform(utts, concat_k, s) for s in range(0, len(utts) - concat_k + 1,
                                                                 concat_k)]
    if not groups:
        raise ValueError(f"need at least {concat_k} utterances")
    if stats is not None and not normalized:
        groups = [normalize(g, stats) for g in groups]
    was = model.training
    model.eval()
    rows = []
    try:
        for g in groups:
            logits, _ = model(g.frames[None].astype(np.float64))
            hyp = ctc_greedy_decode(logits.data[0])
            e = edit_distance(hyp, g.labels)
            rows.append(UtteranceResult(g.utt_id, concat_k, e / max(1, len(g.labels)), len(hyp),
                                        len(g.labels), e))
    finally:
        model.train(was)
    ter = sum(r.edits for r in rows) / max(1, sum(r.ref_len for r in rows))
    return EvalResult(ter, rows)


# ----------------------------------------------------------------- benchmark

@dataclass
class BenchRecord:
    k: int
    frames: int
    seconds: float

    @property
    def rtf(self) -> float:
        return self.seconds / (self.frames * FRAME_SHIFT)


def write_bench_csv(records: Sequence[BenchRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "frames", "seconds", "rtf"])
        for r in records:
            w.writerow([r.k, r.frames, f"{r.seconds:.6f}", f"{r.rtf:.6f}"])


def bench_rtf(source, utts: Sequence[FeatureSequence], concat_counts: Sequence[int] = (1, 2, 4, 8, 16, 24),
              repeats: int = 5, chunk: int = 16,
              clock: Callable[[], float] = time.perf_counter) -> list[BenchRecord]:
    """Streaming wall time for the first ``k`` utterances concatenated, per ``k``.

    Each measurement is preceded by one discarded warm-up run and averaged over
    ``repeats`` runs; BLAS is pinned to one thread.
    """
    model, stats = _as_model(source)
    if not model.cfg.causal:
        raise ValueError("the streaming benchmark requires a causal model")
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    model.eval()
    records = []
    with threadpool_limits(limits=1):
        for k in concat_counts:
            x = concat_longform(utts, k)
            if stats is not None:
                x = normalize(x, stats)
            frames = x.frames.astype(np.float64)
            times = []
            for r in range(repeats + 1):
                t0 = clock()
                stream_logits(model, frames, chunk)
                if r:
                    times.append(clock() - t0)
            records.append(BenchRecord(k, x.num_frames, float(np.mean(times))))
    return records


def rtf_ratio(records: Sequence[BenchRecord], hi: int = 24, lo: int = 4) -> float:
    by_k = {r.k: r.rtf for r in records}
    return by_k[hi] / by_k[lo]
