"""Command-line entry point: ``h3conformer {synth,train,eval,bench,inspect-ffn}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint, restore_model, save_checkpoint
from .config import ConfigError, TrainConfig, load_config
from .conformer import ffn_weight_group_stats
from .ctc import CTCError
from .data import FeatureFileError, read_manifest, synth_generate, write_corpus
from .runtime import TrainingDiverged, bench_rtf, evaluate, train, write_bench_csv

# flag name -> config key it overrides
_TRAIN_FLAGS = {"epochs": "train.epochs", "seed": "train.seed", "max_lr": "train.max_lr",
                "batch_size": "train.batch_size", "weight_decay": "train.weight_decay",
                "manifest": "data.manifest", "layers": "model.layers"}
_SYNTH_FLAGS = {"seed": "data.seed", "count": "data.count"}


def _overrides(args, mapping: dict[str, str]) -> list[str]:
    out = list(args.set or [])
    for flag, key in mapping.items():
        value = getattr(args, flag, None)
        if value is not None:
            out.append(f"{key}={value}")
    return out


def _cmd_synth(args) -> int:
    cfg = load_config(args.config, _overrides(args, _SYNTH_FLAGS))
    if cfg.synth is None:
        raise ConfigError("config has no synthetic corpus section")
    utts = synth_generate(cfg.synth, cfg.synth_seed, cfg.synth_count)
    manifest = write_corpus(utts, args.out_dir)
    print(f"wrote {len(utts)} utterances; manifest {manifest}")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config, _overrides(args, _TRAIN_FLAGS))
    resume = load_checkpoint(args.resume, expected=cfg) if args.resume else None
    result = train(cfg, resume=resume, on_epoch=lambda e: print(e.line(), flush=True))
    save_checkpoint(args.out, result.checkpoint)
    if args.log_csv:
        with open(args.log_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss", "val_ter", "lr", "seconds"])
            for e in result.history:
                w.writerow([e.epoch, e.train_loss, e.val_loss, e.val_ter, e.lr, e.seconds])
    print(f"saved {args.out}")
    return 0


def _cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    result = evaluate(ckpt, read_manifest(args.manifest), args.concat_k)
    if args.csv:
        result.write_csv(args.csv)
    print(f"k={args.concat_k} groups={len(result.rows)} ter={result.ter:.4f}")
    return 0


def _bench_corpus(ckpt, args, need: int):
    if args.manifest:
        return read_manifest(args.manifest)
    cfg = ckpt.train_config()
    if cfg.synth is None:
        raise ConfigError("bench needs --manifest for a checkpoint trained on files")
    return synth_generate(cfg.synth, cfg.synth_seed + 1000, need)


def _cmd_bench(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    ks = [int(k) for k in args.concat_list.split(",")]
    utts = _bench_corpus(ckpt, args, max(ks))
    records = bench_rtf(ckpt, utts, ks, args.repeats, args.chunk)
    if args.csv:
        write_bench_csv(records, args.csv)
    for r in records:
        print(f"k={r.k:3d} frames={r.frames:6d} seconds={r.seconds:.4f} rtf={r.rtf:.4f}")
    return 0


def _cmd_inspect_ffn(args) -> int:
    model, _ = restore_model(load_checkpoint(args.ckpt))
    rows = ffn_weight_group_stats(model)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["layer", "mhsa_mean", "h3_mean"])
            for r in rows:
                w.writerow([r.layer, f"{r.mhsa_mean:.6f}", f"{r.h3_mean:.6f}"])
    for r in rows:
        print(f"layer {r.layer:2d}  mhsa {r.mhsa_mean:.4f}  h3 {r.h3_mean:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="h3conformer", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_set(sp):
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override any config key (repeatable)")
        return sp

    s = with_set(sub.add_parser("synth", help="write a synthetic feature corpus"))
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--count", type=int)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=_cmd_synth)

    t = with_set(sub.add_parser("train", help="train an encoder with CTC"))
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--resume", help="continue from this checkpoint")
    t.add_argument("--log-csv", help="per-epoch metrics CSV")
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--max-lr", dest="max_lr", type=float)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--weight-decay", dest="weight_decay", type=float)
    t.add_argument("--manifest")
    t.add_argument("--layers")
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("eval", help="token error rate on a manifest")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--concat-k", dest="concat_k", type=int, default=1)
    e.add_argument("--csv")
    e.set_defaults(func=_cmd_eval)

    b = sub.add_parser("bench", help="streaming real-time factor versus input length")
    b.add_argument("--ckpt", required=True)
    b.add_argument("--concat-list", dest="concat_list", default="1,2,4,8,16,24")
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--chunk", type=int, default=16, help="subsampled positions per step")
    b.add_argument("--manifest")
    b.add_argument("--csv")
    b.set_defaults(func=_cmd_bench)

    f = sub.add_parser("inspect-ffn", help="FFN weight magnitudes by mixer group")
    f.add_argument("--ckpt", required=True)
    f.add_argument("--csv")
    f.set_defaults(func=_cmd_inspect_ffn)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, FeatureFileError, CTCError, TrainingDiverged,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
