"""Conformer-family speech encoders with H3 state-space mixers, trained with CTC.

Everything runs on a small numpy substrate (tensors, tape autodiff, FFT) in
``h3conformer.numerics``.
"""

from .attention import AttentionMode, MHSAParams, linear_attention_forward, mhsa_forward
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig, load_config
from .conformer import (BlockSpec, Encoder, EncoderConfig, Mixer, ParallelSplit,
                        encoder_forward, ffn_weight_group_stats, make_ch4_config)
from .ctc import ctc_greedy_decode, ctc_loss, token_error_rate
from .data import (FeatureSequence, SyntheticTaskConfig, concat_longform, load_features,
                   normalize, save_features, spec_mask, synth_generate)
from .estimator import CTCRecognizer, FeatureNormalizer, SpecAugment
from .h3 import H3Params, h3_forward, h3_step
from .runtime import BenchRecord, bench_rtf, evaluate, train
from .ssm import DiagSSM, ShiftSSM, forward_conv, scan_recurrent, step
from .streaming import EncoderStream, stream_logits

__version__ = "0.1.0"

__all__ = [
    "AttentionMode", "BenchRecord", "BlockSpec", "CTCRecognizer", "Checkpoint", "DiagSSM",
    "Encoder", "EncoderConfig", "EncoderStream", "FeatureNormalizer", "FeatureSequence",
    "H3Params", "MHSAParams", "Mixer", "ParallelSplit", "ShiftSSM", "SpecAugment",
    "SyntheticTaskConfig", "TrainConfig", "bench_rtf", "concat_longform", "ctc_greedy_decode",
    "ctc_loss", "encoder_forward", "evaluate", "ffn_weight_group_stats", "forward_conv",
    "h3_forward", "h3_step", "linear_attention_forward", "load_checkpoint", "load_config",
    "load_features", "make_ch4_config", "mhsa_forward", "normalize", "save_checkpoint",
    "save_features", "scan_recurrent", "spec_mask", "step", "stream_logits",
    "synth_generate", "token_error_rate", "train",
]
