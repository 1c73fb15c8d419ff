"""Training configuration and its INI text form.

Example::

    [model]
    layers = h3,h3          ; or: num_layers = 12 and h3_placement = top_10
    causal = true
    d = 32

    [train]
    epochs = 20
    max_lr = 1e-3

    [data]
    count = 500             ; synthetic corpus (omit when manifest is set)
    manifest = corpus/manifest.txt
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from typing import Iterable

from .conformer import BlockSpec, EncoderConfig, make_ch4_config
from .data import SyntheticTaskConfig


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    model: EncoderConfig
    synth: SyntheticTaskConfig | None = field(default_factory=SyntheticTaskConfig)
    manifest: str | None = None
    synth_count: int = 500
    synth_seed: int = 0
    epochs: int = 20
    batch_size: int = 16
    max_lr: float = 1e-3
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    warmup_frac: float = 0.05
    grad_clip: float | None = 5.0
    seed: int = 0
    val_fraction: float = 0.05
    augment: bool = True
    time_masks: int = 2
    max_time_frac: float = 0.1
    freq_masks: int = 2
    max_freq_bands: int = 8

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if self.max_lr <= 0:
            raise ConfigError("max_lr must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if not 0 < self.val_fraction < 1:
            raise ConfigError("val_fraction must be in (0, 1)")
        if self.synth is None and not self.manifest:
            raise ConfigError("either a synthetic corpus or a manifest is required")
        if self.synth is not None:
            self.synth.validate()
            if self.synth.feat_dim != self.model.feat_dim:
                raise ConfigError("model.feat_dim must equal the synthetic feature dimension")
            if self.synth.vocab_size > self.model.vocab_size:
                raise ConfigError("model vocabulary is smaller than the synthetic vocabulary")

    # ------------------------------------------------------------- text form

    def to_ini(self) -> str:
        m = self.model
        lines = ["[model]",
                 f"layers = {m.layer_string()}",
                 f"causal = {str(m.causal).lower()}",
                 f"conv_kernel = {m.layers[0].conv_kernel}"]
        for name in _MODEL_KEYS:
            lines.append(f"{name} = {_fmt(getattr(m, name))}")
        lines += ["", "[train]"]
        for name in _TRAIN_KEYS:
            lines.append(f"{name} = {_fmt(getattr(self, name))}")
        lines += ["", "[data]"]
        if self.manifest:
            lines.append(f"manifest = {self.manifest}")
        lines += [f"count = {self.synth_count}", f"seed = {self.synth_seed}"]
        if self.synth is not None:
            for f in fields(SyntheticTaskConfig):
                lines.append(f"{f.name} = {_fmt(getattr(self.synth, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_ini(cls, text: str, overrides: Iterable[str] = ()) -> "TrainConfig":
        cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
        apply_overrides(cp, overrides)
        return _from_parser(cp)

    def model_section(self) -> str:
        return self.to_ini().split("[train]")[0]


_MODEL_KEYS = ("vocab_size", "feat_dim", "d", "mhsa_heads", "h3_heads", "dropout",
               "ffn_expansion", "shift_state", "diag_state", "shared_diag", "positional")
_TRAIN_KEYS = ("epochs", "batch_size", "max_lr", "weight_decay", "beta1", "beta2", "eps",
               "warmup_frac", "grad_clip", "seed", "val_fraction", "augment", "time_masks",
               "max_time_frac", "freq_masks", "max_freq_bands")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if v is None:
        return "none"
    return repr(v) if isinstance(v, float) else str(v)


def apply_overrides(cp: configparser.ConfigParser, overrides: Iterable[str]) -> None:
    """Apply ``section.key=value`` strings on top of parsed config text."""
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, name.strip(), value.strip())


def _convert(raw: str, like):
    raw = raw.strip()
    try:
        if isinstance(like, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float) or like is None:
            return None if raw.lower() == "none" else float(raw)
        if isinstance(like, tuple):
            return tuple(int(x) for x in raw.replace("-", ",").split(","))
    except ValueError as exc:
        raise ConfigError(f"cannot parse {raw!r}") from exc
    return raw


def _take(section, defaults: dict, keys: Iterable[str]) -> dict:
    out = {}
    for k in keys:
        if section is not None and k in section:
            out[k] = _convert(section[k], defaults[k])
    return out


def _from_parser(cp: configparser.ConfigParser) -> TrainConfig:
    known = {"model", "train", "data", "bench"}
    unknown = set(cp.sections()) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    model = cp["model"] if cp.has_section("model") else None
    train = cp["train"] if cp.has_section("train") else None
    data = cp["data"] if cp.has_section("data") else None

    synth_defaults = {f.name: f.default for f in fields(SyntheticTaskConfig)}
    synth = None
    manifest = data.get("manifest") if data is not None else None
    if not manifest or (data is not None and "vocab_size" in data):
        synth = SyntheticTaskConfig(**_take(data, synth_defaults, synth_defaults))

    enc_defaults = {f.name: f.default for f in fields(EncoderConfig) if f.name != "layers"}
    enc_defaults["vocab_size"] = synth.vocab_size if synth else 0
    enc_defaults["feat_dim"] = synth.feat_dim if synth else 80
    enc_defaults["d"] = 256
    enc_kwargs = _take(model, enc_defaults, _MODEL_KEYS)
    enc_kwargs.setdefault("vocab_size", enc_defaults["vocab_size"])
    enc_kwargs.setdefault("feat_dim", enc_defaults["feat_dim"])
    causal = _convert(model.get("causal", "false"), False) if model is not None else False
    kernel = _convert(model.get("conv_kernel", "15"), 1) if model is not None else 15
    try:
        if model is not None and "layers" in model:
            specs = [BlockSpec.from_token(t, kernel, causal) for t in model["layers"].split(",")]
            enc = EncoderConfig(layers=specs, **enc_kwargs)
        elif model is not None and "num_layers" in model:
            enc = make_ch4_config(int(model["num_layers"]), model.get("h3_placement", "top_0"),
                                  causal=causal, conv_kernel=kernel, **enc_kwargs)
        else:
            raise ConfigError("[model] needs either layers or num_layers")
    except (ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid model config: {exc}") from exc

    defaults = {f.name: f.default for f in fields(TrainConfig) if f.name in _TRAIN_KEYS}
    kwargs = _take(train, defaults, _TRAIN_KEYS)
    if data is not None:
        kwargs["synth_count"] = _convert(data.get("count", "500"), 1)
        kwargs["synth_seed"] = _convert(data.get("seed", "0"), 1)
    try:
        return TrainConfig(model=enc, synth=synth, manifest=manifest or None, **kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_config(path, overrides: Iterable[str] = ()) -> TrainConfig:
    with open(path, encoding="utf-8") as fh:
        return TrainConfig.from_ini(fh.read(), overrides)


def with_overrides(cfg: TrainConfig, **changes) -> TrainConfig:
    return replace(cfg, **changes)
