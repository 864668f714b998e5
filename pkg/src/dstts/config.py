"""Run configuration: every hyperparameter, ablation flag and path in one place.

Precedence when resolving a run: dataclass defaults < ``--config`` JSON file <
explicit command-line flags.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # model widths
    hidden: int = 256
    style_hidden: int = 128
    style_heads: int = 2
    style_kernel: int = 5
    lstm_units: int = 64
    encoder_layers: int = 4
    decoder_layers: int = 4
    heads: int = 2
    conv_filter: int = 1024
    conv_kernels: list = field(default_factory=lambda: [9, 1])
    dropout: float = 0.1
    predictor_filter: int = 256
    predictor_kernel: int = 3
    predictor_dropout: float = 0.5
    n_mels: int = 80
    n_mfcc: int = 20
    vocab_size: int = 0
    # dynamic variance adaptor
    dva_threshold: int = 85
    # ablations
    no_mfcc: bool = False
    no_dva_sp: bool = False
    no_dva_lp: bool = False
    # optimisation
    lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-9
    batch_size: int = 4
    steps: int = 1000
    ckpt_every: int = 500
    seed: int = 0
    dtype: str = "float32"
    # paths
    manifest: str = ""
    cache_dir: str = ""
    stats: str = ""
    vocab: str = ""
    out_dir: str = ""

    def __post_init__(self):
        self.validate()

    @property
    def style_dim(self) -> int:
        return 2 * self.style_hidden

    def validate(self) -> None:
        if self.dva_threshold < 1:
            raise ConfigError("dva_threshold must be >= 1")
        if self.no_dva_sp and self.no_dva_lp:
            raise ConfigError("cannot remove both the short and the long predictors")
        if self.hidden % self.heads or self.style_hidden % self.style_heads:
            raise ConfigError("widths must be divisible by the number of attention heads")
        if self.lstm_units * 2 != self.style_hidden:
            raise ConfigError("lstm_units must be half of style_hidden (bidirectional concat)")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"unsupported dtype {self.dtype!r}")
        if any(k % 2 == 0 for k in self.conv_kernels) or self.predictor_kernel % 2 == 0:
            raise ConfigError("convolution kernels must be odd")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    # parameters that must agree between a checkpoint and a resumed run
    ARCH_KEYS = (
        "hidden", "style_hidden", "style_heads", "style_kernel", "lstm_units", "encoder_layers",
        "decoder_layers", "heads", "conv_filter", "conv_kernels", "predictor_filter",
        "predictor_kernel", "n_mels", "n_mfcc", "vocab_size", "no_mfcc",
    )


def tiny_config(**overrides) -> RunConfig:
    """Small float64 configuration used for gradient checks and fast tests."""
    base = dict(
        hidden=16, style_hidden=8, style_heads=2, style_kernel=3, lstm_units=4,
        encoder_layers=2, decoder_layers=2, heads=2, conv_filter=32, conv_kernels=[3, 1],
        predictor_filter=16, n_mels=80, n_mfcc=20, vocab_size=5, dropout=0.0,
        predictor_dropout=0.0, dtype="float64",
    )
    base.update(overrides)
    return RunConfig(**base)
