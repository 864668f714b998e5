"""Full acoustic model: style encoder, phoneme encoder, variance adaptor, decoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .acoustic import MelDecoder, PhonemeEncoder
from .autograd import Tensor
from .config import RunConfig
from .nn import Module
from .style import DualStyleEncoder
from .variance import AdaptorOutput, VarianceAdaptor


@dataclass
class Utterance:
    """One training example; pitch and energy are per-phoneme and already standardized."""

    ids: np.ndarray
    mel: np.ndarray
    mfcc: np.ndarray
    durations: np.ndarray
    pitch: np.ndarray
    energy: np.ndarray
    id: str = ""

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.durations = np.asarray(self.durations, dtype=np.int64)
        n = self.ids.shape[0]
        for name in ("durations", "pitch", "energy"):
            if np.asarray(getattr(self, name)).shape != (n,):
                raise ValueError(f"{self.id}: {name} must have one entry per phoneme")
        if int(self.durations.sum()) != self.mel.shape[0]:
            raise ValueError(f"{self.id}: durations sum {self.durations.sum()} != {self.mel.shape[0]} frames")


@dataclass
class ModelOutput:
    mel: Tensor
    style: Tensor
    adaptor: AdaptorOutput


class DSTTS(Module):
    def __init__(self, cfg: RunConfig, rng: np.random.Generator | None = None):
        if rng is None:
            rng = np.random.default_rng(cfg.seed)
        self.cfg = cfg
        self.style_encoder = DualStyleEncoder(rng, cfg)
        self.encoder = PhonemeEncoder(rng, cfg)
        self.adaptor = VarianceAdaptor(rng, cfg)
        self.decoder = MelDecoder(rng, cfg)
        self.to(np.dtype(cfg.dtype))

    @property
    def dtype(self):
        return np.dtype(self.cfg.dtype)

    def _cast(self, x) -> Tensor:
        if isinstance(x, Tensor):
            return x
        return Tensor(np.asarray(x, dtype=self.dtype))

    def style(self, mel, mfcc=None) -> Tensor:
        return self.style_encoder(self._cast(mel), None if mfcc is None else self._cast(mfcc))

    def __call__(self, utt: Utterance, teacher_forced: bool = True, style: Tensor | None = None,
                 threshold: int | None = None) -> ModelOutput:
        if style is None:
            style = self.style(utt.mel, utt.mfcc)
        hidden = self.encoder(utt.ids, style)
        adapted = self.adaptor(hidden, utt if teacher_forced else None, threshold=threshold)
        mel = self.decoder(adapted.frames, style)
        return ModelOutput(mel, style, adapted)

    def synthesize(self, ids, ref_mel, ref_mfcc, threshold: int | None = None) -> tuple[np.ndarray, AdaptorOutput]:
        """Inference: predicted durations drive length regulation."""
        with ag.no_grad():
            style = self.style(ref_mel, ref_mfcc)
            hidden = self.encoder(np.asarray(ids, dtype=np.int64), style)
            adapted = self.adaptor(hidden, None, threshold=threshold)
            mel = self.decoder(adapted.frames, style)
        return mel.data, adapted

    def embed(self, mel, mfcc) -> np.ndarray:
        with ag.no_grad():
            return self.style(mel, mfcc).data.astype(np.float64)
