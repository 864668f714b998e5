"""Dual style encoder: a log-mel branch and an MFCC branch, concatenated."""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .nn import BiLSTM, Conv1d, Linear, Module, MultiHeadAttention


def _check_frames(x, width: int, what: str):
    x = ag.as_tensor(x)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"{what}: expected a non-empty (frames, {width}) matrix, got {x.shape}")
    if x.shape[1] != width:
        raise ValueError(f"{what}: expected {width} channels, got {x.shape[1]}")
    return x


class MelStyleEncoder(Module):
    """Spectral MLP -> gated temporal conv (residual) -> self-attention -> mean pool -> projection."""

    def __init__(self, rng: np.random.Generator, n_mels: int, hidden: int, heads: int, kernel: int):
        self.n_mels = n_mels
        self.spectral_in = Linear(rng, n_mels, hidden)
        self.spectral_out = Linear(rng, hidden, hidden)
        self.temporal = Conv1d(rng, hidden, 2 * hidden, kernel)
        self.attention = MultiHeadAttention(rng, hidden, heads)
        self.project = Linear(rng, hidden, hidden)

    def __call__(self, mel):
        x = _check_frames(mel, self.n_mels, "mel style encoder")
        x = ag.mish(self.spectral_out(ag.mish(self.spectral_in(x))))
        width = x.shape[1]
        z = self.temporal(x)
        x = x + z[:, :width] * ag.sigmoid(z[:, width:])
        x = x + self.attention(x)
        return self.project(ag.mean(x, axis=0))


class MfccStyleEncoder(Module):
    """BiLSTM -> self-attention (residual) -> mean pool; no output projection."""

    def __init__(self, rng: np.random.Generator, n_mfcc: int, units: int, heads: int):
        self.n_mfcc = n_mfcc
        self.recurrent = BiLSTM(rng, n_mfcc, units)
        self.attention = MultiHeadAttention(rng, 2 * units, heads)

    def __call__(self, mfcc):
        x = _check_frames(mfcc, self.n_mfcc, "mfcc style encoder")
        x = self.recurrent(x)
        x = x + self.attention(x)
        return ag.mean(x, axis=0)


class DualStyleEncoder(Module):
    """Produces the style vector ``[mel part | mfcc part]``.

    With ``no_mfcc`` the MFCC branch is dropped and its half of the vector is
    a learned projection of the mel part, keeping the width unchanged.
    """

    def __init__(self, rng: np.random.Generator, cfg):
        self.no_mfcc = cfg.no_mfcc
        self.mel_encoder = MelStyleEncoder(rng, cfg.n_mels, cfg.style_hidden, cfg.style_heads, cfg.style_kernel)
        if cfg.no_mfcc:
            self.mel_to_mfcc = Linear(rng, cfg.style_hidden, cfg.style_hidden)
        else:
            self.mfcc_encoder = MfccStyleEncoder(rng, cfg.n_mfcc, cfg.lstm_units, cfg.style_heads)

    def __call__(self, mel, mfcc=None):
        mel_part = self.mel_encoder(mel)
        if self.no_mfcc:
            other = self.mel_to_mfcc(mel_part)
        else:
            if mfcc is None:
                raise ValueError("MFCC input required unless the encoder was built with no_mfcc")
            other = self.mfcc_encoder(mfcc)
        return ag.concat([mel_part, other], axis=0)


def encode_mel_style(mel, encoder: MelStyleEncoder) -> np.ndarray:
    with ag.no_grad():
        return encoder(mel).data


def encode_mfcc_style(mfcc, encoder: MfccStyleEncoder) -> np.ndarray:
    with ag.no_grad():
        return encoder(mfcc).data


def style_vector(mel, mfcc, encoder: DualStyleEncoder) -> np.ndarray:
    with ag.no_grad():
        return encoder(mel, mfcc).data
