"""Phoneme encoder and mel decoder built from SGF-conditioned FFT blocks."""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .nn import Conv1d, Linear, Module, ModuleList, MultiHeadAttention, _param, sinusoid_positions
from .sgf import SgfLayer

PAD_ID = 0


class FftBlock(Module):
    """attention -> residual -> SGF -> conv(k1) ReLU conv(k2) -> residual -> SGF.

    ``mask`` marks valid positions.  Padded keys are excluded from attention
    and padded rows are zeroed before the convolutions, so valid outputs never
    depend on padded content.
    """

    def __init__(self, rng: np.random.Generator, cfg):
        h = cfg.hidden
        k1, k2 = cfg.conv_kernels
        self.dropout_rate = cfg.dropout
        self.attention = MultiHeadAttention(rng, h, cfg.heads)
        self.sgf_attention = SgfLayer(rng, cfg.style_dim, h)
        self.conv_in = Conv1d(rng, h, cfg.conv_filter, k1)
        self.conv_out = Conv1d(rng, cfg.conv_filter, h, k2)
        self.sgf_conv = SgfLayer(rng, cfg.style_dim, h)

    def __call__(self, h, style, mask: np.ndarray | None = None):
        a = self.dropout(self.attention(h, key_mask=mask), self.dropout_rate)
        x = self.sgf_attention(h + a, style)
        if mask is not None:
            x = x * mask[:, None].astype(x.dtype)
        c = self.conv_out(ag.relu(self.conv_in(x)))
        c = self.dropout(c, self.dropout_rate)
        out = self.sgf_conv(x + c, style)
        if mask is not None:
            out = out * mask[:, None].astype(out.dtype)
        return out

    def sgf_layers(self):
        return (self.sgf_attention, self.sgf_conv)


class PhonemeEncoder(Module):
    def __init__(self, rng: np.random.Generator, cfg):
        if cfg.vocab_size < 2:
            raise ValueError("vocabulary must contain padding plus at least one symbol")
        table = rng.normal(0.0, cfg.hidden ** -0.5, size=(cfg.vocab_size, cfg.hidden))
        table[PAD_ID] = 0.0
        self.embedding = _param(table)
        self.blocks = ModuleList(FftBlock(rng, cfg) for _ in range(cfg.encoder_layers))

    def embed(self, ids) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 1 or ids.size < 1:
            raise ValueError("phoneme sequence must be a non-empty 1-D id array")
        vocab = self.embedding.shape[0]
        if ids.min() < 0 or ids.max() >= vocab:
            raise ValueError(f"phoneme id out of range for vocabulary of {vocab}")
        pe = sinusoid_positions(ids.size, self.embedding.shape[1], self.embedding.dtype)
        return ag.take_rows(self.embedding, ids) + pe

    def __call__(self, ids, style, mask: np.ndarray | None = None):
        x = self.embed(ids)
        for block in self.blocks:
            x = block(x, style, mask)
        return x


class MelDecoder(Module):
    def __init__(self, rng: np.random.Generator, cfg):
        self.blocks = ModuleList(FftBlock(rng, cfg) for _ in range(cfg.decoder_layers))
        self.mel_out = Linear(rng, cfg.hidden, cfg.n_mels)

    def __call__(self, frames, style, mask: np.ndarray | None = None):
        x = frames
        for block in self.blocks:
            x = block(x, style, mask)
        return self.mel_out(x)


def embed_phonemes(ids, encoder: PhonemeEncoder) -> np.ndarray:
    with ag.no_grad():
        return encoder.embed(ids).data


def fft_block(h, style, block: FftBlock, mask: np.ndarray | None = None) -> np.ndarray:
    with ag.no_grad():
        return block(ag.as_tensor(h), style, mask).data


def encode_phonemes(ids, style, encoder: PhonemeEncoder) -> np.ndarray:
    with ag.no_grad():
        return encoder(ids, style).data


def decode_mel(frames, style, decoder: MelDecoder) -> np.ndarray:
    with ag.no_grad():
        return decoder(ag.as_tensor(frames), style).data
