"""Layer building blocks on top of :mod:`dstts.autograd`."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class Module:
    """Container for named parameters and child modules.

    Parameters are leaf tensors with ``requires_grad=True`` stored as plain
    attributes; child modules are found the same way, so the dotted parameter
    names follow attribute assignment order.
    """

    training: bool = False
    rng: np.random.Generator | None = None

    def named_children(self) -> Iterator[tuple[str, "Module"]]:
        for key, value in vars(self).items():
            if isinstance(value, Module):
                yield key, value
            elif isinstance(value, ModuleList):
                for i, m in enumerate(value):
                    yield f"{key}.{i}", m

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + key, value
        for key, child in self.named_children():
            yield from child.named_parameters(prefix + key + ".")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for k, p in params.items():
            arr = np.asarray(state[k])
            if arr.shape != p.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def to(self, dtype) -> "Module":
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
        return self

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.grad = None

    def set_mode(self, training: bool, rng: np.random.Generator | None = None) -> "Module":
        self.training = training
        self.rng = rng
        for _, child in self.named_children():
            child.set_mode(training, rng)
        return self

    def train(self, rng: np.random.Generator) -> "Module":
        return self.set_mode(True, rng)

    def eval(self) -> "Module":
        return self.set_mode(False, None)

    def dropout(self, x, rate: float):
        return ag.dropout(x, rate, self.rng, self.training)


class ModuleList(list):
    pass


def _param(data: np.ndarray) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


def uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int, bias_init: float = 0.0):
        self.weight = _param(uniform(rng, (n_in, n_out), n_in))
        self.bias = _param(np.full(n_out, bias_init))

    def __call__(self, x):
        return x @ self.weight + self.bias


class Conv1d(Module):
    """Same-padded temporal convolution on (length, channels) input."""

    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int, kernel: int):
        if kernel % 2 != 1:
            raise ValueError("kernel size must be odd")
        self.weight = _param(uniform(rng, (kernel, n_in, n_out), n_in * kernel))
        self.bias = _param(np.zeros(n_out))

    def __call__(self, x):
        return ag.conv1d(x, self.weight, self.bias)


class LayerNorm(Module):
    """Per-step feature normalization with a learned gain and offset."""

    def __init__(self, width: int, eps: float = 1e-5):
        self.gain = _param(np.ones(width))
        self.offset = _param(np.zeros(width))
        self.eps = eps

    def __call__(self, x):
        return standardize(x, self.eps) * self.gain + self.offset


def standardize(x, eps: float):
    """(x - mean) / sqrt(var + eps) along the last axis, population variance."""
    mu = ag.mean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = ag.mean(centered * centered, axis=-1, keepdims=True)
    return centered / ag.sqrt(var + eps)


def attention_mask_fill(scores, key_mask: np.ndarray | None):
    if key_mask is None:
        return scores
    blocked = np.broadcast_to(~key_mask[None, None, :], scores.shape)
    return ag.where_mask(scores, blocked, -1e9)


class MultiHeadAttention(Module):
    """Scaled dot-product self-attention with ``heads`` heads."""

    def __init__(self, rng: np.random.Generator, width: int, heads: int):
        if width % heads:
            raise ValueError(f"width {width} not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(rng, width, width)
        self.k = Linear(rng, width, width)
        self.v = Linear(rng, width, width)
        self.out = Linear(rng, width, width)
        self.last_weights: np.ndarray | None = None

    def _split(self, x):
        length, width = x.shape
        return x.reshape(length, self.heads, width // self.heads).transpose(1, 0, 2)

    def __call__(self, x, key_mask: np.ndarray | None = None):
        length, width = x.shape
        q, k, v = self._split(self.q(x)), self._split(self.k(x)), self._split(self.v(x))
        scores = (q @ k.transpose(0, 2, 1)) * (1.0 / math.sqrt(width // self.heads))
        weights = ag.softmax(attention_mask_fill(scores, key_mask), axis=-1)
        self.last_weights = weights.data
        ctx = (weights @ v).transpose(1, 0, 2).reshape(length, width)
        return self.out(ctx)


class LSTM(Module):
    """Single-direction LSTM; gate order i, f, g, o."""

    def __init__(self, rng: np.random.Generator, n_in: int, units: int, forget_bias: float = 1.0):
        self.units = units
        self.w_in = _param(uniform(rng, (n_in, 4 * units), n_in))
        self.w_rec = _param(uniform(rng, (units, 4 * units), units))
        b = np.zeros(4 * units)
        b[units:2 * units] = forget_bias
        self.bias = _param(b)

    def __call__(self, x, reverse: bool = False):
        return ag.lstm_sequence(x, self.w_in, self.w_rec, self.bias, reverse)


class BiLSTM(Module):
    def __init__(self, rng: np.random.Generator, n_in: int, units: int):
        self.forward_cell = LSTM(rng, n_in, units)
        self.backward_cell = LSTM(rng, n_in, units)

    def __call__(self, x):
        return ag.concat([self.forward_cell(x), self.backward_cell(x, reverse=True)], axis=1)


def sinusoid_positions(length: int, width: int, dtype=np.float64) -> np.ndarray:
    """Sinusoidal position table: sin on even channels, cos on odd channels."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(width // 2 + width % 2, dtype=np.float64)
    freqs = 1.0 / np.power(10000.0, 2.0 * i / width)
    table = np.zeros((length, width))
    angles = pos * freqs[None, :]
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles[:, : width // 2])
    return table.astype(dtype)
