"""Dynamic variance adaptor: length-routed duration, pitch and energy predictors.

Sequences of at most ``threshold`` phonemes use the short predictors (conv
output head); longer ones use the long predictors (linear output head).
Durations are regressed as ``log(1 + frames)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .nn import Conv1d, LayerNorm, Linear, Module

KINDS = ("duration", "pitch", "energy")
DEFAULT_THRESHOLD = 85


class Branch(str, enum.Enum):
    SHORT = "short"
    LONG = "long"


@dataclass(frozen=True)
class RoutingDecision:
    branch: Branch
    sequence_length: int
    threshold: int


def route(length: int, threshold: int = DEFAULT_THRESHOLD, *, no_short: bool = False,
          no_long: bool = False) -> RoutingDecision:
    if length < 1 or threshold < 1:
        raise ValueError("length and threshold must be >= 1")
    if no_short and no_long:
        raise ValueError("at least one predictor family must remain")
    if no_short:
        branch = Branch.LONG
    elif no_long:
        branch = Branch.SHORT
    else:
        branch = Branch.SHORT if length <= threshold else Branch.LONG
    return RoutingDecision(branch, int(length), int(threshold))


class VariancePredictor(Module):
    """Two conv(k) -> ReLU -> norm -> dropout stages, then a per-branch output head."""

    def __init__(self, rng: np.random.Generator, cfg, branch: Branch):
        f, k = cfg.predictor_filter, cfg.predictor_kernel
        self.branch = Branch(branch)
        self.dropout_rate = cfg.predictor_dropout
        self.conv1 = Conv1d(rng, cfg.hidden, f, k)
        self.norm1 = LayerNorm(f)
        self.conv2 = Conv1d(rng, f, f, k)
        self.norm2 = LayerNorm(f)
        if self.branch is Branch.LONG:
            self.head = Linear(rng, f, 1)
        else:
            self.head = Conv1d(rng, f, 1, k)

    def __call__(self, hidden) -> Tensor:
        x = self.dropout(self.norm1(ag.relu(self.conv1(hidden))), self.dropout_rate)
        x = self.dropout(self.norm2(ag.relu(self.conv2(x))), self.dropout_rate)
        return self.head(x).reshape(-1)


def length_regulate_index(durations) -> np.ndarray:
    d = np.asarray(durations, dtype=np.int64)
    if d.ndim != 1 or np.any(d < 0):
        raise ValueError("durations must be a 1-D array of non-negative integers")
    if d.sum() == 0:
        raise ValueError("all durations are zero: empty utterance")
    return np.repeat(np.arange(d.size), d)


def length_regulate(hidden, durations):
    """Repeat row i of ``hidden`` durations[i] times, in order."""
    hidden = ag.as_tensor(hidden)
    d = np.asarray(durations)
    if d.shape[0] != hidden.shape[0]:
        raise ValueError(f"{d.shape[0]} durations for {hidden.shape[0]} rows")
    return ag.take_rows(hidden, length_regulate_index(d))


class VarianceEmbedding(Module):
    """Adds learned scalar-to-vector projections of pitch and energy per frame."""

    def __init__(self, rng: np.random.Generator, hidden: int):
        self.pitch_proj = Linear(rng, 1, hidden)
        self.energy_proj = Linear(rng, 1, hidden)

    def __call__(self, hidden, pitch, energy):
        hidden = ag.as_tensor(hidden)
        pitch, energy = ag.as_tensor(pitch), ag.as_tensor(energy)
        n = hidden.shape[0]
        if pitch.shape != (n,) or energy.shape != (n,):
            raise ValueError("pitch and energy must have one value per hidden row")
        return hidden + self.pitch_proj(pitch.reshape(n, 1)) + self.energy_proj(energy.reshape(n, 1))


def apply_variances(hidden, pitch, energy, embedding: VarianceEmbedding) -> np.ndarray:
    with ag.no_grad():
        return embedding(hidden, pitch, energy).data


def durations_from_log(log_durations) -> np.ndarray:
    """Inverse of log(1 + d), rounded and clamped to at least one frame."""
    d = np.round(np.exp(np.asarray(log_durations, dtype=np.float64)) - 1.0)
    return np.maximum(d, 1).astype(np.int64)


@dataclass
class AdaptorOutput:
    frames: Tensor
    log_duration: Tensor
    pitch: Tensor
    energy: Tensor
    durations: np.ndarray
    decision: RoutingDecision


class VarianceAdaptor(Module):
    def __init__(self, rng: np.random.Generator, cfg):
        self.threshold = cfg.dva_threshold
        self.no_short = cfg.no_dva_sp
        self.no_long = cfg.no_dva_lp
        # six predictors: {duration, pitch, energy} x {long, short}
        for kind in KINDS:
            setattr(self, f"{kind}_long", VariancePredictor(rng, cfg, Branch.LONG))
            setattr(self, f"{kind}_short", VariancePredictor(rng, cfg, Branch.SHORT))
        self.embedding = VarianceEmbedding(rng, cfg.hidden)

    def route(self, length: int) -> RoutingDecision:
        return route(length, self.threshold, no_short=self.no_short, no_long=self.no_long)

    def predictor(self, kind: str, branch: Branch) -> VariancePredictor:
        return getattr(self, f"{kind}_{Branch(branch).value}")

    def predict(self, kind: str, hidden, decision: RoutingDecision) -> Tensor:
        hidden = ag.as_tensor(hidden)
        if hidden.shape[0] != decision.sequence_length:
            raise ValueError("hidden length does not match the routing decision")
        return self.predictor(kind, decision.branch)(hidden)

    def __call__(self, hidden, targets=None, threshold: int | None = None) -> AdaptorOutput:
        """Teacher-forced when ``targets`` (durations, pitch, energy) is given, else inference."""
        hidden = ag.as_tensor(hidden)
        n = hidden.shape[0]
        if threshold is None:
            decision = self.route(n)
        else:
            decision = route(n, threshold, no_short=self.no_short, no_long=self.no_long)
        log_d = self.predict("duration", hidden, decision)
        pitch = self.predict("pitch", hidden, decision)
        energy = self.predict("energy", hidden, decision)
        if targets is not None:
            durations = np.asarray(targets.durations, dtype=np.int64)
            p_src = Tensor(np.asarray(targets.pitch, dtype=hidden.dtype))
            e_src = Tensor(np.asarray(targets.energy, dtype=hidden.dtype))
        else:
            durations = durations_from_log(log_d.data)
            p_src, e_src = pitch.detach(), energy.detach()
        index = length_regulate_index(durations)
        frames = self.embedding(ag.take_rows(hidden, index), ag.take_rows(p_src, index),
                                ag.take_rows(e_src, index))
        return AdaptorOutput(frames, log_d, pitch, energy, durations, decision)


def predict_variance(kind: str, hidden, decision: RoutingDecision, adaptor: VarianceAdaptor) -> np.ndarray:
    with ag.no_grad():
        return adaptor.predict(kind, hidden, decision).data
