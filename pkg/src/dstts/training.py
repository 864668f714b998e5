"""Losses, Adam, the training step, finite-difference gradient checking, checkpoints."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .config import RunConfig
from .formats import load_checkpoint, save_checkpoint
from .model import DSTTS, ModelOutput, Utterance
from .nn import Module


class NumericalError(RuntimeError):
    """Non-finite loss or gradient."""


# -- losses ----------------------------------------------------------------

def mse(z, z_pred) -> float:
    z, z_pred = np.asarray(z, dtype=np.float64), np.asarray(z_pred, dtype=np.float64)
    if z.shape != z_pred.shape:
        raise ValueError(f"length mismatch: {z.shape} vs {z_pred.shape}")
    if z.size == 0:
        raise ValueError("mse of empty sequences is undefined")
    return float(np.mean((z - z_pred) ** 2))


def mel_mae(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.mean(np.abs(pred - target)))


@dataclass
class LossBreakdown:
    l_rec: float
    l_d: float
    l_e: float
    l_p: float

    @property
    def total(self) -> float:
        return self.l_rec + self.l_d + self.l_e + self.l_p

    def as_dict(self) -> dict:
        return {"l_rec": self.l_rec, "l_d": self.l_d, "l_e": self.l_e, "l_p": self.l_p, "total": self.total}


def loss_terms(outputs: Sequence[ModelOutput], batch: Sequence[Utterance]) -> dict[str, Tensor]:
    """Batch losses as graph tensors; every mean runs over the valid cells of all utterances.

    Each utterance is processed unpadded, so summing per-utterance totals and
    dividing by the overall cell count is the masked batch mean.
    """
    if len(outputs) != len(batch) or not batch:
        raise ValueError("need one output per utterance in a non-empty batch")
    rec, dur, pitch, energy = [], [], [], []
    cells = phones = 0
    for out, utt in zip(outputs, batch):
        dt = out.mel.dtype
        if out.mel.shape != utt.mel.shape:
            raise ValueError(f"{utt.id}: predicted mel {out.mel.shape} vs target {utt.mel.shape}")
        rec.append(ag.absolute(out.mel - utt.mel.astype(dt)).sum())
        a = out.adaptor
        dur.append(_sq_sum(a.log_duration, np.log1p(utt.durations.astype(np.float64))))
        pitch.append(_sq_sum(a.pitch, utt.pitch))
        energy.append(_sq_sum(a.energy, utt.energy))
        cells += utt.mel.size
        phones += utt.ids.size
    return {
        "l_rec": _total(rec) * (1.0 / cells),
        "l_d": _total(dur) * (1.0 / phones),
        "l_e": _total(energy) * (1.0 / phones),
        "l_p": _total(pitch) * (1.0 / phones),
    }


def _sq_sum(pred: Tensor, target) -> Tensor:
    diff = pred - np.asarray(target, dtype=pred.dtype)
    return (diff * diff).sum()


def _total(parts: list[Tensor]) -> Tensor:
    acc = parts[0]
    for p in parts[1:]:
        acc = acc + p
    return acc


def total_loss(terms: dict[str, Tensor]) -> Tensor:
    return terms["l_rec"] + terms["l_d"] + terms["l_e"] + terms["l_p"]


def compute_losses(outputs: Sequence[ModelOutput], batch: Sequence[Utterance]) -> LossBreakdown:
    terms = loss_terms(outputs, batch)
    return LossBreakdown(*(float(terms[k].data) for k in ("l_rec", "l_d", "l_e", "l_p")))


# -- Adam ------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.98, eps: float = 1e-9) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update; returns new parameter arrays and the updated state."""
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if np.shape(g) != np.shape(params[name]):
            raise ValueError(f"{name}: gradient shape {np.shape(g)} != parameter shape {np.shape(params[name])}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in {name}")
    t = state.t + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    new_params, new_m, new_v = {}, {}, {}
    with np.errstate(over="ignore", invalid="ignore"):
        for name, p in params.items():
            g = np.asarray(grads.get(name, np.zeros_like(p)))
            m = beta1 * state.m.get(name, np.zeros_like(p)) + (1.0 - beta1) * g
            v = beta2 * state.v.get(name, np.zeros_like(p)) + (1.0 - beta2) * (g * g)
            step = lr * (m / c1) / (np.sqrt(v / c2) + eps)
            updated = (p - step).astype(np.asarray(p).dtype)
            if not (np.all(np.isfinite(updated)) and np.all(np.isfinite(v))):
                raise NumericalError(f"update overflowed in {name}")
            new_params[name], new_m[name], new_v[name] = updated, m, v
    # commit only once every tensor is known to be finite
    state.m.update(new_m)
    state.v.update(new_v)
    state.t = t
    return new_params, state


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.98, eps: float = 1e-9):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState()

    @classmethod
    def for_model(cls, model: Module, cfg: RunConfig) -> "Adam":
        return cls(model.parameters(), cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

    def step(self) -> None:
        arrays = {k: p.data for k, p in self.params.items()}
        grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in self.params.items()}
        new, self.state = adam_step(arrays, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)
        for k, p in self.params.items():
            p.data = new[k]

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for k in self.state.m:
            out[f"adam.m.{k}"] = self.state.m[k]
            out[f"adam.v.{k}"] = self.state.v[k]
        return out

    def load_state_tensors(self, tensors: dict, t: int) -> None:
        for k, p in self.params.items():
            if f"adam.m.{k}" in tensors:
                self.state.m[k] = tensors[f"adam.m.{k}"].astype(p.dtype)
                self.state.v[k] = tensors[f"adam.v.{k}"].astype(p.dtype)
        self.state.t = t


# -- training step ---------------------------------------------------------

def forward_batch(model: DSTTS, batch: Sequence[Utterance], styles=None) -> list[ModelOutput]:
    if styles is None:
        return [model(u, teacher_forced=True) for u in batch]
    return [model(u, teacher_forced=True, style=s) for u, s in zip(batch, styles)]


def train_step(batch: Sequence[Utterance], model: DSTTS, optimizer: Adam,
               rng: np.random.Generator | None = None) -> LossBreakdown:
    """Forward, backward and one Adam update; returns the loss before the update."""
    if rng is None:
        rng = np.random.default_rng(model.cfg.seed)
    model.train(rng)
    try:
        terms = loss_terms(forward_batch(model, batch), batch)
        total = total_loss(terms)
        if not np.isfinite(total.data):
            raise NumericalError(f"non-finite loss {float(total.data)}")
        model.zero_grad()
        total.backward()
        optimizer.step()
    finally:
        model.eval()
    return LossBreakdown(*(float(terms[k].data) for k in ("l_rec", "l_d", "l_e", "l_p")))


def evaluate_losses(model: DSTTS, batch: Sequence[Utterance]) -> LossBreakdown:
    model.eval()
    with ag.no_grad():
        return compute_losses(forward_batch(model, batch), batch)


# -- gradient check ---------------------------------------------------------

@dataclass
class GradCheckResult:
    max_rel_error: float
    per_tensor: dict[str, float]
    checked_entries: int
    refined_entries: int = 0

    @property
    def worst(self) -> str:
        return max(self.per_tensor, key=self.per_tensor.get)


def analytic_gradients(loss_fn: Callable[[], Tensor], params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    for p in params.values():
        p.grad = None
    loss_fn().backward()
    return {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}


def _central_difference(loss_fn, flat: np.ndarray, i: int, h: float) -> float:
    orig = flat[i]
    flat[i] = orig + h
    up = float(loss_fn().data)
    flat[i] = orig - h
    down = float(loss_fn().data)
    flat[i] = orig
    return (up - down) / (2.0 * h)


def grad_check(loss_fn: Callable[[], Tensor], params: dict[str, Tensor], *, entries: int = 32,
               step: float = 1e-5, seed: int = 0, corrupt: dict[str, float] | None = None,
               floor: float = 1e-4, kink_tol: float = 1e-7,
               on_tensor: Callable[[str], None] | None = None) -> GradCheckResult:
    """Compare reverse-mode gradients against central differences.

    For each tensor up to ``entries`` random entries are probed (all of them
    for smaller tensors).  The per-tensor error is
    ``||g_analytic - g_numeric|| / max(||g_analytic||, ||g_numeric||, floor)``
    over the probed entries.  ``corrupt`` scales chosen analytic gradients to
    test the detector.

    A ReLU input lying within ``step`` of zero makes the stencil straddle a
    kink.  Entries whose estimate disagrees with the analytic value are
    therefore re-probed at ``step/4``, ``step/16``, ... ``step/256``; the
    first time two consecutive estimates agree (the loss is smooth at that
    scale) the finer one replaces the original.  The analytic gradient plays
    no part in accepting it.

    ``on_tensor(name)`` is called before the entries of each tensor are
    probed, which lets ``loss_fn`` cache work that does not depend on it.
    """
    for k, p in params.items():
        if p.dtype != np.float64:
            raise TypeError(f"grad_check needs float64 parameters ({k} is {p.dtype})")
    grads = analytic_gradients(loss_fn, params)
    for k, factor in (corrupt or {}).items():
        grads[k] = grads[k] * factor
    rng = np.random.default_rng(seed)
    per_tensor, count, refined = {}, 0, 0
    with ag.no_grad():
        for name, p in params.items():
            if on_tensor is not None:
                on_tensor(name)
            flat = p.data.reshape(-1)
            n = flat.size
            idx = np.arange(n) if n <= entries else rng.choice(n, size=entries, replace=False)
            analytic = grads[name].reshape(-1)[idx]
            numeric = np.array([_central_difference(loss_fn, flat, i, step) for i in idx])
            for j in np.flatnonzero(np.abs(analytic - numeric) > kink_tol * np.maximum(1.0, np.abs(numeric))):
                prev = numeric[j]
                for k in range(1, 5):
                    est = _central_difference(loss_fn, flat, idx[j], step / 4 ** k)
                    if k > 1 and abs(est - prev) <= kink_tol * max(1.0, abs(est)):
                        numeric[j] = est
                        refined += 1
                        break
                    prev = est
            denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
            per_tensor[name] = float(np.linalg.norm(analytic - numeric) / denom)
            count += idx.size
    return GradCheckResult(max(per_tensor.values()), per_tensor, count, refined)


def model_grad_check(model: DSTTS, batch: Sequence[Utterance], **kwargs) -> GradCheckResult:
    """:func:`grad_check` over every model parameter with dropout off.

    Style vectors are reused while probing parameters outside the style
    encoder, since they cannot change there.
    """
    model.eval()
    cache: dict = {"styles": None}

    def on_tensor(name: str) -> None:
        cache["styles"] = None
        if not name.startswith("style_encoder."):
            with ag.no_grad():
                cache["styles"] = [Tensor(model.style(u.mel, u.mfcc).data) for u in batch]

    def loss_fn():
        return total_loss(loss_terms(forward_batch(model, batch, cache["styles"]), batch))

    return grad_check(loss_fn, model.parameters(), on_tensor=on_tensor, **kwargs)


# -- checkpoints -------------------------------------------------------------

def save_model(path, model: DSTTS, *, step: int = 0, optimizer: Adam | None = None, extra: dict | None = None) -> None:
    tensors = model.state_dict()
    if optimizer is not None:
        tensors.update(optimizer.state_tensors())
    header = {"format": "dstts", "config": model.cfg.to_dict(), "step": step,
              "adam_t": optimizer.state.t if optimizer else 0}
    header.update(extra or {})
    save_checkpoint(path, tensors, header)


def load_model(path) -> tuple[DSTTS, dict, dict]:
    """Returns (model, header, optimizer tensors)."""
    header, tensors = load_checkpoint(path)
    cfg = RunConfig.from_dict(header["config"])
    model = DSTTS(cfg)
    state = {k: v for k, v in tensors.items() if not k.startswith("adam.")}
    opt = {k: v for k, v in tensors.items() if k.startswith("adam.")}
    model.load_state_dict(state)
    return model, header, opt

