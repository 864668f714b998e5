"""Style Gating-FiLM conditioning.

A hidden vector ``h`` is standardized over its features, then modulated by
four style-dependent vectors::

    gamma, beta, eta = tanh(A_g s), tanh(A_b s), tanh(A_e s)
    delta            = sigmoid(A_d s)
    gamma_eff = gamma * delta + eta * (1 - delta)
    beta_eff  = beta  * delta + eta * (1 - delta)
    out       = gamma_eff * y + beta_eff

where each ``A_*`` is an independent affine map of the style vector ``s``.
Functions accept numpy arrays or autograd tensors; sequences are handled
row-wise (one time step per row).
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .nn import Linear, Module

SGF_EPS = 1e-8
DELTA_BIAS = 1.0


def normalize(h, eps: float = SGF_EPS):
    """(h - mean) / sqrt(population variance + eps) over the last axis."""
    h = ag.as_tensor(h)
    mu = ag.mean(h, axis=-1, keepdims=True)
    centered = h - mu
    var = ag.mean(centered * centered, axis=-1, keepdims=True)
    return centered / ag.sqrt(var + eps)


def sgf_blend(gamma, beta, eta, delta):
    gamma, beta, eta, delta = (ag.as_tensor(v) for v in (gamma, beta, eta, delta))
    gate = eta * (1.0 - delta)
    return gamma * delta + gate, beta * delta + gate


class SgfLayer(Module):
    """Four independent style projections plus the modulation itself."""

    def __init__(self, rng: np.random.Generator, style_dim: int, width: int):
        # Linear already draws weights from +-1/sqrt(style_dim)
        self.proj_gamma = Linear(rng, style_dim, width)
        self.proj_beta = Linear(rng, style_dim, width)
        self.proj_eta = Linear(rng, style_dim, width)
        self.proj_delta = Linear(rng, style_dim, width, bias_init=DELTA_BIAS)

    def zero_weights(self) -> "SgfLayer":
        """Zero all projection weights, keeping the delta bias at 1 and others at 0."""
        for lin in (self.proj_gamma, self.proj_beta, self.proj_eta, self.proj_delta):
            lin.weight.data = np.zeros_like(lin.weight.data)
            lin.bias.data = np.zeros_like(lin.bias.data)
        self.proj_delta.bias.data = np.full_like(self.proj_delta.bias.data, DELTA_BIAS)
        return self

    def project(self, style):
        style = ag.as_tensor(style)
        if style.shape[-1] != self.proj_gamma.weight.shape[0]:
            raise ValueError(f"style dimension {style.shape[-1]} != {self.proj_gamma.weight.shape[0]}")
        return (
            ag.tanh(self.proj_gamma(style)),
            ag.tanh(self.proj_beta(style)),
            ag.tanh(self.proj_eta(style)),
            ag.sigmoid(self.proj_delta(style)),
        )

    def modulation(self, style):
        return sgf_blend(*self.project(style))

    def __call__(self, h, style):
        gamma_eff, beta_eff = self.modulation(style)
        return gamma_eff * normalize(h) + beta_eff


def sgf_project(style, layer: SgfLayer) -> tuple[np.ndarray, ...]:
    with ag.no_grad():
        return tuple(t.data for t in layer.project(style))


def sgf_modulate(h, style, layer: SgfLayer) -> np.ndarray:
    with ag.no_grad():
        return layer(ag.as_tensor(h), style).data


def film(h, gamma, beta):
    """Classic FiLM on standardized features, for comparison with the gated form."""
    return ag.as_tensor(gamma) * normalize(h) + beta

