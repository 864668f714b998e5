"""Mel-to-waveform fallback: filterbank inversion plus Griffin-Lim phase recovery."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from . import _kernels
from .dsp import HOP, LOG_FLOOR, N_BINS, SAMPLE_RATE, WIN, AudioClip, hann_window, mel_filterbank, stft


@dataclass
class GriffinLimConfig:
    iterations: int = 32
    momentum: float = 0.99
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")


def invert_mel(mel: np.ndarray, refine_tol: float = 0.05, mu_iterations: int = 300) -> np.ndarray:
    """Non-negative linear magnitudes (T, 513) whose mel projection matches ``exp(mel)``.

    Multiplicative NNLS updates run on all frames at once; frames whose log-mel
    round trip is still off by more than ``refine_tol`` are solved exactly with
    an active-set NNLS.
    """
    mel = np.asarray(mel, dtype=np.float64)
    fb = mel_filterbank()
    target = np.exp(mel)
    target = np.where(mel <= np.log(LOG_FLOOR) + 1e-9, 0.0, target)
    x = np.maximum(target @ np.linalg.pinv(fb).T, 1e-10)
    numer = target @ fb
    for _ in range(mu_iterations):
        x *= numer / np.maximum((x @ fb.T) @ fb, 1e-30)
    approx = np.log(np.maximum(x @ fb.T, LOG_FLOOR))
    bad = np.flatnonzero(np.max(np.abs(approx - np.maximum(mel, np.log(LOG_FLOOR))), axis=1) > refine_tol)
    for t in bad:
        x[t] = nnls(fb, target[t], maxiter=20 * N_BINS)[0]
    x[x < 1e-9] = 0.0
    return x


def istft(spectrum: np.ndarray) -> np.ndarray:
    """Least-squares inverse of the unpadded Hann STFT; length (T-1)*HOP + WIN."""
    frames = np.fft.irfft(spectrum, n=WIN, axis=1)
    n = (spectrum.shape[0] - 1) * HOP + WIN
    out, wsum = _kernels.overlap_add(frames, hann_window(), HOP, n)
    nz = wsum > 1e-10
    out[nz] /= wsum[nz]
    out[~nz] = 0.0
    return out


_BIN_WEIGHTS = np.r_[1.0, np.full(N_BINS - 2, 2.0), 1.0]


def spectral_error(spec: np.ndarray, samples: np.ndarray) -> float:
    """|| |STFT(x)| - S || over the full (two-sided) spectrum."""
    diff = np.abs(stft(samples)) - spec
    return float(np.sqrt(np.sum(_BIN_WEIGHTS * diff * diff)))


def griffin_lim(spec: np.ndarray, cfg: GriffinLimConfig | None = None,
                errors: list | None = None) -> AudioClip:
    """Phase recovery with the momentum ("fast") Griffin-Lim update.

    With ``momentum=0`` this is the classic algorithm.  When ``errors`` is a
    list, the spectral inconsistency of each iterate is appended to it.
    """
    cfg = cfg or GriffinLimConfig()
    spec = np.asarray(spec, dtype=np.float64)
    if spec.ndim != 2 or spec.shape[1] != N_BINS or np.any(spec < 0):
        raise ValueError(f"expected non-negative magnitudes of shape (T, {N_BINS})")
    n = (spec.shape[0] - 1) * HOP + WIN
    if not np.any(spec > 0):
        return AudioClip(np.zeros(n), SAMPLE_RATE)
    rng = np.random.default_rng(cfg.seed)
    angles = np.exp(2j * np.pi * rng.random(spec.shape))
    rebuilt = np.zeros(spec.shape, dtype=np.complex128)
    alpha = cfg.momentum / (1.0 + cfg.momentum)
    for _ in range(cfg.iterations):
        previous = rebuilt
        x = istft(spec * angles)
        rebuilt = stft(x)
        if errors is not None:
            errors.append(spectral_error(spec, x))
        angles = rebuilt - alpha * previous
        angles /= np.abs(angles) + 1e-16
    x = istft(spec * angles)
    if errors is not None:
        errors.append(spectral_error(spec, x))
    return AudioClip(x, SAMPLE_RATE)


def mel_to_audio(mel: np.ndarray, cfg: GriffinLimConfig | None = None) -> AudioClip:
    return griffin_lim(invert_mel(mel), cfg)
