"""Acoustic front end: audio ingestion and feature extraction.

All framing is unpadded: frame ``i`` covers samples ``[i*HOP, i*HOP + WIN)``,
so a clip of ``N >= WIN`` samples yields ``(N - WIN) // HOP + 1`` frames for
every per-frame feature (STFT, mel, MFCC, pitch, energy).
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import _kernels

SAMPLE_RATE = 16000
WIN = 1024
HOP = 256
N_BINS = WIN // 2 + 1
N_MELS = 80
N_MFCC = 20
FMIN, FMAX = 0.0, 8000.0
LOG_FLOOR = 1e-5
PITCH_FMIN, PITCH_FMAX = 50.0, 600.0
VOICING_THRESHOLD = 0.3


class AudioError(ValueError):
    """Raised for unreadable, unsupported or empty audio."""


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise AudioError("AudioClip expects mono samples")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


def frame_count(n_samples: int) -> int:
    if n_samples < WIN:
        raise AudioError(f"need at least {WIN} samples, got {n_samples}")
    return (n_samples - WIN) // HOP + 1


# -- ingestion ---------------------------------------------------------------

def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a 16-bit PCM WAV; returns (samples[n, channels] in [-1, 1), rate)."""
    try:
        with wave.open(str(path), "rb") as wf:
            if wf.getcomptype() != "NONE":
                raise AudioError(f"{path}: compressed WAV not supported")
            width = wf.getsampwidth()
            channels = wf.getnchannels()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError, OSError) as exc:
        raise AudioError(f"{path}: cannot read WAV ({exc})") from exc
    if width != 2:
        raise AudioError(f"{path}: only 16-bit PCM is supported (sample width {width})")
    if channels not in (1, 2):
        raise AudioError(f"{path}: {channels} channels; mono or stereo only")
    data = np.frombuffer(raw, dtype="<i2").reshape(-1, channels)
    if data.shape[0] == 0:
        raise AudioError(f"{path}: empty audio")
    return data.astype(np.float64) / 32768.0, rate


def write_wav(path, clip: AudioClip, peak: float | None = 0.95) -> None:
    """Write a mono 16-bit PCM WAV, optionally peak-normalized to ``peak``."""
    x = np.asarray(clip.samples, dtype=np.float64)
    if peak is not None:
        m = np.max(np.abs(x)) if x.size else 0.0
        if m > 0:
            x = x * (peak / m)
    pcm = np.clip(np.round(x * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(clip.sample_rate))
        wf.writeframes(pcm.tobytes())


def resample(x: np.ndarray, src_rate: int, dst_rate: int = SAMPLE_RATE, half_width: int = 32) -> np.ndarray:
    """Hann-windowed sinc interpolation; output length round(N * dst / src)."""
    if src_rate == dst_rate:
        return np.asarray(x, dtype=np.float64)
    ratio = dst_rate / src_rate
    n_out = int(round(len(x) * ratio))
    cutoff = min(1.0, ratio)
    width = int(np.ceil(half_width / cutoff))
    return _kernels.sinc_resample(x, ratio, n_out, width, cutoff)


def load_audio(path) -> AudioClip:
    """Load a WAV as a mono 16 kHz clip (stereo averaged, resampled if needed)."""
    if not Path(path).is_file():
        raise AudioError(f"{path}: no such file")
    data, rate = read_wav(path)
    mono = data.mean(axis=1) if data.shape[1] == 2 else data[:, 0]
    mono = resample(mono, rate, SAMPLE_RATE)
    return AudioClip(np.clip(mono, -1.0, 1.0), SAMPLE_RATE)


# -- spectral features -------------------------------------------------------

@lru_cache(maxsize=None)
def hann_window() -> np.ndarray:
    # periodic Hann, the usual choice for STFT analysis
    n = np.arange(WIN)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / WIN)


def frames_of(samples: np.ndarray) -> np.ndarray:
    samples = np.asarray(samples, dtype=np.float64)
    t = frame_count(samples.shape[0])
    view = np.lib.stride_tricks.sliding_window_view(samples, WIN)[::HOP]
    return view[:t]


def stft(samples: np.ndarray) -> np.ndarray:
    """Complex STFT, shape (T, 513)."""
    return np.fft.rfft(frames_of(samples) * hann_window(), n=WIN, axis=1)


def stft_magnitude(clip: AudioClip) -> np.ndarray:
    samples = clip.samples if isinstance(clip, AudioClip) else np.asarray(clip)
    return np.abs(stft(samples))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=None)
def _mel_points() -> np.ndarray:
    return mel_to_hz(np.linspace(hz_to_mel(FMIN), hz_to_mel(FMAX), N_MELS + 2))


def mel_center_frequencies() -> np.ndarray:
    return _mel_points()[1:-1].copy()


@lru_cache(maxsize=None)
def mel_filterbank() -> np.ndarray:
    """(80, 513) triangular HTK-scale filters, each scaled to unit area in Hz."""
    edges = _mel_points()
    freqs = np.arange(N_BINS) * SAMPLE_RATE / WIN
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None, :] - lo) / (mid - lo)
    down = (hi - freqs[None, :]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down))
    fb *= (2.0 / (hi - lo))
    fb.setflags(write=False)
    return fb


def mel_spectrogram(spec: np.ndarray) -> np.ndarray:
    """Log-mel (T, 80) from STFT magnitudes (T, 513)."""
    spec = np.asarray(spec, dtype=np.float64)
    return np.log(np.maximum(spec @ mel_filterbank().T, LOG_FLOOR))


@lru_cache(maxsize=None)
def dct_matrix(n: int = N_MELS, keep: int = N_MFCC) -> np.ndarray:
    """Orthonormal DCT-II basis rows, shape (keep, n)."""
    k = np.arange(keep)[:, None]
    i = np.arange(n)[None, :]
    basis = np.cos(np.pi * k * (2 * i + 1) / (2 * n))
    basis[0] *= np.sqrt(1.0 / n)
    basis[1:] *= np.sqrt(2.0 / n)
    basis.setflags(write=False)
    return basis


def mfcc(mel: np.ndarray) -> np.ndarray:
    """First 20 DCT-II coefficients of each log-mel frame, scaled to unit L2 norm."""
    coeffs = np.asarray(mel, dtype=np.float64) @ dct_matrix().T
    norms = np.linalg.norm(coeffs, axis=1, keepdims=True)
    ok = norms >= 1e-12
    return np.where(ok, coeffs / np.where(ok, norms, 1.0), 0.0)


def extract_energy(spec: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.asarray(spec, dtype=np.float64), axis=1)


def extract_pitch(clip: AudioClip) -> np.ndarray:
    """Per-frame F0 in Hz from normalized autocorrelation; 0 marks unvoiced frames."""
    samples = clip.samples if isinstance(clip, AudioClip) else np.asarray(clip)
    frames = frames_of(samples)
    frames = frames - frames.mean(axis=1, keepdims=True)
    min_lag = int(np.floor(SAMPLE_RATE / PITCH_FMAX))
    max_lag = int(np.ceil(SAMPLE_RATE / PITCH_FMIN))
    r = _kernels.autocorr_frames(frames, min_lag - 1, max_lag + 1)
    f0 = np.zeros(frames.shape[0])
    for t in range(frames.shape[0]):
        f0[t] = _pick_period(r[t], min_lag - 1)
    return f0


def _pick_period(r: np.ndarray, lag0: int) -> float:
    # r[j] is the normalized autocorrelation at lag lag0 + j; the outer two
    # entries only serve as neighbours for the local-maximum test.
    inner = r[1:-1]
    best = inner.max()
    if best < VOICING_THRESHOLD:
        return 0.0
    # earliest local peak close to the global best; avoids octave-down errors
    target = max(VOICING_THRESHOLD, 0.9 * best)
    for j in range(1, len(r) - 1):
        if r[j] >= target and r[j] >= r[j - 1] and r[j] >= r[j + 1]:
            a, b, c = r[j - 1], r[j], r[j + 1]
            denom = a - 2 * b + c
            shift = 0.5 * (a - c) / denom if denom < 0 else 0.0
            return SAMPLE_RATE / (lag0 + j + shift)
    return 0.0


def phoneme_average(frame_values, durations, voiced_only: bool = False) -> np.ndarray:
    """Mean of each phoneme's frame span; empty spans give 0.

    With ``voiced_only`` zero-valued frames are skipped (pitch), and a span
    without voiced frames gives 0.
    """
    values = np.asarray(frame_values, dtype=np.float64)
    durations = np.asarray(durations, dtype=np.int64)
    if np.any(durations < 0):
        raise ValueError("durations must be non-negative")
    if durations.sum() != values.shape[0]:
        raise ValueError(f"durations sum to {durations.sum()} but there are {values.shape[0]} frames")
    out = np.zeros(durations.shape[0])
    start = 0
    for i, d in enumerate(durations):
        span = values[start:start + d]
        start += d
        if voiced_only:
            span = span[span > 0]
        if span.size:
            out[i] = span.mean()
    return out


@dataclass
class Features:
    mel: np.ndarray
    mfcc: np.ndarray
    pitch: np.ndarray
    energy: np.ndarray

    @property
    def frames(self) -> int:
        return self.mel.shape[0]


def extract_features(clip: AudioClip) -> Features:
    spec = stft_magnitude(clip)
    mel = mel_spectrogram(spec)
    return Features(mel=mel, mfcc=mfcc(mel), pitch=extract_pitch(clip), energy=extract_energy(spec))
