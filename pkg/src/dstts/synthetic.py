"""Deterministic speech-like audio for tests, demos and smoke runs.

A glottal pulse train with a gliding F0 is passed through a cascade of
second-order formant resonators; consecutive "phonemes" change formants and
some become noise bursts or short pauses.  The result has the spectral
structure (harmonics, formants, voicing changes) the front end is built for.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .dsp import HOP, SAMPLE_RATE, WIN, AudioClip, frame_count, write_wav
from .formats import write_jsonl

VOWELS = {
    "a": (730, 1090, 2440),
    "e": (530, 1840, 2480),
    "i": (270, 2290, 3010),
    "o": (570, 840, 2410),
    "u": (300, 870, 2240),
}
FRICATIVES = ("s", "f")
SYMBOLS = tuple(VOWELS) + FRICATIVES + ("sil",)


def _resonator(x: np.ndarray, freq: float, bw: float) -> np.ndarray:
    r = np.exp(-np.pi * bw / SAMPLE_RATE)
    theta = 2 * np.pi * freq / SAMPLE_RATE
    a = [1.0, -2 * r * np.cos(theta), r * r]
    return lfilter([1.0 - r], a, x)


def _vowel(n: int, f0: np.ndarray, formants, rng: np.random.Generator) -> np.ndarray:
    phase = np.cumsum(f0 / SAMPLE_RATE)
    pulses = np.diff(np.floor(phase), prepend=0.0)
    src = lfilter([1.0], [1.0, -0.95], pulses)  # spectral tilt
    src += 0.01 * rng.standard_normal(n)
    y = src
    for f, bw in zip(formants, (80, 100, 140)):
        y = _resonator(y, f, bw)
    return y


def _fricative(n: int, symbol: str, rng: np.random.Generator) -> np.ndarray:
    noise = rng.standard_normal(n)
    centre = 5000 if symbol == "s" else 3000
    return 0.3 * _resonator(noise, centre, 1500)


@dataclass
class SyntheticUtterance:
    clip: AudioClip
    phonemes: list[str]
    durations: list[int]


def synthetic_utterance(n_phonemes: int = 8, seed: int = 0, f0: tuple = (110.0, 180.0),
                        frames_per_phoneme: tuple = (3, 9)) -> SyntheticUtterance:
    """Speech-like clip whose frame count exactly matches the returned durations."""
    rng = np.random.default_rng(seed)
    symbols = list(rng.choice(list(VOWELS) + list(FRICATIVES), size=n_phonemes))
    if n_phonemes > 3:
        symbols[int(rng.integers(1, n_phonemes - 1))] = "sil"
    durations = [int(d) for d in rng.integers(frames_per_phoneme[0], frames_per_phoneme[1] + 1, size=n_phonemes)]
    total_frames = sum(durations)
    n = (total_frames - 1) * HOP + WIN
    assert frame_count(n) == total_frames
    bounds = np.concatenate([[0], np.cumsum(durations)]) * HOP
    bounds[-1] = n
    t = np.arange(n) / SAMPLE_RATE
    contour = np.interp(t, [0, t[-1] / 2, t[-1]], [f0[0], f0[1], 0.5 * (f0[0] + f0[1])])
    contour *= 1.0 + 0.02 * np.sin(2 * np.pi * 5.0 * t)
    out = np.zeros(n)
    for sym, a, b in zip(symbols, bounds[:-1], bounds[1:]):
        a, b = int(a), int(b)
        if b <= a:
            continue
        if sym == "sil":
            seg = 1e-4 * rng.standard_normal(b - a)
        elif sym in FRICATIVES:
            seg = _fricative(b - a, sym, rng)
        else:
            seg = _vowel(b - a, contour[a:b], VOWELS[sym], rng)
        ramp = min(64, (b - a) // 2)
        env = np.ones(b - a)
        if ramp:
            env[:ramp] = np.linspace(0, 1, ramp)
            env[-ramp:] = np.linspace(1, 0, ramp)
        out[a:b] = seg * env
    out *= 0.8 / max(np.max(np.abs(out)), 1e-12)
    return SyntheticUtterance(AudioClip(out), [str(s) for s in symbols], durations)


def write_corpus(out_dir, count: int = 4, seed: int = 0, phonemes: tuple = (6, 12),
                 frames_per_phoneme: tuple = (3, 9)) -> Path:
    """Write ``count`` synthetic WAVs plus a JSONL manifest; returns the manifest path.

    Utterances alternate between a low- and a high-pitched voice so the style
    encoders have something to tell apart.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    records = []
    for k in range(count):
        f0 = (95.0, 140.0) if k % 2 == 0 else (190.0, 260.0)
        n = int(rng.integers(phonemes[0], phonemes[1] + 1))
        utt = synthetic_utterance(n, seed=seed * 1000 + k, f0=f0, frames_per_phoneme=frames_per_phoneme)
        name = f"utt{k:03d}.wav"
        write_wav(out / name, utt.clip)
        records.append({"id": f"utt{k:03d}", "wav": name, "phonemes": utt.phonemes,
                        "durations": utt.durations, "speaker": f"spk{k % 2}"})
    manifest = out / "manifest.jsonl"
    write_jsonl(manifest, records)
    return manifest
