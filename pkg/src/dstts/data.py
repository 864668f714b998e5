"""Corpus preprocessing into a feature cache, and loading the cache for training."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dsp
from .formats import dumps_json, load_tensor, load_vocab, read_jsonl, save_tensor, save_vocab, write_jsonl
from .model import Utterance

log = logging.getLogger(__name__)

PAD = "<pad>"
FEATURES = ("mel", "mfcc", "pitch", "energy")
INDEX_FILE = "utterances.jsonl"
STATS_FILE = "stats.json"
VOCAB_FILE = "vocab.json"
MAX_FAILURE_RATE = 0.10


class PreprocessError(RuntimeError):
    pass


@dataclass
class Stats:
    pitch_mean: float
    pitch_std: float
    energy_mean: float
    energy_std: float

    @classmethod
    def load(cls, path) -> "Stats":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path) -> None:
        Path(path).write_text(dumps_json(vars(self)) + "\n", encoding="utf-8")

    def standardize_pitch(self, p):
        """Voiced values are z-scored; unvoiced (0 Hz) entries map to the voiced mean, i.e. 0."""
        p = np.asarray(p, dtype=np.float64)
        return np.where(p > 0, (p - self.pitch_mean) / self.pitch_std, 0.0)

    def standardize_energy(self, e):
        return (np.asarray(e, dtype=np.float64) - self.energy_mean) / self.energy_std


def reconcile_durations(durations, frames: int, uid: str = "") -> list[int]:
    """Absorb a one-frame aligner rounding difference into the last phoneme."""
    d = [int(x) for x in durations]
    if any(x < 0 for x in d):
        raise ValueError(f"{uid}: negative duration")
    diff = frames - sum(d)
    if diff == 0:
        return d
    if abs(diff) > 1:
        raise ValueError(f"{uid}: durations sum to {sum(d)} but audio has {frames} frames")
    d[-1] += diff
    if d[-1] < 0:
        raise ValueError(f"{uid}: cannot reconcile durations with {frames} frames")
    return d


def build_vocab(records) -> list[str]:
    symbols = sorted({p for r in records for p in r["phonemes"]})
    return [PAD] + [s for s in symbols if s != PAD]


def _process(rec: dict, base: Path, out_dir: Path) -> dict:
    uid = str(rec["id"])
    if len(rec["phonemes"]) != len(rec["durations"]) or not rec["phonemes"]:
        raise ValueError(f"{uid}: phonemes and durations must be non-empty and of equal length")
    wav = Path(rec["wav"])
    clip = dsp.load_audio(wav if wav.is_absolute() else base / wav)
    feats = dsp.extract_features(clip)
    durations = reconcile_durations(rec["durations"], feats.frames, uid)
    pitch = dsp.phoneme_average(feats.pitch, durations, voiced_only=True)
    energy = dsp.phoneme_average(feats.energy, durations)
    for name, arr in (("mel", feats.mel), ("mfcc", feats.mfcc), ("pitch", pitch), ("energy", energy)):
        save_tensor(out_dir / f"{uid}.{name}.dstt", arr)
    entry = {"id": uid, "phonemes": list(rec["phonemes"]), "durations": durations, "wav": str(wav)}
    if "speaker" in rec:
        entry["speaker"] = rec["speaker"]
    return entry


def preprocess(manifest, out_dir, vocab_path=None) -> dict:
    """Extract features for every manifest entry and write corpus statistics.

    Returns a summary dict.  Raises :class:`PreprocessError` when more than
    10% of the utterances fail.
    """
    manifest = Path(manifest)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = read_jsonl(manifest)
    if not records:
        raise PreprocessError(f"{manifest}: empty manifest")
    vocab = load_vocab(vocab_path) if vocab_path else build_vocab(records)
    known = set(vocab)
    entries, failures = [], []
    for rec in records:
        try:
            unknown = set(rec["phonemes"]) - known
            if unknown:
                raise ValueError(f"{rec.get('id')}: symbols not in vocabulary: {sorted(unknown)}")
            entries.append(_process(rec, manifest.parent, out_dir))
        except (ValueError, KeyError, dsp.AudioError) as exc:
            log.warning("skipping utterance: %s", exc)
            failures.append({"id": rec.get("id"), "error": str(exc)})
    if len(failures) > MAX_FAILURE_RATE * len(records) or not entries:
        raise PreprocessError(f"{len(failures)} of {len(records)} utterances failed: {failures}")
    pitch = np.concatenate([load_tensor(out_dir / f"{e['id']}.pitch.dstt") for e in entries]).astype(np.float64)
    energy = np.concatenate([load_tensor(out_dir / f"{e['id']}.energy.dstt") for e in entries]).astype(np.float64)
    voiced = pitch[pitch > 0]
    stats = Stats(
        pitch_mean=float(voiced.mean()) if voiced.size else 0.0,
        pitch_std=float(voiced.std()) if voiced.size > 1 and voiced.std() > 0 else 1.0,
        energy_mean=float(energy.mean()),
        energy_std=float(energy.std()) if energy.std() > 0 else 1.0,
    )
    stats.save(out_dir / STATS_FILE)
    save_vocab(out_dir / VOCAB_FILE, vocab)
    write_jsonl(out_dir / INDEX_FILE, entries)
    return {"processed": len(entries), "failed": failures, "out_dir": str(out_dir)}


def load_dataset(cache_dir, vocab: list[str] | None = None, stats: Stats | None = None) -> list[Utterance]:
    cache = Path(cache_dir)
    vocab = vocab or load_vocab(cache / VOCAB_FILE)
    stats = stats or Stats.load(cache / STATS_FILE)
    index = {s: i for i, s in enumerate(vocab)}
    utts = []
    for e in read_jsonl(cache / INDEX_FILE):
        uid = e["id"]
        feats = {name: load_tensor(cache / f"{uid}.{name}.dstt").astype(np.float64) for name in FEATURES}
        utts.append(Utterance(
            ids=np.array([index[p] for p in e["phonemes"]]),
            mel=feats["mel"], mfcc=feats["mfcc"], durations=np.array(e["durations"]),
            pitch=stats.standardize_pitch(feats["pitch"]),
            energy=stats.standardize_energy(feats["energy"]), id=uid,
        ))
    return utts


def encode_phonemes_text(symbols, vocab: list[str]) -> np.ndarray:
    index = {s: i for i, s in enumerate(vocab)}
    missing = [s for s in symbols if s not in index or s == PAD]
    if missing:
        raise ValueError(f"unknown phoneme(s): {missing}")
    return np.array([index[s] for s in symbols], dtype=np.int64)
