"""Objective evaluation: speaker-embedding cosine similarity and report files."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from . import dsp
from .formats import load_tensor

WER_NOTE = "n/a (external ASR out of scope)"
EMBEDDER_NOTE = (
    "SMCS uses the model's own style encoder as speaker embedder; "
    "values are not comparable to scores from a dedicated speaker-verification model."
)


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


class SpeakerEmbedder(Protocol):
    dim: int

    def __call__(self, clip: dsp.AudioClip) -> np.ndarray: ...


class StyleEmbedder:
    """Default embedder: the model's dual style encoder.

    Clips are peak-normalized first, so the embedding ignores playback gain.
    """

    def __init__(self, model):
        self.model = model
        self.dim = model.cfg.style_dim

    def __call__(self, clip: dsp.AudioClip) -> np.ndarray:
        x = clip.samples
        peak = np.max(np.abs(x))
        if peak > 0:
            x = x / peak
        feats = dsp.extract_features(dsp.AudioClip(x, clip.sample_rate))
        return self.model.embed(feats.mel, feats.mfcc)


class TensorFileEmbedder:
    """Precomputed embeddings stored as ``<dir>/<clip id>.dstt``.

    Called with a clip id (or a WAV path whose stem is the id) instead of audio.
    """

    def __init__(self, directory):
        self.directory = Path(directory)
        files = sorted(self.directory.glob("*.dstt"))
        if not files:
            raise FileNotFoundError(f"no .dstt embeddings in {directory}")
        self.dim = int(load_tensor(files[0]).size)

    def __call__(self, key) -> np.ndarray:
        key = Path(str(key)).stem
        vec = load_tensor(self.directory / f"{key}.dstt").astype(np.float64).ravel()
        if vec.size != self.dim:
            raise ValueError(f"embedding {key} has dimension {vec.size}, expected {self.dim}")
        return vec


def smcs(reference, synthesized, embedder) -> float:
    return cosine_similarity(embedder(reference), embedder(synthesized))


@dataclass
class PairResult:
    id: str
    smcs: float
    mel_mae: float | None = None


@dataclass
class EvalReport:
    pairs: list[PairResult]
    metadata: dict = field(default_factory=dict)

    @property
    def mean_smcs(self) -> float:
        return float(np.mean([p.smcs for p in self.pairs]))

    @property
    def mean_mel_mae(self) -> float | None:
        vals = [p.mel_mae for p in self.pairs if p.mel_mae is not None]
        return float(np.mean(vals)) if vals else None

    def to_dict(self) -> dict:
        return {
            "metadata": self.metadata,
            "pairs": [{"id": p.id, "smcs": p.smcs, "mel_mae": p.mel_mae} for p in self.pairs],
            "mean_smcs": self.mean_smcs,
            "mean_mel_mae": self.mean_mel_mae,
            "wer": WER_NOTE,
        }


def mel_mae_aligned(a: np.ndarray, b: np.ndarray) -> float:
    """Mean absolute log-mel difference over the common leading frames."""
    n = min(a.shape[0], b.shape[0])
    return float(np.mean(np.abs(a[:n] - b[:n])))


# -- report serialization ------------------------------------------------------

def _fmt(x) -> str:
    if x is None:
        return "-"
    return repr(float(x))


def emit_report(report: EvalReport, fmt: str = "json", path=None) -> str:
    """Serialize deterministically; writes ``path`` when given and returns the text."""
    if not report.pairs:
        raise ValueError("cannot emit an empty report")
    if fmt == "json":
        text = json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"
    elif fmt in ("markdown", "md"):
        lines = [f"<!-- {json.dumps(report.metadata, sort_keys=True)} -->",
                 f"<!-- {EMBEDDER_NOTE} -->",
                 "| Methods | WER | SMCS | Mel MAE |",
                 "|---|---|---|---|"]
        for p in report.pairs:
            lines.append(f"| {p.id} | {WER_NOTE} | {_fmt(p.smcs)} | {_fmt(p.mel_mae)} |")
        lines.append(f"| mean | {WER_NOTE} | {_fmt(report.mean_smcs)} | {_fmt(report.mean_mel_mae)} |")
        text = "\n".join(lines) + "\n"
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def parse_report(text: str) -> EvalReport:
    """Inverse of :func:`emit_report` for both formats."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        data = json.loads(text)
        pairs = [PairResult(p["id"], p["smcs"], p.get("mel_mae")) for p in data["pairs"]]
        return EvalReport(pairs, data.get("metadata", {}))
    metadata, pairs = {}, []
    for line in text.splitlines():
        line = line.strip()
        if line.startswith("<!-- {"):
            metadata = json.loads(line[5:-4])
            continue
        if not line.startswith("|") or line.startswith("|---"):
            continue
        cells = [c.strip() for c in line.strip("|").split("|")]
        if cells[0] in ("Methods", "mean"):
            continue
        mae = None if cells[3] == "-" else float(cells[3])
        pairs.append(PairResult(cells[0], float(cells[2]), mae))
    return EvalReport(pairs, metadata)


def evaluate_pairs(pairs: Sequence[dict], embedder, *, base_dir=None, use_audio: bool = True) -> list[PairResult]:
    """Score a pairs manifest (``ref_wav``, ``syn_wav``, optional ``target_wav``, ``id``)."""
    base = Path(base_dir) if base_dir else Path(".")
    results = []
    for i, rec in enumerate(pairs):
        ref_path = base / rec["ref_wav"]
        syn_path = base / rec["syn_wav"]
        pid = rec.get("id", Path(rec["syn_wav"]).stem or str(i))
        if use_audio:
            ref, syn = dsp.load_audio(ref_path), dsp.load_audio(syn_path)
            score = smcs(ref, syn, embedder)
        else:
            score = smcs(ref_path, syn_path, embedder)
        mae = None
        if rec.get("target_wav"):
            tgt = dsp.extract_features(dsp.load_audio(base / rec["target_wav"])).mel
            syn_mel = dsp.extract_features(dsp.load_audio(syn_path)).mel
            mae = mel_mae_aligned(syn_mel, tgt)
        if not math.isfinite(score):
            raise ValueError(f"{pid}: non-finite similarity")
        results.append(PairResult(pid, score, mae))
    return results
