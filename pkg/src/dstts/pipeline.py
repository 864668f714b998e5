"""End-to-end workflows behind the command-line interface."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dsp, synthetic
from .config import ConfigError, RunConfig, tiny_config
from .data import PAD, Stats, encode_phonemes_text, load_dataset
from .formats import FormatError, load_vocab, read_jsonl, save_tensor, write_pgm
from .metrics import EMBEDDER_NOTE, EvalReport, PairResult, StyleEmbedder, cosine_similarity
from .model import DSTTS, Utterance
from .training import (Adam, GradCheckResult, LossBreakdown, NumericalError, evaluate_losses, load_model,
                       model_grad_check, save_model, train_step)
from .vocoder import GriffinLimConfig, mel_to_audio

log = logging.getLogger(__name__)

SWEEP_THRESHOLDS = (75, 80, 85, 90, 95)
VARIANTS = {
    "full": {},
    "w/o MFCC": {"no_mfcc": True},
    "w/o DVA-SP": {"no_dva_sp": True},
    "w/o DVA-LP": {"no_dva_lp": True},
}


# -- training ------------------------------------------------------------------

def check_resume_compatible(cfg: RunConfig, header: dict) -> None:
    saved = header["config"]
    diffs = {k: (saved.get(k), getattr(cfg, k)) for k in RunConfig.ARCH_KEYS
             if saved.get(k) != getattr(cfg, k)}
    for k in ("no_dva_sp", "no_dva_lp", "dva_threshold", "seed"):
        if saved.get(k) != getattr(cfg, k):
            diffs[k] = (saved.get(k), getattr(cfg, k))
    if diffs:
        raise ConfigError(f"config does not match checkpoint: {diffs}")


def train(cfg: RunConfig, utts: Sequence[Utterance], out_dir, *, vocab: list[str], stats: Stats,
          resume: str | None = None) -> Path:
    """Run ``cfg.steps`` training steps; returns the final checkpoint path.

    Writes ``config.json``, ``train_log.jsonl`` and checkpoints to ``out_dir``.
    On a non-finite loss or gradient the untouched parameters are saved as
    ``last_good.dsck`` and :class:`NumericalError` propagates.
    """
    if not utts:
        raise ValueError("no training utterances")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    extra = {"vocab": vocab, "stats": vars(stats)}
    start = 0
    if resume:
        model, header, opt_tensors = load_model(resume)
        check_resume_compatible(cfg, header)
        model.cfg = cfg
        start = int(header.get("step", 0))
    else:
        model = DSTTS(cfg)
    optimizer = Adam.for_model(model, cfg)
    if resume:
        optimizer.load_state_tensors(opt_tensors, int(header.get("adam_t", 0)))
    (out / "config.json").write_text(cfg.to_json(), encoding="utf-8")
    batch_rng = np.random.default_rng([cfg.seed, start, 1])
    dropout_rng = np.random.default_rng([cfg.seed, start, 2])
    n = len(utts)
    mode = "a" if resume else "w"
    with open(out / "train_log.jsonl", mode, encoding="utf-8") as logf:
        for step in range(start + 1, cfg.steps + 1):
            take = min(cfg.batch_size, n)
            idx = batch_rng.choice(n, size=take, replace=False)
            batch = [utts[i] for i in sorted(idx)]
            t0 = time.perf_counter()
            try:
                losses = train_step(batch, model, optimizer, dropout_rng)
            except NumericalError:
                try:
                    save_model(out / "last_good.dsck", model, step=step - 1, optimizer=optimizer, extra=extra)
                except FormatError as exc:
                    log.error("could not store last good state: %s", exc)
                raise
            wall_ms = (time.perf_counter() - t0) * 1000.0
            record = {"step": step, **losses.as_dict(), "wall_ms": round(wall_ms, 3)}
            logf.write(json.dumps(record, separators=(",", ":")) + "\n")
            if cfg.ckpt_every and step % cfg.ckpt_every == 0 and step != cfg.steps:
                save_model(out / f"ckpt_{step:07d}.dsck", model, step=step, optimizer=optimizer, extra=extra)
    final = out / "final.dsck"
    save_model(final, model, step=max(cfg.steps, start), optimizer=optimizer, extra=extra)
    return final


# -- synthesis -------------------------------------------------------------------

@dataclass
class SynthesisResult:
    wav: Path
    mel_path: Path
    image_path: Path
    durations: np.ndarray
    branch: str
    samples: int


def synthesize(model: DSTTS, header: dict, phonemes: Sequence[str], reference: dsp.AudioClip, out_wav,
               *, threshold: int | None = None, gl: GriffinLimConfig | None = None) -> SynthesisResult:
    vocab = header["vocab"]
    ids = encode_phonemes_text(phonemes, vocab)
    if len(reference) < dsp.WIN:
        raise ValueError(f"reference clip needs at least {dsp.WIN} samples")
    feats = dsp.extract_features(reference)
    mel, adapted = model.synthesize(ids, feats.mel, feats.mfcc, threshold=threshold)
    mel = mel.astype(np.float64)
    log.info("routing: %d phonemes, threshold %d -> branch=%s", adapted.decision.sequence_length,
             adapted.decision.threshold, adapted.decision.branch.value.capitalize())
    gl = gl or GriffinLimConfig(seed=model.cfg.seed)
    clip = mel_to_audio(mel, gl)
    out_wav = Path(out_wav)
    out_wav.parent.mkdir(parents=True, exist_ok=True)
    dsp.write_wav(out_wav, clip, peak=0.95)
    stem = out_wav.with_suffix("")
    mel_path = Path(f"{stem}.mel.dstt")
    image_path = Path(f"{stem}.pgm")
    save_tensor(mel_path, mel)
    write_pgm(image_path, mel.T[::-1])
    meta = {
        "config": model.cfg.to_dict(), "phonemes": list(phonemes),
        "durations": adapted.durations.tolist(), "branch": adapted.decision.branch.value,
        "threshold": adapted.decision.threshold, "samples": len(clip),
        "griffin_lim": vars(gl),
    }
    Path(f"{stem}.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return SynthesisResult(out_wav, mel_path, image_path, adapted.durations,
                           adapted.decision.branch.value, len(clip))


# -- ablation ------------------------------------------------------------------------

def proxy_scores(model: DSTTS, utts: Sequence[Utterance], gl_iterations: int = 16) -> tuple[float, float]:
    """(mean SMCS proxy, mean teacher-forced mel MAE) over ``utts``.

    Each utterance is resynthesized from its own reference features; the
    similarity compares style embeddings of reference and resynthesized audio.
    """
    embed = StyleEmbedder(model)
    scores = []
    for u in utts:
        mel, _ = model.synthesize(u.ids, u.mel, u.mfcc)
        clip = mel_to_audio(mel.astype(np.float64), GriffinLimConfig(iterations=gl_iterations, seed=model.cfg.seed))
        ref = model.embed(u.mel, u.mfcc)
        scores.append(cosine_similarity(ref, embed(clip)))
    mae = evaluate_losses(model, utts).l_rec
    return float(np.mean(scores)), float(mae)


def ablate(base: RunConfig, utts: Sequence[Utterance], out_dir, *, vocab: list[str], stats: Stats,
           thresholds: Sequence[int] = SWEEP_THRESHOLDS, variants: Sequence[str] = ()) -> EvalReport:
    """Train one model per threshold (and per component variant) and tabulate the proxy scores."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows, runs = [], []
    for t in thresholds:
        runs.append((f"threshold={int(t)}", base.replace(dva_threshold=int(t))))
    for name in variants:
        if name not in VARIANTS:
            raise ConfigError(f"unknown ablation variant {name!r}; choose from {sorted(VARIANTS)}")
        runs.append((name, base.replace(**VARIANTS[name])))
    flags = {}
    for label, cfg in runs:
        cfg.validate()
        run_dir = out / label.replace(" ", "_").replace("/", "-").replace("=", "-")
        ckpt = train(cfg, utts, run_dir, vocab=vocab, stats=stats)
        model, _, _ = load_model(ckpt)
        smcs_proxy, mae = proxy_scores(model, utts)
        rows.append(PairResult(label, smcs_proxy, mae))
        flags[label] = {k: getattr(cfg, k) for k in ("dva_threshold", "no_mfcc", "no_dva_sp", "no_dva_lp")}
        log.info("%s: smcs-proxy=%.4f mel-mae=%.4f", label, smcs_proxy, mae)
    metadata = {"runs": flags, "steps": base.steps, "seed": base.seed, "note": EMBEDDER_NOTE}
    return EvalReport(rows, metadata)


# -- gradient check -----------------------------------------------------------------------

def gradcheck_batch(cfg: RunConfig, lengths: Sequence[int] = (5, 6), seed: int = 0) -> list[Utterance]:
    """Tiny synthetic utterances (one phoneme id per symbol class) for gradient checks."""
    utts = []
    for k, n in enumerate(lengths):
        s = synthetic.synthetic_utterance(n, seed=seed + k, frames_per_phoneme=(1, 3))
        f = dsp.extract_features(s.clip)
        ids = np.array([1 + synthetic.SYMBOLS.index(p) % (cfg.vocab_size - 1) for p in s.phonemes])
        pitch = dsp.phoneme_average(f.pitch, s.durations, voiced_only=True)
        energy = dsp.phoneme_average(f.energy, s.durations)
        utts.append(Utterance(ids, f.mel, f.mfcc, s.durations, np.where(pitch > 0, (pitch - 150.0) / 50.0, 0.0),
                              (energy - energy.mean()) / (energy.std() + 1e-9), id=f"gc{k}"))
    return utts


def run_gradcheck(seed: int = 0, **overrides) -> GradCheckResult:
    """Gradient check on the tiny configuration with one short- and one long-routed utterance."""
    cfg = tiny_config(seed=seed, dva_threshold=5, **overrides)
    model = DSTTS(cfg)
    return model_grad_check(model, gradcheck_batch(cfg, seed=seed), seed=seed)


def read_pairs(path) -> list[dict]:
    pairs = read_jsonl(path)
    for i, p in enumerate(pairs):
        if "ref_wav" not in p or "syn_wav" not in p:
            raise ValueError(f"{path}: record {i} needs ref_wav and syn_wav")
    return pairs


def vocab_for(cache_dir) -> list[str]:
    vocab = load_vocab(Path(cache_dir) / "vocab.json")
    if not vocab or vocab[0] != PAD:
        raise ValueError(f"vocabulary must reserve id 0 for {PAD!r}")
    return vocab


def load_training_data(cache_dir) -> tuple[list[Utterance], list[str], Stats]:
    vocab = vocab_for(cache_dir)
    stats = Stats.load(Path(cache_dir) / "stats.json")
    return load_dataset(cache_dir, vocab, stats), vocab, stats


def loss_summary(losses: LossBreakdown) -> str:
    return " ".join(f"{k}={v:.4f}" for k, v in losses.as_dict().items())


# -- overfit smoke test ---------------------------------------------------------------

OVERFIT_CONFIG = dict(hidden=64, conv_filter=256, predictor_filter=64)


def overfit_utterance(seed: int = 11) -> Utterance:
    """One short synthetic utterance (8 phonemes, a few dozen frames)."""
    s = synthetic.synthetic_utterance(8, seed=seed)
    f = dsp.extract_features(s.clip)
    ids = np.array([1 + synthetic.SYMBOLS.index(p) for p in s.phonemes])
    pitch = dsp.phoneme_average(f.pitch, s.durations, voiced_only=True)
    energy = dsp.phoneme_average(f.energy, s.durations)
    voiced = pitch[pitch > 0]
    pitch = np.where(pitch > 0, (pitch - voiced.mean()) / max(voiced.std(), 1.0), 0.0)
    return Utterance(ids, f.mel, f.mfcc, s.durations, pitch, (energy - energy.mean()) / energy.std(), id="overfit")


@dataclass
class OverfitResult:
    initial_mae: float
    final_mae: float
    steps: int
    history: list

    @property
    def ratio(self) -> float:
        return self.final_mae / self.initial_mae


def overfit(cfg: RunConfig, utt: Utterance, max_steps: int = 2000, target_ratio: float = 0.1,
            check_every: int = 50) -> OverfitResult:
    """Train on a single utterance until eval-mode mel MAE falls below ``target_ratio`` of its start."""
    model = DSTTS(cfg)
    optimizer = Adam.for_model(model, cfg)
    rng = np.random.default_rng(cfg.seed)
    initial = evaluate_losses(model, [utt]).l_rec
    current, history, step = initial, [(0, initial)], 0
    while step < max_steps:
        train_step([utt], model, optimizer, rng)
        step += 1
        if step % check_every == 0 or step == max_steps:
            current = evaluate_losses(model, [utt]).l_rec
            history.append((step, current))
            if current < target_ratio * initial:
                break
    return OverfitResult(initial, current, step, history)
