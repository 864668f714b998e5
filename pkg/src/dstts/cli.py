"""``dstts`` command-line entry point.

Exit codes: 0 success, 1 validation failure, 2 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import dsp, pipeline
from .config import ConfigError, RunConfig
from .data import PreprocessError, preprocess
from .formats import FormatError
from .metrics import EvalReport, StyleEmbedder, TensorFileEmbedder, emit_report, evaluate_pairs
from .training import NumericalError, load_model
from .vocoder import GriffinLimConfig

log = logging.getLogger("dstts")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--dva-threshold", type=int, dest="dva_threshold")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--ckpt-every", type=int, dest="ckpt_every")
    p.add_argument("--no-mfcc", action="store_const", const=True, dest="no_mfcc")
    p.add_argument("--no-dva-sp", action="store_const", const=True, dest="no_dva_sp")
    p.add_argument("--no-dva-lp", action="store_const", const=True, dest="no_dva_lp")


_OVERRIDES = ("seed", "steps", "dva_threshold", "lr", "batch_size", "ckpt_every", "no_mfcc", "no_dva_sp", "no_dva_lp")


def resolve_config(args, **fixed) -> RunConfig:
    """defaults < --config file < explicit flags."""
    data = RunConfig().to_dict()
    if getattr(args, "config", None):
        data.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
    for key in _OVERRIDES:
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    data.update(fixed)
    return RunConfig.from_dict(data)


def cmd_preprocess(args) -> int:
    summary = preprocess(args.manifest, args.out, vocab_path=args.vocab)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    utts, vocab, stats = pipeline.load_training_data(args.cache)
    cfg = resolve_config(args, vocab_size=len(vocab), cache_dir=str(args.cache), out_dir=str(args.out))
    final = pipeline.train(cfg, utts, args.out, vocab=vocab, stats=stats, resume=args.resume)
    print(final)
    return EXIT_OK


def cmd_synthesize(args) -> int:
    model, header, _ = load_model(args.checkpoint)
    if args.phoneme_file:
        symbols = Path(args.phoneme_file).read_text(encoding="utf-8").split()
    else:
        symbols = args.phonemes.split()
    if not symbols:
        raise ValueError("empty phoneme sequence")
    gl = GriffinLimConfig(iterations=args.gl_iterations, seed=model.cfg.seed if args.seed is None else args.seed)
    result = pipeline.synthesize(model, header, symbols, dsp.load_audio(args.reference), args.out,
                                 threshold=args.dva_threshold, gl=gl)
    print(f"branch={result.branch.capitalize()} frames={int(result.durations.sum())} "
          f"samples={result.samples} wav={result.wav}")
    return EXIT_OK


def cmd_eval(args) -> int:
    pairs = pipeline.read_pairs(args.pairs)
    base = Path(args.pairs).parent
    meta = {"pairs": str(args.pairs)}
    if args.embeddings:
        embedder, use_audio = TensorFileEmbedder(args.embeddings), False
        meta["embedder"] = f"tensor files in {args.embeddings}"
    elif args.checkpoint:
        model, header, _ = load_model(args.checkpoint)
        embedder, use_audio = StyleEmbedder(model), True
        meta.update(embedder="style-encoder", checkpoint=str(args.checkpoint), config=model.cfg.to_dict())
    else:
        raise ValueError("eval needs --checkpoint or --embeddings")
    report = EvalReport(evaluate_pairs(pairs, embedder, base_dir=base, use_audio=use_audio), meta)
    text = emit_report(report, args.format, args.out)
    if not args.out:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_ablate(args) -> int:
    utts, vocab, stats = pipeline.load_training_data(args.cache)
    cfg = resolve_config(args, vocab_size=len(vocab), cache_dir=str(args.cache), out_dir=str(args.out))
    report = pipeline.ablate(cfg, utts, args.out, vocab=vocab, stats=stats,
                             thresholds=args.thresholds, variants=args.variants)
    report.metadata["config"] = cfg.to_dict()
    out = Path(args.out) / f"ablation.{'md' if args.format == 'markdown' else 'json'}"
    sys.stdout.write(emit_report(report, args.format, out))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    result = pipeline.run_gradcheck(seed=args.seed or 0)
    ok = result.max_rel_error <= args.tolerance
    print(f"max_rel_error={result.max_rel_error:.3e} entries={result.checked_entries} "
          f"tensors={len(result.per_tensor)} refined={result.refined_entries} worst={result.worst} {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_INVALID


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dstts", description="Dual-style TTS acoustic model toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="extract features for a JSONL manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab", help="fixed vocabulary JSON (default: built from the manifest)")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train on a feature cache")
    p.add_argument("--cache", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    _run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synthesize", help="phonemes + reference clip -> WAV")
    p.add_argument("--checkpoint", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--phonemes", help="space-separated phoneme symbols")
    group.add_argument("--phoneme-file", dest="phoneme_file")
    p.add_argument("--reference", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dva-threshold", type=int, dest="dva_threshold")
    p.add_argument("--seed", type=int)
    p.add_argument("--gl-iterations", type=int, default=32, dest="gl_iterations")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("eval", help="score reference/synthesis pairs")
    p.add_argument("--pairs", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--embeddings", help="directory of precomputed <id>.dstt embeddings")
    p.add_argument("--format", choices=("json", "markdown"), default="json")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="threshold sweep and component ablations")
    p.add_argument("--cache", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--thresholds", type=int, nargs="*", default=list(pipeline.SWEEP_THRESHOLDS))
    p.add_argument("--variants", nargs="*", default=[], choices=sorted(pipeline.VARIANTS))
    p.add_argument("--format", choices=("json", "markdown"), default="markdown")
    _run_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check on a tiny model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        log.error("numerical abort: %s", exc)
        return EXIT_NUMERICAL
    except (ConfigError, PreprocessError, FormatError, dsp.AudioError, ValueError, KeyError,
            FileNotFoundError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
