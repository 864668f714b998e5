"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines appear in
the terminal output whether or not capture is enabled.
"""

import json
import math
import time
import wave
from fractions import Fraction

import numpy as np
import pytest
import scipy.signal

from dstts import dsp, pipeline, synthetic
from dstts.autograd import Tensor
from dstts.cli import EXIT_OK, main
from dstts.config import RunConfig, tiny_config
from dstts.formats import load_checkpoint
from dstts.metrics import parse_report
from dstts.model import DSTTS
from dstts.sgf import SgfLayer, film, normalize, sgf_blend, sgf_modulate
from dstts.training import AdamState, adam_step, forward_batch, loss_terms, total_loss
from dstts.variance import Branch, route
from dstts.vocoder import GriffinLimConfig, griffin_lim

pytestmark = pytest.mark.acceptance


@pytest.fixture
def verdict(request):
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")

    def emit(number: int, title: str, ok: bool, detail: str = "") -> None:
        line = f"[criterion {number:2d}] {'PASS' if ok else 'FAIL'} {title}" + (f" ({detail})" if detail else "")
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        else:
            print(line)
        assert ok, line

    return emit


# -- 1 --------------------------------------------------------------------------------

def _exact_blend(g, b, e, d):
    g, b, e, d = (Fraction(str(v)) for v in (g, b, e, d))
    return float(g * d + e * (1 - d)), float(b * d + e * (1 - d))


def test_c01_sgf_equations(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    errs = []
    for _ in range(50):
        h = rng.standard_normal(12) * 3
        g, b, e = np.tanh(rng.standard_normal((3, 12)))
        y = normalize(h).data
        gf, bf = sgf_blend(g, b, e, np.ones(12))
        errs.append(np.max(np.abs((gf * y + bf).data - film(h, g, b).data)))
        g0, b0 = sgf_blend(g, b, e, np.zeros(12))
        errs.append(np.max(np.abs((g0 * y + b0).data - (e * y + e))))
        a, c = rng.uniform(0.5, 20), rng.uniform(-20, 20)
        errs.append(np.max(np.abs(normalize(a * h + c).data - y)))
    errs.append(np.max(np.abs(normalize(np.array([1.0, 2.0, 3.0])).data - [-1.22474487, 0.0, 1.22474487])))
    want_g, want_b = _exact_blend(0.5, -0.2, 0.1, 0.73106)
    gb = sgf_blend(0.5, -0.2, 0.1, 0.73106)
    errs += [abs(float(gb[0].data) - want_g), abs(float(gb[1].data) - want_b)]
    layer = SgfLayer(np.random.default_rng(0), 2, 3).zero_weights()
    layer.proj_gamma.bias.data[:] = math.atanh(0.5)
    layer.proj_beta.bias.data[:] = math.atanh(-0.2)
    layer.proj_eta.bias.data[:] = math.atanh(0.1)
    layer.proj_delta.bias.data[:] = math.log(0.73106 / (1 - 0.73106))
    root = math.sqrt(1.5)
    out = sgf_modulate(np.array([1.0, 2.0, 3.0]), np.zeros(2), layer)
    errs.append(np.max(np.abs(out - [-want_g * root + want_b, want_b, want_g * root + want_b])))
    elapsed = time.perf_counter() - t0
    worst = float(max(errs))
    verdict(1, "SGF endpoints, invariance and worked vectors", worst <= 1e-6 and elapsed < 1.0,
            f"max abs error {worst:.2e}, {elapsed:.3f} s")


# -- 2 --------------------------------------------------------------------------------

def test_c02_initialization_contract(verdict):
    model = DSTTS(RunConfig(vocab_size=10))
    rng = np.random.default_rng(1)
    layers = [layer for stack in (model.encoder, model.decoder) for block in stack.blocks for layer in block.sgf_layers()]
    worst_out, worst_delta = 0.0, 0.0
    for layer in layers:
        layer.zero_weights()
        style = rng.standard_normal(layer.proj_gamma.weight.shape[0]) * 5
        h = rng.standard_normal((7, layer.proj_gamma.weight.shape[1])) * 5
        out = layer(Tensor(h), Tensor(style)).data
        delta = layer.project(Tensor(style))[3].data
        worst_out = max(worst_out, float(np.max(np.abs(out))))
        worst_delta = max(worst_delta, float(np.max(np.abs(delta - 1.0 / (1.0 + math.exp(-1.0))))))
    ok = worst_out == 0.0 and worst_delta <= 1e-6
    verdict(2, "zero-weight SGF init gives zero output and delta = logistic(1)", ok,
            f"{len(layers)} layers, max |out| {worst_out}, max delta error {worst_delta:.1e}")


# -- 3 --------------------------------------------------------------------------------

def test_c03_gradient_check(verdict):
    t0 = time.perf_counter()
    result = pipeline.run_gradcheck(seed=0)
    elapsed = time.perf_counter() - t0
    ok = result.max_rel_error <= 1e-4 and elapsed < 120
    verdict(3, "grad check on the tiny float64 model", ok,
            f"max rel error {result.max_rel_error:.2e} in {result.worst}, {result.checked_entries} entries, "
            f"{len(result.per_tensor)} tensors, {elapsed:.1f} s")


# -- 4 --------------------------------------------------------------------------------

def test_c04_routing_and_branch_isolation(verdict):
    rule_ok = all((route(n, 85).branch is Branch.SHORT) == (n <= 85) for n in range(1, 201))
    cfg = tiny_config(dva_threshold=5)
    model = DSTTS(cfg)
    batch = pipeline.gradcheck_batch(cfg, lengths=(4, 5))  # both short-routed
    model.zero_grad()
    total_loss(loss_terms(forward_batch(model, batch), batch)).backward()
    leaked = [name for kind in ("duration", "pitch", "energy")
              for name, p in getattr(model.adaptor, f"{kind}_long").named_parameters()
              if p.grad is not None and p.grad.any()]
    verdict(4, "routing rule over lengths 1..200 at threshold 85; inactive branch gradients zero",
            rule_ok and not leaked, f"rule {'holds' if rule_ok else 'violated'}, leaking tensors {leaked}")


# -- 5 --------------------------------------------------------------------------------

def test_c05_loss_composition(verdict):
    cfg = tiny_config()
    model = DSTTS(cfg)
    batch = pipeline.gradcheck_batch(cfg)
    terms = loss_terms(forward_batch(model, batch), batch)
    parts = [float(terms[k].data) for k in ("l_rec", "l_d", "l_e", "l_p")]
    exact = float(total_loss(terms).data) == ((parts[0] + parts[1]) + parts[2]) + parts[3]
    out = model(batch[0])
    a = out.adaptor
    a.log_duration.data[:] = np.log1p(batch[0].durations)
    perfect = type(batch[0])(batch[0].ids, out.mel.data.copy(), batch[0].mfcc, batch[0].durations,
                             a.pitch.data.copy(), a.energy.data.copy())
    zero = float(total_loss(loss_terms([out], [perfect])).data)
    ok = exact and min(parts) >= 0 and zero == 0.0
    verdict(5, "total is the fixed-order sum of non-negative terms; perfect predictions give 0", ok,
            f"terms {[round(p, 4) for p in parts]}, perfect total {zero}")


# -- 6 --------------------------------------------------------------------------------

def test_c06_adam(verdict):
    new, state = adam_step({"p": np.array(0.0)}, {"p": np.array(1.0)}, AdamState(), lr=1e-3)
    err = abs(float(new["p"]) + 0.001)
    w = np.random.default_rng(0).standard_normal(5)
    fixed, st2 = adam_step({"w": w}, {"w": np.zeros(5)}, AdamState(t=3), lr=1e-3)
    ok = err <= 1e-9 and np.array_equal(fixed["w"], w) and st2.t == 4
    verdict(6, "single Adam step and zero-gradient fixed point", ok, f"|p + 0.001| = {err:.1e}")


# -- 7 --------------------------------------------------------------------------------

def _sliding_windows(n: int) -> int:
    count, start = 0, 0
    while start + dsp.WIN <= n:
        count += 1
        start += dsp.HOP
    return count


def test_c07_dsp(verdict):
    lengths = np.random.default_rng(7).integers(1024, 100_000, 100)
    frames_ok = all(dsp.frame_count(int(n)) == _sliding_windows(int(n)) for n in lengths)
    clip = synthetic.synthetic_utterance(12, seed=5).clip
    m = dsp.extract_features(clip).mfcc
    norm_err = float(np.max(np.abs(np.linalg.norm(m, axis=1) - 1.0)))
    t = np.arange(16000) / 16000
    f0 = dsp.extract_pitch(dsp.AudioClip(0.5 * scipy.signal.sawtooth(2 * np.pi * 200 * t)))
    median = float(np.median(f0[f0 > 0]))
    ok = frames_ok and norm_err <= 1e-5 and 195 <= median <= 205
    verdict(7, "frame count, MFCC unit norm, 200 Hz sawtooth F0", ok,
            f"frames {'ok' if frames_ok else 'mismatch'}, norm error {norm_err:.1e}, median F0 {median:.2f} Hz")


# -- 8 --------------------------------------------------------------------------------

@pytest.mark.slow
def test_c08_overfit(verdict):
    t0 = time.perf_counter()
    cfg = RunConfig(vocab_size=len(synthetic.SYMBOLS) + 1, **pipeline.OVERFIT_CONFIG)
    result = pipeline.overfit(cfg, pipeline.overfit_utterance(), max_steps=2000)
    elapsed = time.perf_counter() - t0
    ok = result.ratio < 0.1 and elapsed < 600
    verdict(8, "single-utterance overfit", ok,
            f"mel MAE {result.initial_mae:.3f} -> {result.final_mae:.3f} (ratio {result.ratio:.3f}) "
            f"after {result.steps} steps, {elapsed:.0f} s")


# -- shared CLI workspace for 9 and 10 ---------------------------------------------------

@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    short = synthetic.write_corpus(root / "corpus", count=2, seed=2)
    long_ = synthetic.write_corpus(root / "long", count=2, seed=3, phonemes=(78, 92), frames_per_phoneme=(1, 2))
    records = [json.loads(x) for x in short.read_text().splitlines()]
    for rec in (json.loads(x) for x in long_.read_text().splitlines()):
        rec["id"] = "long_" + rec["id"]
        rec["wav"] = str((root / "long" / rec["wav"]).resolve())
        records.append(rec)
    manifest = root / "manifest.jsonl"
    for rec in records:
        if not rec["wav"].startswith("/"):
            rec["wav"] = str((root / "corpus" / rec["wav"]).resolve())
    manifest.write_text("".join(json.dumps(r) + "\n" for r in records))
    cfg = tiny_config(dtype="float32", batch_size=2, lr=1e-3).to_dict()
    cfg.pop("vocab_size")
    (root / "tiny.json").write_text(json.dumps(cfg))
    assert main(["preprocess", "--manifest", str(manifest), "--out", str(root / "cache")]) == EXIT_OK
    assert main(["train", "--cache", str(root / "cache"), "--out", str(root / "run"),
                 "--config", str(root / "tiny.json"), "--steps", "5", "--seed", "3"]) == EXIT_OK
    return root


# -- 9 --------------------------------------------------------------------------------

def test_c09_end_to_end_determinism(verdict, workspace):
    ref = workspace / "corpus" / "utt000.wav"
    symbols = " ".join(["a", "e", "i", "o", "u", "s", "f", "a", "e", "sil"])
    outs = []
    for name in ("first", "second"):
        wav = workspace / "synth" / f"{name}.wav"
        rc = main(["synthesize", "--checkpoint", str(workspace / "run" / "final.dsck"), "--phonemes", symbols,
                   "--reference", str(ref), "--out", str(wav), "--seed", "3"])
        assert rc == EXIT_OK
        outs.append(wav)
    same_wav = outs[0].read_bytes() == outs[1].read_bytes()
    mel = [p.with_suffix("").with_suffix(".mel.dstt") for p in outs]
    same_mel = mel[0].read_bytes() == mel[1].read_bytes()
    durations = json.loads(outs[0].with_suffix(".json").read_text())["durations"]
    with wave.open(str(outs[0])) as w:
        seconds = Fraction(w.getnframes(), w.getframerate())
    expected = Fraction((sum(durations) - 1) * 256 + 1024, 16000)
    ok = same_wav and same_mel and seconds == expected
    verdict(9, "synthesize twice is bit-identical; WAV length formula", ok,
            f"wav identical {same_wav}, mel identical {same_mel}, {float(seconds):.4f} s vs {float(expected):.4f} s")


# -- 10 -------------------------------------------------------------------------------

def test_c10_ablation_harness(verdict, workspace):
    out = workspace / "ablate"
    common = ["--cache", str(workspace / "cache"), "--config", str(workspace / "tiny.json"), "--steps", "3",
              "--seed", "3"]
    rc = main(["ablate", "--out", str(out), *common,
               "--variants", "w/o MFCC", "w/o DVA-SP", "w/o DVA-LP"])
    report = parse_report((out / "ablation.md").read_text())
    labels = [p.id for p in report.pairs]
    sweep = [p for p in report.pairs if p.id.startswith("threshold=")]
    runs = report.metadata.get("runs", {})
    flags_ok = (runs.get("w/o MFCC", {}).get("no_mfcc") is True
                and runs.get("w/o DVA-SP", {}).get("no_dva_sp") is True
                and runs.get("w/o DVA-LP", {}).get("no_dva_lp") is True)
    recorded = []
    for flag in ("--no-mfcc", "--no-dva-sp", "--no-dva-lp"):
        run = workspace / f"flag{flag}"
        assert main(["train", "--out", str(run), *common, flag]) == EXIT_OK
        header, _ = load_checkpoint(run / "final.dsck")
        recorded.append(header["config"][flag[2:].replace("-", "_")] is True)
    ok = (rc == EXIT_OK and [p.id for p in sweep] == [f"threshold={t}" for t in (75, 80, 85, 90, 95)]
          and flags_ok and all(recorded))
    verdict(10, "threshold sweep report and ablation flag runs", ok,
            f"rows {labels}, flags recorded {all(recorded) and flags_ok}")


# -- 11 -------------------------------------------------------------------------------

def test_c11_griffin_lim_consistency(verdict):
    rs = []
    for seed in range(3):
        clip = synthetic.synthetic_utterance(14, seed=100 + seed).clip
        spec = dsp.stft_magnitude(clip)
        rebuilt = dsp.stft_magnitude(griffin_lim(spec, GriffinLimConfig(iterations=32)))
        rs.append(float(np.corrcoef(rebuilt.ravel(), spec.ravel())[0, 1]))
    verdict(11, "Griffin-Lim self-consistency after 32 iterations", min(rs) >= 0.9,
            f"Pearson r {[round(r, 4) for r in rs]}")
