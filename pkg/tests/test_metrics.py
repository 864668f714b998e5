import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dstts import dsp
from dstts.config import tiny_config
from dstts.formats import save_tensor
from dstts.metrics import (EvalReport, PairResult, StyleEmbedder, TensorFileEmbedder, cosine_similarity,
                           emit_report, evaluate_pairs, parse_report, smcs)
from dstts.model import DSTTS


def test_cosine_examples():
    assert cosine_similarity([1, 0], [1, 1]) == pytest.approx(1 / math.sqrt(2), abs=1e-12)
    assert round(cosine_similarity([1, 0], [1, 1]), 5) == 0.70711
    assert cosine_similarity([3, 4], [3, 4]) == pytest.approx(1.0)
    assert cosine_similarity([1, 0, 0], [0, 2, 0]) == 0.0
    with pytest.raises(ValueError):
        cosine_similarity([0, 0], [1, 1])
    with pytest.raises(ValueError):
        cosine_similarity([1, 2], [1, 2, 3])


vec = arrays(np.float64, 6, elements=st.floats(-100, 100))


@given(vec, vec, st.floats(0.01, 100))
def test_cosine_bounds_and_scale(a, b, k):
    if np.linalg.norm(a) < 1e-6 or np.linalg.norm(b) < 1e-6:
        return
    c = cosine_similarity(a, b)
    assert -1.0 <= c <= 1.0
    assert cosine_similarity(k * a, b) == pytest.approx(c, abs=1e-9)
    assert cosine_similarity(b, a) == pytest.approx(c, abs=1e-12)


def report():
    pairs = [PairResult("a", 0.5, 1.25), PairResult("b", 0.25, None), PairResult("c", -0.125, 0.75)]
    return EvalReport(pairs, {"threshold": 85, "checkpoint": "final.dsck"})


def test_report_means():
    r = report()
    assert r.mean_smcs == pytest.approx(0.625 / 3)
    assert r.mean_mel_mae == pytest.approx(1.0)
    assert EvalReport([PairResult("x", 1.0)]).mean_mel_mae is None


@pytest.mark.parametrize("fmt", ["json", "markdown"])
def test_report_round_trip(fmt, tmp_path):
    r = report()
    text = emit_report(r, fmt, tmp_path / "out")
    assert (tmp_path / "out").read_text() == text
    back = parse_report(text)
    assert back.pairs == r.pairs and back.metadata == r.metadata
    assert emit_report(back, fmt) == text


def test_markdown_shape():
    lines = emit_report(report(), "markdown").splitlines()
    table = [x for x in lines if x.startswith("|")]
    assert table[0] == "| Methods | WER | SMCS | Mel MAE |"
    assert len(table) == 2 + 3 + 1


def test_empty_report_rejected():
    with pytest.raises(ValueError):
        emit_report(EvalReport([]))
    with pytest.raises(ValueError):
        emit_report(report(), "csv")


def test_tensor_file_embedder(tmp_path, rng):
    a, b = rng.standard_normal(16), rng.standard_normal(16)
    save_tensor(tmp_path / "ref.dstt", a)
    save_tensor(tmp_path / "syn.dstt", b)
    emb = TensorFileEmbedder(tmp_path)
    assert emb.dim == 16
    expected = cosine_similarity(a.astype(np.float32), b.astype(np.float32))
    assert smcs("ref", "wavs/syn.wav", emb) == pytest.approx(expected, abs=1e-12)
    save_tensor(tmp_path / "odd.dstt", np.ones(3))
    with pytest.raises(ValueError):
        emb("odd")
    with pytest.raises(FileNotFoundError):
        TensorFileEmbedder(tmp_path / "missing")


def test_style_embedder_ignores_gain(speech):
    model = DSTTS(tiny_config())
    emb = StyleEmbedder(model)
    a = emb(speech.clip)
    b = emb(dsp.AudioClip(speech.clip.samples * 0.3, 16000))
    assert a.shape == (emb.dim,)
    np.testing.assert_allclose(a, b, atol=1e-9)
    assert smcs(speech.clip, speech.clip, emb) == pytest.approx(1.0)


def test_evaluate_pairs_from_wavs(tmp_path, speech):
    dsp.write_wav(tmp_path / "ref.wav", speech.clip)
    dsp.write_wav(tmp_path / "syn.wav", dsp.AudioClip(speech.clip.samples[::-1].copy(), 16000))
    pairs = [{"ref_wav": "ref.wav", "syn_wav": "syn.wav", "target_wav": "ref.wav"},
             {"id": "same", "ref_wav": "ref.wav", "syn_wav": "ref.wav"}]
    res = evaluate_pairs(pairs, StyleEmbedder(DSTTS(tiny_config())), base_dir=tmp_path)
    assert res[0].id == "syn" and res[0].mel_mae > 0
    assert res[1].smcs == pytest.approx(1.0) and res[1].mel_mae is None
    assert all(-1 <= p.smcs <= 1 for p in res)
