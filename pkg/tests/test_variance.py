import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dstts import autograd as ag
from dstts.autograd import Tensor
from dstts.config import tiny_config
from dstts.model import DSTTS, Utterance
from dstts.training import grad_check, loss_terms, total_loss
from dstts.variance import (Branch, VarianceAdaptor, VarianceEmbedding, VariancePredictor, apply_variances,
                            durations_from_log, length_regulate, length_regulate_index, predict_variance, route)


def test_route_boundaries():
    assert route(85, 85).branch is Branch.SHORT
    assert route(86, 85).branch is Branch.LONG
    assert route(1, 1).branch is Branch.SHORT
    assert route(5).threshold == 85


def test_route_exhaustive_default_threshold():
    for n in range(1, 201):
        assert (route(n, 85).branch is Branch.SHORT) == (n <= 85)


@given(st.integers(1, 500), st.integers(1, 500))
def test_route_rule(n, t):
    assert (route(n, t).branch is Branch.SHORT) == (n <= t)
    assert route(n, t, no_short=True).branch is Branch.LONG
    assert route(n, t, no_long=True).branch is Branch.SHORT


def test_route_validation():
    for args in ((0, 85), (5, 0)):
        with pytest.raises(ValueError):
            route(*args)
    with pytest.raises(ValueError):
        route(5, 5, no_short=True, no_long=True)


def test_six_predictors_with_branch_heads(tiny_cfg):
    ad = VarianceAdaptor(np.random.default_rng(0), tiny_cfg)
    preds = [(k, v) for k, v in vars(ad).items() if isinstance(v, VariancePredictor)]
    assert len(preds) == 6
    for name, p in preds:
        head = type(p.head).__name__
        assert head == ("Linear" if name.endswith("_long") else "Conv1d")


def test_length_regulate_examples():
    h = np.arange(9.0).reshape(3, 3)
    out = length_regulate(h, [2, 0, 3]).data
    np.testing.assert_array_equal(out, h[[0, 0, 2, 2, 2]])
    np.testing.assert_array_equal(length_regulate(h, [1, 1, 1]).data, h)
    with pytest.raises(ValueError):
        length_regulate(h, [0, 0, 0])
    with pytest.raises(ValueError):
        length_regulate(h, [1, 2])


@given(st.lists(st.integers(0, 6), min_size=1, max_size=12).filter(lambda d: sum(d) > 0))
def test_length_regulate_sum_and_order(d):
    idx = length_regulate_index(d)
    assert idx.size == sum(d)
    assert np.all(np.diff(idx) >= 0)


def test_apply_variances(rng):
    emb = VarianceEmbedding(np.random.default_rng(0), 16)
    h = rng.standard_normal((5, 16))
    np.testing.assert_array_equal(apply_variances(h, np.zeros(5), np.zeros(5), emb), h)
    p1, p2, e = rng.standard_normal(5), rng.standard_normal(5), rng.standard_normal(5)
    both = apply_variances(h, p1 + p2, e, emb)
    split = apply_variances(h, p1, e, emb) + apply_variances(h, p2, np.zeros(5), emb) - h
    np.testing.assert_allclose(both, split, atol=1e-12)
    with pytest.raises(ValueError):
        apply_variances(h, np.zeros(4), np.zeros(5), emb)


def test_durations_from_log():
    np.testing.assert_array_equal(durations_from_log(np.log1p([0.0, 2.0, 6.6, -0.9])), [1, 2, 7, 1])


def make_utt(n, rng, frames_each=2):
    d = np.full(n, frames_each)
    t = int(d.sum())
    return Utterance(rng.integers(1, 5, n), rng.standard_normal((t, 80)), rng.standard_normal((t, 20)),
                     d, rng.standard_normal(n), rng.standard_normal(n))


def test_teacher_forced_frame_count(tiny_cfg, rng):
    model = DSTTS(tiny_cfg)
    u = make_utt(6, rng, 3)
    out = model(u)
    assert out.mel.shape == (18, 80)
    assert out.adaptor.durations.tolist() == [3] * 6


def test_inference_durations_at_least_one(tiny_cfg, rng):
    model = DSTTS(tiny_cfg)
    u = make_utt(7, rng)
    _, adapted = model.synthesize(u.ids, u.mel, u.mfcc)
    assert np.all(adapted.durations >= 1)


def test_teacher_forced_equals_inference_at_fixed_point(tiny_cfg, rng):
    model = DSTTS(tiny_cfg)
    u = make_utt(6, rng)
    _, adapted = model.synthesize(u.ids, u.mel, u.mfcc)
    fixed = Utterance(u.ids, np.zeros((int(adapted.durations.sum()), 80)), u.mfcc, adapted.durations,
                      adapted.pitch.data, adapted.energy.data)
    tf = model(fixed, style=ag.Tensor(model.embed(u.mel, u.mfcc)))
    assert tf.mel.shape[0] == adapted.frames.shape[0]
    np.testing.assert_allclose(tf.mel.data, model.decoder(adapted.frames, ag.Tensor(model.embed(u.mel, u.mfcc))).data,
                               atol=1e-10)


def test_85_and_86_use_different_parameters():
    cfg = tiny_config()
    ad = VarianceAdaptor(np.random.default_rng(0), cfg)
    r = np.random.default_rng(1)
    h = r.standard_normal((86, 16))
    a = ad(Tensor(h[:85]))
    b = ad(Tensor(h))
    assert a.decision.branch is Branch.SHORT and b.decision.branch is Branch.LONG
    assert not np.allclose(a.log_duration.data[:80], b.log_duration.data[:80])


def test_ablation_flags_force_branch():
    r = np.random.default_rng(0)
    for flag, branch in (("no_dva_sp", Branch.LONG), ("no_dva_lp", Branch.SHORT)):
        ad = VarianceAdaptor(np.random.default_rng(0), tiny_config(**{flag: True}))
        for n in (1, 85, 86, 150):
            assert ad.route(n).branch is branch


@pytest.mark.parametrize("n,active", [(4, "short"), (7, "long")])
def test_inactive_branch_gets_exactly_zero_gradient(n, active, rng):
    cfg = tiny_config(dva_threshold=5)
    model = DSTTS(cfg)
    u = make_utt(n, rng)
    model.zero_grad()
    total_loss(loss_terms([model(u)], [u])).backward()
    inactive = "long" if active == "short" else "short"
    for kind in ("duration", "pitch", "energy"):
        for name, p in getattr(model.adaptor, f"{kind}_{inactive}").named_parameters():
            assert p.grad is None or not p.grad.any(), name
        assert any(p.grad is not None and p.grad.any()
                   for _, p in getattr(model.adaptor, f"{kind}_{active}").named_parameters())


@pytest.mark.parametrize("branch", list(Branch))
def test_predictor_gradients(branch, rng):
    pred = VariancePredictor(np.random.default_rng(0), tiny_config(), branch)
    h = Tensor(rng.standard_normal((6, 16)), requires_grad=True)
    target = rng.standard_normal(6)

    def loss():
        d = pred(h) - target
        return ag.mean(d * d)

    assert grad_check(loss, {"h": h, **pred.parameters()}).max_rel_error <= 1e-4


def test_predict_variance_shape(tiny_cfg, rng):
    ad = VarianceAdaptor(np.random.default_rng(0), tiny_cfg)
    out = predict_variance("pitch", rng.standard_normal((9, 16)), route(9), ad)
    assert out.shape == (9,) and np.all(np.isfinite(out))
