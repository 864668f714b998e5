import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dstts import autograd as ag
from dstts.autograd import Tensor


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return g


def check(build, *shapes, seed=0, positive=False, tol=1e-6):
    rng = np.random.default_rng(seed)
    arrays = [rng.uniform(0.5, 2.0, s) if positive else rng.standard_normal(s) for s in shapes]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    out = build(*leaves)
    weights = rng.standard_normal(out.shape)
    (out * weights).sum().backward()
    for leaf in leaves:
        def f():
            with ag.no_grad():
                return float(np.sum(build(*leaves).data * weights))
        num = numeric_grad(f, leaf.data)
        np.testing.assert_allclose(leaf.grad, num, rtol=tol, atol=tol)


@pytest.mark.parametrize("name,build,shapes,positive", [
    ("add-broadcast", lambda a, b: a + b, [(3, 4), (4,)], False),
    ("sub", lambda a, b: a - b, [(3, 4), (3, 1)], False),
    ("mul", lambda a, b: a * b, [(2, 3), (2, 3)], False),
    ("div", lambda a, b: a / b, [(2, 3), (3,)], True),
    ("power", lambda a: a ** 3, [(4,)], False),
    ("matmul", lambda a, b: a @ b, [(3, 4), (4, 2)], False),
    ("matmul-vec-left", lambda a, b: a @ b, [(4,), (4, 2)], False),
    ("matmul-vec-right", lambda a, b: a @ b, [(3, 4), (4,)], False),
    ("matmul-batched", lambda a, b: a @ b, [(2, 3, 4), (2, 4, 5)], False),
    ("exp", ag.exp, [(5,)], False),
    ("log", ag.log, [(5,)], True),
    ("sqrt", ag.sqrt, [(5,)], True),
    ("tanh", ag.tanh, [(5,)], False),
    ("sigmoid", ag.sigmoid, [(5,)], False),
    ("softplus", ag.softplus, [(5,)], False),
    ("mish", ag.mish, [(5,)], False),
    ("sum-axis", lambda a: a.sum(axis=0), [(3, 4)], False),
    ("mean-keepdims", lambda a: a.mean(axis=-1, keepdims=True), [(3, 4)], False),
    ("reshape-transpose", lambda a: a.reshape(4, 3).T, [(3, 4)], False),
    ("getitem-rows", lambda a: a[np.array([0, 2, 2, 1])], [(3, 2)], False),
    ("take_rows", lambda a: ag.take_rows(a, np.array([1, 1, 0])), [(2, 3)], False),
    ("concat", lambda a, b: ag.concat([a, b], axis=1), [(2, 3), (2, 2)], False),
    ("stack", lambda a, b: ag.stack([a, b], axis=0), [(2, 3), (2, 3)], False),
    ("softmax", lambda a: ag.softmax(a, axis=-1), [(3, 5)], False),
    ("conv1d-k3", lambda x, w, b: ag.conv1d(x, w, b), [(6, 2), (3, 2, 4), (4,)], False),
    ("conv1d-k1", lambda x, w: ag.conv1d(x, w), [(6, 3), (1, 3, 2)], False),
    ("where_mask", lambda a: ag.where_mask(a, np.array([[True, False, False]] * 2), -7.0), [(2, 3)], False),
])
def test_op_gradients(name, build, shapes, positive):
    check(build, *shapes, positive=positive)


def test_relu_and_abs_away_from_kink():
    x = Tensor(np.array([-2.0, -0.5, 0.5, 3.0]), requires_grad=True)
    (ag.relu(x) * 2 + ag.absolute(x)).sum().backward()
    np.testing.assert_array_equal(x.grad, [-1.0, -1.0, 3.0, 3.0])


@pytest.mark.parametrize("reverse", [False, True])
def test_lstm_sequence_gradients(reverse):
    check(lambda x, wi, wr, b: ag.lstm_sequence(x, wi, wr, b, reverse), (5, 3), (3, 8), (2, 8), (8,))


def test_shared_leaf_accumulates():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    y = x * x + x
    y.sum().backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with ag.no_grad():
        y = x * 2
    assert y._backward is None and y._parents == ()
    assert ag.is_grad_enabled()


def test_backward_requires_scalar():
    with pytest.raises(ValueError):
        (Tensor(np.ones(3), requires_grad=True) * 2).backward()


def test_deep_chain_does_not_recurse():
    x = Tensor(np.array(1.0), requires_grad=True)
    y = x
    for _ in range(5000):
        y = y * 1.0
    y.backward()
    assert x.grad == 1.0


@given(st.floats(-30, 30))
def test_sigmoid_matches_logistic(v):
    got = float(ag.sigmoid(Tensor(np.array(v))).data)
    assert got == pytest.approx(1.0 / (1.0 + np.exp(-v)), rel=1e-12, abs=1e-300)


def test_dropout_inverted_scaling_and_identity_in_eval():
    x = Tensor(np.ones((200, 50)))
    rng = np.random.default_rng(0)
    y = ag.dropout(x, 0.5, rng, training=True).data
    assert set(np.unique(y)) <= {0.0, 2.0}
    assert abs(y.mean() - 1.0) < 0.05
    assert ag.dropout(x, 0.5, rng, training=False) is x
