"""A small reverse-mode automatic differentiation engine over numpy arrays.

Every differentiable operation records its parents and a closure mapping the
output gradient to parent gradients.  ``Tensor.backward`` walks the recorded
graph in reverse topological order.  Only the operations the model needs are
provided; each one is covered by finite-difference tests.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

from . import _kernels

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if type(data) is not np.ndarray or data.dtype.kind not in "fc":
            if isinstance(data, Tensor):
                data = data.data
            data = np.asarray(data)
            if data.dtype.kind not in "fc":
                data = data.astype(np.float64)
        self.data = data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self.name = name

    # -- bookkeeping -------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient requires a scalar output")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not _needs_grad(parent):
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and _needs_grad(p):
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(np.asarray(data))
    if _GRAD_ENABLED and any(_needs_grad(p) for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _coerce(a, b):
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    return a, b


# -- elementwise arithmetic ------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _coerce(a, b)
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b)
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = _coerce(a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        return (_unbroadcast(g / bd, ad.shape),
                _unbroadcast(-g * out / bd, bd.shape))

    return _result(out, (a, b), backward)


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _result(ad ** exponent, (a,), lambda g: (g * exponent * ad ** (exponent - 1),))


def matmul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    ad, bd = a.data, b.data

    def backward(g):
        # promote vectors to matrices so one rule covers every case
        a2 = ad[None, :] if ad.ndim == 1 else ad
        b2 = bd[:, None] if bd.ndim == 1 else bd
        g2 = g
        if ad.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if bd.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        ga = g2 @ np.swapaxes(b2, -1, -2)
        gb = np.swapaxes(a2, -1, -2) @ g2
        ga = _unbroadcast(ga, a2.shape).reshape(ad.shape)
        gb = _unbroadcast(gb, b2.shape).reshape(bd.shape)
        return ga, gb

    return _result(ad @ bd, (a, b), backward)


# -- unary functions -------------------------------------------------------

def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _result(np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (g * 0.5 / out,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = expit(a.data)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.logaddexp(0.0, x)
    return _result(out, (a,), lambda g: (g / (1.0 + np.exp(-x)),))


def mish(a) -> Tensor:
    return mul(a, tanh(softplus(a)))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    s = np.sign(a.data)
    return _result(np.abs(a.data), (a,), lambda g: (g * s,))


# -- reductions and shape ops ---------------------------------------------

def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    shape, dtype = a.shape, a.dtype

    def backward(g):
        if isinstance(index, np.ndarray) and index.dtype.kind in "iu" and index.ndim == 1:
            return (_kernels.scatter_add_rows(g, index, shape[0]),)
        out = np.zeros(shape, dtype=dtype)
        np.add.at(out, index, g)
        return (out,)

    return _result(a.data[index], (a,), backward)


def take_rows(a, index: np.ndarray) -> Tensor:
    """Gather rows ``a[index]``; backward scatters with repeats accumulated."""
    return getitem(a, np.asarray(index, dtype=np.int64))


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _result(np.stack([t.data for t in tensors], axis=axis), tensors, backward)


# -- fused neural-network primitives --------------------------------------

def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    x = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(x)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _result(out, (a,), backward)


def conv1d(x, weight, bias=None) -> Tensor:
    """'Same' 1-D convolution over a (length, channels) sequence.

    ``weight`` has shape (kernel, in_channels, out_channels); the kernel size
    must be odd.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    length, cin = x.shape
    k, _, cout = weight.shape
    pad = k // 2
    if k == 1:
        cols = x.data
    else:
        xp = np.zeros((length + 2 * pad, cin), dtype=x.dtype)
        xp[pad:pad + length] = x.data
        cols = np.concatenate([xp[j:j + length] for j in range(k)], axis=1)  # (L, K*Cin)
    wmat = weight.data.reshape(k * cin, cout)
    out = cols @ wmat
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        gw = (cols.T @ g).reshape(weight.shape)
        gx = _kernels.col2im(g @ wmat.T, length, k, cin) if _needs_grad(x) else None
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    return _result(out, parents, backward)


def dropout(x, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    x = as_tensor(x)
    if not training or rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return mul(x, Tensor(keep))


def where_mask(x, mask: np.ndarray, fill: float) -> Tensor:
    """Replace entries where ``mask`` is True by the constant ``fill``."""
    x = as_tensor(x)
    keep = ~mask
    out = np.where(mask, np.asarray(fill, dtype=x.dtype), x.data)
    return _result(out, (x,), lambda g: (g * keep,))


def lstm_sequence(x, w_in, w_rec, bias, reverse: bool = False) -> Tensor:
    """Run an LSTM (gate order i, f, g, o) over a (length, features) sequence.

    Fused into one graph node with hand-written backpropagation through time;
    returns the hidden states, shape (length, units), in input order.
    """
    x, w_in, w_rec, bias = (as_tensor(t) for t in (x, w_in, w_rec, bias))
    length = x.shape[0]
    u = w_rec.shape[0]
    wr = w_rec.data
    pre = x.data @ w_in.data + bias.data
    order = range(length - 1, -1, -1) if reverse else range(length)
    gates = np.empty((length, 4 * u), dtype=pre.dtype)
    cells = np.empty((length, u), dtype=pre.dtype)
    hs = np.empty((length, u), dtype=pre.dtype)
    h = np.zeros(u, dtype=pre.dtype)
    c = np.zeros(u, dtype=pre.dtype)
    for t in order:
        z = pre[t] + h @ wr
        i, f, o = expit(z[:u]), expit(z[u:2 * u]), expit(z[3 * u:])
        g = np.tanh(z[2 * u:3 * u])
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[t, :u], gates[t, u:2 * u], gates[t, 2 * u:3 * u], gates[t, 3 * u:] = i, f, g, o
        cells[t], hs[t] = c, h

    def backward(gh_all):
        dpre = np.empty_like(gates)
        dh = np.zeros(u, dtype=gates.dtype)
        dc = np.zeros(u, dtype=gates.dtype)
        steps = list(order)
        for n in range(length - 1, -1, -1):
            t = steps[n]
            prev_t = steps[n - 1] if n > 0 else None
            i, f, g, o = gates[t, :u], gates[t, u:2 * u], gates[t, 2 * u:3 * u], gates[t, 3 * u:]
            tc = np.tanh(cells[t])
            dh = dh + gh_all[t]
            do = dh * tc
            dc = dc + dh * o * (1.0 - tc * tc)
            c_prev = cells[prev_t] if prev_t is not None else 0.0
            di, df, dg = dc * g, dc * c_prev, dc * i
            dz = dpre[t]
            dz[:u] = di * i * (1.0 - i)
            dz[u:2 * u] = df * f * (1.0 - f)
            dz[2 * u:3 * u] = dg * (1.0 - g * g)
            dz[3 * u:] = do * o * (1.0 - o)
            dc = dc * f
            dh = wr @ dz
        h_prev = np.zeros_like(hs)
        for n in range(1, length):
            h_prev[steps[n]] = hs[steps[n - 1]]
        return (dpre @ w_in.data.T, x.data.T @ dpre, h_prev.T @ dpre, dpre.sum(axis=0))

    return _result(hs, (x, w_in, w_rec, bias), backward)
