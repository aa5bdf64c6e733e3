"""Reverse-mode autodiff over numpy arrays, small MLPs, optimizers and a
finite-difference gradient checker.

Operations executed while a :class:`Tape` is active are recorded in order;
``Tape.backward`` replays them in exact reverse. Outside a tape the same
functions run forward-only, which is what the gradient checker uses for its
perturbed evaluations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionMismatch, InvalidConfig, NonFiniteValue, NotScalarLoss

_TAPES: list["Tape"] = []


class Tape:
    """Records primal ops; adjoints are accumulated only during ``backward``."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def reset(self):
        self.nodes.clear()

    def record(self, out, parents, vjp):
        self.nodes.append((out, parents, vjp))

    def backward(self, loss: "Tensor", params: Sequence["Tensor"] = ()) -> list[np.ndarray]:
        """Return d(loss)/d(param) for every entry of ``params``.

        Parameters the loss does not depend on get an all-zero gradient. Each
        parameter's ``.grad`` is set as a side effect.
        """
        if not isinstance(loss, Tensor) or loss.data.size != 1:
            raise NotScalarLoss("backward needs a scalar loss")
        adj = {id(loss): np.ones_like(loss.data)}
        for out, parents, vjp in reversed(self.nodes):
            g = adj.pop(id(out), None)
            if g is None:
                continue
            for p, gp in zip(parents, vjp(g)):
                if gp is None or not p.requires_grad:
                    continue
                gp = _unbroadcast(gp, p.data.shape)
                k = id(p)
                adj[k] = adj[k] + gp if k in adj else gp
        grads = []
        for p in params:
            g = adj.get(id(p))
            g = np.zeros_like(p.data) if g is None else np.array(g, dtype=np.float64).reshape(p.data.shape)
            p.grad = g
            grads.append(g)
        return grads


def _unbroadcast(g, shape):
    g = np.asarray(g, dtype=np.float64)
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


class Tensor:
    """A float64 array that can take part in taped computations."""

    __array_priority__ = 100
    __array_ufunc__ = None  # make ndarray operators defer to ours

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64) if not isinstance(data, np.ndarray) \
            else data.astype(np.float64, copy=False)
        self.requires_grad = requires_grad
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return swapaxes(self, -1, -2)

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __truediv__ = lambda self, o: div(self, o)
    __rtruediv__ = lambda self, o: div(o, self)
    __matmul__ = lambda self, o: matmul(self, o)
    __rmatmul__ = lambda self, o: matmul(o, self)
    __neg__ = lambda self: neg(self)
    __pow__ = lambda self, p: power(self, p)
    __getitem__ = lambda self, idx: getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def param(data) -> Tensor:
    """A leaf tensor that receives gradients."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def value(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def make(data, parents, vjp) -> Tensor:
    """Wrap ``data`` as the output of a custom op; ``vjp(g)`` returns one gradient per parent."""
    out = Tensor(data)
    if _TAPES and any(p.requires_grad for p in parents):
        out.requires_grad = True
        _TAPES[-1].record(out, tuple(parents), vjp)
    return out


# ---- elementwise -----------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return make(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return make(a.data / b.data, (a, b),
                lambda g: (g / b.data, -g * a.data / (b.data * b.data)))


def neg(a):
    return make(-a.data, (a,), lambda g: (-g,))


def power(a, p: float):
    a = as_tensor(a)
    if p == 2:
        return make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))
    return make(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),))


def exp(a):
    a = as_tensor(a)
    y = np.exp(a.data)
    return make(y, (a,), lambda g: (g * y,))


def log(a):
    a = as_tensor(a)
    return make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    a = as_tensor(a)
    y = np.sqrt(a.data)
    return make(y, (a,), lambda g: (0.5 * g / y,))


def sin(a):
    a = as_tensor(a)
    return make(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a):
    a = as_tensor(a)
    return make(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def tabs(a):
    a = as_tensor(a)
    return make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def relu(a):
    a = as_tensor(a)
    on = a.data > 0
    return make(np.where(on, a.data, 0.0), (a,), lambda g: (g * on,))


def sigmoid(a):
    a = as_tensor(a)
    y = 1.0 / (1.0 + np.exp(-a.data))
    return make(y, (a,), lambda g: (g * y * (1.0 - y),))


def sinc(a):
    """sin(x)/x with a series branch near zero, for rotation maps."""
    a = as_tensor(a)
    x = a.data
    small = np.abs(x) < 1e-4
    xs = np.where(small, 1.0, x)
    x2 = x * x
    y = np.where(small, 1.0 - x2 / 6.0 + x2 * x2 / 120.0, np.sin(xs) / xs)
    dy = np.where(small, -x / 3.0 + x * x2 / 30.0, (xs * np.cos(xs) - np.sin(xs)) / (xs * xs))
    return make(y, (a,), lambda g: (g * dy,))


# ---- reductions and shape ops -----------------------------------------------

def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    shape = a.data.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), vjp)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.data.shape[i] for i in axes]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    old = a.data.shape
    return make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def swapaxes(a, i, j):
    a = as_tensor(a)
    return make(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),))


def expand_dims(a, axis):
    a = as_tensor(a)
    return make(np.expand_dims(a.data, axis), (a,), lambda g: (np.squeeze(g, axis),))


def getitem(a, idx):
    a = as_tensor(a)

    basic = all(isinstance(i, (slice, int, type(Ellipsis))) for i in
                (idx if isinstance(idx, tuple) else (idx,)))

    def vjp(g):
        z = np.zeros_like(a.data)
        if basic:
            z[idx] += g
        else:
            np.add.at(z, idx, g)
        return (z,)

    return make(a.data[idx], (a,), vjp)


def concat(xs, axis=-1):
    xs = [as_tensor(x) for x in xs]
    sizes = [x.data.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]
    return make(np.concatenate([x.data for x in xs], axis=axis), xs,
                lambda g: tuple(np.split(g, cuts, axis=axis)))


def stack(xs, axis=0):
    xs = [as_tensor(x) for x in xs]
    return make(np.stack([x.data for x in xs], axis=axis), xs,
                lambda g: tuple(np.moveaxis(g, axis, 0)))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionMismatch("matmul operands must be at least 2-D")
    return make(np.matmul(a.data, b.data), (a, b),
                lambda g: (np.matmul(g, np.swapaxes(b.data, -1, -2)),
                           np.matmul(np.swapaxes(a.data, -1, -2), g)))


def masked_softmax(x, keep, axis=-1):
    """Softmax over ``axis`` restricted to entries where ``keep`` is true.

    Rows with nothing kept come out as zeros and pass back zero gradient.
    """
    x = as_tensor(x)
    keep = np.asarray(keep, dtype=bool)
    if keep.all():
        e = np.exp(x.data - np.max(x.data, axis=axis, keepdims=True))
        y = e / np.sum(e, axis=axis, keepdims=True)
    else:
        keep = np.broadcast_to(keep, x.data.shape)
        z = np.where(keep, x.data, -np.inf)
        m = np.max(z, axis=axis, keepdims=True)
        m = np.where(np.isfinite(m), m, 0.0)
        e = np.where(keep, np.exp(np.where(keep, x.data, 0.0) - m), 0.0)
        s = np.sum(e, axis=axis, keepdims=True)
        y = np.where(s > 0, e / np.where(s > 0, s, 1.0), 0.0)

    def vjp(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return make(y, (x,), vjp)


# ---- MLP -----------------------------------------------------------------------

@dataclass
class Mlp:
    """Dense network: ReLU on hidden layers, ``out_act`` on the last.

    Weights are stored (fan_in, fan_out) so a forward pass is ``x @ W + b``.
    ``biases`` entries may be None for bias-free layers.
    """

    weights: list
    biases: list
    out_act: str = "identity"

    @classmethod
    def init(cls, widths: Sequence[int], rng: np.random.Generator, bias: bool = True,
             zero_last: bool = False, out_act: str = "identity") -> "Mlp":
        if len(widths) < 2:
            raise DimensionMismatch("an MLP needs at least input and output widths")
        weights, biases = [], []
        for i, (fi, fo) in enumerate(zip(widths[:-1], widths[1:])):
            bound = 1.0 / math.sqrt(fi)
            w = rng.uniform(-bound, bound, size=(fi, fo))
            last = i == len(widths) - 2
            if last and zero_last:
                w = np.zeros((fi, fo))
            weights.append(param(w))
            if bias:
                b = np.zeros(fo) if (last and zero_last) else rng.uniform(-bound, bound, size=fo)
                biases.append(param(b))
            else:
                biases.append(None)
        return cls(weights, biases, out_act)

    @classmethod
    def zeros(cls, widths: Sequence[int], bias: bool = True, out_act: str = "identity") -> "Mlp":
        ws = [param(np.zeros((fi, fo))) for fi, fo in zip(widths[:-1], widths[1:])]
        bs = [param(np.zeros(fo)) if bias else None for fo in widths[1:]]
        return cls(ws, bs, out_act)

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            if b is not None:
                out.append(b)
        return out

    def named_parameters(self, prefix: str = "") -> dict:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}w{i}"] = w
            if b is not None:
                out[f"{prefix}b{i}"] = b
        return out

    def __call__(self, x):
        return mlp_forward(self, x)


def mlp_forward(m: Mlp, x) -> Tensor:
    x = as_tensor(x)
    if x.shape[-1] != m.widths[0]:
        raise DimensionMismatch(f"MLP expects last dim {m.widths[0]}, got {x.shape[-1]}")
    squeeze = x.ndim == 1
    h = reshape(x, (1, -1)) if squeeze else x
    n = len(m.weights)
    for i, (w, b) in enumerate(zip(m.weights, m.biases)):
        h = matmul(h, w)
        if b is not None:
            h = h + b
        if i < n - 1:
            h = relu(h)
    if m.out_act == "sigmoid":
        h = sigmoid(h)
    elif m.out_act != "identity":
        raise InvalidConfig(f"unknown output activation {m.out_act!r}")
    return reshape(h, (h.shape[-1],)) if squeeze else h


# ---- optimizers ---------------------------------------------------------------

class Sgd:
    def __init__(self, params, lr=1e-2):
        self.params = list(params)
        self.lr = lr

    def step(self, grads):
        for p, g in zip(self.params, grads):
            p.data = p.data - self.lr * g


class Adam:
    def __init__(self, params, lr=1e-2, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)


# ---- gradient check -----------------------------------------------------------

def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
               max_entries: int | None = None, seed: int = 0) -> float:
    """Max relative error between taped and central-difference gradients.

    ``f`` rebuilds the scalar loss from the current ``params`` values. Error per
    entry is |analytic - numeric| / max(1, |numeric|). With ``max_entries`` set,
    a seeded random subset of entries per parameter is checked.
    """
    with Tape() as tape:
        loss = f()
        grads = tape.backward(loss, params)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = value(f()).item()
            flat[i] = orig - eps
            fm = value(f()).item()
            flat[i] = orig
            num = (fp - fm) / (2.0 * eps)
            ana = g.reshape(-1)[i]
            if not (math.isfinite(num) and math.isfinite(ana)):
                raise NonFiniteValue("non-finite value during gradient check")
            worst = max(worst, abs(ana - num) / max(1.0, abs(num)))
    return worst


# ---- checkpoints --------------------------------------------------------------

def params_to_json(named: dict) -> dict:
    return {k: {"shape": list(value(v).shape), "data": value(v).reshape(-1).tolist()}
            for k, v in sorted(named.items())}


def params_from_json(obj: dict) -> dict:
    out = {}
    for k, rec in obj.items():
        data = np.asarray(rec["data"], dtype=np.float64)
        shape = tuple(rec["shape"])
        if data.size != int(np.prod(shape)):
            raise DimensionMismatch(f"checkpoint entry {k!r}: {data.size} values for shape {shape}")
        out[k] = param(data.reshape(shape))
    return out
