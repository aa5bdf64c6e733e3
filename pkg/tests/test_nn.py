import numpy as np
import pytest

from hoikit import nn
from hoikit.errors import DimensionMismatch, NonFiniteValue, NotScalarLoss


def _check(f, params, tol=1e-7):
    assert nn.grad_check(f, params) < tol


UNARY = {
    "exp": nn.exp, "sin": nn.sin, "cos": nn.cos, "sigmoid": nn.sigmoid,
    "sinc": nn.sinc, "neg": nn.neg, "square": lambda x: x ** 2,
    "log": lambda x: nn.log(nn.tabs(x) + 0.5), "sqrt": lambda x: nn.sqrt(x * x + 1.0),
    "relu": nn.relu,
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name, rng):
    x = nn.param(rng.normal(size=(3, 4)) + 0.05)   # keep clear of the relu/abs kink
    w = rng.normal(size=(3, 4))
    _check(lambda: nn.tsum(UNARY[name](x) * w), [x])


def test_sinc_near_zero_branch():
    x = nn.param(np.array([0.0, 3e-5, -2e-5, 0.5]))
    with nn.Tape() as tape:
        y = nn.sinc(x)
        g = tape.backward(nn.tsum(y), [x])[0]
    assert y.data[0] == 1.0
    ref = (np.cos(0.5) * 0.5 - np.sin(0.5)) / 0.25
    assert abs(g[3] - ref) < 1e-12 and abs(g[0]) < 1e-12


def test_binary_broadcast_gradients(rng):
    a = nn.param(rng.normal(size=(2, 3, 4)))
    b = nn.param(rng.normal(size=(4,)))
    c = nn.param(rng.uniform(1, 2, size=(3, 1)))
    _check(lambda: nn.tsum((a * b - c) / (c + b) + a), [a, b, c])


def test_matmul_and_reductions(rng):
    a = nn.param(rng.normal(size=(2, 3, 4)))
    b = nn.param(rng.normal(size=(4, 5)))
    _check(lambda: nn.mean(nn.matmul(a, b) ** 2, axis=1).sum(), [a, b])
    w = rng.normal(size=(4, 3, 2))
    _check(lambda: nn.tsum(nn.swapaxes(a, 0, 2) * w) + nn.tsum(nn.reshape(a, (6, 4)) ** 2), [a])


def test_indexing_concat_stack(rng):
    a = nn.param(rng.normal(size=(5, 3)))
    b = nn.param(rng.normal(size=(5, 2)))
    idx = np.array([0, 2, 2, 4])

    def f():
        g = nn.getitem(a, idx)                    # repeated index accumulates
        s = nn.stack([a[:, 0], b[:, 1]], axis=1)
        return nn.tsum(g ** 2) + nn.tsum(nn.concat([a, b], axis=1) ** 3) + nn.tsum(s * 2.0)

    _check(f, [a, b])


def test_masked_softmax(rng):
    x = nn.param(rng.normal(size=(3, 5)))
    keep = np.ones((3, 5), bool)
    keep[0, 1] = False
    keep[2] = False
    y = nn.masked_softmax(x, keep).data
    assert y[0, 1] == 0.0 and np.all(y[2] == 0.0)
    assert abs(y[:2].sum(axis=1) - 1).max() < 1e-12
    w = rng.normal(size=(3, 5))
    _check(lambda: nn.tsum(nn.masked_softmax(x, keep) * w), [x])
    with nn.Tape() as tape:
        g = tape.backward(nn.tsum(nn.masked_softmax(x, keep) * w), [x])[0]
    assert np.all(g[2] == 0.0) and g[0, 1] == 0.0


def test_backward_contract(rng):
    a, unused = nn.param(rng.normal(size=3)), nn.param(np.ones(2))
    with nn.Tape() as tape:
        y = a * 2.0
        with pytest.raises(NotScalarLoss):
            tape.backward(y, [a])
        ga, gu = tape.backward(nn.tsum(y), [a, unused])
    assert np.array_equal(ga, np.full(3, 2.0)) and np.array_equal(gu, np.zeros(2))
    assert a.grad is ga


def test_ndarray_left_operand_defers():
    t = nn.param(np.ones(3))
    out = np.arange(3.0) + t
    assert isinstance(out, nn.Tensor)


def test_mlp(rng):
    m = nn.Mlp.init([4, 6, 2], rng)
    x = rng.normal(size=(5, 4))
    assert m(x).shape == (5, 2) and m(x[0]).shape == (2,)
    _check(lambda: nn.tsum(m(x) ** 2), m.parameters())
    z = nn.Mlp.init([4, 6, 2], rng, bias=False, zero_last=True)
    assert np.array_equal(z(x).data, np.zeros((5, 2)))
    with pytest.raises(DimensionMismatch):
        m(np.zeros((2, 3)))
    s = nn.Mlp.init([2, 1], rng, out_act="sigmoid")
    assert np.all((s(x[:, :2]).data > 0) & (s(x[:, :2]).data < 1))


def test_adam_minimizes_quadratic():
    x = nn.param(np.array([3.0, -2.0]))
    opt = nn.Adam([x], lr=0.1)
    for _ in range(500):
        with nn.Tape() as tape:
            g = tape.backward(nn.tsum((x - np.array([1.0, 0.5])) ** 2), [x])
        opt.step(g)
    assert np.allclose(x.data, [1.0, 0.5], atol=1e-3)


def test_sgd_step():
    x = nn.param(np.array([1.0]))
    nn.Sgd([x], lr=0.5).step([np.array([2.0])])
    assert x.data[0] == 0.0


def test_grad_check_detects_wrong_gradient(rng):
    x = nn.param(rng.normal(size=3))

    def bad():
        y = nn.make(x.data ** 2, (x,), lambda g: (g * 3.0,))
        return nn.tsum(y)

    assert nn.grad_check(bad, [x]) > 1e-2


def test_grad_check_non_finite():
    x = nn.param(np.array([0.0]))
    with pytest.raises(NonFiniteValue), np.errstate(all="ignore"):
        nn.grad_check(lambda: nn.tsum(nn.log(x)), [x])


def test_params_json_round_trip(rng):
    m = nn.Mlp.init([3, 4, 2], rng)
    d = nn.params_to_json(m.named_parameters("h."))
    back = nn.params_from_json(d)
    assert sorted(back) == ["h.b0", "h.b1", "h.w0", "h.w1"]
    assert np.array_equal(back["h.w1"].data, m.weights[1].data)
    d["h.w0"]["shape"] = [5, 5]
    with pytest.raises(DimensionMismatch):
        nn.params_from_json(d)
