"""Autodiff engine checks: hand-worked values, finite differences, Adam."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trava import diffcore as dc
from trava.diffcore import ops

RTOL = 1e-4
FD_H = 1e-5


def _t(arr, grad=True):
    return dc.Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


def _fd_check(fn, inputs, seed_note=""):
    """Compare analytic grads of scalar fn(*inputs) against central differences."""
    for x in inputs:
        x.grad = None
    out = fn(*inputs)
    loss = out.sum() if out.data.size != 1 else out
    dc.backward(loss)
    for ti, x in enumerate(inputs):
        if not x.requires_grad:
            continue
        assert x.grad is not None, f"input {ti} got no grad {seed_note}"
        flat = x.data.ravel()
        gflat = x.grad.ravel()
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + FD_H
            fp = float(fn(*inputs).data.sum())
            flat[j] = orig - FD_H
            fm = float(fn(*inputs).data.sum())
            flat[j] = orig
            num = (fp - fm) / (2 * FD_H)
            ana = gflat[j]
            denom = max(abs(num), abs(ana), 1e-8)
            assert abs(num - ana) / denom < RTOL, (
                f"input {ti} elem {j}: analytic {ana} vs numeric {num} {seed_note}")


# ---------------------------------------------------------------------------
# hand-worked oracle values

def test_pointwise_multiply_known_values():
    a = _t(np.ones((2, 2)))
    b = _t(np.full((2, 2), 2.0))
    c = ops.mul(a, b)
    assert np.array_equal(c.data, np.full((2, 2), 2.0))
    dc.backward(c.sum())
    assert np.array_equal(a.grad, np.full((2, 2), 2.0))
    assert np.array_equal(b.grad, np.ones((2, 2)))


def test_conv_transpose_single_tap_equals_kernel():
    # A 1x1 input of value 1 through a 4x4 kernel must reproduce the kernel.
    rng = np.random.default_rng(0)
    k = rng.normal(size=(1, 1, 4, 4))
    x = _t(np.ones((1, 1, 1, 1)))
    w = _t(k)
    y = ops.conv_transpose2d(x, w, stride=2, pad=0)
    assert y.shape == (1, 1, 4, 4)
    np.testing.assert_allclose(y.data, k, rtol=0, atol=0)


def test_sum_backward_is_ones():
    x = _t(np.arange(12.0).reshape(3, 4))
    dc.backward(x.sum())
    assert np.array_equal(x.grad, np.ones((3, 4)))


def test_square_backward_is_two_x():
    x = _t(np.arange(5.0))
    y = (x * x).sum()
    dc.backward(y)
    np.testing.assert_allclose(x.grad, 2 * x.data)


def test_fanout_accumulates():
    x = _t([3.0])
    y = x + x
    dc.backward(y.sum())
    assert x.grad[0] == 2.0


def test_clamp_gradient_zero_outside_and_at_bounds():
    x = _t([-1.0, 0.0, 0.5, 1.0, 2.0])
    y = ops.clamp(x, 0.0, 1.0)
    dc.backward(y.sum())
    np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0, 0.0, 0.0])


def test_backward_requires_scalar():
    x = _t(np.ones(3))
    with pytest.raises(ValueError):
        dc.backward(x * x)


def test_no_grad_suspends_recording():
    x = _t(np.ones(3))
    with dc.no_grad():
        y = x * x
    assert not y.requires_grad and y.parents == ()


# ---------------------------------------------------------------------------
# finite differences over the whole op set, many seeds

UNARY_CASES = [
    ("exp", lambda x: ops.exp(x), (-1.0, 1.0)),
    ("log", lambda x: ops.log(x), (0.3, 2.0)),
    ("sqrt", lambda x: ops.sqrt(x), (0.3, 2.0)),
    ("sin", lambda x: ops.sin(x), (-2.0, 2.0)),
    ("cos", lambda x: ops.cos(x), (-2.0, 2.0)),
    ("abs", lambda x: ops.absolute(x), (0.2, 2.0)),
    ("leaky_relu", lambda x: ops.leaky_relu(x), (-2.0, 2.0)),
    ("softplus", lambda x: ops.softplus(x), (-2.0, 2.0)),
    ("clamp", lambda x: ops.clamp(x, -0.5, 0.5), (-2.0, 2.0)),
    ("scale", lambda x: ops.scale(x, -1.7), (-2.0, 2.0)),
    ("reduce_mean", lambda x: ops.reduce_mean(x, axis=1), (-2.0, 2.0)),
    ("transpose", lambda x: ops.transpose(x, (1, 0)), (-2.0, 2.0)),
    ("narrow", lambda x: ops.narrow(x, 1, 1, 2), (-2.0, 2.0)),
]


@pytest.mark.parametrize("name,fn,rng_range", UNARY_CASES, ids=[c[0] for c in UNARY_CASES])
@pytest.mark.parametrize("seed", range(4))
def test_unary_fd(name, fn, rng_range, seed):
    rng = np.random.default_rng(seed * 101 + 7)
    lo, hi = rng_range
    x = _t(rng.uniform(lo, hi, size=(3, 4)))
    if name == "leaky_relu" or name == "clamp":
        # Keep samples away from the kink so central differences are valid.
        x.data[np.abs(x.data) < 0.05] += 0.1
        x.data[np.abs(np.abs(x.data) - 0.5) < 0.05] += 0.1
    _fd_check(fn, [x], seed_note=f"(op {name}, seed {seed})")


BINARY_CASES = [
    ("add", ops.add),
    ("sub", ops.sub),
    ("mul", ops.mul),
    ("div", ops.div),
]


@pytest.mark.parametrize("name,fn", BINARY_CASES, ids=[c[0] for c in BINARY_CASES])
@pytest.mark.parametrize("seed", range(4))
def test_binary_fd(name, fn, seed):
    rng = np.random.default_rng(seed * 13 + 3)
    a = _t(rng.uniform(0.5, 2.0, size=(3, 4)))
    b = _t(rng.uniform(0.5, 2.0, size=(3, 4)))
    _fd_check(fn, [a, b], seed_note=f"(op {name}, seed {seed})")


@pytest.mark.parametrize("seed", range(4))
def test_broadcast_fd(seed):
    rng = np.random.default_rng(seed + 40)
    a = _t(rng.normal(size=(3, 4)))
    b = _t(rng.normal(size=(1, 4)))
    c = _t(rng.normal(size=(3, 1)))
    _fd_check(lambda a, b, c: ops.mul(ops.add(a, b), c), [a, b, c],
              seed_note=f"(broadcast, seed {seed})")


@pytest.mark.parametrize("seed", range(4))
def test_matmul_fd(seed):
    rng = np.random.default_rng(seed + 90)
    a = _t(rng.normal(size=(3, 4)))
    b = _t(rng.normal(size=(4, 2)))
    _fd_check(ops.matmul, [a, b], seed_note=f"(matmul, seed {seed})")


@pytest.mark.parametrize("seed", range(3))
def test_matmul_batched_and_vector_fd(seed):
    rng = np.random.default_rng(seed + 91)
    a = _t(rng.normal(size=(2, 3, 4)))
    b = _t(rng.normal(size=(2, 4, 2)))
    _fd_check(ops.matmul, [a, b], seed_note=f"(batched matmul, seed {seed})")
    v = _t(rng.normal(size=(4,)))
    m = _t(rng.normal(size=(4, 3)))
    _fd_check(ops.matmul, [v, m], seed_note=f"(vec@mat, seed {seed})")
    _fd_check(lambda m, v: ops.matmul(ops.transpose(m, (1, 0)), v), [m, v],
              seed_note=f"(mat@vec, seed {seed})")


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("has_bias", [False, True])
def test_fc_fd(seed, has_bias):
    rng = np.random.default_rng(seed + 17)
    x = _t(rng.normal(size=(5, 3)))
    w = _t(rng.normal(size=(4, 3)))
    args = [x, w]
    if has_bias:
        args.append(_t(rng.normal(size=(4,))))
    _fd_check(lambda *a: ops.fc(*a), args, seed_note=f"(fc bias={has_bias}, seed {seed})")


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("stride,pad", [(1, 0), (2, 1), (1, 1)])
def test_conv2d_fd(seed, stride, pad):
    rng = np.random.default_rng(seed * 7 + 29)
    x = _t(rng.normal(size=(2, 3, 5, 5)))
    w = _t(rng.normal(size=(4, 3, 3, 3)))
    b = _t(rng.normal(size=(4,)))
    _fd_check(lambda x, w, b: ops.conv2d(x, w, b, stride=stride, pad=pad), [x, w, b],
              seed_note=f"(conv2d s={stride} p={pad}, seed {seed})")


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("stride,pad", [(1, 0), (2, 1)])
def test_conv_transpose2d_fd(seed, stride, pad):
    rng = np.random.default_rng(seed * 11 + 31)
    x = _t(rng.normal(size=(2, 3, 4, 4)))
    w = _t(rng.normal(size=(3, 2, 4, 4)))
    _fd_check(lambda x, w: ops.conv_transpose2d(x, w, stride=stride, pad=pad), [x, w],
              seed_note=f"(convT s={stride} p={pad}, seed {seed})")


def test_conv_transpose_matches_conv_adjoint():
    # <conv(x), y> == <x, convT(y)> for matching geometry.
    rng = np.random.default_rng(5)
    x = rng.normal(size=(1, 2, 6, 6))
    w = rng.normal(size=(3, 2, 4, 4))  # conv weight (Cout,Cin,kh,kw)
    y_shape = None
    cx = ops.conv2d(dc.Tensor(x.astype(np.float64)), dc.Tensor(w.astype(np.float64)),
                    stride=2, pad=1)
    y = rng.normal(size=cx.shape)
    lhs = float((cx.data * y).sum())
    wt = np.transpose(w, (0, 1, 2, 3))  # convT expects (Cin=Cout_of_conv, Cout, kh, kw)
    ty = ops.conv_transpose2d(dc.Tensor(y.astype(np.float64)), dc.Tensor(wt.astype(np.float64)),
                              stride=2, pad=1)
    rhs = float((ty.data * x).sum())
    assert abs(lhs - rhs) / max(abs(lhs), 1e-9) < 1e-10


@pytest.mark.parametrize("seed", range(3))
def test_gather_rows_fd(seed):
    rng = np.random.default_rng(seed + 63)
    x = _t(rng.normal(size=(6, 3)))
    idx = rng.integers(0, 6, size=10)

    def fn(x):
        return ops.gather_rows(x, idx)

    _fd_check(fn, [x], seed_note=f"(gather_rows, seed {seed})")


def test_gather_rows_scatter_accumulates():
    x = _t(np.ones((4, 2)))
    y = ops.gather_rows(x, np.array([1, 1, 1, 0]))
    dc.backward(y.sum())
    np.testing.assert_array_equal(x.grad[:, 0], [1.0, 3.0, 0.0, 0.0])


@pytest.mark.parametrize("seed", range(3))
def test_sparse_matmul_fd(seed):
    rng = np.random.default_rng(seed + 77)
    dense = rng.normal(size=(5, 5))
    dense[rng.uniform(size=(5, 5)) < 0.5] = 0.0
    L = dc.CsrMatrix(dense)
    x = _t(rng.normal(size=(5, 3)))
    _fd_check(lambda x: ops.sparse_matmul(x, L), [x], seed_note=f"(sparse, seed {seed})")
    y = ops.sparse_matmul(x, L)
    np.testing.assert_allclose(y.data, dense @ x.data, rtol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_composite_chain_fd(seed):
    rng = np.random.default_rng(seed + 200)
    x = _t(rng.uniform(0.2, 1.5, size=(4, 3)))
    w = _t(rng.normal(size=(2, 3)))

    def fn(x, w):
        h = ops.leaky_relu(ops.fc(x, w))
        h = ops.exp(ops.scale(h, 0.3))
        return ops.reduce_mean(ops.mul(h, h))

    _fd_check(fn, [x, w], seed_note=f"(composite, seed {seed})")


def test_concat_and_reshape_fd():
    rng = np.random.default_rng(321)
    a = _t(rng.normal(size=(2, 3)))
    b = _t(rng.normal(size=(2, 2)))

    def fn(a, b):
        c = ops.concat([a, b], axis=1)
        return ops.reshape(c, (10,))

    _fd_check(fn, [a, b])


# ---------------------------------------------------------------------------
# properties

@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4),
       st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_multiply_backward_distributes(avals, bvals):
    a = _t(np.asarray(avals).reshape(2, 2))
    b = _t(np.asarray(bvals).reshape(2, 2))
    y = ops.mul(a, b).sum()
    dc.backward(y)
    np.testing.assert_allclose(a.grad, b.data, atol=1e-12)
    np.testing.assert_allclose(b.grad, a.data, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_forward_backward_deterministic(seed):
    def run():
        rng = np.random.default_rng(seed)
        x = dc.Tensor(rng.normal(size=(4, 4)).astype(np.float32), requires_grad=True)
        w = dc.Tensor(rng.normal(size=(4, 4)).astype(np.float32), requires_grad=True)
        y = ops.reduce_mean(ops.softplus(ops.matmul(x, w)))
        dc.backward(y)
        return y.data.copy(), x.grad.copy(), w.grad.copy()

    r1 = run()
    r2 = run()
    for u, v in zip(r1, r2):
        assert np.array_equal(u, v)


# ---------------------------------------------------------------------------
# Adam

def test_adam_zero_grad_no_movement():
    p = dc.Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
    opt = dc.Adam({"p": p}, lr=0.1)
    before = p.data.copy()
    opt.step()  # p.grad is None
    assert np.array_equal(p.data, before)


def test_adam_first_step_size_is_lr():
    # With constant gradient the bias-corrected first step is exactly lr.
    p = dc.Tensor(np.zeros(4, dtype=np.float64), requires_grad=True)
    opt = dc.Adam({"p": p}, lr=0.05)
    p.grad = np.full(4, 3.0)
    opt.step()
    np.testing.assert_allclose(p.data, -0.05, rtol=1e-6)


def test_adam_minimizes_quadratic():
    rng = np.random.default_rng(8)
    target = rng.normal(size=5)
    p = dc.Tensor(np.zeros(5, dtype=np.float64), requires_grad=True)
    opt = dc.Adam({"p": p}, lr=0.05)
    for _ in range(800):
        opt.zero_grad()
        diff = p - dc.Tensor(target)
        loss = (diff * diff).sum()
        dc.backward(loss)
        opt.step()
    np.testing.assert_allclose(p.data, target, atol=1e-3)


def test_adam_state_roundtrip():
    p = dc.Tensor(np.zeros(3, dtype=np.float32), requires_grad=True)
    opt = dc.Adam({"p": p}, lr=0.01)
    for _ in range(3):
        p.grad = np.ones(3)
        opt.step()
    state = opt.state_dict()
    snapshot = p.data.copy()

    q = dc.Tensor(snapshot.copy(), requires_grad=True)
    opt2 = dc.Adam({"p": q}, lr=0.01)
    opt2.load_state_dict(state)
    p.grad = np.full(3, 0.5)
    q.grad = np.full(3, 0.5)
    opt.step()
    opt2.step()
    assert np.array_equal(p.data, q.data)
