"""Primitive-level checks of the differentiation tape.

Every primitive is exercised through a composite function: forward values
against plain numpy, tangents against central finite differences, and the
tangent/adjoint pair against each other via the dot test.
"""

import numpy as np
import pytest

from fvgrad import tape as tp


def _fd_jvp(f, xs, dxs, h=1e-7):
    xp = [x + h * d for x, d in zip(xs, dxs)]
    xm = [x - h * d for x, d in zip(xs, dxs)]
    return (f(*xp) - f(*xm)) / (2 * h)


def dot_test(fn, xs, rng, tol=1e-10, n=5):
    """<J v, u> == <v, J^T u> on random probes."""
    op = tp.TracedOp(fn, len(xs))
    lin = op.linearize(*xs)
    y = lin.values[0]
    for _ in range(n):
        vs = [rng.standard_normal(np.shape(x)) for x in xs]
        u = rng.standard_normal(y.shape)
        jv = lin.jvp(vs)[0]
        vt = lin.vjp([u])
        lhs = float(np.sum(jv * u))
        rhs = float(sum(np.sum(v * b) for v, b in zip(vs, vt)))
        scale = max(abs(lhs), abs(rhs), 1e-30)
        assert abs(lhs - rhs) / scale < tol


def test_elementwise_chain_matches_numpy_and_fd():
    rng = np.random.default_rng(0)
    x = rng.uniform(0.5, 2.0, (4, 3))
    y = rng.uniform(0.5, 2.0, (4, 3))

    def f(a, b):
        return tp.log(a) * tp.sqrt(b) + tp.exp(a / b) - a ** 2 / (b + 1.0)

    def f_np(a, b):
        return np.log(a) * np.sqrt(b) + np.exp(a / b) - a ** 2 / (b + 1.0)

    op = tp.TracedOp(f, 2)
    assert np.allclose(op.eval(x, y), f_np(x, y), rtol=1e-14)

    dx = rng.standard_normal(x.shape)
    dy = rng.standard_normal(y.shape)
    jv = op.tangent((x, y), (dx, dy))
    fd = _fd_jvp(f_np, [x, y], [dx, dy])
    assert np.allclose(jv, fd, rtol=1e-6, atol=1e-8)

    dot_test(f, [x, y], rng)


def test_min_max_abs_where_branches():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((6,)) + 0.1  # keep away from ties
    y = rng.standard_normal((6,)) - 0.1

    def f(a, b):
        m = tp.maximum(a, b) + tp.minimum(a * 2.0, b) + tp.absolute(a * b)
        return tp.where(np.arange(6) % 2 == 0, m, a - b)

    def f_np(a, b):
        m = np.maximum(a, b) + np.minimum(a * 2.0, b) + np.abs(a * b)
        return np.where(np.arange(6) % 2 == 0, m, a - b)

    op = tp.TracedOp(f, 2)
    assert np.allclose(op.eval(x, y), f_np(x, y))
    dx = rng.standard_normal(6)
    dy = rng.standard_normal(6)
    jv = op.tangent((x, y), (dx, dy))
    fd = _fd_jvp(f_np, [x, y], [dx, dy])
    assert np.allclose(jv, fd, rtol=1e-6, atol=1e-9)
    dot_test(f, [x, y], rng)


def test_slicing_embed_stack_sum():
    rng = np.random.default_rng(2)
    w = rng.standard_normal((6, 5, 3))

    def f(a):
        core = a[1:-1, 1:-1, 0] * a[1:-1, 1:-1, 1]
        grown = tp.embed(core, (6, 5), (slice(1, -1), slice(1, -1)))
        both = tp.stack_last([grown, grown * 2.0])
        return tp.asum(both, axes=(-1,)) + a[..., 2]

    dot_test(f, [w], rng)

    def f_np(a):
        core = a[1:-1, 1:-1, 0] * a[1:-1, 1:-1, 1]
        grown = np.zeros((6, 5))
        grown[1:-1, 1:-1] = core
        return grown * 3.0 + a[..., 2]

    op = tp.TracedOp(f, 1)
    assert np.allclose(op.eval(w), f_np(w))
    dx = rng.standard_normal(w.shape)
    assert np.allclose(op.tangent((w,), (dx,)), _fd_jvp(f_np, [w], [dx]),
                       rtol=1e-6, atol=1e-9)


def test_matmul_sigmoid_softplus():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((4, 4, 3))
    w = rng.standard_normal((3, 5))

    def f(a, b):
        h = tp.matmul_last(a, b)
        return tp.asum(tp.sigmoid(h) + tp.softplus(h * 0.5))

    def f_np(a, b):
        h = a @ b
        return np.sum(1 / (1 + np.exp(-h)) + np.logaddexp(0, h * 0.5))

    op = tp.TracedOp(f, 2)
    assert np.allclose(op.eval(x, w), f_np(x, w))
    dx = rng.standard_normal(x.shape)
    dw = rng.standard_normal(w.shape)
    jv = op.tangent((x, w), (dx, dw))
    fd = _fd_jvp(f_np, [x, w], [dx, dw])
    assert np.allclose(jv, fd, rtol=1e-6, atol=1e-8)
    dot_test(f, [x, w], rng)


def test_gather_nd_adjoint_accumulates_duplicates():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((5, 4))
    ii = np.array([0, 0, 2, 4])
    jj = np.array([1, 1, 3, 0])

    def f(a):
        return tp.gather_nd(a, (ii, jj)) * 2.0

    op = tp.TracedOp(f, 1)
    bar = np.ones(4)
    g = op.adjoint((x,), bar)
    expect = np.zeros_like(x)
    np.add.at(expect, (ii, jj), 2.0)
    assert np.array_equal(g, expect)
    dot_test(f, [x], rng)


def test_tangent_linearity():
    rng = np.random.default_rng(5)
    x = rng.uniform(0.5, 1.5, (7,))

    def f(a):
        return tp.exp(a) * a + tp.sqrt(a)

    op = tp.TracedOp(f, 1)
    lin = op.linearize(x)
    v1 = rng.standard_normal(7)
    v2 = rng.standard_normal(7)
    a, b = 0.3, -1.7
    lhs = lin.jvp([a * v1 + b * v2])[0]
    rhs = a * lin.jvp([v1])[0] + b * lin.jvp([v2])[0]
    scale = np.abs(rhs).max()
    assert np.abs(lhs - rhs).max() <= 1e-12 * scale


def test_batched_jvp_matches_loop():
    rng = np.random.default_rng(6)
    x = rng.uniform(0.5, 1.5, (5, 4))

    def f(a):
        inner = a[1:-1, 1:-1]
        return tp.embed(inner * tp.sqrt(a[1:-1, 1:-1]), (5, 4),
                        (slice(1, -1), slice(1, -1))) + a * 2.0

    op = tp.TracedOp(f, 1)
    lin = op.linearize(x)
    batch = rng.standard_normal((6, 5, 4))
    batched = lin.jvp([batch])[0]
    assert batched.shape == (6, 5, 4)
    for k in range(6):
        single = lin.jvp([batch[k]])[0]
        assert np.array_equal(batched[k], single)


def test_repeated_operand_product_rule():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((3,))

    def f(a):
        return a * a

    op = tp.TracedOp(f, 1)
    jv = op.tangent((x,), (np.ones(3),))
    assert np.allclose(jv, 2 * x)
    g = op.adjoint((x,), np.ones(3))
    assert np.allclose(g, 2 * x)


@pytest.mark.parametrize("seed", range(3))
def test_dot_test_random_composites(seed):
    rng = np.random.default_rng(100 + seed)
    x = rng.uniform(0.2, 1.0, (6, 6))
    y = rng.uniform(0.2, 1.0, (6, 6))

    def f(a, b):
        c = tp.maximum(a, b * 0.7)
        d = tp.log(c) + tp.softplus(a - b)
        return tp.asum(d * d, axes=(-1,))

    dot_test(f, [x, y], rng)
