import numpy as np
import pytest

from lsbl.autodiff import Tape, backward


def fd_check(build, inputs, h=1e-6, tol=1e-6):
    """Compare tape gradients of the scalar ``build(tape, ids)`` with central differences."""
    tape = Tape()
    ids = [tape.leaf(v, requires_grad=True) for v in inputs]
    grads = backward(tape, build(tape, ids))

    def f(vals):
        t = Tape()
        return float(t.value(build(t, [t.leaf(v) for v in vals])))

    for k, v in enumerate(inputs):
        num = np.zeros_like(v)
        for idx in np.ndindex(v.shape):
            up = [x.copy() for x in inputs]
            dn = [x.copy() for x in inputs]
            up[k][idx] += h
            dn[k][idx] -= h
            num[idx] = (f(up) - f(dn)) / (2 * h)
        assert np.allclose(grads[ids[k]], num, rtol=tol, atol=tol)


gen = np.random.default_rng(0)


def spd(n, batch=()):
    b = gen.standard_normal(batch + (n, n))
    return b @ np.swapaxes(b, -1, -2) + n * np.eye(n)


def test_matmul_with_transposes_and_broadcast():
    a, b = gen.standard_normal((3, 4, 2)), gen.standard_normal((5, 4))
    fd_check(lambda t, i: t.sum_sq(t.matmul(i[0], i[1], transpose_a=True, transpose_b=True)), [a, b])


def test_solve_spd():
    # the factorisation reads one triangle only, so differentiate through sym(P)
    p, b = spd(4, (2,)), gen.standard_normal((2, 4, 3))

    def build(t, i):
        eye = t.leaf(np.eye(4))
        s = t.scale(t.add(i[0], t.matmul(i[0], eye, transpose_a=True)), 0.5)
        return t.sum_sq(t.solve_spd(s, i[1]))

    fd_check(build, [p, b])


def test_elementwise_and_structural():
    x, y = gen.standard_normal((2, 3)), gen.standard_normal((1, 3))

    def build(t, i):
        m = t.mul(i[0], i[1])
        c = t.concat([t.add(m, i[1]), t.sub(i[0], i[1])])
        r = t.reshape(t.scale(c, 0.5), (-1,))
        s = t.slice(r, slice(1, 9))
        return t.sum(t.mul(s, s))

    fd_check(build, [x, y])


def test_relu_and_clamp_away_from_kinks():
    x = np.array([[-1.0, 0.3, 2.0, 5.0]])
    fd_check(lambda t, i: t.sum_sq(t.clamp(t.relu(i[0]), 0.1, 3.0)), [x])


def test_sum_axis():
    x = gen.standard_normal((3, 4))
    fd_check(lambda t, i: t.sum_sq(t.sum(i[0], axis=0)), [x])


def test_frozen_leaves_get_no_gradient():
    tape = Tape()
    a = tape.leaf(gen.standard_normal((3, 3)), requires_grad=True)
    b = tape.leaf(gen.standard_normal((3, 3)))
    grads = backward(tape, tape.sum_sq(tape.matmul(a, b)))
    assert set(grads) == {a}
    assert tape.nodes[b].adjoint is None


def test_fan_out_accumulates():
    tape = Tape()
    x = tape.leaf(np.array([3.0]), requires_grad=True)
    y = tape.add(x, x)
    g = backward(tape, tape.sum(tape.mul(y, x)))  # 2x^2
    assert g[x][0] == 12.0


def test_backward_needs_scalar():
    tape = Tape()
    x = tape.leaf(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        backward(tape, x)
