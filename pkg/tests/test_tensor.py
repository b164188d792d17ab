import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from samcal import tensor as T
from samcal.tensor import Tape, Tensor, grad_check


def test_matmul_identity_and_hand_case():
    eye = np.eye(2)
    assert np.array_equal(T.matmul(eye, eye).data, eye)
    out = T.matmul([[1.0, 2.0], [3.0, 4.0]], [[1.0], [1.0]])
    assert np.array_equal(out.data, [[3.0], [7.0]])
    assert np.array_equal(T.matmul(np.zeros((2, 3)), np.ones((3, 4))).data, np.zeros((2, 4)))


def test_matmul_shape_mismatch():
    with pytest.raises(T.ShapeError):
        T.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_elementwise_examples():
    assert np.array_equal(T.relu([-1.0, 0.0, 2.0]).data, [0.0, 0.0, 2.0])
    x = np.array([1.5, -2.0])
    assert np.array_equal(T.add(x, 0.0).data, x)
    assert np.array_equal(T.scale([1.0, 2.0], 3).data, [3.0, 6.0])
    with pytest.raises(T.ShapeError):
        T.add(np.ones(2), np.ones(3))


def test_relu_subgradient_at_zero():
    tape = Tape()
    x = tape.variable([0.0, 1.0, -1.0])
    (g,) = tape.backward(T.sum_all(T.relu(x)), [x])
    assert np.array_equal(g, [0.0, 1.0, 0.0])


def test_log_softmax_examples():
    out = T.log_softmax(np.zeros((1, 3))).data
    assert np.allclose(out, -math.log(3), atol=1e-15)
    big = T.log_softmax([[1000.0, 0.0]]).data
    assert np.all(np.isfinite(big))
    assert big[0, 0] == pytest.approx(0.0, abs=1e-300)
    assert big[0, 1] == pytest.approx(-1000.0)
    e, e2 = math.e, math.e ** 2
    got = T.log_softmax([[1.0, 2.0]]).data[0]
    assert got[0] == pytest.approx(math.log(e / (e + e2)), rel=1e-14)
    assert got[1] == pytest.approx(math.log(e2 / (e + e2)), rel=1e-14)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=6))
def test_log_softmax_rows_are_distributions(row):
    p = np.exp(T.log_softmax([row]).data)
    assert abs(p.sum() - 1.0) < 1e-12
    assert np.all((p >= 0) & (p <= 1))


def test_backward_square_and_constant():
    tape = Tape()
    x = tape.variable([3.0])
    (g,) = tape.backward(T.sum_all(T.mul(x, x)), [x])
    assert g[0] == 6.0
    tape = Tape()
    x = tape.variable([3.0])
    c = tape.variable([5.0])
    (g,) = tape.backward(T.sum_all(c), [x])
    assert g[0] == 0.0


def test_backward_requires_scalar_root():
    tape = Tape()
    x = tape.variable([1.0, 2.0])
    with pytest.raises(T.ShapeError):
        tape.backward(T.scale(x, 2.0), [x])


def test_tape_is_topologically_ordered():
    tape = Tape()
    x = tape.variable(np.ones((2, 2)))
    y = T.relu(T.matmul(x, x))
    T.sum_all(y)
    for i, node in enumerate(tape.nodes):
        assert all(j < i for j in node.inputs)
    grads = tape.backward(T.sum_all(y), [x])
    assert grads[0].shape == x.shape


def test_backward_is_linear():
    rng = np.random.default_rng(0)
    a0 = rng.normal(size=(3, 2))

    def grad(build):
        tape = Tape()
        a = tape.variable(a0)
        return tape.backward(build(a), [a])[0]

    f1 = lambda a: T.sum_all(T.mul(a, a))
    f2 = lambda a: T.sum_all(T.exp(a))
    combined = grad(lambda a: T.add(f1(a), f2(a)))
    assert np.allclose(combined, grad(f1) + grad(f2), rtol=1e-14)


def test_grad_check_quadratic_and_linear():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])

    def quad(ts):
        (x,) = ts
        return T.sum_all(T.mul(T.matmul(x, Tensor(A)), x))

    assert grad_check(quad, [np.array([[0.3, -1.2]])]) < 1e-9

    def lin(ts):
        (x,) = ts
        return T.sum_all(T.scale(x, 3.0))

    assert grad_check(lin, [np.array([1.0, 2.0, -4.0])]) < 1e-8


def test_grad_check_rejects_nonfinite():
    def bad(ts):
        return T.sum_all(T.log(ts[0]))

    with pytest.raises(T.GradCheckError):
        grad_check(bad, [np.array([1e-7])], h=1e-6)
    with pytest.raises(ValueError):
        grad_check(bad, [np.array([1.0])], h=0.0)


UNARY = {
    "relu": T.relu,
    "exp": T.exp,
    "log": lambda t: T.log(T.add_const(T.mul(t, t), 1.0)),
    "power": lambda t: T.power(T.add_const(T.mul(t, t), 0.5), -1.3),
    "scale": lambda t: T.scale(t, -2.5),
    "log_softmax": T.log_softmax,
    "transpose": T.transpose,
    "mean": T.mean,
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_every_op_matches_finite_differences(name):
    op = UNARY[name]
    rng = np.random.default_rng(sorted(UNARY).index(name))
    for _ in range(100):
        x = rng.normal(size=(3, 4))
        if name == "relu":
            x[np.abs(x) < 1e-3] = 0.5  # stay away from the kink
        w = rng.normal(size=np.shape(op(Tensor(x)).data))
        err = grad_check(lambda ts: T.sum_all(T.mul(op(ts[0]), Tensor(w))), [x])
        assert err < 1e-5


def test_binary_ops_match_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(100):
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        row = rng.normal(size=2)
        mask = rng.uniform(size=(3, 2)) < 0.5
        labels = rng.integers(0, 2, size=3)

        def f(ts):
            x, y, r = ts
            h = T.add_row(T.matmul(x, y), r)
            h = T.where(mask, T.mul(h, h), T.add(h, 1.0))
            return T.sum_all(T.pick(h, labels))

        assert grad_check(f, [a, b, row]) < 1e-5
