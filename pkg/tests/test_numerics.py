import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from h2g2net.numerics import (ContractError, DimensionError, NonFiniteError, Tape, add,
                              backward, fold_sum, grad_check, grad_check_report,
                              kron_identity, matmul, pick_neglog_mean, relu, row_softmax,
                              row_sum, scale, vstack)

from oracles import softmax_rows, triple_loop_matmul


def test_matmul_identity():
    out = matmul(np.eye(2), np.array([[3.0, 4.0], [5.0, 6.0]]))
    np.testing.assert_array_equal(out.value, [[3, 4], [5, 6]])


def test_matmul_row_by_column():
    assert matmul([[1.0, 2.0]], [[3.0], [4.0]]).value[0, 0] == 11.0


def test_matmul_matches_triple_loop(rng):
    a = rng.uniform(-1, 1, (3, 4))
    b = rng.uniform(-1, 1, (4, 2))
    np.testing.assert_allclose(matmul(a, b).value, triple_loop_matmul(a, b), atol=1e-12, rtol=0)


def test_matmul_shape_error_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 16), st.integers(1, 16), st.integers(1, 16), st.integers(0, 2**32 - 1))
def test_matmul_triple_loop_property(n, k, m, seed):
    r = np.random.default_rng(seed)
    a, b = r.uniform(-1, 1, (n, k)), r.uniform(-1, 1, (k, m))
    np.testing.assert_allclose(matmul(a, b).value, triple_loop_matmul(a, b), atol=1e-12, rtol=0)


def test_softmax_zero_matrix_uniform():
    np.testing.assert_allclose(row_softmax(np.zeros((3, 3))).value, np.full((3, 3), 1 / 3),
                               atol=1e-15)


def test_softmax_ln3_row():
    np.testing.assert_allclose(row_softmax([[0.0, math.log(3)]]).value, [[0.25, 0.75]],
                               atol=1e-15)


def test_softmax_rows_and_shift_invariance(rng):
    x = rng.uniform(-1, 1, (4, 4))
    s = row_softmax(x).value
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-12)
    shifted = x.copy()
    shifted[2] += 7.5
    np.testing.assert_allclose(row_softmax(shifted).value, s, atol=1e-12)
    np.testing.assert_allclose(s, softmax_rows(x), atol=1e-12)


def test_softmax_overflow_safe():
    s = row_softmax([[1000.0, 0.0, -1000.0]]).value
    assert np.isfinite(s).all() and s[0, 0] == pytest.approx(1.0)


finite = st.floats(-50, 50, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=finite))
def test_softmax_distribution_property(x):
    s = row_softmax(x).value
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-12)
    assert (s >= 0).all() and (s <= 1).all()


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
              elements=st.floats(-5, 5, allow_nan=False)))
def test_softmax_entries_strictly_inside_unit_interval(x):
    s = row_softmax(x).value
    if x.shape[1] > 1:
        assert (s > 0).all() and (s < 1).all()


def test_relu_row_sum_add_examples():
    np.testing.assert_array_equal(relu([[-1.0, 2.0], [0.0, -3.0]]).value, [[0, 2], [0, 0]])
    np.testing.assert_array_equal(row_sum([[1.0, 2.0], [3.0, 4.0]]).value, [[4, 6]])
    assert add([[1.0]], [[2.0]]).value[0, 0] == 3.0
    assert scale([[2.0]], -1.5).value[0, 0] == -3.0


def test_add_shape_mismatch():
    with pytest.raises(DimensionError):
        add(np.ones((2, 2)), np.ones((2, 3)))


def test_non_finite_is_rejected():
    with np.errstate(over="ignore"), pytest.raises(NonFiniteError):
        scale([[1e308]], 1e10)


def test_backward_relu_sum():
    tape = Tape()
    w = tape.parameter([[2.0, -1.0]])
    backward(tape, matmul(relu(w), np.ones((2, 1))))
    np.testing.assert_array_equal(w.grad, [[1.0, 0.0]])


def test_backward_product():
    tape = Tape()
    w = tape.parameter([[3.0]])
    backward(tape, matmul([[2.0]], w))
    assert w.grad[0, 0] == 2.0


def test_backward_accumulates_twice(rng):
    tape = Tape()
    w = tape.parameter(rng.uniform(-1, 1, (3, 3)))
    loss = matmul(scale(row_sum(relu(matmul(w, w))), 0.5), np.ones((3, 1)))
    backward(tape, loss)
    first = w.grad.copy()
    backward(tape, loss)
    np.testing.assert_array_equal(w.grad, 2 * first)


def test_backward_requires_scalar_loss():
    tape = Tape()
    w = tape.parameter(np.ones((2, 2)))
    with pytest.raises(ContractError):
        backward(tape, relu(w))


def test_backward_rejects_foreign_loss():
    tape = Tape()
    other = Tape()
    w = other.parameter([[1.0]])
    with pytest.raises(ContractError):
        backward(tape, scale(w, 2.0))


def test_mixing_tapes_refused():
    a = Tape().parameter([[1.0]])
    b = Tape().parameter([[1.0]])
    with pytest.raises(ContractError):
        add(a, b)


def test_grad_check_square():
    def f(tape, p):
        return matmul(p["t"], p["t"])
    tape = Tape()
    t = tape.parameter([[3.0]])
    backward(tape, matmul(t, t))
    assert t.grad[0, 0] == 6.0
    assert grad_check(f, {"t": [[3.0]]}) < 1e-8


def test_grad_check_softmax_cross_entropy_against_closed_form(rng):
    logits = rng.uniform(-1, 1, (1, 3))
    label = 2

    def f(tape, p):
        return pick_neglog_mean(row_softmax(p["z"]), [label])
    assert grad_check(f, {"z": logits}) < 1e-6
    # closed form: softmax(z) - onehot
    tape = Tape()
    z = tape.parameter(logits)
    backward(tape, pick_neglog_mean(row_softmax(z), [label]))
    want = softmax_rows(logits) - np.eye(3)[label]
    np.testing.assert_allclose(z.grad, want, atol=1e-12)


def test_grad_check_rejects_nonpositive_eps():
    with pytest.raises(ContractError):
        grad_check(lambda t, p: p["a"], {"a": [[1.0]]}, eps=0.0)


def _to_scalar(node, r):
    w = r.uniform(-1, 1, (node.shape[1], 1))
    v = r.uniform(-1, 1, (1, node.shape[0]))
    return matmul(matmul(v, node), w)


OPS = {
    "matmul": (lambda p: matmul(p["a"], p["b"]), {"a": (3, 4), "b": (4, 2)}),
    "add": (lambda p: add(p["a"], p["b"]), {"a": (3, 2), "b": (3, 2)}),
    "scale": (lambda p: scale(p["a"], -1.7), {"a": (2, 3)}),
    "relu": (lambda p: relu(p["a"]), {"a": (4, 3)}),
    "row_softmax": (lambda p: row_softmax(p["a"]), {"a": (3, 4)}),
    "fold_sum": (lambda p: fold_sum(p["a"], 3), {"a": (6, 2)}),
    "row_sum": (lambda p: row_sum(p["a"]), {"a": (4, 3)}),
    "vstack": (lambda p: vstack([p["a"], p["b"]]), {"a": (2, 3), "b": (1, 3)}),
    "kron_identity": (lambda p: kron_identity(p["a"], 3), {"a": (2, 2)}),
    "cross_entropy": (lambda p: pick_neglog_mean(row_softmax(p["a"]), [0, 2]), {"a": (2, 3)}),
}


@pytest.mark.parametrize("op", sorted(OPS))
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_every_op_passes_grad_check(op, seed):
    build, shapes = OPS[op]
    r = np.random.default_rng(seed)
    params = {k: r.uniform(-1, 1, s) for k, s in shapes.items()}
    proj_seed = int(r.integers(1 << 30))

    def f(tape, p):
        out = build(p)
        return out if out.shape == (1, 1) else _to_scalar(out, np.random.default_rng(proj_seed))
    report = grad_check_report(f, params)
    assert max(report.values()) < 1e-4, report


def test_fold_sum_and_vstack_values():
    x = np.arange(12.0).reshape(6, 2)
    np.testing.assert_array_equal(fold_sum(x, 3).value, x[0:2] + x[2:4] + x[4:6])
    with pytest.raises(DimensionError):
        fold_sum(x, 4)
    with pytest.raises(DimensionError):
        vstack([np.ones((1, 2)), np.ones((1, 3))])


def test_kron_identity_matches_numpy(rng):
    a = rng.uniform(-1, 1, (2, 3))
    np.testing.assert_array_equal(kron_identity(a, 4).value, np.kron(a, np.eye(4)))


def test_pick_neglog_rejects_bad_label():
    with pytest.raises(ContractError):
        pick_neglog_mean([[0.5, 0.5]], [2])


def test_parameter_copies_input():
    x = np.ones((2, 2))
    p = Tape().parameter(x)
    x[0, 0] = 5.0
    assert p.value[0, 0] == 1.0
