import math

import numpy as np
import pytest

from comgnn import tensor as T

import oracles


def rnd(rng, *shape):
    return T.Tensor(rng.normal(size=shape))


# -- forward values ------------------------------------------------------------

def test_arithmetic_matches_numpy():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4,))
    assert np.array_equal(T.add(a, b).data, a + b)
    assert np.array_equal(T.sub(a, b).data, a - b)
    assert np.array_equal(T.mul(a, b).data, a * b)
    assert np.array_equal(T.div(a, b + 5).data, a / (b + 5))
    assert np.array_equal(T.matmul(a, rng.normal(size=(4, 2))).shape, (3, 2))


def test_softplus_stable_branches():
    x = np.array([-800.0, -25.0, -1.0, 0.0, 3.0, 25.0, 800.0])
    got = T.softplus(x).data
    want = [oracles.softplus(v) for v in x]
    assert np.allclose(got, want, rtol=1e-15, atol=0)
    assert np.all(np.isfinite(got))
    assert got[-1] == 800.0


def test_mish_and_leaky_relu_values():
    x = np.linspace(-30, 30, 61)
    assert np.allclose(T.mish(x).data, [oracles.mish(v) for v in x], atol=1e-14)
    assert np.allclose(T.leaky_relu(x).data, [oracles.leaky(v) for v in x], atol=0)
    assert np.allclose(T.leaky_relu(x, 0.1).data, [oracles.leaky(v, 0.1) for v in x], atol=0)


@pytest.mark.parametrize("slope", [0.0, 1.0, -0.2, 1.5])
def test_leaky_relu_rejects_slope_outside_unit_interval(slope):
    with pytest.raises(ValueError):
        T.leaky_relu(np.ones(3), slope)


def test_glu_matches_oracle_and_rejects_odd_width():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(5, 6))
    assert np.allclose(T.glu(x).data, oracles.glu(x), atol=1e-15)
    with pytest.raises(T.ShapeError):
        T.glu(rng.normal(size=(5, 3)))


def test_conv1d_time_matches_loop_oracle():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(7, 4, 2, 3))
    k = rng.normal(size=(3, 3, 5))
    assert np.allclose(T.conv1d_time(x, k).data, oracles.conv1d_time(x, k), atol=1e-13)


def test_conv1d_time_short_input_and_bad_channels():
    with pytest.raises(T.ShapeError, match="T >= K"):
        T.conv1d_time(np.zeros((2, 3, 1)), np.zeros((3, 1, 1)))
    with pytest.raises(T.ShapeError):
        T.conv1d_time(np.zeros((4, 3, 2)), np.zeros((3, 1, 1)))


def test_conv_on_constant_input_is_time_invariant():
    rng = np.random.default_rng(3)
    x = np.repeat(rng.normal(size=(1, 4, 2)), 9, axis=0)
    y = T.conv1d_time(x, rng.normal(size=(3, 2, 2))).data
    assert np.allclose(y, y[:1], atol=1e-14)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(T.ShapeError) as exc:
        T.matmul(np.zeros((3, 4)), np.zeros((5, 2)))
    assert "(3, 4)" in str(exc.value) and "(5, 2)" in str(exc.value)


def test_concat_mismatch_is_rejected():
    with pytest.raises(T.ShapeError):
        T.concat([np.zeros((2, 3)), np.zeros((3, 3))], axis=1)


def test_segment_softmax_matches_oracle_and_sums_to_one():
    rng = np.random.default_rng(4)
    ids = rng.integers(0, 5, size=30)
    s = rng.normal(size=30) * 10
    got = T.segment_softmax(s, ids, 6).data
    assert np.allclose(got, oracles.segment_softmax(s, ids, 6), atol=1e-15)
    sums = np.zeros(6)
    np.add.at(sums, ids, got)
    present = np.isin(np.arange(6), ids)
    assert np.all(np.abs(sums[present] - 1) < 1e-12)
    assert np.all(sums[~present] == 0)


def test_segment_softmax_rejects_non_finite_scores():
    with pytest.raises(FloatingPointError):
        T.segment_softmax(np.array([1.0, np.nan]), np.array([0, 0]), 1)


def test_segment_sum_accumulates_in_row_order():
    # sequential accumulation in listed order, bit for bit
    rng = np.random.default_rng(5)
    vals = rng.normal(size=(50, 3)) * np.logspace(-8, 8, 50)[:, None]
    ids = rng.integers(0, 4, size=50)
    want = np.zeros((4, 3))
    for i in range(50):
        want[ids[i]] = want[ids[i]] + vals[i]
    assert np.array_equal(T.segment_sum(vals, ids, 4).data, want)


def test_segment_sum_id_out_of_range():
    with pytest.raises(IndexError):
        T.segment_sum(np.ones((3, 1)), np.array([0, 1, 3]), 3)


def test_take_identity_index_returns_input():
    x = T.Tensor(np.arange(6.0).reshape(3, 2))
    assert T.take(x, np.arange(3)) is x


def test_l2_sum_squares():
    rng = np.random.default_rng(6)
    ps = [rnd(rng, 3, 2), rnd(rng, 4)]
    assert math.isclose(T.sum_squares(ps).item(), oracles.squared_norm([p.data for p in ps]),
                        rel_tol=1e-14)


# -- gradients ------------------------------------------------------------------

UNARY = {
    "exp": lambda x: T.exp(T.mul(x, 0.3)),
    "log": lambda x: T.log(T.add(T.square(x), 1.0)),
    "tanh": T.tanh,
    "softplus": T.softplus,
    "sigmoid": T.sigmoid,
    "mish": T.mish,
    "leaky_relu": T.leaky_relu,
    "glu": T.glu,
    "square": T.square,
    "abs": lambda x: T.tabs(T.add(x, 3.0)),
    "reshape": lambda x: T.reshape(x, (2, 6)),
    "transpose": T.transpose,
    "swap_last": T.swap_last,
    "sum_axis": lambda x: T.tsum(x, axis=0),
    "mean": lambda x: T.mean(x, axis=1),
    "take_rows": lambda x: T.take(x, np.array([2, 0, 2, 1])),
    "take_cols": lambda x: T.take(x, np.array([3, 3, 0]), axis=1),
    "rowdot": lambda x: T.rowdot(x, x),
    "segment_sum": lambda x: T.segment_sum(x, np.array([1, 0, 1]), 3),
    "segment_softmax": lambda x: T.segment_softmax(T.tsum(x, axis=1), np.array([0, 0, 1]), 2),
    "segment_log_softmax": lambda x: T.segment_log_softmax(T.tsum(x, axis=1), np.array([1, 1, 1]), 2),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name):
    rng = np.random.default_rng(7)
    x = rnd(rng, 3, 4)
    w = rng.normal(size=UNARY[name](x).shape)
    err = T.grad_check(lambda t: T.tsum(T.mul(UNARY[name](t), w)), x)
    assert err < 1e-6


def test_binary_and_broadcast_gradients():
    rng = np.random.default_rng(8)
    a, b = rnd(rng, 3, 4), rnd(rng, 4)
    c = rnd(rng, 2, 4, 5)
    W = rnd(rng, 5, 4)
    fs = [
        lambda: T.tsum(T.mul(T.add(a, b), T.sub(a, b))),
        lambda: T.tsum(T.div(a, T.add(T.square(b), 1.0))),
        lambda: T.tsum(T.square(T.matmul(c, T.transpose(c, (0, 2, 1))))),
        lambda: T.tsum(T.square(T.linear(T.swap_last(c), W))),
        lambda: T.tsum(T.concat([a, T.reshape(b, (1, 4))], axis=0)),
    ]
    for f in fs:
        assert T.grad_check(f, [a, b, c, W]) < 1e-6


def test_linear_shared_weight_gradient_over_batch():
    rng = np.random.default_rng(9)
    x, W, b = rnd(rng, 4, 3, 5), rnd(rng, 2, 5), rnd(rng, 2)
    assert T.grad_check(lambda: T.tsum(T.square(T.linear(x, W, b))), [x, W, b]) < 1e-6


def test_conv1d_time_gradient():
    rng = np.random.default_rng(10)
    x, k = rnd(rng, 6, 3, 2), rnd(rng, 3, 2, 4)
    assert T.grad_check(lambda: T.tsum(T.square(T.conv1d_time(x, k))), [x, k]) < 1e-6


def test_backward_accumulates_over_shared_inputs():
    x = T.Tensor(np.array([2.0]), requires_grad=True)
    y = T.add(T.mul(x, x), T.mul(x, 3.0))
    y.backward()
    assert np.allclose(x.grad, [7.0])


def test_tape_is_single_use():
    x = T.Tensor(np.ones(2), requires_grad=True)
    y = T.tsum(T.mul(T.mul(x, 2.0), 3.0))
    y.backward()
    with pytest.raises(RuntimeError):
        y.backward()


def test_no_grad_records_nothing():
    x = T.Tensor(np.ones(2), requires_grad=True)
    with T.no_grad():
        y = T.mul(x, 2.0)
    assert y._node is None


def test_tape_records_operations():
    x = T.Tensor(np.ones(3), requires_grad=True)
    with T.Tape() as tape:
        y = T.tsum(T.mish(x))
    assert len(tape) == 2
    tape.backward(y)
    assert x.grad.shape == (3,)


def test_nonscalar_backward_needs_seed():
    x = T.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(T.ShapeError):
        T.mul(x, 2.0).backward()


def test_grad_check_flags_wrong_gradient():
    # an op with a deliberately wrong derivative must be caught
    def bad_square(x):
        return T._make(x.data ** 2, "bad", (x,), lambda g: (g * x.data,))
    x = T.Tensor(np.array([1.5, -2.0]))
    assert T.grad_check(lambda t: T.tsum(bad_square(t)), x) > 0.1


# -- hand-computable cases ----------------------------------------------------------

def test_matmul_small_cases():
    assert np.array_equal(T.matmul(np.eye(2), np.array([[1.0, 2], [3, 4]])).data, [[1, 2], [3, 4]])
    assert np.array_equal(T.matmul(np.array([[1.0, 2]]), np.array([[3.0], [4]])).data, [[11]])


def test_concat_small_cases():
    out = T.concat([np.array([[1.0], [2.0]]), np.array([[3.0]])], axis=0)
    assert np.array_equal(out.data, [[1], [2], [3]])
    x = T.Tensor(np.ones((2, 2)))
    assert np.array_equal(T.concat([x], axis=0).data, x.data)
    rng = np.random.default_rng(20)
    parts = [rnd(rng, 2, 3), rnd(rng, 1, 3), rnd(rng, 4, 3)]
    assert T.grad_check(lambda: T.tsum(T.square(T.concat(parts, axis=0))), parts) < 1e-6


@pytest.mark.parametrize("x", [-5.0, -1.0, 1.0, 5.0])
def test_mish_high_precision(x):
    from decimal import Decimal, getcontext
    getcontext().prec = 50
    d = Decimal(x)
    sp = (Decimal(1) + d.exp()).ln()
    e2 = (2 * sp).exp()
    want = float(d * (e2 - 1) / (e2 + 1))
    assert math.isclose(T.mish(np.array([x])).data[0], want, rel_tol=1e-14)
    assert T.mish(np.array([0.0])).data[0] == 0.0


def test_leaky_and_sigmoid_small_cases():
    assert T.leaky_relu(np.array([2.0, -1.0]), 0.2).data.tolist() == [2.0, -0.2]
    assert T.sigmoid(np.array([0.0])).data[0] == 0.5
    x = np.random.default_rng(21).normal(size=20) * 5
    assert np.allclose(T.sigmoid(x).data + T.sigmoid(-x).data, 1.0, atol=1e-15)


def test_leaky_relu_gradient_away_from_kink():
    rng = np.random.default_rng(22)
    x = rng.normal(size=30)
    x = x[np.abs(x) > 0.1]
    t = T.Tensor(x)
    assert T.grad_check(lambda: T.tsum(T.mul(T.leaky_relu(t), np.arange(len(x)) + 1.0)), [t]) < 1e-6


def test_segment_softmax_small_cases():
    assert np.allclose(T.segment_softmax(np.zeros(2), np.array([0, 0]), 1).data, [0.5, 0.5])
    assert T.segment_softmax(np.array([3.0]), np.array([0]), 1).data.tolist() == [1.0]
    got = T.segment_softmax(np.log([1.0, 2.0, 3.0]), np.zeros(3, int), 1).data
    assert np.allclose(got, [1 / 6, 2 / 6, 3 / 6], atol=1e-15)


def test_segment_softmax_shift_invariance():
    rng = np.random.default_rng(23)
    s, ids = rng.normal(size=12), rng.integers(0, 3, size=12)
    shifted = s + np.where(ids == 1, 100.0, 0.0)
    assert np.allclose(T.segment_softmax(s, ids, 3).data, T.segment_softmax(shifted, ids, 3).data, atol=1e-12)


def test_segment_sum_small_case_and_permutation():
    out = T.segment_sum(np.array([[1.0], [2.0], [3.0]]), np.array([0, 0, 1]), 2).data
    assert out.tolist() == [[3.0], [3.0]]
    rng = np.random.default_rng(24)
    v, ids = rng.normal(size=(20, 2)), rng.integers(0, 5, size=20)
    p = rng.permutation(20)
    assert np.allclose(T.segment_sum(v, ids, 5).data, T.segment_sum(v[p], ids[p], 5).data, atol=1e-12)


def test_glu_small_cases():
    a = np.array([[1.0, -2.0, 0.0, 0.0]])
    assert np.array_equal(T.glu(a).data, [[0.5, -1.0]])
    b = np.array([[0.0, 0.0, 3.0, -4.0]])
    assert np.array_equal(T.glu(b).data, [[0.0, 0.0]])


def test_conv_small_cases():
    x = np.arange(4.0).reshape(4, 1, 1)
    assert np.array_equal(T.conv1d_time(x, np.ones((1, 1, 1))).data, x)
    avg = np.full((2, 1, 1), 0.5)
    assert T.conv1d_time(x, avg).data.ravel().tolist() == [0.5, 1.5, 2.5]
    y = np.random.default_rng(25).normal(size=(5, 3, 2))
    assert np.array_equal(T.conv1d_time(y, np.eye(2)[None]).data, y)
    assert T.conv1d_time(np.zeros((12, 2, 1)), np.zeros((3, 1, 4))).shape == (10, 2, 4)


def test_grad_check_on_sum_of_squares():
    x = T.Tensor(np.array([1.0, 2.0]), requires_grad=True)
    T.tsum(T.square(x)).backward()
    assert np.abs(x.grad - [2.0, 4.0]).max() < 1e-8
