import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cogmap.errors import ConfigurationError, ContractError
from cogmap.reference import naive_attention, naive_mlp
from cogmap.tensor import (
    GradientTape,
    LinearParams,
    MlpParams,
    backward,
    gelu,
    linear,
    matmul,
    mlp,
    multihead_attention,
    ordered_sum,
    sigmoid,
    softmax_rows,
)

# erf-based values computed with the standard library
GELU_AT_1 = 0.8413447460685429
GELU_AT_MINUS_1 = -0.15865525393145707


def test_linear_identity_and_bias():
    x = np.array([[1.0, 2.0]])
    np.testing.assert_array_equal(linear(x, LinearParams.identity(2, np.float64)), [[1.0, 2.0]])
    p = LinearParams(np.zeros((2, 2)), np.array([3.0, 4.0]))
    np.testing.assert_array_equal(linear(x, p), [[3.0, 4.0]])


def test_linear_matches_triple_loop(rng):
    x = rng.standard_normal((3, 4))
    p = LinearParams.random(4, 5, rng, dtype=np.float64)
    want = np.zeros((3, 5))
    for i in range(3):
        for j in range(5):
            acc = 0.0
            for k in range(4):
                acc += x[i, k] * p.weight[j, k]
            want[i, j] = acc + p.bias[j]
    np.testing.assert_allclose(linear(x, p), want, rtol=0, atol=1e-12)


def test_matmul_and_ordered_sum_accumulate_left_to_right():
    a = np.array([[1e16, 1.0, -1e16]])
    b = np.ones((3, 1))
    # strict left-to-right: (1e16 + 1) - 1e16 == 0 in float64
    assert matmul(a, b)[0, 0] == 0.0
    assert ordered_sum(np.array([1e16, 1.0, -1e16])) == 0.0


def test_mlp_zero_and_gelu_reference_values():
    assert np.all(mlp(np.ones((2, 3)), MlpParams.zeros(3, 4)) == 0)
    ident = MlpParams(LinearParams.identity(2, np.float64), LinearParams.identity(2, np.float64))
    out = mlp(np.array([[1.0, -1.0]]), ident)
    np.testing.assert_allclose(out[0], [GELU_AT_1, GELU_AT_MINUS_1], rtol=0, atol=1e-15)


def test_mlp_matches_composition(rng):
    p = MlpParams.random(3, 4, rng, dtype=np.float64)
    x = rng.standard_normal((5, 3))
    np.testing.assert_allclose(mlp(x, p), naive_mlp(x, p), rtol=0, atol=1e-12)


def test_gelu_and_sigmoid_pointwise():
    assert gelu(np.zeros((1, 1)))[0, 0] == 0.0
    assert sigmoid(np.zeros((1, 1)))[0, 0] == 0.5
    np.testing.assert_allclose(sigmoid(np.array([[2.0]])), [[0.8807970779778823]], atol=1e-15)


def test_softmax_examples():
    np.testing.assert_array_equal(softmax_rows(np.full((1, 4), 7.5)), np.full((1, 4), 0.25))
    np.testing.assert_allclose(softmax_rows(np.array([[0.0, math.log(3)]])), [[0.25, 0.75]],
                               rtol=0, atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)),
              elements=st.floats(-1e4, 1e4)))
def test_softmax_rows_sum_to_one(m):
    out = softmax_rows(m)
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-6)
    row = m[0]
    direct = np.exp(row - row.max()) / np.exp(row - row.max()).sum()
    np.testing.assert_allclose(out[0], direct, rtol=1e-12, atol=1e-300)


def test_softmax_large_magnitude_is_stable():
    out = softmax_rows(np.array([[1e4, -1e4, 1e4 - 1.0]], dtype=np.float32))
    assert np.all(np.isfinite(out))
    assert abs(float(out.sum()) - 1.0) <= 1e-6


def test_attention_single_key_returns_value(rng):
    v = rng.standard_normal((1, 4)).astype(np.float32)
    out = multihead_attention(rng.standard_normal((3, 4)).astype(np.float32),
                              rng.standard_normal((1, 4)).astype(np.float32), v, heads=2)
    assert np.max(np.abs(out - v)) <= 1e-6


def test_attention_identical_keys_average_values(rng):
    v = rng.standard_normal((5, 4))
    k = np.tile(rng.standard_normal((1, 4)), (5, 1))
    out = multihead_attention(rng.standard_normal((2, 4)), k, v, heads=2)
    np.testing.assert_allclose(out, np.tile(v.mean(axis=0), (2, 1)), atol=1e-12)


def test_attention_matches_naive(rng):
    q, k, v = rng.standard_normal((3, 6)), rng.standard_normal((4, 6)), rng.standard_normal((4, 4))
    np.testing.assert_allclose(multihead_attention(q, k, v, heads=2),
                               naive_attention(q, k, v, 2), rtol=0, atol=1e-12)


def test_attention_rejects_bad_shapes(rng):
    with pytest.raises(ConfigurationError):
        multihead_attention(np.ones((1, 5)), np.ones((2, 5)), np.ones((2, 4)), heads=2)
    with pytest.raises(ContractError):
        multihead_attention(np.ones((1, 4)), np.ones((0, 4)), np.ones((0, 4)), heads=2)


def test_backward_trivial_cases(rng):
    x = rng.standard_normal((3, 2))
    p = LinearParams.random(2, 4, rng, dtype=np.float64)
    tape = GradientTape()
    y = linear(x, p, tape)
    loss = np.sum(y)
    tape.record(loss, [y], lambda g: [np.full(y.shape, g)])
    (gb,) = backward(tape, loss, [p.bias])
    np.testing.assert_array_equal(gb, np.full(4, 3.0))

    tape = GradientTape()
    y = linear(x, LinearParams.identity(2, np.float64), tape)
    loss = np.sum(y)
    tape.record(loss, [y], lambda g: [np.full(y.shape, g)])
    (gx,) = backward(tape, loss, [x])
    np.testing.assert_array_equal(gx, np.ones_like(x))


def test_forward_is_deterministic(rng):
    q, k, v = (rng.standard_normal((4, 8)).astype(np.float32) for _ in range(3))
    a = multihead_attention(q, k, v, heads=4)
    b = multihead_attention(q.copy(), k.copy(), v.copy(), heads=4)
    assert a.tobytes() == b.tobytes()
    assert a.dtype == np.float32
