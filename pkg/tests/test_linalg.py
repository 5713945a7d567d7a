import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fsmn.linalg import ShapeError, as_matrix, matmul, relu, relu_backward


def test_matmul_identity(rng):
    b = rng.normal(size=(3, 2))
    np.testing.assert_array_equal(matmul(np.eye(3), b), b)


def test_matmul_hand_example():
    np.testing.assert_array_equal(matmul([[1, 2], [3, 4]], [[5], [6]]), [[17], [39]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"2x3.*2x3"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_relu_examples():
    np.testing.assert_array_equal(relu(np.array([[-1.0, 2.0]])), [[0.0, 2.0]])
    x = np.array([[0.0, 1.5], [3.0, 2.0]])
    np.testing.assert_array_equal(relu(x), x)


def test_relu_backward():
    np.testing.assert_array_equal(relu_backward(np.array([[-1.0, 2.0]]), np.array([[5.0, 7.0]])), [[0.0, 7.0]])
    # subgradient at exactly zero is zero
    np.testing.assert_array_equal(relu_backward(np.array([[0.0]]), np.array([[3.0]])), [[0.0]])
    with pytest.raises(ShapeError):
        relu_backward(np.ones((1, 2)), np.ones((2, 1)))


def test_as_matrix_rejects_3d():
    with pytest.raises(ShapeError):
        as_matrix(np.ones((2, 2, 2)))


def test_matmul_associative(rng):
    for _ in range(20):
        n, k, m, p = rng.integers(1, 8, size=4)
        a, b, c = rng.normal(size=(n, k)), rng.normal(size=(k, m)), rng.normal(size=(m, p))
        np.testing.assert_allclose(matmul(matmul(a, b), c), matmul(a, matmul(b, c)), atol=1e-9, rtol=0)


small_ints = arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)), elements=st.integers(-50, 50).map(float))


@settings(max_examples=50, deadline=None)
@given(small_ints, st.integers(1, 5), st.data())
def test_transpose_of_product_exact(a, cols, data):
    b = data.draw(arrays(np.float64, (a.shape[1], cols), elements=st.integers(-50, 50).map(float)))
    np.testing.assert_array_equal(matmul(a, b).T, matmul(b.T, a.T))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.floats(-1e6, 1e6)))
def test_relu_idempotent(x):
    np.testing.assert_array_equal(relu(relu(x)), relu(x))
