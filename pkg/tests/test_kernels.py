import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safeflow.kernels import RbfKernel

from conftest import central_difference, relative_error

point = st.lists(st.floats(-50.0, 50.0), min_size=2, max_size=2).map(np.array)


def test_diagonal_is_one():
    k = RbfKernel(3.0)
    x = np.array([1.2, -4.5])
    assert k.eval(x, x) == 1.0


def test_bandwidth_three_example():
    # ||x - y|| = 3 with the halved convention gives exp(-1/2).
    k = RbfKernel(3.0)
    assert np.isclose(k.eval(np.array([3.0, 0.0]), np.array([0.0, 0.0])), math.exp(-0.5))


def test_plain_convention_toggle():
    k = RbfKernel(3.0, convention="plain")
    assert np.isclose(k.eval(np.array([3.0, 0.0]), np.array([0.0, 0.0])), math.exp(-1.0))


def test_monotone_decay():
    k = RbfKernel(3.0)
    y = np.zeros(2)
    values = [k.eval(np.array([d, 0.0]), y) for d in (0.0, 1.0, 5.0, 20.0, 100.0)]
    assert all(a > b for a, b in zip(values, values[1:]))
    assert values[-1] < 1e-100


def test_validation():
    with pytest.raises(ValueError):
        RbfKernel(0.0)
    with pytest.raises(ValueError):
        RbfKernel(1.0, convention="gauss")
    with pytest.raises(ValueError):
        RbfKernel(1.0).grad(np.zeros(2), np.ones(2), arg=2)


@settings(deadline=None, max_examples=60)
@given(x=point, y=point)
def test_symmetry_and_bounds(x, y):
    k = RbfKernel(3.0)
    v = k.eval(x, y)
    assert v == k.eval(y, x)
    assert 0.0 <= v <= 1.0


def test_grad_vanishes_on_diagonal():
    k = RbfKernel(3.0)
    x = np.array([2.0, -1.0])
    np.testing.assert_array_equal(k.grad(x, x), [0.0, 0.0])


def test_grad_matches_finite_differences(rng):
    k = RbfKernel(3.0)
    for _ in range(100):
        x, y = rng.uniform(-10.0, 10.0, size=(2, 2))
        fd = central_difference(lambda p: k.eval(p, y), x, h=1e-6)
        assert relative_error(k.grad(x, y, arg=0), fd) <= 1e-6


def test_grad_antisymmetry(rng):
    k = RbfKernel(3.0)
    for _ in range(20):
        x, y = rng.uniform(-10.0, 10.0, size=(2, 2))
        np.testing.assert_allclose(k.grad(x, y, arg=0), -k.grad(y, x, arg=0), rtol=1e-14)


def test_translation_invariance(rng):
    k = RbfKernel(3.0)
    for _ in range(20):
        x, y = rng.uniform(-10.0, 10.0, size=(2, 2))
        np.testing.assert_allclose(
            k.grad(x, y, arg=0) + k.grad(x, y, arg=1), 0.0, atol=1e-16
        )


def test_gram_matrix_positive_semidefinite(rng):
    k = RbfKernel(3.0)
    pts = rng.uniform(-10.0, 10.0, size=(10, 2))
    gram = k.pairwise(pts, pts)
    assert np.min(np.linalg.eigvalsh(gram)) >= -1e-10


def test_pairwise_matches_eval(rng):
    k = RbfKernel(2.0)
    x = rng.uniform(-5.0, 5.0, size=(6, 2))
    y = rng.uniform(-5.0, 5.0, size=(4, 2))
    expected = np.array([[k.eval(xi, yj) for yj in y] for xi in x])
    np.testing.assert_allclose(k.pairwise(x, y), expected, rtol=1e-14)
