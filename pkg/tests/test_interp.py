import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dehom_evo.interp import keys_kernel, resample, upsample, upsample_bilinear, upsample_matrix


def test_kernel_values():
    assert keys_kernel(0.0) == 1.0
    for t in (1.0, 2.0, 2.5, -1.0):
        assert keys_kernel(t) == pytest.approx(0.0, abs=1e-15)
    # a = -0.5: w(0.5) = 0.5625, w(1.5) = -0.0625
    assert keys_kernel(0.5) == pytest.approx(0.5625)
    assert keys_kernel(1.5) == pytest.approx(-0.0625)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1, exclude_max=True), st.floats(-1.0, -0.25))
def test_kernel_is_a_partition_of_unity(f, a):
    w = keys_kernel(np.array([f + 1, f, 1 - f, 2 - f]), a)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)


def test_resample_at_integer_points_is_exact():
    img = np.random.default_rng(0).normal(size=(5, 4))
    u, v = np.meshgrid(np.arange(5.0), np.arange(4.0), indexing="ij")
    np.testing.assert_allclose(resample(img, u, v), img, atol=1e-14)


def test_resample_reproduces_quadratics_in_the_interior():
    x, y = np.meshgrid(np.arange(10.0), np.arange(9.0), indexing="ij")
    img = 0.3 * x**2 - x * y + 2 * y + 1
    u, v = np.array([3.3, 5.75, 4.5]), np.array([2.2, 6.1, 4.5])
    expect = 0.3 * u**2 - u * v + 2 * v + 1
    np.testing.assert_allclose(resample(img, u, v), expect, atol=1e-12)


def test_resample_clamps_at_edges():
    img = np.arange(12.0).reshape(4, 3)
    assert resample(img, np.array([-5.0]), np.array([0.0]))[0] == pytest.approx(img[0, 0])
    assert resample(img, np.array([10.0]), np.array([10.0]))[0] == pytest.approx(img[-1, -1])


def test_upsampling_preserves_constants_and_rows_sum_to_one():
    M = upsample_matrix(6, 4)
    np.testing.assert_allclose(M.sum(axis=1), 1.0, atol=1e-14)
    np.testing.assert_allclose(upsample(np.full((3, 5), 2.5), 4), 2.5, atol=1e-14)
    np.testing.assert_allclose(upsample_bilinear(np.full((3, 5), 2.5), 3), 2.5, atol=1e-14)


def test_upsampling_reproduces_linear_ramps():
    img = np.add.outer(np.arange(8.0), 2 * np.arange(6.0))
    fine = upsample(img, 4)
    u = (np.arange(32) + 0.5) / 4 - 0.5
    v = (np.arange(24) + 0.5) / 4 - 0.5
    expect = np.add.outer(u, 2 * v)
    inner = (slice(8, -8), slice(8, -8))
    np.testing.assert_allclose(fine[inner], expect[inner], atol=1e-12)
    lin = upsample_bilinear(img, 4)
    np.testing.assert_allclose(lin[2:-2, 2:-2], expect[2:-2, 2:-2], atol=1e-12)
