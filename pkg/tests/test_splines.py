import numpy as np
import pytest
from scipy.interpolate import BSpline

from flame.exceptions import ConfigurationError, ExtrapolationError
from flame.splines import (basis_matrix, build_knots, difference_penalty, eval_basis,
                           greville_abscissae)

from oracles import cox_de_boor_row


def test_knot_counts_for_default_basis():
    kv = build_knots(30, 0, 30)
    assert kv.n_basis == 30
    assert kv.n_segments == 27
    assert kv.segment_width == pytest.approx(30 / 27)
    assert len(kv.knots) == 34


def test_smallest_basis():
    kv = build_knots(6, 0, 1)
    assert kv.n_segments == 3
    assert kv.segment_width == pytest.approx(1 / 3)


def test_breakpoints_equally_spaced_and_boundaries_clamped():
    kv = build_knots(17, 2.0, 47.0)
    gaps = np.diff(kv.breakpoints)
    np.testing.assert_allclose(gaps, gaps[0], rtol=1e-12)
    assert np.all(kv.knots[:4] == 2.0) and np.all(kv.knots[-4:] == 47.0)
    assert np.all(np.diff(kv.knots) >= 0)


@pytest.mark.parametrize("K, lo, hi", [(5, 0, 30), (30, 5, 5), (30, -1, 3), (6.5, 0, 1)])
def test_bad_configuration(K, lo, hi):
    with pytest.raises(ConfigurationError):
        build_knots(K, lo, hi)


def test_partition_of_unity_random_points():
    kv = build_knots(30, 0, 30)
    z = np.random.default_rng(0).uniform(0, 30, 1000)
    B = basis_matrix(kv, z)
    assert np.max(np.abs(B.sum(axis=1) - 1)) <= 1e-10
    assert B.min() >= 0
    assert np.max((B > 0).sum(axis=1)) <= 4


def test_boundary_values():
    kv = build_knots(10, 0, 30)
    np.testing.assert_allclose(eval_basis(kv, 0.0), np.eye(10)[0], atol=1e-15)
    np.testing.assert_allclose(eval_basis(kv, 30.0), np.eye(10)[-1], atol=1e-15)


def test_de_boor_oracle_small_case():
    kv = build_knots(6, 0, 1)
    np.testing.assert_allclose(eval_basis(kv, 0.5), cox_de_boor_row(kv.knots, 3, 0.5),
                               atol=1e-12)


def test_de_boor_oracle_grid():
    kv = build_knots(12, 0, 30)
    grid = np.linspace(0, 30, 1001)
    B = basis_matrix(kv, grid)
    ref = np.array([cox_de_boor_row(kv.knots, 3, z) for z in grid])
    assert np.max(np.abs(B - ref)) <= 1e-10


def test_matches_scipy_design_matrix():
    kv = build_knots(30, 0, 30)
    z = np.linspace(0, 30, 777)
    ref = BSpline.design_matrix(z, kv.knots, 3).toarray()
    np.testing.assert_allclose(basis_matrix(kv, z), ref, atol=1e-13)


def test_extrapolation_is_an_error():
    kv = build_knots(30, 0, 30)
    with pytest.raises(ExtrapolationError):
        eval_basis(kv, 30.1)
    with pytest.raises(ExtrapolationError) as err:
        basis_matrix(kv, [1.0, 2.0, -0.5])
    assert err.value.index == 2


def test_basis_matrix_edge_cases():
    kv = build_knots(8, 0, 10)
    assert basis_matrix(kv, []).shape == (0, 8)
    B = basis_matrix(kv, [3.3, 3.3])
    assert np.array_equal(B[0], B[1])
    np.testing.assert_array_equal(B[0], eval_basis(kv, 3.3))


def test_greville_reproduces_linear_functions():
    kv = build_knots(30, 0, 30)
    m = greville_abscissae(kv)
    z = np.linspace(0, 30, 301)
    np.testing.assert_allclose(basis_matrix(kv, z) @ (0.7 * m), 0.7 * z, atol=1e-12)


def test_difference_penalty():
    D = difference_penalty(9)
    assert D.matrix.shape == (7, 9)
    assert D.matrix.dtype.kind == "i"
    k = np.arange(9)
    assert np.all(D.apply(np.ones(9, dtype=np.int64)) == 0)
    assert np.all(D.apply(k) == 0)
    assert np.all(D.apply(k ** 2) == 2)
    with pytest.raises(ConfigurationError):
        difference_penalty(2)
