import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from flame.model import ParameterVector, walk_basis
from flame.splines import basis_matrix, build_knots
from flame.model import unconstrained_to_arrays

durations = st.lists(st.floats(0.0, 30.0, allow_nan=False), min_size=1, max_size=40)


@given(K=st.integers(6, 40), hi=st.floats(1.0, 500.0), frac=st.lists(
    st.floats(0.0, 1.0), min_size=1, max_size=50))
def test_partition_of_unity(K, hi, frac):
    kv = build_knots(K, 0.0, hi)
    B = basis_matrix(kv, np.array(frac) * hi)
    assert np.all(B >= 0)
    np.testing.assert_allclose(B.sum(axis=1), 1.0, atol=1e-10)


@given(z=durations, seed=st.integers(0, 2 ** 32 - 1))
def test_episode_sum_is_permutation_invariant(z, seed):
    kv = build_knots(30, 0.0, 30.0)
    gamma = np.random.default_rng(seed).normal(size=30)
    perm = np.random.default_rng(seed).permutation(len(z))
    a = basis_matrix(kv, z).sum(axis=0) @ gamma
    b = basis_matrix(kv, np.array(z)[perm]).sum(axis=0) @ gamma
    assert abs(a - b) <= 1e-10 * max(1.0, abs(a))


@settings(max_examples=200)
@given(u=arrays(np.float64, 2 + 12 + 1, elements=st.floats(-20, 20)))
def test_constrained_draws_satisfy_constraints(u):
    beta, gamma, tau = unconstrained_to_arrays(u, 2, 12, True)
    assert tau > 0
    assert gamma[0] >= 0 and gamma[1] >= 0


@given(K=st.integers(6, 30), seed=st.integers(0, 2 ** 32 - 1))
def test_unconstrained_round_trip(K, seed):
    rng = np.random.default_rng(seed)
    gamma = np.cumsum(rng.normal(0, 0.2, K))
    gamma[:2] = np.abs(rng.normal(0, [1e-3, 1.0])) + 1e-12
    pv = ParameterVector(rng.normal(size=2), gamma, float(np.exp(rng.uniform(-3, 1))))
    back = ParameterVector.from_unconstrained(pv.to_unconstrained(), 2, K)
    np.testing.assert_allclose(back.gamma, pv.gamma, rtol=1e-9, atol=1e-10)
    V, G, m = walk_basis(K)
    assert G.shape == (K, K - 2) and 0 < m <= K - 2
