import math

import numpy as np
import pytest

from flame.exceptions import ConfigurationError, DataError, ExtrapolationError
from flame.model import (Dataset, FlameTarget, ModelSpec, ParameterVector, SubjectRecord,
                         aggregate_design, aggregate_episodes, grad_log_posterior_unconstrained,
                         log_likelihood, log_posterior_unconstrained, log_prior, walk_basis)
from flame.splines import basis_matrix, build_knots, difference_penalty, eval_basis, greville_abscissae

from oracles import prior_terms, product_loglik


def small_instance(seed=0, n=50, K=10, p=2):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])
    episodes = [rng.uniform(0.01, 30, rng.integers(0, 6)) for _ in range(n)]
    y = rng.integers(0, 2, n)
    y[:2] = [0, 1]
    ds = Dataset.from_arrays(X, y, episodes)
    spec = ModelSpec(K=K)
    return ds, spec, aggregate_design(ds, spec.knots())


def random_params(rng, p, K, anchored=True):
    gamma = np.cumsum(rng.normal(0, 0.2, K))
    gamma[0] = abs(rng.normal(0, 1e-3))
    gamma[1] = abs(rng.normal(0, 1))
    if not anchored:
        gamma[:2] *= rng.choice([-1, 1], 2)
    return ParameterVector(rng.normal(0, 1, p), gamma, math.exp(rng.uniform(-3, 0)))


def test_subject_record_validation():
    with pytest.raises(DataError):
        SubjectRecord("a", 2, [1.0])
    with pytest.raises(DataError):
        SubjectRecord("a", 1, [1.0], [3.0, 0.0])
    s = SubjectRecord("a", 1, [1.0], [3.0])
    assert np.isnan(s.starts).all()


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset([], ["intercept"])
    with pytest.raises(DataError):
        Dataset([SubjectRecord("a", 1, [1.0, 2.0])], ["intercept"])
    with pytest.warns(RuntimeWarning):
        Dataset([SubjectRecord("a", 1, [1.0]), SubjectRecord("b", 1, [1.0])], ["intercept"])


def test_model_spec_validation():
    with pytest.raises(ConfigurationError, match="minimum basis size"):
        ModelSpec(K=5)
    with pytest.raises(ConfigurationError):
        ModelSpec(beta_prior_sd=0)
    assert ModelSpec().config_hash() == ModelSpec().config_hash()
    assert ModelSpec(K=31).config_hash() != ModelSpec().config_hash()


def test_aggregation_rows():
    kv = build_knots(30, 0, 30)
    B = aggregate_episodes([[], [1.0, 29.0], [1.0] * 30], kv)
    assert np.all(B[0] == 0)
    np.testing.assert_allclose(B[1], eval_basis(kv, 1.0) + eval_basis(kv, 29.0), atol=1e-15)
    np.testing.assert_allclose(B[2], 30 * eval_basis(kv, 1.0), atol=1e-13)
    np.testing.assert_allclose(B.sum(axis=1), [0, 2, 30], atol=1e-12)


def test_aggregation_out_of_domain_names_subject_and_episode():
    ds = Dataset.from_arrays(np.ones((2, 1)), [0, 1], [[3.0], [4.0, 31.0]], ids=["p1", "p2"])
    with pytest.raises(ExtrapolationError, match=r"subject p2, episode 1"):
        aggregate_design(ds, build_knots(10, 0, 30))


def test_loglik_zero_parameters():
    ds, spec, agg = small_instance()
    pv = ParameterVector(np.zeros(2), np.zeros(spec.K), 1.0)
    assert log_likelihood(pv, agg, ds.y) == pytest.approx(len(ds) * math.log(0.5), abs=1e-12)


def test_loglik_ignores_episodes_when_gamma_zero():
    ds, spec, agg = small_instance()
    bare = Dataset.from_arrays(ds.X, ds.y, [[] for _ in range(len(ds))])
    pv = ParameterVector([0.3, -0.2], np.zeros(spec.K), 1.0)
    assert log_likelihood(pv, agg, ds.y) == log_likelihood(
        pv, aggregate_design(bare, spec.knots()), ds.y)


def test_loglik_matches_product_oracle():
    rng = np.random.default_rng(3)
    n, p, K = 5, 2, 6
    X = np.column_stack([np.ones(n), rng.standard_normal(n)])
    episodes = [rng.uniform(0.1, 30, rng.integers(0, 4)) for _ in range(n)]
    y = np.array([0, 1, 1, 0, 1])
    ds = Dataset.from_arrays(X, y, episodes)
    kv = build_knots(K, 0, 30)
    pv = ParameterVector(rng.normal(0, 1, p), rng.normal(0, 0.3, K), 0.5)
    ref = product_loglik(X, episodes, y, pv.beta, pv.gamma, lambda z: eval_basis(kv, z))
    assert log_likelihood(pv, aggregate_design(ds, kv), y) == pytest.approx(ref, abs=1e-10)


def test_loglik_is_overflow_safe():
    ds, spec, agg = small_instance()
    pv = ParameterVector([800.0, 0.0], np.zeros(spec.K), 1.0)
    val = log_likelihood(pv, agg, ds.y)
    assert np.isfinite(val)
    assert val == pytest.approx(-800.0 * np.sum(ds.y == 0), rel=1e-12)


def test_loglik_dimension_mismatch():
    ds, spec, agg = small_instance()
    with pytest.raises(ValueError):
        log_likelihood(ParameterVector([0.0], np.zeros(spec.K), 1.0), agg, ds.y)


@pytest.mark.parametrize("anchored", [True, False])
def test_prior_matches_term_oracle(anchored):
    rng = np.random.default_rng(11)
    spec = ModelSpec(K=10, anchor_nonnegative=anchored)
    for _ in range(5):
        pv = random_params(rng, 2, 10, anchored)
        ref = prior_terms(pv.beta, pv.gamma, pv.tau, anchored=anchored)
        assert log_prior(pv, spec) == pytest.approx(ref, abs=1e-10)


def test_prior_nullspace_and_tau_doubling():
    spec = ModelSpec(K=12)
    lin = 0.01 * np.arange(12)
    assert np.all(difference_penalty(12).apply(np.arange(12)) == 0)

    def rw2_term(tau):
        # everything except the random-walk part is the same oracle
        pv = ParameterVector([0.0], lin, tau)
        return log_prior(pv, spec) - (prior_terms(pv.beta, lin, tau) - sum(
            -0.5 * math.log(2 * math.pi) - math.log(tau) for _ in range(10)))

    assert rw2_term(0.3) == pytest.approx(10 * (-0.5 * math.log(2 * math.pi) - math.log(0.3)),
                                          abs=1e-10)
    assert rw2_term(0.3) - rw2_term(0.6) == pytest.approx(10 * math.log(2), abs=1e-10)


def test_prior_decreases_with_roughness():
    spec = ModelSpec(K=10)
    base = np.linspace(0, 0.5, 10)
    bump = np.zeros(10)
    bump[5] = 1.0
    values = [log_prior(ParameterVector([0.0], base + a * bump, 0.2), spec)
              for a in (0.0, 0.1, 0.2, 0.4)]
    assert np.all(np.diff(values) < 0)


def test_prior_rejects_constraint_violation():
    with pytest.raises(ValueError):
        log_prior(ParameterVector([0.0], -np.ones(10), 0.2), ModelSpec(K=10))


@pytest.mark.parametrize("anchored", [True, False])
def test_round_trip(anchored):
    rng = np.random.default_rng(5)
    for K in (6, 10, 30):
        pv = random_params(rng, 3, K, anchored)
        back = ParameterVector.from_unconstrained(pv.to_unconstrained(anchored), 3, K, anchored)
        np.testing.assert_allclose(back.gamma, pv.gamma, rtol=1e-12, atol=1e-12)
        assert back.tau == pytest.approx(pv.tau, rel=1e-12)


def test_walk_basis_is_orthogonal_and_inverts_differences():
    V, G, m = walk_basis(12)
    np.testing.assert_allclose(V.T @ V, np.eye(10), atol=1e-12)
    D = difference_penalty(12).matrix
    np.testing.assert_allclose(D @ G, V, atol=1e-10)
    assert m == 4


@pytest.mark.parametrize("anchored", [True, False])
def test_unconstrained_density_is_posterior_plus_jacobian(anchored):
    ds, _, _ = small_instance(K=10)
    spec = ModelSpec(K=10, anchor_nonnegative=anchored)
    agg = aggregate_design(ds, spec.knots())
    target = FlameTarget(agg, ds.y, spec)
    _, _, m = walk_basis(10)
    rng = np.random.default_rng(2)
    for _ in range(5):
        pv = random_params(rng, 2, 10, anchored)
        u = pv.to_unconstrained(anchored)
        # Jacobian: tau per standardized coordinate, tau itself, and the anchor logs
        log_jac = (10 - 2 - m + 1) * math.log(pv.tau)
        if anchored:
            log_jac += math.log(pv.gamma[0]) + math.log(pv.gamma[1])
        ref = log_likelihood(pv, agg, ds.y) + log_prior(pv, spec) + log_jac
        assert target.logp_grad(u)[0] == pytest.approx(ref, rel=1e-12, abs=1e-9)


def test_gradient_matches_finite_differences():
    ds, spec, agg = small_instance()
    rng = np.random.default_rng(7)
    h = 1e-5
    worst = 0.0
    for _ in range(20):
        u = random_params(rng, 2, spec.K).to_unconstrained()
        g = grad_log_posterior_unconstrained(u, agg, ds.y, spec)
        fd = np.array([(log_posterior_unconstrained(u + e, agg, ds.y, spec)
                        - log_posterior_unconstrained(u - e, agg, ds.y, spec)) / (2 * h)
                       for e in np.eye(u.size) * h])
        worst = max(worst, np.max(np.abs(fd - g) / np.maximum(1.0, np.abs(g))))
    assert worst <= 1e-5


def test_nonfinite_input_names_index():
    ds, spec, agg = small_instance()
    target = FlameTarget(agg, ds.y, spec)
    u = np.zeros(target.dim)
    u[4] = np.nan
    with pytest.raises(FloatingPointError, match="index 4"):
        target.logp_grad(u)
    u[4] = 0.0
    u[-1] = 1e4
    with pytest.raises(FloatingPointError, match=str(target.dim - 1)):
        target.logp_grad(u)


def test_episode_order_invariance():
    ds, spec, agg = small_instance(seed=4)
    rng = np.random.default_rng(0)
    shuffled = Dataset.from_arrays(ds.X, ds.y, [rng.permutation(e) for e in ds.episodes])
    agg2 = aggregate_design(shuffled, spec.knots())
    u = random_params(rng, 2, spec.K).to_unconstrained()
    assert log_posterior_unconstrained(u, agg2, ds.y, spec) == pytest.approx(
        log_posterior_unconstrained(u, agg, ds.y, spec), abs=1e-12)


def test_split_aggregation_is_linear():
    kv = build_knots(10, 0, 30)
    z = [2.0, 7.5, 21.0, 29.0]
    whole = aggregate_episodes([z], kv)
    parts = aggregate_episodes([z[:2]], kv) + aggregate_episodes([z[2:]], kv)
    np.testing.assert_allclose(whole, parts, atol=1e-14)


def test_glm_embedding_through_greville():
    kv = build_knots(30, 0, 30)
    rng = np.random.default_rng(9)
    episodes = [rng.uniform(0.1, 30, rng.integers(0, 16)) for _ in range(200)]
    B = aggregate_episodes(episodes, kv)
    c = 0.0217
    T = np.array([e.sum() for e in episodes])
    assert np.max(np.abs(B @ (c * greville_abscissae(kv)) - c * T)) <= 1e-8


def test_target_dimension_checks():
    ds, spec, agg = small_instance()
    with pytest.raises(ValueError):
        FlameTarget(agg, ds.y[:-1], spec)
    with pytest.raises(ValueError):
        FlameTarget(agg, ds.y, ModelSpec(K=12))
    assert basis_matrix(spec.knots(), [1.0]).shape == (1, spec.K)
