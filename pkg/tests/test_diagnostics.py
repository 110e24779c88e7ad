import numpy as np
import pytest

from flame.diagnostics import diagnose, ess_bulk, split_rhat


def test_iid_chains_have_rhat_near_one():
    x = np.random.default_rng(0).standard_normal((4, 1000))
    assert split_rhat(x) < 1.01
    assert 2500 < ess_bulk(x) < 5000


def test_separated_chains_are_detected():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((4, 500))
    x[2:] += 10.0
    assert split_rhat(x) > 1.5


def test_trending_chain_is_detected():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((4, 500))
    x[0] += np.linspace(0, 5, 500)
    assert split_rhat(x) > 1.05


def test_constant_parameter_is_flagged_degenerate():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((4, 200, 2))
    x[..., 1] = 0.7
    d = diagnose(x)
    assert list(d.degenerate) == [False, True]
    assert not d.healthy()
    assert d.to_dict()["parameters"][1]["degenerate"]


def test_single_chain_is_an_error():
    with pytest.raises(ValueError, match="2 chains"):
        diagnose(np.zeros((1, 100, 1)))


def test_antithetic_chains_report_super_efficiency():
    # negatively autocorrelated draws give ESS above the draw count
    rng = np.random.default_rng(4)
    x = np.empty((4, 1000))
    x[:, 0] = rng.standard_normal(4)
    for t in range(1, 1000):
        x[:, t] = -0.8 * x[:, t - 1] + 0.6 * rng.standard_normal(4)
    d = diagnose(x)
    assert d.ess_exceeds_draws[0]


def test_healthy_threshold_is_configurable():
    x = np.random.default_rng(5).standard_normal((4, 300, 3))
    d = diagnose(x)
    assert d.healthy()
    assert not d.healthy(rhat_threshold=1.0)
    assert d.to_dict(1.0)["healthy"] is False
