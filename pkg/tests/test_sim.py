import numpy as np
import pytest

from flame.exceptions import ConfigurationError
from flame.inference import RafEstimate
from flame.sim import (Shape, SimConfig, TrueRaf, benchmark_grid, generate_dataset, ise,
                       replicate_rng, true_raf_eval)

from oracles import trapezoid_ise


def curve(f, n=301):
    grid = np.linspace(0, 30, n)
    m = f(grid)
    return RafEstimate(grid, m, m, m)


def test_table_values():
    assert true_raf_eval(TrueRaf("linear", 30), 30.0) == pytest.approx(0.65)
    pw = TrueRaf("piecewise_linear", 30)
    assert pw(15.0) == 0.0
    assert pw(18.0) == pytest.approx(0.25)
    assert TrueRaf("logarithm", 30)(np.e - 1) == pytest.approx(0.12)
    assert TrueRaf("sigmoid", 30)(0.0) == pytest.approx(0.4 / 1001)


@pytest.mark.parametrize("shape", list(Shape))
@pytest.mark.parametrize("rate", [10, 30, 50])
def test_zero_at_origin_and_nondecreasing(shape, rate):
    tr = TrueRaf(shape, rate)
    assert tr(0.0) <= 6e-4
    assert np.all(np.diff(tr(np.linspace(0, 30, 3001))) >= 0)


def test_bad_inputs():
    with pytest.raises(ConfigurationError):
        TrueRaf("linear", 20)
    with pytest.raises(ValueError):
        TrueRaf("cubic", 30)
    with pytest.raises(ValueError):
        true_raf_eval(TrueRaf("linear", 30), -1.0)
    with pytest.raises(ConfigurationError):
        SimConfig(I=49)
    with pytest.raises(ConfigurationError):
        SimConfig(replicates=0)
    assert TrueRaf("linear", 0.3).event_rate == 30


def test_generated_structure():
    ds = generate_dataset(SimConfig(I=500, seed=3))
    counts = np.array([len(e) for e in ds.episodes])
    z = np.concatenate(ds.episodes)
    assert counts.min() >= 0 and counts.max() <= 15
    assert z.min() > 0 and z.max() <= 30
    assert ds.covariate_names == ["intercept", "x1"]
    assert np.all(ds.X[:, 0] == 1.0)


def test_determinism_and_replicate_independence():
    cfg = SimConfig(I=200, seed=7)
    a, b = generate_dataset(cfg, 0), generate_dataset(cfg, 0)
    assert a.X.tobytes() == b.X.tobytes() and a.y.tobytes() == b.y.tobytes()
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.episodes, b.episodes))
    c = generate_dataset(cfg, 1)
    assert not np.array_equal(a.X, c.X)
    u = replicate_rng(7, 0).random(20000)
    v = replicate_rng(7, 1).random(20000)
    assert abs(np.corrcoef(u, v)[0, 1]) < 0.03


def test_baseline_rate_without_episodes():
    ds = generate_dataset(SimConfig(I=100_000, max_episodes=0, seed=11))
    assert all(len(e) == 0 for e in ds.episodes)
    assert abs(ds.y.mean() - 1 / (1 + np.exp(3.5))) <= 0.005


def test_linear_thirty_percent_calibration():
    ds = generate_dataset(SimConfig(I=100_000, seed=12))
    assert abs(ds.y.mean() - 0.30) <= 0.02


@pytest.mark.parametrize("shape", list(Shape))
@pytest.mark.parametrize("rate", [10, 30, 50])
def test_calibration_within_three_points(shape, rate):
    ds = generate_dataset(SimConfig(I=100_000, shape=shape, event_rate=rate, seed=13))
    assert abs(ds.y.mean() - rate / 100) <= 0.03


def test_ise_analytic_cases():
    tr = TrueRaf("linear", 30)
    assert ise(curve(tr), tr) == pytest.approx(0.0, abs=1e-15)
    assert ise(curve(lambda z: tr(z) + 0.1), tr) == pytest.approx(0.3, abs=1e-6)
    c = 0.02
    pw = TrueRaf("piecewise_linear", 30)
    # deviation from the truth is exactly cz
    est = curve(lambda z: c * z + pw(z), n=3001)
    assert ise(est, pw) == pytest.approx(c ** 2 * 30 ** 3 / 3, rel=1e-4)


def test_ise_matches_trapezoid_oracle():
    tr = TrueRaf("sigmoid", 30)
    est = curve(lambda z: 0.01 * z, n=3001)
    assert ise(est, tr) == pytest.approx(trapezoid_ise(lambda z: 0.01 * z, tr), rel=1e-9)


def test_ise_rejects_short_grid():
    grid = np.linspace(0, 29, 100)
    with pytest.raises(ValueError, match="span"):
        ise(RafEstimate(grid, grid, grid, grid), TrueRaf("linear", 30))


def test_benchmark_grid_cells():
    cells = benchmark_grid(shapes=("linear", "sigmoid"), sizes=(500, 1000), Ks=(30, 40))
    assert len(cells) == 8
    assert {c.replicates for c in cells} == {20}
