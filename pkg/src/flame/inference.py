"""Posterior summaries: accumulation curves, scenario probabilities, contrasts, LOO."""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp

from .exceptions import ConfigurationError
from .model import FlameTarget, aggregate_design, unconstrained_to_arrays, walk_basis
from .sampler import SamplerConfig, sample
from .splines import basis_matrix

DEFAULT_GRID_STEP = 0.1
MIN_LOO_DRAWS = 100


@dataclass
class FlamePosterior:
    """Constrained draws of ``beta``, ``gamma`` and ``tau``, indexed ``[chain, draw, ...]``."""

    beta: np.ndarray
    gamma: np.ndarray
    tau: np.ndarray
    spec: object
    covariate_names: list
    raw: object = None
    seed: int = None

    @property
    def knots(self):
        return self.spec.knots()

    @property
    def n_draws(self):
        return self.beta.shape[0] * self.beta.shape[1]

    def flat(self):
        """Draws with the chain axis folded in: ``(S, p)``, ``(S, K)``, ``(S,)``."""
        return (self.beta.reshape(-1, self.beta.shape[-1]),
                self.gamma.reshape(-1, self.gamma.shape[-1]),
                self.tau.reshape(-1))

    def unconstrained(self):
        anchors = self.gamma[..., :2]
        if self.spec.anchor_nonnegative:
            with np.errstate(divide="ignore"):
                anchors = np.log(anchors)
        V, _, m = walk_basis(self.spec.K)
        s = np.diff(self.gamma, n=2, axis=-1) @ V
        s[..., m:] /= self.tau[..., None]
        return np.concatenate([self.beta, anchors, s, np.log(self.tau)[..., None]], axis=-1)

    @classmethod
    def from_draws(cls, draws, p, spec, covariate_names, seed=None):
        beta, gamma, tau = unconstrained_to_arrays(draws.samples, p, spec.K,
                                                   spec.anchor_nonnegative)
        return cls(beta, gamma, tau, spec, list(covariate_names), raw=draws, seed=seed)


def fit_posterior(ds, spec, cfg=None, init=None):
    """Run the sampler on the posterior of ``spec`` given dataset ``ds``."""
    cfg = cfg or SamplerConfig()
    kv = spec.knots()
    target = FlameTarget(aggregate_design(ds, kv), ds.y, spec)
    draws = sample(target.kernel, init, cfg, data=target.kernel_data, dim=target.dim)
    return FlamePosterior.from_draws(draws, target.p, spec, ds.covariate_names, seed=cfg.seed)


@dataclass
class RafEstimate:
    grid: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float = 0.95


def _equal_tailed(values, level, axis=0):
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(values, [alpha, 1.0 - alpha], axis=axis)
    return lo, hi


def _check_level(level):
    if not 0.0 < level < 1.0:
        raise ConfigurationError(f"credible level must lie in (0, 1), got {level}")


def raf_curve(draws, kv=None, grid_step=DEFAULT_GRID_STEP, level=0.95):
    """Pointwise posterior mean and equal-tailed band of ``f`` on a regular grid."""
    if grid_step <= 0:
        raise ConfigurationError("grid_step must be positive")
    _check_level(level)
    kv = kv or draws.knots
    _, gamma, _ = draws.flat()
    if gamma.shape[0] == 0:
        raise ValueError("no posterior draws")
    n = int(math.floor((kv.domain_hi - kv.domain_lo) / grid_step + 1e-9))
    # rounding keeps grid labels like 29.9 free of accumulated float noise
    grid = np.round(kv.domain_lo + grid_step * np.arange(n + 1), 12)
    if grid[-1] < kv.domain_hi - 1e-9 * max(1.0, kv.domain_hi):
        grid = np.append(grid, kv.domain_hi)
    grid[-1] = min(grid[-1], kv.domain_hi)
    f = gamma @ basis_matrix(kv, grid).T
    lo, hi = _equal_tailed(f, level)
    mean = f.mean(axis=0)
    # the mean of a constant column can round outside its own quantiles
    return RafEstimate(grid, np.clip(mean, lo, hi), lo, hi, level)


@dataclass
class Scenario:
    label: str
    episode_durations: list
    covariate_profile: np.ndarray

    def __post_init__(self):
        self.episode_durations = np.asarray(self.episode_durations, dtype=float).reshape(-1)
        self.covariate_profile = np.asarray(self.covariate_profile, dtype=float).reshape(-1)


@dataclass
class Summary:
    mean: float
    lower: float
    upper: float
    level: float = 0.95

    def to_dict(self):
        return {"mean": self.mean, "lower": self.lower, "upper": self.upper, "level": self.level}


def _summarize(values, level):
    lo, hi = _equal_tailed(values, level)
    mean = float(np.mean(values))
    return Summary(float(min(max(mean, lo), hi)), float(lo), float(hi), level)


def scenario_linear_predictor(draws, sc, kv=None):
    """Per-draw ``profile @ beta + sum_j f(z_j)``."""
    kv = kv or draws.knots
    beta, gamma, _ = draws.flat()
    if sc.covariate_profile.shape[0] != beta.shape[1]:
        raise ValueError(f"scenario {sc.label!r}: covariate profile has "
                         f"{sc.covariate_profile.shape[0]} entries, model has {beta.shape[1]}")
    b_sum = basis_matrix(kv, sc.episode_durations).sum(axis=0)
    return beta @ sc.covariate_profile + gamma @ b_sum


def scenario_draws(draws, sc, kv=None):
    return expit(scenario_linear_predictor(draws, sc, kv))


def scenario_probability(draws, kv, sc, level=0.95):
    _check_level(level)
    return _summarize(scenario_draws(draws, sc, kv), level)


@dataclass
class ContrastResult:
    scenarios: dict
    differences: dict = field(default_factory=dict)

    def to_dict(self):
        return {"scenarios": {k: v.to_dict() for k, v in self.scenarios.items()},
                "differences": {k: v.to_dict() for k, v in self.differences.items()}}


def contrast_scenarios(draws, kv, scenarios, pairs, level=0.95):
    """Probability summaries for ``scenarios`` and ``p(b) - p(a)`` for each ``(a, b)`` label pair."""
    _check_level(level)
    by_label = {}
    for sc in scenarios:
        if sc.label in by_label:
            raise ValueError(f"duplicate scenario label {sc.label!r}")
        by_label[sc.label] = sc
    dims = {sc.covariate_profile.shape for sc in scenarios}
    if len(dims) > 1:
        raise ValueError("scenarios must share the covariate dimension")
    probs = {label: scenario_draws(draws, sc, kv) for label, sc in by_label.items()}
    diffs = {}
    for a, b in pairs:
        for label in (a, b):
            if label not in probs:
                raise ValueError(f"unknown scenario label {label!r}")
        diffs[f"{b} - {a}"] = _summarize(probs[b] - probs[a], level)
    return ContrastResult({k: _summarize(v, level) for k, v in probs.items()}, diffs)


def scenario_contrast(draws, kv, a, b, level=0.95):
    """Summaries of ``p(a)``, ``p(b)`` and the per-draw difference ``p(b) - p(a)``."""
    if a.covariate_profile.shape != b.covariate_profile.shape:
        raise ValueError("scenarios must share the covariate dimension")
    if a.label == b.label:
        pa = scenario_draws(draws, a, kv)
        pb = scenario_draws(draws, b, kv)
        return ContrastResult({a.label: _summarize(pa, level)},
                              {f"{b.label} - {a.label}": _summarize(pb - pa, level)})
    return contrast_scenarios(draws, kv, [a, b], [(a.label, b.label)], level)


def pointwise_log_lik(draws, agg, y):
    """``(S, I)`` matrix of per-draw, per-subject Bernoulli log likelihoods."""
    beta, gamma, _ = draws.flat()
    y = np.asarray(y, dtype=float)
    eta = beta @ agg.X.T + gamma @ agg.B.T
    return y * eta - np.logaddexp(0.0, eta)


def loo_from_log_lik(log_lik):
    """Truncated importance-sampling LOO from an ``(S, I)`` log-likelihood matrix.

    Returns ``(elpd, se, pointwise)``.
    """
    log_lik = np.asarray(log_lik, dtype=float)
    S, n = log_lik.shape
    if S < MIN_LOO_DRAWS:
        raise ValueError(f"LOO needs at least {MIN_LOO_DRAWS} draws, got {S}")
    log_r = -log_lik
    # raw ratios are capped at mean(r) * sqrt(S); work in log space
    log_cap = logsumexp(log_r, axis=0) - math.log(S) + 0.5 * math.log(S)
    log_w = np.minimum(log_r, log_cap)
    pointwise = logsumexp(log_w + log_lik, axis=0) - logsumexp(log_w, axis=0)
    elpd = float(pointwise.sum())
    se = float(math.sqrt(n * np.var(pointwise, ddof=1))) if n > 1 else 0.0
    return elpd, se, pointwise


def loo_elpd(draws, agg, y):
    elpd, se, _ = loo_from_log_lik(pointwise_log_lik(draws, agg, y))
    return elpd, se
