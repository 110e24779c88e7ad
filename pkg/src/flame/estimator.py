"""scikit-learn style wrappers around the accumulation model."""

import numbers

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ConfigurationError, DataError
from .inference import fit_posterior, raf_curve
from .model import Dataset, ModelSpec, aggregate_episodes
from .sampler import SamplerConfig
from .splines import build_knots


def check_episodes(episodes, n_subjects=None):
    """Validate a ragged list of per-subject duration arrays.

    Returns a list of 1-d float arrays; every duration must be positive
    and finite.
    """
    if isinstance(episodes, np.ndarray) and episodes.dtype != object and episodes.ndim == 2:
        episodes = list(episodes)
    out = []
    for i, e in enumerate(episodes):
        arr = np.asarray(e if e is not None else [], dtype=float).reshape(-1)
        bad = ~(np.isfinite(arr) & (arr > 0))
        if bad.any():
            j = int(np.flatnonzero(bad)[0])
            raise DataError(f"subject {i}, episode {j}: duration must be positive and finite, "
                            f"got {arr[j]!r}")
        out.append(arr)
    if n_subjects is not None and len(out) != n_subjects:
        raise DataError(f"got episode lists for {len(out)} subjects, expected {n_subjects}")
    return out


def check_domain(domain, episodes=None):
    """``(lo, hi)``; ``None`` means ``[0, longest observed episode]``."""
    if domain is None:
        longest = max((float(np.max(e)) for e in episodes or [] if np.size(e)), default=0.0)
        if longest <= 0:
            raise ConfigurationError("cannot infer a duration domain without any episodes")
        return 0.0, longest
    lo, hi = (float(v) for v in domain)
    return lo, hi


class EpisodeBasisTransformer(TransformerMixin, BaseEstimator):
    """Map per-subject episode durations to summed B-spline rows.

    Parameters
    ----------
    K : int
        Number of cubic basis functions.
    domain : tuple or None
        Duration range covered by the basis.  ``None`` takes
        ``[0, longest episode seen in fit]``.
    """

    def __init__(self, K=30, domain=None):
        self.K = K
        self.domain = domain

    def fit(self, episodes, y=None):
        episodes = check_episodes(episodes)
        lo, hi = check_domain(self.domain, episodes)
        self.knots_ = build_knots(self.K, lo, hi)
        self.n_subjects_seen_ = len(episodes)
        return self

    def transform(self, episodes):
        check_is_fitted(self, "knots_")
        return aggregate_episodes(check_episodes(episodes), self.knots_)

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "knots_")
        return np.array([f"b{k + 1}" for k in range(self.knots_.n_basis)], dtype=object)


class FlameClassifier(ClassifierMixin, BaseEstimator):
    """Bayesian logistic model with a smooth per-episode risk accumulation function.

    ``fit(X, y, episodes=...)`` takes a covariate matrix, binary outcomes and
    one array of episode durations per subject.  Predictions are posterior
    means of the event probability.

    Parameters
    ----------
    K : int
        Number of cubic B-spline functions for the accumulation curve.
    domain : tuple or None
        Duration range; ``None`` uses ``[0, longest observed episode]``.
    fit_intercept : bool
        Prepend a column of ones to ``X``.
    anchor_nonnegative : bool
        Half-Normal (rather than Normal) anchors on the first two coefficients.
    chains, warmup, samples, target_accept, max_tree_depth, n_jobs
        Sampler settings, see :class:`flame.sampler.SamplerConfig`.
    random_state : int
        Seed for chain initialization and sampling.
    """

    def __init__(self, K=30, domain=None, fit_intercept=True, beta_prior_sd=10.0,
                 gamma1_prior_sd=1e-3, gamma2_prior_sd=1.0, tau_cauchy_scale=1.0,
                 anchor_nonnegative=True, chains=4, warmup=1000, samples=2000,
                 target_accept=0.8, max_tree_depth=10, n_jobs=1, random_state=0):
        self.K = K
        self.domain = domain
        self.fit_intercept = fit_intercept
        self.beta_prior_sd = beta_prior_sd
        self.gamma1_prior_sd = gamma1_prior_sd
        self.gamma2_prior_sd = gamma2_prior_sd
        self.tau_cauchy_scale = tau_cauchy_scale
        self.anchor_nonnegative = anchor_nonnegative
        self.chains = chains
        self.warmup = warmup
        self.samples = samples
        self.target_accept = target_accept
        self.max_tree_depth = max_tree_depth
        self.n_jobs = n_jobs
        self.random_state = random_state

    def _design(self, X):
        X = check_array(X, ensure_min_features=0, dtype=float)
        if self.fit_intercept:
            X = np.hstack([np.ones((X.shape[0], 1)), X])
        return X

    def _sampler_config(self):
        seed = self.random_state
        if seed is None:
            seed = 0
        if not isinstance(seed, numbers.Integral):
            raise ConfigurationError("random_state must be an integer seed")
        return SamplerConfig(chains=self.chains, warmup=self.warmup, samples=self.samples,
                             target_accept=self.target_accept,
                             max_tree_depth=self.max_tree_depth, seed=int(seed),
                             n_jobs=self.n_jobs)

    def fit(self, X, y, episodes=None):
        X_raw = check_array(X, ensure_min_features=0, dtype=float)
        y = np.asarray(y)
        check_classification_targets(y)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if self.classes_.shape[0] != 2:
            raise ValueError(f"binary outcome required, got classes {self.classes_.tolist()}")
        if episodes is None:
            raise ValueError("episodes are required: one array of durations per subject")
        episodes = check_episodes(episodes, X_raw.shape[0])
        self.n_features_in_ = X_raw.shape[1]
        X = self._design(X_raw)
        names = (["intercept"] if self.fit_intercept else []) + [
            f"x{j}" for j in range(self.n_features_in_)]
        spec = ModelSpec(K=self.K, domain=check_domain(self.domain, episodes),
                         beta_prior_sd=self.beta_prior_sd,
                         gamma1_prior_sd=self.gamma1_prior_sd,
                         gamma2_prior_sd=self.gamma2_prior_sd,
                         tau_cauchy_scale=self.tau_cauchy_scale,
                         anchor_nonnegative=self.anchor_nonnegative)
        ds = Dataset.from_arrays(X, y_idx, episodes, covariate_names=names)
        self.spec_ = spec
        self.knots_ = spec.knots()
        self.posterior_ = fit_posterior(ds, spec, self._sampler_config())
        return self

    def decision_draws(self, X, episodes):
        """Linear predictor per posterior draw, shape ``(S, n)``."""
        check_is_fitted(self, "posterior_")
        X = self._design(X)
        if X.shape[1] - int(self.fit_intercept) != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1] - int(self.fit_intercept)} features, "
                             f"expected {self.n_features_in_}")
        B = aggregate_episodes(check_episodes(episodes, X.shape[0]), self.knots_)
        beta, gamma, _ = self.posterior_.flat()
        return beta @ X.T + gamma @ B.T

    def predict_proba(self, X, episodes):
        p1 = expit(self.decision_draws(X, episodes)).mean(axis=0)
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X, episodes):
        return self.classes_[(self.predict_proba(X, episodes)[:, 1] > 0.5).astype(int)]

    def raf(self, grid_step=0.1, level=0.95):
        check_is_fitted(self, "posterior_")
        return raf_curve(self.posterior_, self.knots_, grid_step=grid_step, level=level)

    def score(self, X, y, episodes=None, sample_weight=None):
        from sklearn.metrics import accuracy_score
        return accuracy_score(y, self.predict(X, episodes), sample_weight=sample_weight)
