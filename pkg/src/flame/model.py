"""Data containers and the log posterior of the accumulation model.

The linear predictor of subject ``i`` is ``x_i @ beta + sum_j f(z_ij)`` with
``f(z) = sum_k gamma_k b_k(z)``.  Because ``f`` is linear in ``gamma`` the
episode sum collapses into one aggregated basis row per subject, and the
model becomes a logistic regression on ``[X, B]`` with a structured prior:

* ``beta_j ~ Normal(0, beta_prior_sd)``
* ``gamma_1 ~ half-Normal(0, gamma1_prior_sd)``, ``gamma_2 ~ half-Normal(0, gamma2_prior_sd)``
  (plain Normals when ``anchor_nonnegative`` is off)
* ``gamma_{k+2} - 2 gamma_{k+1} + gamma_k ~ Normal(0, tau)``
* ``tau ~ half-Cauchy(0, tau_cauchy_scale)``

The sampler works on the unconstrained vector
``[beta, a_1, a_2, s_1..s_{K-2}, log tau]``.  ``a_1, a_2`` are ``log gamma_1``
and ``log gamma_2`` when the anchors are non-negative (``gamma_1, gamma_2``
otherwise).  ``gamma`` is the line through ``(gamma_1, gamma_2)`` plus a
doubly-summed walk whose innovations ``delta = D gamma`` are written in the
right singular basis of the walk operator.  The leading
``CENTERED_MODES`` coordinates, the smooth directions the data pin down, are
kept on the raw scale; the remaining rough ones are divided by ``tau``.
Centering everything leaves a funnel in ``tau``, and standardizing everything
couples ``tau`` to the well-identified directions; the split avoids both.
"""

import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from numba import njit

from .exceptions import ConfigurationError, DataError, ExtrapolationError
from .splines import MIN_BASIS, basis_matrix, build_knots, difference_penalty

LOG_2PI = math.log(2.0 * math.pi)
CENTERED_MODES = 4


@dataclass
class SubjectRecord:
    """One subject: outcome, covariates (intercept first) and episodes."""

    id: str
    y: int
    x: np.ndarray
    durations: np.ndarray = field(default_factory=lambda: np.zeros(0))
    starts: np.ndarray = None

    def __post_init__(self):
        self.id = str(self.id)
        if self.y not in (0, 1):
            raise DataError(f"subject {self.id}: outcome must be 0 or 1, got {self.y!r}")
        self.y = int(self.y)
        self.x = np.asarray(self.x, dtype=float).reshape(-1)
        self.durations = np.asarray(self.durations, dtype=float).reshape(-1)
        if self.starts is None:
            self.starts = np.full(self.durations.shape, np.nan)
        self.starts = np.asarray(self.starts, dtype=float).reshape(-1)
        if self.starts.shape != self.durations.shape:
            raise DataError(f"subject {self.id}: starts and durations differ in length")
        if np.any(~(self.durations > 0)):
            j = int(np.flatnonzero(~(self.durations > 0))[0])
            raise DataError(f"subject {self.id}: episode {j} has non-positive duration "
                            f"{self.durations[j]!r}")

    @property
    def n_episodes(self):
        return self.durations.shape[0]


@dataclass
class Dataset:
    subjects: list
    covariate_names: list

    def __post_init__(self):
        if not self.subjects:
            raise DataError("dataset has no subjects")
        p = len(self.covariate_names)
        for s in self.subjects:
            if s.x.shape[0] != p:
                raise DataError(f"subject {s.id}: expected {p} covariates, got {s.x.shape[0]}")
        ys = self.y
        if ys.min() == ys.max():
            warnings.warn("all outcomes are identical; the fit will be degenerate",
                          RuntimeWarning, stacklevel=2)

    def __len__(self):
        return len(self.subjects)

    @property
    def X(self):
        return np.vstack([s.x for s in self.subjects])

    @property
    def y(self):
        return np.array([s.y for s in self.subjects], dtype=float)

    @property
    def episodes(self):
        return [s.durations for s in self.subjects]

    @property
    def max_duration(self):
        return max((float(s.durations.max()) for s in self.subjects if s.n_episodes), default=0.0)

    @classmethod
    def from_arrays(cls, X, y, episodes, covariate_names=None, ids=None, starts=None):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise DataError("X must be two-dimensional")
        n, p = X.shape
        if covariate_names is None:
            covariate_names = [f"x{j}" for j in range(p)]
        if ids is None:
            ids = [str(i) for i in range(n)]
        if starts is None:
            starts = [None] * n
        subjects = [SubjectRecord(ids[i], int(y[i]), X[i], episodes[i], starts[i])
                    for i in range(n)]
        return cls(subjects, list(covariate_names))


@dataclass(frozen=True)
class ModelSpec:
    """Prior hyperparameters and basis size; fully determines the posterior."""

    K: int = 30
    domain: tuple = (0.0, 30.0)
    beta_prior_sd: float = 10.0
    gamma1_prior_sd: float = 1e-3
    gamma2_prior_sd: float = 1.0
    tau_cauchy_scale: float = 1.0
    anchor_nonnegative: bool = True

    def __post_init__(self):
        if int(self.K) != self.K or self.K < MIN_BASIS:
            raise ConfigurationError(
                f"basis size K must be an integer >= {MIN_BASIS} (minimum basis size), "
                f"got {self.K!r}")
        object.__setattr__(self, "K", int(self.K))
        lo, hi = (float(v) for v in self.domain)
        if lo < 0 or hi <= lo:
            raise ConfigurationError(f"domain must satisfy 0 <= lo < hi, got {self.domain!r}")
        object.__setattr__(self, "domain", (lo, hi))
        for name in ("beta_prior_sd", "gamma1_prior_sd", "gamma2_prior_sd", "tau_cauchy_scale"):
            v = float(getattr(self, name))
            if not (v > 0 and math.isfinite(v)):
                raise ConfigurationError(f"{name} must be positive, got {v!r}")
            object.__setattr__(self, name, v)
        object.__setattr__(self, "anchor_nonnegative", bool(self.anchor_nonnegative))

    def knots(self):
        return build_knots(self.K, *self.domain)

    def to_dict(self):
        d = asdict(self)
        d["domain"] = list(self.domain)
        return d

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class ParameterVector:
    beta: np.ndarray
    gamma: np.ndarray
    tau: float

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float).reshape(-1)
        self.gamma = np.asarray(self.gamma, dtype=float).reshape(-1)
        self.tau = float(self.tau)

    @property
    def p(self):
        return self.beta.shape[0]

    @property
    def K(self):
        return self.gamma.shape[0]

    def check(self, anchor_nonnegative=True):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if anchor_nonnegative and (self.gamma[0] < 0 or self.gamma[1] < 0):
            raise ValueError("gamma_1 and gamma_2 must be non-negative under the anchor prior")

    def to_unconstrained(self, anchor_nonnegative=True):
        self.check(anchor_nonnegative)
        anchors = self.gamma[:2].copy()
        if anchor_nonnegative:
            with np.errstate(divide="ignore"):
                anchors = np.log(anchors)
        V, _, m = walk_basis(self.K)
        s = V.T @ np.diff(self.gamma, n=2)
        s[m:] /= self.tau
        return np.concatenate([self.beta, anchors, s, [math.log(self.tau)]])

    @classmethod
    def from_unconstrained(cls, u, p, K, anchor_nonnegative=True):
        u = np.asarray(u, dtype=float)
        if u.shape[-1] != p + K + 1:
            raise ValueError(f"expected {p + K + 1} unconstrained values, got {u.shape[-1]}")
        beta, gamma, tau = unconstrained_to_arrays(u, p, K, anchor_nonnegative)
        return cls(beta, gamma, float(tau))


@lru_cache(maxsize=None)
def walk_basis(K):
    """``(V, G, m)``: rotation of the innovations, walk map ``G = C V`` and centered count.

    ``C`` maps second differences to the walk added to the line, so that
    ``D (C delta) = delta``.  Columns are ordered by decreasing singular value
    with signs fixed so the largest entry of each column of ``V`` is positive.
    """
    C = np.zeros((K, K - 2))
    for k in range(2, K):
        C[k, :k - 1] = np.arange(k - 1, 0, -1)
    _, _, Vt = np.linalg.svd(C, full_matrices=False)
    V = Vt.T
    lead = V[np.argmax(np.abs(V), axis=0), np.arange(K - 2)]
    V = V * np.sign(lead)
    G = np.ascontiguousarray(C @ V)
    for arr in (V, G):
        arr.setflags(write=False)
    return V, G, min(CENTERED_MODES, K - 2)


def unconstrained_to_arrays(u, p, K, anchor_nonnegative=True):
    """Vectorized constraining map over leading axes: ``(..., p+K+1)`` to beta, gamma, tau."""
    u = np.asarray(u, dtype=float)
    beta = u[..., :p].copy()
    g1 = u[..., p]
    g2 = u[..., p + 1]
    if anchor_nonnegative:
        g1 = np.exp(g1)
        g2 = np.exp(g2)
    tau = np.exp(u[..., p + K])
    _, G, m = walk_basis(K)
    s = u[..., p + 2:p + K].copy()
    s[..., m:] *= tau[..., None]
    k = np.arange(K)
    gamma = g1[..., None] * (1.0 - k) + g2[..., None] * k + s @ G.T
    return beta, gamma, tau


@dataclass
class AggregatedDesign:
    """Covariates ``X`` and per-subject summed basis rows ``B``."""

    X: np.ndarray
    B: np.ndarray

    @property
    def n_subjects(self):
        return self.X.shape[0]

    def linear_predictor(self, beta, gamma):
        return self.X @ beta + self.B @ gamma


def aggregate_episodes(episodes, kv, ids=None):
    """Row ``i`` is ``sum_j b(z_ij)``; empty episode lists give zero rows."""
    n = len(episodes)
    counts = np.array([len(np.atleast_1d(e)) for e in episodes], dtype=np.intp)
    flat = (np.concatenate([np.asarray(e, dtype=float).reshape(-1) for e in episodes])
            if n and counts.sum() else np.zeros(0))
    try:
        Bz = basis_matrix(kv, flat)
    except ExtrapolationError as err:
        owner = int(np.searchsorted(np.cumsum(counts), err.index, side="right"))
        j = int(err.index - (np.cumsum(counts)[owner - 1] if owner else 0))
        label = ids[owner] if ids is not None else owner
        raise ExtrapolationError(
            f"subject {label}, episode {j}: duration {flat[err.index]!r} is outside "
            f"the basis domain [{kv.domain_lo}, {kv.domain_hi}]", index=owner) from None
    B = np.zeros((n, kv.n_basis))
    np.add.at(B, np.repeat(np.arange(n), counts), Bz)
    return B


def aggregate_design(ds, kv):
    B = aggregate_episodes(ds.episodes, kv, ids=[s.id for s in ds.subjects])
    return AggregatedDesign(ds.X, B)


def _softplus(eta):
    return np.logaddexp(0.0, eta)


def log_likelihood(params, agg, y):
    y = np.asarray(y, dtype=float)
    if agg.X.shape[1] != params.p or agg.B.shape[1] != params.K or y.shape[0] != agg.n_subjects:
        raise ValueError(
            f"dimension mismatch: X {agg.X.shape}, B {agg.B.shape}, y {y.shape}, "
            f"beta {params.p}, gamma {params.K}")
    eta = agg.linear_predictor(params.beta, params.gamma)
    return float(np.sum(y * eta - _softplus(eta)))


def _normal_logpdf(x, sd):
    return -0.5 * LOG_2PI - math.log(sd) - 0.5 * (np.asarray(x) / sd) ** 2


def log_prior(params, spec, D=None):
    params.check(spec.anchor_nonnegative)
    if D is None:
        D = difference_penalty(params.K)
    d = D.apply(params.gamma)
    g1, g2 = params.gamma[0], params.gamma[1]
    anchors = _normal_logpdf(g1, spec.gamma1_prior_sd) + _normal_logpdf(g2, spec.gamma2_prior_sd)
    if spec.anchor_nonnegative:
        anchors += 2.0 * math.log(2.0)
    c = spec.tau_cauchy_scale
    tau_term = math.log(2.0 / (math.pi * c)) - math.log1p((params.tau / c) ** 2)
    return float(np.sum(_normal_logpdf(d, params.tau)) + anchors + tau_term
                 + np.sum(_normal_logpdf(params.beta, spec.beta_prior_sd)))


@njit(cache=True, nogil=True, error_model="numpy")
def flame_logp_grad(u, data):
    """Unconstrained log posterior and its gradient (compiled).

    ``data`` is the tuple built by :attr:`FlameTarget.kernel_data`.
    """
    A, AT, y, p, K, anchor, beta_sd, g1_sd, g2_sd, c, G, m = data
    n_lin = p + K
    n_walk = K - 2
    a1 = u[p]
    a2 = u[p + 1]
    g1 = math.exp(a1) if anchor else a1
    g2 = math.exp(a2) if anchor else a2
    log_tau = u[n_lin]
    tau = math.exp(log_tau)

    s = np.empty(n_walk)
    for j in range(n_walk):
        s[j] = u[p + 2 + j] if j < m else tau * u[p + 2 + j]
    walk = G @ s
    theta = np.empty(n_lin)
    theta[:p] = u[:p]
    for k in range(K):
        theta[p + k] = g1 * (1.0 - k) + g2 * k + walk[k]

    eta = A @ theta
    n = eta.shape[0]
    resid = np.empty(n)
    lp = 0.0
    for i in range(n):
        e = eta[i]
        if e > 0.0:
            ez = math.exp(-e)
            lp += y[i] * e - (e + math.log1p(ez))
            resid[i] = y[i] - 1.0 / (1.0 + ez)
        else:
            ez = math.exp(e)
            lp += y[i] * e - math.log1p(ez)
            resid[i] = y[i] - ez / (1.0 + ez)
    g_theta = AT @ resid

    grad = np.empty(n_lin + 1)
    for j in range(p):
        lp += -0.5 * LOG_2PI - math.log(beta_sd) - 0.5 * (u[j] / beta_sd) ** 2
        grad[j] = g_theta[j] - u[j] / beta_sd ** 2

    g_gamma = g_theta[p:]
    dg1 = 0.0
    dg2 = 0.0
    for k in range(K):
        dg1 += (1.0 - k) * g_gamma[k]
        dg2 += k * g_gamma[k]
    g_s = G.T @ g_gamma
    dtau = 0.0
    for j in range(n_walk):
        v = u[p + 2 + j]
        if j < m:
            lp += -0.5 * LOG_2PI - log_tau - 0.5 * (v / tau) ** 2
            grad[p + 2 + j] = g_s[j] - v / tau ** 2
            dtau += -1.0 / tau + v * v / tau ** 3
        else:
            lp += -0.5 * LOG_2PI - 0.5 * v * v
            grad[p + 2 + j] = tau * g_s[j] - v
            dtau += g_s[j] * v

    lp += -LOG_2PI - math.log(g1_sd) - math.log(g2_sd)
    lp += -0.5 * (g1 / g1_sd) ** 2 - 0.5 * (g2 / g2_sd) ** 2
    dg1 -= g1 / g1_sd ** 2
    dg2 -= g2 / g2_sd ** 2

    lp += math.log(2.0 / (math.pi * c)) - math.log1p((tau / c) ** 2)
    dtau -= 2.0 * tau / (c * c + tau * tau)

    if anchor:
        lp += 2.0 * math.log(2.0) + a1 + a2
        grad[p] = dg1 * g1 + 1.0
        grad[p + 1] = dg2 * g2 + 1.0
    else:
        grad[p] = dg1
        grad[p + 1] = dg2
    lp += log_tau
    grad[n_lin] = dtau * tau + 1.0
    return lp, grad


class FlameTarget:
    """Unconstrained posterior for one design, outcome vector and spec."""

    def __init__(self, agg, y, spec):
        y = np.asarray(y, dtype=float)
        if y.shape[0] != agg.n_subjects:
            raise ValueError("outcome length does not match the design")
        if agg.B.shape[1] != spec.K:
            raise ValueError(f"design has {agg.B.shape[1]} basis columns, spec says K={spec.K}")
        self.agg = agg
        self.y = y
        self.spec = spec
        self.p = agg.X.shape[1]
        self.K = spec.K
        A = np.ascontiguousarray(np.hstack([agg.X, agg.B]))
        self._data = (A, np.ascontiguousarray(A.T), np.ascontiguousarray(y), self.p, self.K,
                      spec.anchor_nonnegative, spec.beta_prior_sd, spec.gamma1_prior_sd,
                      spec.gamma2_prior_sd, spec.tau_cauchy_scale) + walk_basis(self.K)[1:]

    @property
    def dim(self):
        return self.p + self.K + 1

    @property
    def kernel(self):
        return flame_logp_grad

    @property
    def kernel_data(self):
        return self._data

    def _check_input(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape != (self.dim,):
            raise ValueError(f"expected an unconstrained vector of length {self.dim}")
        bad = np.flatnonzero(~np.isfinite(u))
        if bad.size:
            raise FloatingPointError(f"non-finite unconstrained parameter at index {bad[0]}")
        logged = [self.p + self.K] + ([self.p, self.p + 1] if self.spec.anchor_nonnegative else [])
        for idx in logged:
            if u[idx] > 700.0:
                raise FloatingPointError(
                    f"unconstrained parameter {idx} = {u[idx]} overflows its exp transform")
        return u

    def logp_grad(self, u):
        u = self._check_input(u)
        lp, grad = flame_logp_grad(u, self._data)
        if not math.isfinite(lp):
            raise FloatingPointError("log posterior is not finite")
        bad = np.flatnonzero(~np.isfinite(grad))
        if bad.size:
            raise FloatingPointError(f"gradient is not finite at parameter index {bad[0]}")
        return lp, grad

    def constrain(self, u):
        return ParameterVector.from_unconstrained(u, self.p, self.K, self.spec.anchor_nonnegative)


def log_posterior_unconstrained(u, agg, y, spec):
    return FlameTarget(agg, y, spec).logp_grad(u)[0]


def grad_log_posterior_unconstrained(u, agg, y, spec):
    return FlameTarget(agg, y, spec).logp_grad(u)[1]
