"""Convergence diagnostics: rank-normalized split R-hat and bulk/tail ESS."""

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

DEFAULT_RHAT_THRESHOLD = 1.01
MAX_DIVERGENCE_RATE = 0.25


def split_chains(x):
    """``(M, N)`` to ``(2M, N // 2)``; the middle draw of odd-length chains is dropped."""
    n = x.shape[1] // 2
    return np.concatenate([x[:, :n], x[:, x.shape[1] - n:]], axis=0)


def rank_normalize(x):
    ranks = rankdata(x, method="average").reshape(x.shape)
    return ndtri((ranks - 0.375) / (x.size + 0.25))


def _rhat_basic(x):
    m, n = x.shape
    within = x.var(axis=1, ddof=1).mean()
    between = n * x.mean(axis=1).var(ddof=1)
    if within == 0.0:
        return 1.0 if between == 0.0 else np.inf
    var_hat = (n - 1) / n * within + between / n
    return float(np.sqrt(var_hat / within))


def split_rhat(x):
    """Max of the bulk and folded rank-normalized split R-hat of an ``(M, N)`` array."""
    x = np.asarray(x, dtype=float)
    s = split_chains(x)
    folded = np.abs(s - np.median(s))
    return max(_rhat_basic(rank_normalize(s)), _rhat_basic(rank_normalize(folded)))


def _autocov(x):
    n = x.shape[1]
    centered = x - x.mean(axis=1, keepdims=True)
    size = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(centered, size, axis=1)
    return np.fft.irfft(f * np.conj(f), size, axis=1)[:, :n] / n


def _ess(x):
    """Geyer initial-monotone-sequence ESS of an ``(M, N)`` array."""
    m, n = x.shape
    acov = _autocov(x)
    mean_var = acov[:, 0].mean() * n / (n - 1)
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    rho = np.zeros(n)
    rho[0] = 1.0
    rho_even = 1.0
    rho_odd = 1.0 - (mean_var - acov[:, 1].mean()) / var_plus
    rho[1] = rho_odd
    t = 1
    while t < n - 3 and rho_even + rho_odd > 0.0:
        rho_even = 1.0 - (mean_var - acov[:, t + 1].mean()) / var_plus
        rho_odd = 1.0 - (mean_var - acov[:, t + 2].mean()) / var_plus
        if rho_even + rho_odd >= 0.0:
            rho[t + 1] = rho_even
            rho[t + 2] = rho_odd
        t += 2
    max_t = t - 2
    if rho_even > 0.0:
        rho[max_t + 1] = rho_even
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0
            rho[t + 2] = rho[t + 1]
        t += 2
    total = m * n
    tau = -1.0 + 2.0 * rho[:max_t + 1].sum() + rho[max_t + 1]
    tau = max(tau, 1.0 / np.log10(total))
    return float(total / tau)


def ess_bulk(x):
    return _ess(rank_normalize(split_chains(np.asarray(x, dtype=float))))


def ess_tail(x, prob=0.05):
    s = split_chains(np.asarray(x, dtype=float))
    out = []
    for q in (np.quantile(s, prob), np.quantile(s, 1.0 - prob)):
        ind = (s <= q).astype(float)
        out.append(_ess(ind) if ind.var() > 0 else float(s.size))
    return min(out)


@dataclass
class Diagnostics:
    names: list
    rhat: np.ndarray
    ess_bulk: np.ndarray
    ess_tail: np.ndarray
    degenerate: np.ndarray
    divergences: int
    n_draws: int

    @property
    def ess_exceeds_draws(self):
        """Parameters whose ESS estimate exceeds the draw count by more than 10%."""
        return (self.ess_bulk > 1.1 * self.n_draws) | (self.ess_tail > 1.1 * self.n_draws)

    def healthy(self, rhat_threshold=DEFAULT_RHAT_THRESHOLD):
        ok_rhat = bool(np.all(self.rhat[~self.degenerate] < rhat_threshold))
        return (ok_rhat and not self.degenerate.any()
                and self.divergences <= MAX_DIVERGENCE_RATE * self.n_draws)

    def to_dict(self, rhat_threshold=DEFAULT_RHAT_THRESHOLD):
        def clean(v):
            return None if not np.isfinite(v) else float(v)
        return {
            "n_draws": int(self.n_draws),
            "divergences": int(self.divergences),
            "rhat_threshold": rhat_threshold,
            "healthy": self.healthy(rhat_threshold),
            "max_rhat": clean(np.max(self.rhat)),
            "min_ess_bulk": clean(np.min(self.ess_bulk)),
            "min_ess_tail": clean(np.min(self.ess_tail)),
            "parameters": [
                {"name": n, "rhat": clean(r), "ess_bulk": clean(b), "ess_tail": clean(t),
                 "degenerate": bool(d)}
                for n, r, b, t, d in zip(self.names, self.rhat, self.ess_bulk, self.ess_tail,
                                         self.degenerate)],
        }


def _as_chains(draws):
    """``(M, N, d)`` array, parameter names and divergence count from any draws object."""
    if hasattr(draws, "gamma") and hasattr(draws, "beta"):
        p, K = draws.beta.shape[-1], draws.gamma.shape[-1]
        x = np.concatenate([draws.beta, draws.gamma, draws.tau[..., None]], axis=-1)
        names = ([f"beta[{n}]" for n in draws.covariate_names]
                 + [f"gamma[{k + 1}]" for k in range(K)] + ["tau"])
        assert len(names) == p + K + 1
        div = int(draws.raw.divergent.sum()) if draws.raw is not None else 0
        return x, names, div
    if hasattr(draws, "samples"):
        x = draws.samples
        return x, [f"q[{j}]" for j in range(x.shape[-1])], int(draws.divergent.sum())
    x = np.asarray(draws, dtype=float)
    if x.ndim == 2:
        x = x[..., None]
    return x, [f"q[{j}]" for j in range(x.shape[-1])], 0


def diagnose(draws):
    x, names, div = _as_chains(draws)
    m, n, d = x.shape
    if m < 2:
        raise ValueError("convergence diagnostics need at least 2 chains; run >= 2 chains")
    if n < 4:
        raise ValueError("convergence diagnostics need at least 4 draws per chain")
    rhat = np.empty(d)
    bulk = np.empty(d)
    tail = np.empty(d)
    degenerate = np.zeros(d, dtype=bool)
    for j in range(d):
        xj = x[:, :, j]
        if np.any(xj.var(axis=1) == 0.0):
            degenerate[j] = True
            rhat[j] = _rhat_basic(split_chains(xj))
            bulk[j] = tail[j] = 0.0
            continue
        rhat[j] = split_rhat(xj)
        bulk[j] = ess_bulk(xj)
        tail[j] = ess_tail(xj)
    return Diagnostics(names, rhat, bulk, tail, degenerate, div, m * n)
