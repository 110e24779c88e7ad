"""No-U-turn Hamiltonian Monte Carlo with warmup adaptation.

Each transition doubles a trajectory in a random direction until the
generalized no-U-turn criterion fires (checked on every balanced sub-tree,
including the two cross-boundary checks), selecting the next state by
multinomial sampling over the trajectory: uniform progressive sampling
within a new sub-tree and biased progressive sampling when it is merged.

Warmup tunes the step size by dual averaging towards ``target_accept`` and
estimates a diagonal inverse metric from the draws of doubling windows
between an initial and a terminal buffer.

The kernel is compiled with numba when the target is a compiled function
of ``(q, data)``; plain Python callables ``q -> (logp, grad)`` run the same
code in the interpreter.  Every chain owns a ``numpy.random.Generator`` spawned
from the run seed, so results depend on the seed and chain index only.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from numba.core.registry import CPUDispatcher

from .diagnostics import Diagnostics, diagnose  # noqa: F401  re-exported
from .exceptions import ConfigurationError, SamplerError

logger = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD = 1000.0
INIT_RADIUS = 2.0

# dual averaging constants
_DA_GAMMA = 0.05
_DA_T0 = 10.0
_DA_KAPPA = 0.75


@dataclass
class SamplerConfig:
    chains: int = 4
    warmup: int = 1000
    samples: int = 2000
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0
    adapt: bool = True
    metric: str = "diag"
    n_jobs: int = 1

    def __post_init__(self):
        if self.chains < 1:
            raise ConfigurationError("chains must be >= 1")
        if self.samples < 1:
            raise ConfigurationError("samples must be >= 1")
        if self.warmup < 0:
            raise ConfigurationError("warmup must be >= 0")
        if self.adapt and self.warmup < 100:
            raise ConfigurationError("warmup must be >= 100 when adaptation is enabled")
        if not 0.0 < self.target_accept < 1.0:
            raise ConfigurationError("target_accept must lie in (0, 1)")
        if self.max_tree_depth < 1:
            raise ConfigurationError("max_tree_depth must be >= 1")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")
        if self.metric not in ("diag", "dense"):
            raise ConfigurationError("metric must be 'diag' or 'dense'")
        self.seed = int(self.seed)

    def to_dict(self):
        return {"chains": self.chains, "warmup": self.warmup, "samples": self.samples,
                "target_accept": self.target_accept, "max_tree_depth": self.max_tree_depth,
                "seed": self.seed, "adapt": self.adapt, "metric": self.metric}


@dataclass
class PosteriorDraws:
    """Post-warmup draws of every chain, in the target's own coordinates.

    Arrays are indexed ``[chain, draw, ...]``.
    """

    samples: np.ndarray
    log_density: np.ndarray
    divergent: np.ndarray
    tree_depth: np.ndarray
    n_leapfrog: np.ndarray
    accept_stat: np.ndarray
    step_size: np.ndarray
    energy: np.ndarray
    inv_metric: np.ndarray
    config: SamplerConfig = field(default_factory=SamplerConfig)

    @property
    def n_chains(self):
        return self.samples.shape[0]

    @property
    def n_draws(self):
        return self.samples.shape[1]

    @property
    def divergence_rate(self):
        return float(self.divergent.mean())

    @property
    def healthy(self):
        return self.divergence_rate <= 0.25


# --- kernel -----------------------------------------------------------------

def _build_kernel(jit):
    """Chain loop and helpers, decorated by ``jit`` (numba or identity)."""

    @jit
    def _leapfrog(target, data, q, p, g, eps, inv_metric):
        p_half = p + 0.5 * eps * g
        q_new = q + eps * (inv_metric @ p_half)
        lp, g_new = target(q_new, data)
        p_new = p_half + 0.5 * eps * g_new
        return q_new, p_new, lp, g_new

    @jit
    def _kinetic(p, inv_metric):
        return 0.5 * np.dot(p, inv_metric @ p)

    @jit
    def _turning(rho, ps_a, ps_b):
        return np.dot(ps_a, rho) <= 0.0 or np.dot(ps_b, rho) <= 0.0

    @jit
    def _log_add(a, b):
        if a == -np.inf:
            return b
        if b == -np.inf:
            return a
        m = max(a, b)
        return m + math.log(math.exp(a - m) + math.exp(b - m))

    @jit
    def _transition(target, data, q0, lp0, g0, eps, inv_metric, metric_chol, max_depth, rng,
                    hist_p, hist_ps, hist_cum):
        dim = q0.shape[0]
        p0 = metric_chol @ rng.standard_normal(dim)
        H0 = -lp0 + _kinetic(p0, inv_metric)

        q_minus = q0.copy()
        p_minus = p0.copy()
        g_minus = g0.copy()
        q_plus = q0.copy()
        p_plus = p0.copy()
        g_plus = g0.copy()
        ps_minus = inv_metric @ p0
        ps_plus = ps_minus.copy()
        rho = p0.copy()
        log_w = 0.0

        q_s = q0.copy()
        lp_s = lp0
        g_s = g0.copy()

        depth = 0
        n_leapfrog = 0
        sum_accept = 0.0
        divergent = False

        while depth < max_depth:
            forward = rng.random() < 0.5
            step = eps if forward else -eps
            if forward:
                q = q_plus.copy()
                p = p_plus.copy()
                g = g_plus.copy()
            else:
                q = q_minus.copy()
                p = p_minus.copy()
                g = g_minus.copy()

            n_steps = 1 << depth
            log_w_sub = -np.inf
            q_sub = q.copy()
            lp_sub = lp0
            g_sub = g.copy()
            valid = True
            for n in range(n_steps):
                q, p, lp, g = _leapfrog(target, data, q, p, g, step, inv_metric)
                n_leapfrog += 1
                H = -lp + _kinetic(p, inv_metric)
                if not math.isfinite(H):
                    H = np.inf
                dH = H - H0
                if dH > DIVERGENCE_THRESHOLD:
                    divergent = True
                    valid = False
                    break
                sum_accept += math.exp(min(0.0, -dH))
                log_w_sub = _log_add(log_w_sub, -dH)
                if math.log(rng.random()) < -dH - log_w_sub:
                    q_sub = q.copy()
                    lp_sub = lp
                    g_sub = g.copy()

                hist_p[n] = p
                hist_ps[n] = inv_metric @ p
                if n == 0:
                    hist_cum[n] = p
                else:
                    hist_cum[n] = hist_cum[n - 1] + p

                # every balanced sub-tree that ends at step n
                span = 2
                while span <= n_steps and (n + 1) % span == 0:
                    start = n + 1 - span
                    mid = start + span // 2
                    before = hist_cum[start - 1] if start > 0 else np.zeros(dim)
                    if _turning(hist_cum[n] - before, hist_ps[start], hist_ps[n]):
                        valid = False
                        break
                    rho_left = hist_cum[mid - 1] - before
                    rho_right = hist_cum[n] - hist_cum[mid - 1]
                    if _turning(rho_left + hist_p[mid], hist_ps[start], hist_ps[mid]):
                        valid = False
                        break
                    if _turning(rho_right + hist_p[mid - 1], hist_ps[mid - 1], hist_ps[n]):
                        valid = False
                        break
                    span *= 2
                if not valid:
                    break

            if not valid:
                break
            depth += 1

            if math.log(rng.random()) < log_w_sub - log_w:
                q_s = q_sub
                lp_s = lp_sub
                g_s = g_sub
            log_w = _log_add(log_w, log_w_sub)

            last = n_steps - 1
            rho_old = rho.copy()
            rho = rho + hist_cum[last]
            if forward:
                ps_adjacent = ps_plus.copy()
                p_adjacent = p_plus.copy()
                ps_far = ps_minus
                q_plus = q
                p_plus = p
                g_plus = g
                ps_plus = hist_ps[last].copy()
            else:
                ps_adjacent = ps_minus.copy()
                p_adjacent = p_minus.copy()
                ps_far = ps_plus
                q_minus = q
                p_minus = p
                g_minus = g
                ps_minus = hist_ps[last].copy()

            if _turning(rho, ps_minus, ps_plus):
                break
            if _turning(rho_old + hist_p[0], ps_far, hist_ps[0]):
                break
            if _turning(hist_cum[last] + p_adjacent, ps_adjacent, hist_ps[last]):
                break

        accept = sum_accept / n_leapfrog if n_leapfrog > 0 else 0.0
        return q_s, lp_s, g_s, depth, n_leapfrog, accept, divergent, H0

    @jit
    def _initial_step_size(target, data, q, lp, g, eps, inv_metric, metric_chol, rng):
        dim = q.shape[0]
        log_target = math.log(0.8)
        direction = 0
        for _ in range(100):
            p = metric_chol @ rng.standard_normal(dim)
            H0 = -lp + _kinetic(p, inv_metric)
            _, p_new, lp_new, _ = _leapfrog(target, data, q, p, g, eps, inv_metric)
            H = -lp_new + _kinetic(p_new, inv_metric)
            delta = H0 - H
            if not math.isfinite(delta):
                delta = -np.inf
            if direction == 0:
                direction = 1 if delta > log_target else -1
            if direction == 1 and not delta > log_target:
                break
            if direction == -1 and not delta < log_target:
                break
            eps = eps * 2.0 if direction == 1 else eps * 0.5
            if eps > 1e7 or eps < 1e-300:
                break
        return eps

    @jit
    def _run_chain(target, data, q_init, rng, n_warmup, n_samples, max_depth, target_accept,
                   adapt, dense, window_end, window_start):
        dim = q_init.shape[0]
        q = q_init.copy()
        lp, g = target(q, data)
        inv_metric = np.eye(dim)
        metric_chol = np.eye(dim)
        max_steps = 1 << max_depth
        hist_p = np.empty((max_steps, dim))
        hist_ps = np.empty((max_steps, dim))
        hist_cum = np.empty((max_steps, dim))

        eps = 1.0
        if adapt:
            eps = _initial_step_size(target, data, q, lp, g, eps, inv_metric, metric_chol, rng)
        mu = math.log(10.0 * eps)
        da_count = 0
        s_bar = 0.0
        x_bar = 0.0

        w_n = 0
        w_mean = np.zeros(dim)
        w_m2 = np.zeros((dim, dim))

        draws = np.empty((n_samples, dim))
        out_lp = np.empty(n_samples)
        out_div = np.zeros(n_samples, dtype=np.bool_)
        out_depth = np.empty(n_samples, dtype=np.int64)
        out_nlf = np.empty(n_samples, dtype=np.int64)
        out_acc = np.empty(n_samples)
        out_energy = np.empty(n_samples)
        n_warm_div = 0

        for it in range(n_warmup + n_samples):
            q, lp, g, depth, nlf, acc, div, energy = _transition(
                target, data, q, lp, g, eps, inv_metric, metric_chol, max_depth, rng,
                hist_p, hist_ps, hist_cum)
            if it < n_warmup:
                n_warm_div += div
                if adapt:
                    da_count += 1
                    eta = 1.0 / (da_count + _DA_T0)
                    s_bar = (1.0 - eta) * s_bar + eta * (target_accept - min(1.0, acc))
                    x = mu - s_bar * math.sqrt(da_count) / _DA_GAMMA
                    x_eta = da_count ** (-_DA_KAPPA)
                    x_bar = x_eta * x + (1.0 - x_eta) * x_bar
                    eps = math.exp(x)

                    if window_start[it]:
                        w_n = 0
                        w_mean[:] = 0.0
                        w_m2[:] = 0.0
                    if window_start[it] or w_n > 0:
                        w_n += 1
                        delta = q - w_mean
                        w_mean += delta / w_n
                        w_m2 += np.outer(delta, q - w_mean)
                    if window_end[it] and w_n > 1:
                        cov = w_m2 / (w_n - 1)
                        if not dense:
                            cov = np.diag(np.diag(cov))
                        inv_metric = ((w_n / (w_n + 5.0)) * cov
                                      + 1e-3 * (5.0 / (w_n + 5.0)) * np.eye(dim))
                        metric_chol = np.linalg.cholesky(np.linalg.inv(inv_metric))
                        w_n = 0
                        eps = _initial_step_size(target, data, q, lp, g, eps, inv_metric,
                                                 metric_chol, rng)
                        mu = math.log(10.0 * eps)
                        da_count = 0
                        s_bar = 0.0
                        x_bar = 0.0
                    if it == n_warmup - 1:
                        eps = math.exp(x_bar)
            else:
                k = it - n_warmup
                draws[k] = q
                out_lp[k] = lp
                out_div[k] = div
                out_depth[k] = depth
                out_nlf[k] = nlf
                out_acc[k] = acc
                out_energy[k] = energy
        return (draws, out_lp, out_div, out_depth, out_nlf, out_acc, out_energy, eps,
                inv_metric)

    return _run_chain


def _identity(fn):
    return fn


_run_chain = _build_kernel(njit(cache=True, nogil=True, error_model="numpy"))
_run_chain_python = _build_kernel(_identity)


# --- driver -----------------------------------------------------------------

def adaptation_windows(n_warmup, init_buffer=75, term_buffer=50, base_window=25):
    """Boolean markers for the start and end of each metric-estimation window.

    Windows double in length between the two buffers; the last one is
    stretched to meet the terminal buffer.
    """
    start = np.zeros(n_warmup, dtype=np.bool_)
    end = np.zeros(n_warmup, dtype=np.bool_)
    if n_warmup < 20:
        return start, end
    if init_buffer + base_window + term_buffer > n_warmup:
        init_buffer = int(0.15 * n_warmup)
        term_buffer = int(0.1 * n_warmup)
        base_window = n_warmup - init_buffer - term_buffer
    stop = n_warmup - term_buffer
    begin = init_buffer
    size = base_window
    while begin < stop:
        finish = begin + size
        if finish + 2 * size > stop:
            finish = stop
        start[begin] = True
        end[finish - 1] = True
        begin = finish
        size *= 2
    return start, end


def _is_compiled(fn):
    return isinstance(fn, CPUDispatcher)


def chain_seeds(seed, chains):
    return np.random.SeedSequence(seed).spawn(chains)


def initial_points(seed, chains, dim, radius=INIT_RADIUS):
    """Uniform jitter in ``[-radius, radius]``, one independent stream per chain."""
    return np.vstack([
        np.random.default_rng(s.spawn(1)[0]).uniform(-radius, radius, dim)
        for s in chain_seeds(seed, chains)])


def sample(logp_and_grad, init, cfg=None, data=None, dim=None):
    """Draw posterior samples with NUTS.

    Parameters
    ----------
    logp_and_grad : callable
        Either a numba-compiled function ``f(q, data) -> (logp, grad)`` (pass
        ``data``), or any Python callable ``f(q) -> (logp, grad)``.
    init : array or None
        Starting point shared by all chains, an array of shape
        ``(chains, dim)``, or ``None`` for uniform ``[-2, 2]`` jitter (then
        ``dim`` is required).
    cfg : SamplerConfig
    """
    cfg = cfg or SamplerConfig()
    if init is None:
        if dim is None:
            raise ValueError("dim is required when init is None")
        inits = initial_points(cfg.seed, cfg.chains, dim)
    else:
        init = np.asarray(init, dtype=float)
        inits = np.broadcast_to(init, (cfg.chains, init.shape[-1])).copy()

    if _is_compiled(logp_and_grad):
        target = logp_and_grad
        kernel_data = data
        run = _run_chain
    else:
        fn = logp_and_grad

        def target(q, _data):
            lp, g = fn(q)
            return float(lp), np.asarray(g, dtype=float)
        kernel_data = None
        run = _run_chain_python

    for c in range(cfg.chains):
        lp0, g0 = target(inits[c], kernel_data)
        if not (np.isfinite(lp0) and np.all(np.isfinite(g0))):
            raise SamplerError(f"log density or gradient is not finite at the initial point "
                               f"of chain {c}")

    w_start, w_end = adaptation_windows(cfg.warmup)
    if not cfg.adapt:
        w_start[:] = False
        w_end[:] = False
    seeds = chain_seeds(cfg.seed, cfg.chains)

    def one(c):
        rng = np.random.default_rng(seeds[c])
        return run(target, kernel_data, inits[c], rng, cfg.warmup, cfg.samples,
                   cfg.max_tree_depth, cfg.target_accept, cfg.adapt, cfg.metric == "dense",
                   w_end, w_start)

    if cfg.n_jobs > 1 and cfg.chains > 1 and run is _run_chain:
        with ThreadPoolExecutor(max_workers=min(cfg.n_jobs, cfg.chains)) as pool:
            results = list(pool.map(one, range(cfg.chains)))
    else:
        results = [one(c) for c in range(cfg.chains)]

    fields = list(zip(*results))
    out = PosteriorDraws(
        samples=np.stack(fields[0]),
        log_density=np.stack(fields[1]),
        divergent=np.stack(fields[2]),
        tree_depth=np.stack(fields[3]),
        n_leapfrog=np.stack(fields[4]),
        accept_stat=np.stack(fields[5]),
        energy=np.stack(fields[6]),
        step_size=np.array(fields[7], dtype=float),
        inv_metric=np.stack(fields[8]),
        config=cfg,
    )
    if not out.healthy:
        logger.warning("%.0f%% of post-warmup transitions diverged",
                       100 * out.divergence_rate)
    return out

