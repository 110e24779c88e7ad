"""Simulation study: true accumulation functions, data generation and ISE scoring."""

import csv
import logging
import math
import time
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from scipy.special import expit

from .exceptions import ConfigurationError
from .model import Dataset, SubjectRecord

logger = logging.getLogger(__name__)

BASELINE_INTERCEPT = -3.5
BASELINE_SLOPE = 0.1
DURATION_MAX = 30.0
ISE_GRID_POINTS = 3001


class Shape(str, Enum):
    LINEAR = "linear"
    PIECEWISE_LINEAR = "piecewise_linear"
    LOGARITHM = "logarithm"
    SIGMOID = "sigmoid"


# scale parameter per (shape, event rate %)
_SCALES = {
    Shape.LINEAR: {10: 0.03 / 3, 30: 0.065 / 3, 50: 0.1 / 3},
    Shape.PIECEWISE_LINEAR: {10: 0.1 / 3, 30: 0.25 / 3, 50: 0.45 / 3},
    Shape.LOGARITHM: {10: 0.06, 30: 0.12, 50: 0.2},
    Shape.SIGMOID: {10: 0.2, 30: 0.4, 50: 0.6},
}


@dataclass(frozen=True)
class TrueRaf:
    shape: Shape
    event_rate: int

    def __post_init__(self):
        object.__setattr__(self, "shape", Shape(self.shape))
        rate = int(round(float(self.event_rate) * 100)) if float(self.event_rate) < 1 else int(self.event_rate)
        if rate not in (10, 30, 50):
            raise ConfigurationError(f"event rate must be 10, 30 or 50 percent, got {self.event_rate!r}")
        object.__setattr__(self, "event_rate", rate)

    @property
    def scale(self):
        return _SCALES[self.shape][self.event_rate]

    def __call__(self, z):
        return true_raf_eval(self, z)


def true_raf_eval(tr, z):
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ValueError("durations must be non-negative")
    a = tr.scale
    if tr.shape is Shape.LINEAR:
        out = a * z
    elif tr.shape is Shape.PIECEWISE_LINEAR:
        out = a * (z - 15.0) * (z > 15.0)
    elif tr.shape is Shape.LOGARITHM:
        out = a * np.log1p(z)
    else:
        out = a / (1.0 + 1000.0 * np.exp(-z))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SimConfig:
    I: int = 1000
    K: int = 30
    shape: Shape = Shape.LINEAR
    event_rate: int = 30
    replicates: int = 20
    seed: int = 0
    max_episodes: int = 15
    max_duration: float = DURATION_MAX

    def __post_init__(self):
        if self.I < 50:
            raise ConfigurationError("simulation needs I >= 50 subjects")
        if self.replicates < 1:
            raise ConfigurationError("replicates must be >= 1")
        if self.max_episodes < 0:
            raise ConfigurationError("max_episodes must be >= 0")
        object.__setattr__(self, "shape", Shape(self.shape))

    @property
    def truth(self):
        return TrueRaf(self.shape, self.event_rate)


def replicate_rng(seed, replicate_index):
    """Counter-based stream for one replicate."""
    ss = np.random.SeedSequence([int(seed), int(replicate_index)])
    return np.random.Generator(np.random.Philox(ss))


def generate_dataset(cfg, replicate_index=0):
    rng = replicate_rng(cfg.seed, replicate_index)
    n = cfg.I
    x1 = rng.standard_normal(n)
    counts = rng.integers(0, cfg.max_episodes + 1, size=n)
    # 1 - U maps [0, 1) onto (0, 1]
    z = cfg.max_duration * (1.0 - rng.random(int(counts.sum())))
    owner = np.repeat(np.arange(n), counts)
    raf_sum = np.bincount(owner, weights=cfg.truth(z), minlength=n)
    eta = BASELINE_INTERCEPT + BASELINE_SLOPE * x1 + raf_sum
    y = (rng.random(n) < expit(eta)).astype(int)

    bounds = np.concatenate([[0], np.cumsum(counts)])
    subjects = [SubjectRecord(str(i + 1), int(y[i]), np.array([1.0, x1[i]]),
                              z[bounds[i]:bounds[i + 1]])
                for i in range(n)]
    return Dataset(subjects, ["intercept", "x1"])


def ise(est, tr):
    """Integrated squared error of the posterior-mean curve over [0, 30]."""
    grid = np.asarray(est.grid, dtype=float)
    tol = 1e-9
    if grid[0] > tol or grid[-1] < DURATION_MAX - tol:
        raise ValueError(f"estimate grid [{grid[0]}, {grid[-1]}] does not span [0, 30]")
    zz = np.linspace(0.0, DURATION_MAX, ISE_GRID_POINTS)
    fhat = np.interp(zz, grid, est.mean)
    return float(np.trapezoid((fhat - true_raf_eval(tr, zz)) ** 2, zz))


BENCHMARK_COLUMNS = ["shape", "event_rate", "I", "K", "replicates", "mean_ise", "mc_se", "failures"]


def _one_replicate(cfg, r, spec_kwargs, sampler_cfg):
    from .inference import fit_posterior, raf_curve
    from .model import ModelSpec

    ds = generate_dataset(cfg, r)
    spec = ModelSpec(K=cfg.K, domain=(0.0, cfg.max_duration), **spec_kwargs)
    post = fit_posterior(ds, spec, replace(sampler_cfg, seed=_fit_seed(cfg.seed, r)))
    est = raf_curve(post, grid_step=0.01)
    return ise(est, cfg.truth), post


def _fit_seed(seed, r):
    return int(np.random.SeedSequence([int(seed), int(r), 1]).generate_state(1, np.uint64)[0])


def run_benchmark(cells, sampler_cfg=None, spec_kwargs=None, out_csv=None, progress=None):
    """Mean ISE per cell over the configured replicates.

    ``cells`` is an iterable of :class:`SimConfig`.  Replicates whose fit
    raises are counted in ``failures`` and excluded from the mean.
    ``progress(cfg, r, score, posterior)`` is called after each replicate.
    """
    from .sampler import SamplerConfig

    sampler_cfg = sampler_cfg or SamplerConfig()
    spec_kwargs = spec_kwargs or {}
    rows = []
    for cfg in cells:
        t0 = time.perf_counter()
        scores = []
        failures = 0
        for r in range(cfg.replicates):
            try:
                score, post = _one_replicate(cfg, r, spec_kwargs, sampler_cfg)
            except Exception as err:  # recorded, never silently dropped
                logger.warning("replicate %d of %s failed: %s", r, cfg, err)
                failures += 1
                continue
            scores.append(score)
            if progress:
                progress(cfg, r, score, post)
        scores = np.array(scores)
        mean = float(scores.mean()) if scores.size else math.nan
        se = float(scores.std(ddof=1) / math.sqrt(scores.size)) if scores.size > 1 else math.nan
        rows.append({"shape": cfg.shape.value, "event_rate": cfg.event_rate, "I": cfg.I,
                     "K": cfg.K, "replicates": int(scores.size), "mean_ise": mean,
                     "mc_se": se, "failures": failures})
        logger.info("cell %s I=%d K=%d: mean ISE %.4f (%d failures) in %.1fs",
                    cfg.shape.value, cfg.I, cfg.K, mean, failures, time.perf_counter() - t0)
    if out_csv is not None:
        write_benchmark_csv(rows, out_csv)
    return rows


def write_benchmark_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=BENCHMARK_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def benchmark_grid(shapes=("linear",), event_rates=(30,), sizes=(1000,), Ks=(30,),
                   replicates=20, seed=0):
    return [SimConfig(I=I, K=K, shape=s, event_rate=er, replicates=replicates, seed=seed)
            for s in shapes for er in event_rates for I in sizes for K in Ks]
