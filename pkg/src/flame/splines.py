"""Equally-spaced cubic B-spline bases and the second-order difference penalty.

Knots are equally spaced over ``[domain_lo, domain_hi]`` with the boundary
knots repeated ``degree + 1`` times (clamped construction). With this choice
only the first basis function is non-zero at ``domain_lo`` and it equals one
there, so the first spline coefficient *is* the value of the curve at the
lower boundary.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, ExtrapolationError

DEGREE = 3
MIN_BASIS = 6


@dataclass(frozen=True, eq=False)
class KnotVector:
    """Knot sequence of a clamped, equally-spaced cubic B-spline basis."""

    degree: int
    interior_count: int
    knots: np.ndarray
    domain_lo: float
    domain_hi: float

    @property
    def n_basis(self):
        return self.interior_count + self.degree + 1

    @property
    def n_segments(self):
        return self.interior_count + 1

    @property
    def segment_width(self):
        return (self.domain_hi - self.domain_lo) / self.n_segments

    @property
    def breakpoints(self):
        """Distinct knots, ascending and equally spaced."""
        return self.knots[self.degree:len(self.knots) - self.degree]

    def contains(self, z):
        z = np.asarray(z, dtype=float)
        return (z >= self.domain_lo) & (z <= self.domain_hi)

    def to_dict(self):
        return {"K": self.n_basis, "domain": [self.domain_lo, self.domain_hi]}

    def __eq__(self, other):
        if not isinstance(other, KnotVector):
            return NotImplemented
        return (self.degree == other.degree
                and self.interior_count == other.interior_count
                and self.domain_lo == other.domain_lo
                and self.domain_hi == other.domain_hi
                and np.array_equal(self.knots, other.knots))

    def __hash__(self):
        return hash((self.degree, self.interior_count, self.domain_lo, self.domain_hi))


@dataclass(frozen=True, eq=False)
class PenaltyOperator:
    order: int
    matrix: np.ndarray

    def apply(self, gamma):
        return self.matrix @ np.asarray(gamma)


def build_knots(K, domain_lo, domain_hi):
    """Knot vector giving exactly ``K`` cubic basis functions on the domain.

    ``K - 3`` equal segments are laid over ``[domain_lo, domain_hi]``.
    """
    if int(K) != K or K < MIN_BASIS:
        raise ConfigurationError(
            f"basis size K must be an integer >= {MIN_BASIS}, got {K!r}")
    K = int(K)
    lo, hi = float(domain_lo), float(domain_hi)
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo < 0 or hi <= lo:
        raise ConfigurationError(
            f"domain must satisfy 0 <= lo < hi, got ({domain_lo}, {domain_hi})")
    n_seg = K - DEGREE
    breaks = lo + (hi - lo) * np.arange(n_seg + 1) / n_seg
    breaks[-1] = hi
    knots = np.concatenate([np.full(DEGREE, lo), breaks, np.full(DEGREE, hi)])
    knots.setflags(write=False)
    return KnotVector(DEGREE, n_seg - 1, knots, lo, hi)


def _check_domain(kv, z):
    bad = ~kv.contains(z)
    if np.any(bad):
        idx = int(np.flatnonzero(bad)[0])
        raise ExtrapolationError(
            f"duration {z[idx]!r} at index {idx} is outside the basis domain "
            f"[{kv.domain_lo}, {kv.domain_hi}]", index=idx)


def _local_basis(kv, z):
    """Non-zero basis values at each z and the index of the first one.

    Triangular evaluation of the ``degree + 1`` active functions on the knot
    span containing each point, vectorized across points.
    """
    p = kv.degree
    t = kv.knots
    seg = np.floor((z - kv.domain_lo) / kv.segment_width).astype(np.intp)
    seg = np.clip(seg, 0, kv.n_segments - 1)
    span = seg + p
    # floor() can land one span off at a breakpoint because of rounding
    span = np.where(z < t[span], span - 1, span)
    span = np.where((z >= t[span + 1]) & (span < kv.n_segments + p - 1), span + 1, span)

    n = z.shape[0]
    N = np.zeros((n, p + 1))
    N[:, 0] = 1.0
    left = np.empty((n, p + 1))
    right = np.empty((n, p + 1))
    for j in range(1, p + 1):
        left[:, j] = z - t[span + 1 - j]
        right[:, j] = t[span + j] - z
        saved = np.zeros(n)
        for r in range(j):
            temp = N[:, r] / (right[:, r + 1] + left[:, j - r])
            N[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        N[:, j] = saved
    return N, span - p


def eval_basis(kv, z):
    """All ``K`` basis values at a single duration ``z``."""
    z_arr = np.atleast_1d(np.asarray(z, dtype=float))
    if z_arr.shape != (1,):
        raise ValueError("eval_basis takes a scalar duration; use basis_matrix")
    return basis_matrix(kv, z_arr)[0]


def basis_matrix(kv, zs):
    """``len(zs) x K`` matrix whose row i is the basis evaluated at ``zs[i]``."""
    z = np.asarray(zs, dtype=float).reshape(-1)
    _check_domain(kv, z)
    out = np.zeros((z.shape[0], kv.n_basis))
    if z.shape[0] == 0:
        return out
    N, first = _local_basis(kv, z)
    rows = np.arange(z.shape[0])
    for r in range(kv.degree + 1):
        out[rows, first + r] = N[:, r]
    return out


def greville_abscissae(kv):
    """Knot averages ``m`` with ``sum_k m_k b_k(z) = z`` on the domain."""
    p = kv.degree
    t = kv.knots
    return np.array([t[k + 1:k + p + 1].mean() for k in range(kv.n_basis)])


def difference_penalty(K, order=2):
    """Integer matrix ``D`` of ``order``-th differences, shape ``(K - order, K)``."""
    if order != 2:
        raise ConfigurationError("only second-order differences are supported")
    if int(K) != K or K < 3:
        raise ConfigurationError(f"difference penalty needs K >= 3, got {K!r}")
    D = np.diff(np.eye(int(K), dtype=np.int64), n=2, axis=0)
    D.setflags(write=False)
    return PenaltyOperator(order, D)
