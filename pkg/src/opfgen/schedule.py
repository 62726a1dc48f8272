"""Total-active-load targets: uniform support, truncation and inverse-KDE draws.

The first batch of targets is uniform on the support defined by the load
boxes and the aggregate generator limits.  After it completes, extremal
regions with zero convergence are trimmed and later batches are drawn from a
distribution inversely weighted by a Gaussian kernel density of the already
converged totals, steering sampling toward under-covered loading levels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import gaussian_kde

from .errors import EmptySupportError, GenerationFailedError, InsufficientDataError

WEIGHT_GRID_SIZE = 512


@dataclass(frozen=True)
class TotalLoadSupport:
    lo: float  # MW
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise EmptySupportError(
                f"empty total-load support [{self.lo}, {self.hi}]"
            )

    @property
    def width(self):
        return self.hi - self.lo


class ConvergedSet:
    """Total-load values of converged instances, with their batch index."""

    def __init__(self):
        self.values = []
        self.batches = []

    def add(self, value, batch):
        self.values.append(float(value))
        self.batches.append(int(batch))

    def __len__(self):
        return len(self.values)

    def as_array(self):
        return np.asarray(self.values, dtype=float)


@dataclass(frozen=True)
class WeightedDensity:
    """Inverse-KDE sampling density on a grid over the (truncated) support."""

    grid: np.ndarray
    pdf: np.ndarray
    support: TotalLoadSupport
    eta: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.pdf)) or np.any(self.pdf <= 0):
            raise ValueError("weights must be strictly positive and finite")


def support(net, delta_p):
    """Feasible total-active-load interval under the load boxes and the
    aggregate generator limits: [max(sum p_d_min, sum p_g_min),
    min(sum p_d_max, sum p_g_max)]."""
    p_lo_sum = p_hi_sum = 0.0
    for d in net.loads:
        a = (1.0 - delta_p / 100.0) * d.p_nom
        b = (1.0 + delta_p / 100.0) * d.p_nom
        p_lo_sum += min(a, b)
        p_hi_sum += max(a, b)
    g_lo = sum(g.p_min for g in net.generators)
    g_hi = sum(g.p_max for g in net.generators)
    lo = max(p_lo_sum, g_lo)
    hi = min(p_hi_sum, g_hi)
    if lo >= hi:
        raise EmptySupportError(
            f"generation impossible: load range [{p_lo_sum}, {p_hi_sum}] vs "
            f"generator range [{g_lo}, {g_hi}]"
        )
    return TotalLoadSupport(lo, hi)


def draw_uniform(sup, n, seed):
    """n i.i.d. uniform targets on the support; deterministic under seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    return rng.uniform(sup.lo, sup.hi, size=n)


def truncate_support(sup, c, attempts):
    """Trim extremal regions of the support where convergence was zero.

    The new support is [min(C) - m, max(C) + m] intersected with the original,
    with margin m = 1% of the original width; an edge moves only when some
    attempt failed beyond the converged hull on that side.
    """
    if len(c) == 0:
        raise GenerationFailedError("no converged instances in the first batch")
    if not attempts:
        raise ValueError("attempts must be nonempty")
    vals = c.as_array()
    c_lo, c_hi = float(vals.min()), float(vals.max())
    margin = 0.01 * sup.width
    lo, hi = sup.lo, sup.hi
    if any((not ok) and p < c_lo for p, ok in attempts):
        lo = max(lo, c_lo - margin)
    if any((not ok) and p > c_hi for p, ok in attempts):
        hi = min(hi, c_hi + margin)
    return TotalLoadSupport(lo, hi)


def fit_weighted(c, sup, eta, bandwidth_rule="silverman"):
    """Gaussian-KDE of the converged totals on a 512-point grid over the
    support, renormalized there, with draw weights 1 / (density + eta)."""
    if eta <= 0:
        raise ValueError("eta must be strictly positive")
    if len(c) < 2:
        raise InsufficientDataError("need at least 2 converged totals to fit a density")
    vals = c.as_array()
    if np.std(vals) == 0.0:
        raise InsufficientDataError("converged totals are all identical")
    kde = gaussian_kde(vals, bw_method=bandwidth_rule)
    grid = np.linspace(sup.lo, sup.hi, WEIGHT_GRID_SIZE)
    density = kde(grid)
    mass = np.trapezoid(density, grid)
    if mass > 0:
        density = density / mass
    weights = 1.0 / (density + eta)
    weights = weights / np.trapezoid(weights, grid)
    return WeightedDensity(grid=grid, pdf=weights, support=sup, eta=eta)


def default_eta(c, sup, fraction=0.05, bandwidth_rule="silverman"):
    """eta tied to scale: a fraction of the max renormalized grid density."""
    vals = c.as_array()
    kde = gaussian_kde(vals, bw_method=bandwidth_rule)
    grid = np.linspace(sup.lo, sup.hi, WEIGHT_GRID_SIZE)
    density = kde(grid)
    mass = np.trapezoid(density, grid)
    if mass > 0:
        density = density / mass
    peak = float(density.max())
    if peak <= 0:
        peak = 1.0 / sup.width
    return fraction * peak


def draw_weighted(w, n, seed):
    """Inverse-CDF sampling on the gridded density with linear interpolation."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    cdf = np.concatenate([[0.0], np.cumsum(
        0.5 * (w.pdf[1:] + w.pdf[:-1]) * np.diff(w.grid)
    )])
    cdf /= cdf[-1]
    u = rng.uniform(0.0, 1.0, size=n)
    return np.interp(u, cdf, w.grid)
