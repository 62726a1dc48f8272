"""Convex load-space polytope: construction, slicing and uniform sampling.

The load space is an H-polytope A x <= b over x = [p_1..p_D, q_1..q_D] in
MW/MVAr, built from per-load active/reactive boxes and reactive-to-active
ratio couplings, and optionally sliced by a thin band on total active power.
Uniform points are drawn with a coordinate-direction hit-and-run walk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .errors import (
    InfeasibleSpaceError,
    NotInteriorError,
    RatioUndefinedError,
    StuckWalkError,
    UnboundedPolytopeError,
)

# relative slack for floating-point membership checks
MEMBERSHIP_SLACK = 1e-9
# chord cap standing in for an unbounded direction
CHORD_GUARD = 1e12


@dataclass(frozen=True)
class PfBounds:
    """Bounds on the signed reactive-to-active ratio of one load.

    ``r_min`` / ``r_max`` bound ``sign * q/p`` where ``sign`` is the sign of
    the nominal ratio (+1 for a load with no nominal reactive power).
    """

    r_min: float
    r_max: float
    sign: int

    def __post_init__(self):
        if self.r_min > self.r_max:
            raise ValueError("ratio bounds inverted")


def pf_bounds(load, delta_pf, alpha_min, alpha_max):
    """Power-factor limits of one load, as ratio bounds on sign * q/p."""
    if not (0.0 <= alpha_min < alpha_max <= 1.0):
        raise ValueError("need 0 <= alpha_min < alpha_max <= 1")
    if delta_pf < 0:
        raise ValueError("delta_pf must be nonnegative")
    if load.p_nom == 0.0:
        raise RatioUndefinedError(
            f"load {load.id}: ratio bounds undefined for zero nominal active power"
        )
    ratio = load.q_nom / load.p_nom
    theta_bar = math.atan(abs(ratio))
    cos_min = max(math.cos(theta_bar) - delta_pf, alpha_min)
    cos_max = max(math.cos(theta_bar), alpha_max)
    r_min = math.tan(math.acos(cos_max))
    r_max = math.tan(math.acos(cos_min))
    sign = -1 if ratio < 0 else 1
    return PfBounds(r_min=r_min, r_max=r_max, sign=sign)


@dataclass(frozen=True)
class HPolytope:
    """Inequality system ``a_matrix @ x <= b_vector``.

    ``fixed_axes``/``fixed_values`` mark coordinates pinned by zero-width
    boxes; they are excluded from walk directions and from the interior-point
    search but keep their rows so the block structure is preserved.
    """

    a_matrix: np.ndarray
    b_vector: np.ndarray
    fixed_axes: tuple = ()
    fixed_values: tuple = ()

    def __post_init__(self):
        a = np.asarray(self.a_matrix, dtype=float)
        b = np.asarray(self.b_vector, dtype=float)
        if a.ndim != 2 or b.ndim != 1 or a.shape[0] != b.shape[0]:
            raise ValueError("inconsistent polytope shapes")
        object.__setattr__(self, "a_matrix", a)
        object.__setattr__(self, "b_vector", b)

    @property
    def dimension(self):
        return self.a_matrix.shape[1]

    @property
    def n_rows(self):
        return self.a_matrix.shape[0]

    def active_axes(self):
        fixed = set(self.fixed_axes)
        return [i for i in range(self.dimension) if i not in fixed]

    def residuals(self, x):
        return self.b_vector - self.a_matrix @ x

    def contains(self, x, slack=MEMBERSHIP_SLACK):
        tol = slack * (1.0 + np.abs(self.b_vector))
        return bool(np.all(self.residuals(x) >= -tol))


@dataclass(frozen=True)
class WalkConfig:
    burn_in: int
    thin: int
    rng_seed: int

    def __post_init__(self):
        if self.burn_in < 0 or self.thin < 1:
            raise ValueError("need burn_in >= 0 and thin >= 1")


def default_walk_config(dimension, seed):
    """Linear-in-dimension mixing schedule: burn_in = 50 n, thin = n."""
    return WalkConfig(burn_in=50 * dimension, thin=max(1, dimension), rng_seed=seed)


def load_boxes(net, delta_p, delta_q):
    """Per-load box bounds (p_lo, p_hi, q_lo, q_hi) in MW/MVAr.

    Bounds scale the nominal by (1 +- delta/100) and are min/max sorted so
    they stay ordered for negative nominals.
    """
    nd = len(net.loads)
    p_lo, p_hi = np.empty(nd), np.empty(nd)
    q_lo, q_hi = np.empty(nd), np.empty(nd)
    for i, d in enumerate(net.loads):
        a, b = (1.0 - delta_p / 100.0) * d.p_nom, (1.0 + delta_p / 100.0) * d.p_nom
        p_lo[i], p_hi[i] = min(a, b), max(a, b)
        a, b = (1.0 - delta_q / 100.0) * d.q_nom, (1.0 + delta_q / 100.0) * d.q_nom
        q_lo[i], q_hi[i] = min(a, b), max(a, b)
    return p_lo, p_hi, q_lo, q_hi


def ratio_coefficients(load, delta_pf, alpha_min, alpha_max):
    """Coefficients of the two ratio rows cp * p + cq * q <= 0 for one load,
    or None when the ratio is undefined (zero nominal active power).

    Multiplying r_lo <= sign * q/p <= r_hi through by p swaps the roles of
    the two bounds when the p box is negative.
    """
    if load.p_nom == 0.0:
        return None
    pf = pf_bounds(load, delta_pf, alpha_min, alpha_max)
    if load.p_nom > 0:
        r_up, r_dn = pf.r_max, pf.r_min
    else:
        r_up, r_dn = pf.r_min, pf.r_max
    return (-r_up, float(pf.sign)), (r_dn, -float(pf.sign))


def build_load_polytope(net, delta_p, delta_q, delta_pf, alpha_min, alpha_max):
    """Unsliced load polytope over [p_d..., q_d...], rows ordered as
    +p box, -p box, +q box, -q box, ratio-upper, ratio-lower.

    Ratio rows are skipped for loads with zero nominal active power;
    zero-width boxes pin the coordinate and mark it as a fixed axis.
    """
    loads = net.loads
    nd = len(loads)
    if nd < 1:
        raise InfeasibleSpaceError("network has no loads")

    p_lo, p_hi, q_lo, q_hi = load_boxes(net, delta_p, delta_q)

    eye = np.eye(nd)
    zero = np.zeros((nd, nd))
    blocks_a = [
        np.hstack([eye, zero]),
        np.hstack([-eye, zero]),
        np.hstack([zero, eye]),
        np.hstack([zero, -eye]),
    ]
    blocks_b = [p_hi, -p_lo, q_hi, -q_lo]

    upper_rows, lower_rows = [], []
    for i, d in enumerate(loads):
        coeffs = ratio_coefficients(d, delta_pf, alpha_min, alpha_max)
        if coeffs is None:
            continue  # ratio undefined, box rows only
        (cp_u, cq_u), (cp_l, cq_l) = coeffs
        row_u = np.zeros(2 * nd)
        row_u[i] = cp_u
        row_u[nd + i] = cq_u
        upper_rows.append(row_u)
        row_l = np.zeros(2 * nd)
        row_l[i] = cp_l
        row_l[nd + i] = cq_l
        lower_rows.append(row_l)

    if upper_rows:
        blocks_a.append(np.vstack(upper_rows))
        blocks_b.append(np.zeros(len(upper_rows)))
        blocks_a.append(np.vstack(lower_rows))
        blocks_b.append(np.zeros(len(lower_rows)))

    fixed_axes, fixed_values = [], []
    for i in range(nd):
        if p_hi[i] - p_lo[i] == 0.0:
            fixed_axes.append(i)
            fixed_values.append(p_lo[i])
        if q_hi[i] - q_lo[i] == 0.0:
            fixed_axes.append(nd + i)
            fixed_values.append(q_lo[i])

    poly = HPolytope(
        a_matrix=np.vstack(blocks_a),
        b_vector=np.concatenate(blocks_b),
        fixed_axes=tuple(fixed_axes),
        fixed_values=tuple(fixed_values),
    )
    if len(poly.active_axes()) == 0:
        raise InfeasibleSpaceError("every load coordinate is fixed (zero-width ranges)")
    _, radius = chebyshev_center(reduce_fixed(poly)[0])
    if radius <= 0:
        raise InfeasibleSpaceError("load polytope has empty interior")
    return poly


def slice_polytope(poly, p_tot, epsilon):
    """Append the two total-active-power rows p_tot - eps <= sum(p) <= p_tot + eps."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    nd = poly.dimension // 2
    row = np.concatenate([np.ones(nd), np.zeros(poly.dimension - nd)])
    a = np.vstack([poly.a_matrix, row, -row])
    b = np.concatenate([poly.b_vector, [p_tot + epsilon, epsilon - p_tot]])
    return HPolytope(a, b, poly.fixed_axes, poly.fixed_values)


def reduce_fixed(poly):
    """Project out fixed axes.  Returns (reduced polytope, embed function)."""
    if not poly.fixed_axes:
        return poly, lambda x: np.asarray(x, dtype=float)
    fixed = np.array(poly.fixed_axes, dtype=int)
    vals = np.array(poly.fixed_values, dtype=float)
    active = np.array(poly.active_axes(), dtype=int)
    b_red = poly.b_vector - poly.a_matrix[:, fixed] @ vals
    a_red = poly.a_matrix[:, active]
    norms = np.abs(a_red).sum(axis=1)
    keep = norms > 0
    dropped_b = b_red[~keep]
    if np.any(dropped_b < -MEMBERSHIP_SLACK * (1.0 + np.abs(dropped_b))):
        raise InfeasibleSpaceError("fixed coordinates violate a polytope row")
    reduced = HPolytope(a_red[keep], b_red[keep])

    def embed(x_red):
        arr = np.asarray(x_red, dtype=float)
        single = arr.ndim == 1
        arr = np.atleast_2d(arr)
        out = np.empty((arr.shape[0], poly.dimension))
        out[:, active] = arr
        out[:, fixed] = vals
        return out[0] if single else out

    return reduced, embed


def chebyshev_center(poly):
    """Center and radius of the largest inscribed ball.

    Solves max r s.t. a_i @ x + r * ||a_i|| <= b_i.  A radius <= 0 signals an
    empty interior; an unbounded LP means the rows do not bound a load space.
    """
    a, b = poly.a_matrix, poly.b_vector
    norms = np.linalg.norm(a, axis=1)
    if np.any(norms == 0):
        raise ValueError("polytope has an all-zero row")
    n = poly.dimension
    cost = np.zeros(n + 1)
    cost[-1] = -1.0
    a_ub = np.hstack([a, norms[:, None]])
    res = linprog(cost, A_ub=a_ub, b_ub=b, bounds=[(None, None)] * (n + 1), method="highs")
    if res.status == 3:
        raise UnboundedPolytopeError("Chebyshev LP unbounded: polytope is not bounded")
    if not res.success:
        raise InfeasibleSpaceError(f"Chebyshev LP failed: {res.message}")
    return res.x[:n], float(res.x[n])


def cdhr_sample(poly, start, cfg, count):
    """Coordinate-direction hit-and-run walk returning ``count`` points.

    Each step picks a non-fixed axis uniformly at random, computes the chord
    along which the line stays inside from the per-row residual ratios, and
    redraws that coordinate uniformly on the chord.  The first ``burn_in``
    steps are discarded, then every ``thin``-th state is retained.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    x = np.array(start, dtype=float)
    a, b = poly.a_matrix, poly.b_vector
    res = b - a @ x
    if np.any(res <= 0):
        raise NotInteriorError("walk start point is not strictly interior")

    axes = poly.active_axes()
    cols = [a[:, i] for i in axes]
    pos_masks = [c > 1e-14 for c in cols]
    neg_masks = [c < -1e-14 for c in cols]

    rng = np.random.default_rng(cfg.rng_seed)
    total = cfg.burn_in + count * cfg.thin
    out = np.empty((count, poly.dimension))
    n_out = 0
    stuck = 0
    stuck_limit = max(50, 10 * len(axes))

    for step in range(total):
        k = rng.integers(len(axes))
        col, posm, negm = cols[k], pos_masks[k], neg_masks[k]
        lam_hi = np.min(res[posm] / col[posm]) if posm.any() else CHORD_GUARD
        lam_lo = np.max(res[negm] / col[negm]) if negm.any() else -CHORD_GUARD
        if lam_hi - lam_lo <= 0:
            stuck += 1
            if stuck >= stuck_limit:
                raise StuckWalkError("all coordinate chords have zero length")
            lam = 0.0
        else:
            stuck = 0
            lam = rng.uniform(lam_lo, lam_hi)
            x[axes[k]] += lam
            res -= lam * col
        if step % 512 == 511:
            res = b - a @ x  # kill incremental drift
        if step >= cfg.burn_in and (step - cfg.burn_in + 1) % cfg.thin == 0:
            out[n_out] = x
            n_out += 1
            if n_out == count:
                break

    if n_out < count:  # thin/burn_in bookkeeping guarantees this never triggers
        raise RuntimeError("walk ended before collecting the requested points")
    tol = MEMBERSHIP_SLACK * (1.0 + np.abs(b))
    if not np.all(b - out @ a.T >= -tol):
        raise RuntimeError("walk produced a point outside the polytope")
    return out


def sample_uniform_point(poly, seed, cfg=None):
    """One approximately uniform point: Chebyshev start + fresh CDHR walk."""
    reduced, embed = reduce_fixed(poly)
    center, radius = chebyshev_center(reduced)
    if radius <= 0:
        raise InfeasibleSpaceError("polytope slice has empty interior")
    if cfg is None:
        cfg = default_walk_config(reduced.dimension, seed)
    pts = cdhr_sample(reduced, center, cfg, 1)
    return embed(pts)[0]


def save_polytope(poly, path):
    """Debug dump: one-line header ``n m``, then m rows of ``a_i1 .. a_in b_i``."""
    with open(path, "w") as fh:
        fh.write(f"{poly.dimension} {poly.n_rows}\n")
        for row, rhs in zip(poly.a_matrix, poly.b_vector):
            fh.write(" ".join(repr(v) for v in row) + f" {rhs!r}\n")


def load_polytope_dump(path):
    with open(path) as fh:
        n, m = (int(t) for t in fh.readline().split())
        data = np.array([[float(t) for t in fh.readline().split()] for _ in range(m)])
    return HPolytope(data[:, :n], data[:, n])
