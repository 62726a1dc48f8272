"""Primal-dual interior-point method for sparse nonlinear programs.

Solves

    min f(x)   s.t.   g(x) = 0,   h(x) <= 0

by Newton iterations on the perturbed KKT system with slack variables z > 0
on the inequalities and a monotonically reduced barrier parameter.  The
caller supplies analytic first and second derivatives through the
:class:`NlpModel` callback bundle; the inequality multipliers and slacks are
eliminated from the Newton system, leaving a symmetric saddle-point solve of
size (n + n_eq) per iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

STATUS_CONVERGED = "converged"
STATUS_INFEASIBLE = "infeasible"
STATUS_ITERATION_LIMIT = "iteration-limit"
STATUS_NUMERICAL_FAILURE = "numerical-failure"


@dataclass
class NlpModel:
    """Callback bundle describing one NLP instance.

    ``objective(x)`` returns (f, grad); ``equalities(x)`` returns (g, Jg) and
    ``inequalities(x)`` returns (h, Jh) with sparse Jacobians.  ``hessian``
    returns the Hessian of the Lagrangian f + lam @ g + mu @ h.
    """

    n: int
    objective: Callable
    equalities: Callable
    inequalities: Callable
    hessian: Callable


@dataclass
class SolverConfig:
    tolerance: float = 1e-6
    max_iterations: int = 300
    barrier_sigma: float = 0.1  # centering coefficient for the barrier update
    step_back: float = 0.99995  # fraction-to-the-boundary factor
    regularization_init: float = 1e-8
    regularization_max: float = 1e10

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")


@dataclass
class IpmResult:
    x: np.ndarray
    status: str
    iterations: int
    f: float
    lam: np.ndarray
    mu: np.ndarray
    z: np.ndarray
    kkt_residual: float
    conditions: dict = field(default_factory=dict)


def _kkt_solve(m_mat, jg, rhs, n, neq, cfg):
    """Solve the reduced saddle-point system, regularizing on breakdown.

    The (1,1) block receives +delta*I and the (2,2) block -delta*I, with
    delta doubling from ``regularization_init`` until the factorization
    succeeds and returns finite values.
    """
    delta = 0.0
    while True:
        if delta == 0.0:
            kkt = sp.bmat([[m_mat, jg.T], [jg, None]], format="csc")
        else:
            kkt = sp.bmat(
                [
                    [m_mat + delta * sp.eye(n), jg.T],
                    [jg, -delta * sp.eye(neq)],
                ],
                format="csc",
            )
        try:
            sol = spla.splu(kkt).solve(rhs)
            if np.all(np.isfinite(sol)):
                return sol
        except RuntimeError:
            pass
        delta = cfg.regularization_init if delta == 0.0 else 2.0 * delta
        if delta > cfg.regularization_max:
            return None


def interior_point_solve(model, x0, cfg=None):
    """Run the interior-point iteration from ``x0``.

    Convergence requires raw feasibility (max equality/inequality violation),
    the scaled dual residual, the complementarity gap and the relative cost
    change to all drop below ``cfg.tolerance``.
    """
    if cfg is None:
        cfg = SolverConfig()
    x = np.array(x0, dtype=float)
    n = model.n

    f, df = model.objective(x)
    g, jg = model.equalities(x)
    h, jh = model.inequalities(x)
    neq, niq = len(g), len(h)

    # slack/multiplier start: z covers the initial violation, mu = max(1, 1/z)
    z0 = 1.0
    z = np.full(niq, z0)
    np.maximum(z, -h, out=z)
    mu = np.maximum(z0, 1.0 / z) if niq else np.zeros(0)
    lam = np.zeros(neq)
    gamma = cfg.barrier_sigma * (z @ mu) / niq if niq else 0.0

    f_prev = f
    status = STATUS_ITERATION_LIMIT
    kkt_res = np.inf
    conditions = {}
    it = 0

    for it in range(1, cfg.max_iterations + 1):
        lx = df + jg.T @ lam + jh.T @ mu

        feascond = max(
            np.abs(g).max() if neq else 0.0,
            h.max() if niq else 0.0,
            0.0,
        )
        gradcond = np.abs(lx).max() / (
            1.0 + max(np.abs(lam).max() if neq else 0.0, np.abs(mu).max() if niq else 0.0)
        )
        compcond = (z @ mu) / (1.0 + np.abs(x).max()) if niq else 0.0
        costcond = abs(f - f_prev) / (1.0 + abs(f_prev))
        conditions = {
            "feasibility": feascond,
            "gradient": gradcond,
            "complementarity": compcond,
            "cost": costcond,
        }
        kkt_res = max(feascond, gradcond, compcond)
        if (
            feascond < cfg.tolerance
            and gradcond < cfg.tolerance
            and compcond < cfg.tolerance
            and (it > 1 and costcond < cfg.tolerance)
        ):
            status = STATUS_CONVERGED
            break

        lxx = model.hessian(x, lam, mu)
        zinv = 1.0 / z
        m_mat = (lxx + jh.T @ sp.diags(mu * zinv) @ jh).tocsc()
        n_vec = lx + jh.T @ (zinv * (gamma + mu * h))
        rhs = np.concatenate([-n_vec, -g])

        sol = _kkt_solve(m_mat, jg.tocsc(), rhs, n, neq, cfg)
        if sol is None:
            status = STATUS_NUMERICAL_FAILURE
            break
        dx = sol[:n]
        dlam = sol[n:]
        dz = -h - z - jh @ dx
        dmu = -mu + zinv * (gamma - mu * dz)

        # fraction-to-the-boundary step clipping
        neg = dz < 0
        alpha_p = min(1.0, cfg.step_back * np.min(-z[neg] / dz[neg])) if neg.any() else 1.0
        neg = dmu < 0
        alpha_d = min(1.0, cfg.step_back * np.min(-mu[neg] / dmu[neg])) if neg.any() else 1.0

        f_prev = f
        x += alpha_p * dx
        z += alpha_p * dz
        lam += alpha_d * dlam
        mu += alpha_d * dmu
        gamma = cfg.barrier_sigma * (z @ mu) / niq if niq else 0.0

        f, df = model.objective(x)
        g, jg = model.equalities(x)
        h, jh = model.inequalities(x)
        if not (np.isfinite(f) and np.all(np.isfinite(x))):
            status = STATUS_NUMERICAL_FAILURE
            break
        if conditions["feasibility"] > 1e10:
            status = STATUS_NUMERICAL_FAILURE
            break

    if status == STATUS_ITERATION_LIMIT and conditions.get("feasibility", np.inf) > 1e-4:
        status = STATUS_INFEASIBLE

    return IpmResult(
        x=x,
        status=status,
        iterations=it,
        f=float(f),
        lam=lam,
        mu=mu,
        z=z,
        kkt_residual=float(kkt_res),
        conditions=conditions,
    )
