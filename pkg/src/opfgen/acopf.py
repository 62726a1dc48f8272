"""Slack-augmented AC optimal power flow: formulation, solution, audit.

The NLP minimizes quadratic generation cost plus a linear penalty on four
nonnegative per-load slack vectors that shift an infeasible sampled load
setpoint to the nearest-by-penalty feasible operating point.  Realized loads
stay inside the sampled load-space rows (boxes, ratio couplings and the
total-load slice when present).  Voltages are polar, power balance and
branch flows carry analytic first and second derivatives, and the problem is
solved by the embedded interior-point engine (pluggable via
:func:`register_engine`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import ipm
from .errors import ConfigurationError
from .grid import branch_admittances, build_ybus, incidence
from .polytope import load_boxes, ratio_coefficients

SLACK_PENALTY_FLOOR = 1e4  # $/MW(h), VOLL scale
PENALTY_MARGIN = 100.0  # required ratio to the largest generator marginal cost


@dataclass(frozen=True)
class LoadSetpoint:
    """One sampled per-load power vector (MW / MVAr), optionally tied to a
    total-load slice target."""

    p_hat: np.ndarray
    q_hat: np.ndarray
    p_tot_target: float | None = None
    epsilon: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "p_hat", np.asarray(self.p_hat, dtype=float))
        object.__setattr__(self, "q_hat", np.asarray(self.q_hat, dtype=float))
        if self.p_hat.shape != self.q_hat.shape:
            raise ValueError("p_hat and q_hat must have equal length")
        if (self.p_tot_target is None) != (self.epsilon is None):
            raise ValueError("slice target and epsilon must be given together")


@dataclass(frozen=True)
class LoadSpaceParams:
    """Load-space geometry replicated inside the NLP."""

    delta_p: float = 100.0
    delta_q: float = 100.0
    delta_pf: float = 0.05
    alpha_min: float = 0.01
    alpha_max: float = 0.99
    with_ratio: bool = True


@dataclass
class SolverConfig:
    tolerance: float = 1e-6  # scaled KKT residual threshold
    max_iterations: int = 300
    barrier_sigma: float = 0.1
    flat_start_vm: float = 1.0
    engine: str = "interior-point"

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")


@dataclass
class OpfSolution:
    vm: np.ndarray  # pu
    va: np.ndarray  # rad
    pg: np.ndarray  # MW
    qg: np.ndarray  # MVAr
    pd: np.ndarray  # MW, realized
    qd: np.ndarray  # MVAr, realized
    slack_p_up: np.ndarray  # MW
    slack_p_dw: np.ndarray
    slack_q_up: np.ndarray  # MVAr
    slack_q_dw: np.ndarray
    objective: float  # $/h
    status: str
    kkt_residual: float
    iterations: int
    validation: "ValidationReport | None" = None

    @property
    def max_slack(self):
        return float(
            max(
                self.slack_p_up.max(initial=0.0),
                self.slack_p_dw.max(initial=0.0),
                self.slack_q_up.max(initial=0.0),
                self.slack_q_dw.max(initial=0.0),
            )
        )


class OpfProblem:
    """One AC-OPF instance over a network and a sampled load setpoint.

    Variables (declared space): va, vm per bus, pg, qg per generator, pd, qd
    per load and four nonnegative slack vectors per load.  The reference bus
    angle is pinned to zero and eliminated internally, as are coordinates
    with zero-width boxes.
    """

    def __init__(self, net, setpoint, space, c_d=None):
        nd = len(net.loads)
        if len(setpoint.p_hat) != nd:
            raise ValueError("setpoint length does not match the load count")
        self.net = net
        self.setpoint = setpoint
        self.space = space
        self.base = net.base_mva

        max_marginal = max(
            (g.marginal_cost_at_pmax() for g in net.generators), default=0.0
        )
        threshold = PENALTY_MARGIN * max_marginal
        if c_d is None:
            c_d = max(SLACK_PENALTY_FLOOR, threshold)
        else:
            if c_d <= 0:
                raise ConfigurationError("slack penalty must be strictly positive")
            if c_d < threshold:
                raise ConfigurationError(
                    f"slack penalty {c_d} below {PENALTY_MARGIN} x max marginal "
                    f"generator cost ({threshold})"
                )
        self.c_d = float(c_d)

        self._build_layout()
        self._build_linear_rows()
        self._build_flow_structures()
        self._check_setpoint_membership()

    # ---------------------------------------------------------- layout

    def _build_layout(self):
        net, base = self.net, self.base
        nb, ng, nd = len(net.buses), len(net.generators), len(net.loads)
        self.nb, self.ng, self.nd = nb, ng, nd
        off = {}
        cursor = 0
        for name, size in [
            ("va", nb), ("vm", nb), ("pg", ng), ("qg", ng),
            ("pd", nd), ("qd", nd),
            ("pup", nd), ("pdw", nd), ("qup", nd), ("qdw", nd),
        ]:
            off[name] = cursor
            cursor += size
        self.offsets = off
        self.n_full = cursor

        lb = np.full(cursor, -np.inf)
        ub = np.full(cursor, np.inf)
        ref = net.reference_position
        lb[off["va"] + ref] = ub[off["va"] + ref] = 0.0
        for i, b in enumerate(net.buses):
            lb[off["vm"] + i] = b.v_min
            ub[off["vm"] + i] = b.v_max
        for i, g in enumerate(net.generators):
            lb[off["pg"] + i] = g.p_min / base
            ub[off["pg"] + i] = g.p_max / base
            lb[off["qg"] + i] = g.q_min / base
            ub[off["qg"] + i] = g.q_max / base
        p_lo, p_hi, q_lo, q_hi = load_boxes(net, self.space.delta_p, self.space.delta_q)
        self.p_box = (p_lo / base, p_hi / base)
        self.q_box = (q_lo / base, q_hi / base)
        lb[off["pd"] : off["pd"] + nd] = self.p_box[0]
        ub[off["pd"] : off["pd"] + nd] = self.p_box[1]
        lb[off["qd"] : off["qd"] + nd] = self.q_box[0]
        ub[off["qd"] : off["qd"] + nd] = self.q_box[1]
        for name in ("pup", "pdw", "qup", "qdw"):
            lb[off[name] : off[name] + nd] = 0.0
        self.lb, self.ub = lb, ub

        self.fixed_mask = lb == ub
        self.active_idx = np.flatnonzero(~self.fixed_mask)
        self.n_reduced = len(self.active_idx)

        # objective coefficients over the full space
        self.grad_const = np.zeros(cursor)
        self.hess_diag = np.zeros(cursor)
        for i, g in enumerate(net.generators):
            self.grad_const[off["pg"] + i] = g.c1 * base
            self.hess_diag[off["pg"] + i] = 2.0 * g.c2 * base * base
        for name in ("pup", "pdw", "qup", "qdw"):
            self.grad_const[off[name] : off[name] + nd] = self.c_d * base
        self.cost_offset = sum(g.c0 for g in net.generators)

        self.ybus = build_ybus(net)
        self.cg = incidence(net, net.generators)
        self.cd = incidence(net, net.loads)

    @property
    def num_variables(self):
        """Declared variable count: 2|N| + 2|G| + 6|D|."""
        return self.n_full

    def embed(self, x_red):
        x = np.empty(self.n_full)
        x[self.active_idx] = x_red
        x[self.fixed_mask] = self.lb[self.fixed_mask]
        return x

    # ------------------------------------------------- linear constraints

    def _build_linear_rows(self):
        off, net, base = self.offsets, self.net, self.base
        nd = self.nd
        rows, cols, vals, rhs = [], [], [], []

        def add_row(entries, bound):
            r = len(rhs)
            for c, v in entries:
                rows.append(r)
                cols.append(c)
                vals.append(v)
            rhs.append(bound)

        for i in range(self.n_full):
            if self.fixed_mask[i]:
                continue
            if np.isfinite(self.ub[i]):
                add_row([(i, 1.0)], self.ub[i])
            if np.isfinite(self.lb[i]):
                add_row([(i, -1.0)], -self.lb[i])

        self.n_ratio_rows = 0
        if self.space.with_ratio:
            for i, d in enumerate(net.loads):
                coeffs = ratio_coefficients(
                    d, self.space.delta_pf, self.space.alpha_min, self.space.alpha_max
                )
                if coeffs is None:
                    continue
                (cpu, cqu), (cpl, cql) = coeffs
                add_row([(off["pd"] + i, cpu), (off["qd"] + i, cqu)], 0.0)
                add_row([(off["pd"] + i, cpl), (off["qd"] + i, cql)], 0.0)
                self.n_ratio_rows += 2

        sp_t = self.setpoint
        self.has_slice = sp_t.p_tot_target is not None
        if self.has_slice:
            p_cols = [(off["pd"] + i, 1.0) for i in range(nd)]
            add_row(p_cols, (sp_t.p_tot_target + sp_t.epsilon) / base)
            add_row([(c, -1.0) for c, _ in p_cols], (sp_t.epsilon - sp_t.p_tot_target) / base)

        pos = net.bus_positions()
        for br in net.branches:
            if not br.in_service:
                continue
            f, t = off["va"] + pos[br.from_bus], off["va"] + pos[br.to_bus]
            add_row([(f, 1.0), (t, -1.0)], br.theta_max)
            add_row([(f, -1.0), (t, 1.0)], -br.theta_min)

        self.lin_a = sp.csr_matrix(
            (vals, (rows, cols)), shape=(len(rhs), self.n_full)
        )
        self.lin_rhs = np.asarray(rhs)
        self.lin_a_red = self.lin_a[:, self.active_idx].tocsr()

        # equality structure: P/Q balance then the two load-link blocks
        nb, ng = self.nb, self.ng
        eye_d = sp.eye(nd, format="csr")
        zero = lambda r, c: sp.csr_matrix((r, c))
        link_p = sp.hstack(
            [zero(nd, 2 * nb + 2 * ng), eye_d, zero(nd, nd),
             eye_d, -eye_d, zero(nd, 2 * nd)], format="csr",
        )
        link_q = sp.hstack(
            [zero(nd, 2 * nb + 2 * ng), zero(nd, nd), eye_d,
             zero(nd, 2 * nd), eye_d, -eye_d], format="csr",
        )
        self.link_jac = sp.vstack([link_p, link_q], format="csr")
        self.link_rhs = np.concatenate([sp_t.p_hat, sp_t.q_hat]) / base
        # constant columns of the balance Jacobian (pg/qg/pd/qd blocks)
        self.bal_p_const = sp.hstack(
            [self.cg, zero(nb, ng), -self.cd, zero(nb, nd), zero(nb, 4 * nd)],
            format="csr",
        )
        self.bal_q_const = sp.hstack(
            [zero(nb, ng), self.cg, zero(nb, nd), -self.cd, zero(nb, 4 * nd)],
            format="csr",
        )

    def _build_flow_structures(self):
        net = self.net
        adm = branch_admittances(net)
        limited = adm.s_max > 0
        self.flow_a = adm.a_pos[limited]
        self.flow_b = adm.b_pos[limited]
        self.flow_y_self = adm.y_self[limited]
        self.flow_y_mut = adm.y_mutual[limited]
        self.flow_smax2 = (adm.s_max[limited] / self.base) ** 2
        nflow, nb = len(self.flow_a), self.nb
        k = np.arange(nflow)
        self.flow_ca = sp.csr_matrix(
            (np.ones(nflow), (k, self.flow_a)), shape=(nflow, nb)
        )
        self.flow_yc = sp.csr_matrix(
            (
                np.concatenate([self.flow_y_self, self.flow_y_mut]),
                (np.concatenate([k, k]), np.concatenate([self.flow_a, self.flow_b])),
            ),
            shape=(nflow, nb),
        )
        self.n_flow = nflow

    def _check_setpoint_membership(self):
        sp_t = self.setpoint
        p, q = sp_t.p_hat, sp_t.q_hat
        base = self.base
        tol = 1e-6 * (1.0 + np.abs(p).max(initial=1.0))
        if np.any(p < self.p_box[0] * base - tol) or np.any(p > self.p_box[1] * base + tol):
            raise ValueError("setpoint violates the active-power box")
        if np.any(q < self.q_box[0] * base - tol) or np.any(q > self.q_box[1] * base + tol):
            raise ValueError("setpoint violates the reactive-power box")
        if self.has_slice:
            gap = abs(p.sum() - sp_t.p_tot_target)
            if gap > sp_t.epsilon + tol:
                raise ValueError("setpoint violates the total-load slice")

    # ------------------------------------------------------ NLP callbacks

    def _voltages(self, x):
        off, nb = self.offsets, self.nb
        va = x[off["va"] : off["va"] + nb]
        vm = x[off["vm"] : off["vm"] + nb]
        return vm * np.exp(1j * va), va, vm

    def objective_full(self, x):
        f = (
            0.5 * self.hess_diag @ (x * x)
            + self.grad_const @ x
            + self.cost_offset
        )
        grad = self.hess_diag * x + self.grad_const
        return float(f), grad

    def equalities_full(self, x):
        off, nb = self.offsets, self.nb
        v, _, vm = self._voltages(x)
        ibus = self.ybus @ v
        s_inj = v * np.conj(ibus)
        sg = x[off["pg"] : off["pg"] + self.ng] + 1j * x[off["qg"] : off["qg"] + self.ng]
        sd = x[off["pd"] : off["pd"] + self.nd] + 1j * x[off["qd"] : off["qd"] + self.nd]
        mis = self.cg @ sg - self.cd @ sd - s_inj
        g = np.concatenate(
            [mis.real, mis.imag, self.link_jac @ x - self.link_rhs]
        )

        diag_v = sp.diags(v)
        diag_vnorm = sp.diags(np.exp(1j * x[off["va"] : off["va"] + nb]))
        ds_dva = 1j * diag_v @ (sp.diags(ibus) - self.ybus @ diag_v).conj()
        ds_dvm = diag_v @ (self.ybus @ diag_vnorm).conj() + sp.diags(np.conj(ibus)) @ diag_vnorm
        jac_p = sp.hstack([-ds_dva.real, -ds_dvm.real, self.bal_p_const], format="csr")
        jac_q = sp.hstack([-ds_dva.imag, -ds_dvm.imag, self.bal_q_const], format="csr")
        jac = sp.vstack([jac_p, jac_q, self.link_jac], format="csr")
        return g, jac

    def inequalities_full(self, x):
        h_lin = self.lin_a @ x - self.lin_rhs
        if self.n_flow == 0:
            return h_lin, self.lin_a
        v, _, _ = self._voltages(x)
        s_br = (self.flow_ca @ v) * np.conj(self.flow_yc @ v)
        h_flow = (s_br * np.conj(s_br)).real - self.flow_smax2

        nb = self.nb
        diag_v = sp.diags(v)
        diag_vnorm = sp.diags(v / np.abs(v))
        diag_va_end = sp.diags(self.flow_ca @ v)
        i_br = self.flow_yc @ v
        diag_ibr_c = sp.diags(np.conj(i_br))
        ds_dva = 1j * (
            diag_ibr_c @ self.flow_ca @ diag_v - diag_va_end @ (self.flow_yc @ diag_v).conj()
        )
        ds_dvm = diag_va_end @ (self.flow_yc @ diag_vnorm).conj() + diag_ibr_c @ self.flow_ca @ diag_vnorm
        dh_v = 2.0 * (sp.diags(np.conj(s_br)) @ sp.hstack([ds_dva, ds_dvm])).real
        jac_flow = sp.hstack(
            [dh_v, sp.csr_matrix((self.n_flow, self.n_full - 2 * nb))], format="csr"
        )
        self._flow_cache = (s_br, ds_dva, ds_dvm)
        return np.concatenate([h_lin, h_flow]), sp.vstack([self.lin_a, jac_flow], format="csr")

    def hessian_full(self, x, lam, mu):
        """Hessian of f + lam @ g + mu @ h over the full variable space."""
        off, nb = self.offsets, self.nb
        v, _, vm = self._voltages(x)
        lam_c = lam[:nb] - 1j * lam[nb : 2 * nb]

        # balance rows enter as (linear) - S(V), hence the negated block
        gaa, gav, gva, gvv = _d2s_bus(self.ybus, v, lam_c)
        h_v = -sp.bmat([[gaa, gav], [gva, gvv]]).real

        if self.n_flow:
            mu_flow = mu[len(self.lin_rhs) :]
            if np.any(mu_flow != 0.0):
                s_br, ds_dva, ds_dvm = self._flow_cache
                w = np.conj(s_br) * mu_flow
                haa, hav, hva, hvv = _d2s_branch(self.flow_ca, self.flow_yc, v, w)
                dmu = sp.diags(mu_flow)
                haa = 2.0 * (haa + ds_dva.T @ dmu @ ds_dva.conj()).real
                hav = 2.0 * (hav + ds_dva.T @ dmu @ ds_dvm.conj()).real
                hva = 2.0 * (hva + ds_dvm.T @ dmu @ ds_dva.conj()).real
                hvv = 2.0 * (hvv + ds_dvm.T @ dmu @ ds_dvm.conj()).real
                h_v = h_v + sp.bmat([[haa, hav], [hva, hvv]])

        blocks = sp.block_diag(
            [h_v, sp.diags(self.hess_diag[2 * nb :])], format="csr"
        )
        return blocks

    def as_nlp(self):
        """Reduced-space callback bundle for the interior-point engine."""
        idx = self.active_idx

        def objective(xr):
            f, grad = self.objective_full(self.embed(xr))
            return f, grad[idx]

        def equalities(xr):
            g, jac = self.equalities_full(self.embed(xr))
            return g, jac[:, idx].tocsr()

        def inequalities(xr):
            h, jac = self.inequalities_full(self.embed(xr))
            return h, jac[:, idx].tocsr()

        def hessian(xr, lam, mu):
            hess = self.hessian_full(self.embed(xr), lam, mu)
            return hess[idx][:, idx].tocsr()

        return ipm.NlpModel(
            n=self.n_reduced,
            objective=objective,
            equalities=equalities,
            inequalities=inequalities,
            hessian=hessian,
        )

    def warm_start(self, flat_vm=1.0):
        """Flat voltages, generators at midpoint, loads at the setpoint,
        slacks slightly off their bound."""
        off, nd = self.offsets, self.nd
        x = np.zeros(self.n_full)
        x[off["vm"] : off["vm"] + self.nb] = np.clip(
            flat_vm, self.lb[off["vm"] : off["vm"] + self.nb],
            self.ub[off["vm"] : off["vm"] + self.nb],
        )
        for name in ("pg", "qg"):
            seg = slice(off[name], off[name] + self.ng)
            x[seg] = 0.5 * (self.lb[seg] + self.ub[seg])
        x[off["pd"] : off["pd"] + nd] = np.clip(
            self.setpoint.p_hat / self.base, self.p_box[0], self.p_box[1]
        )
        x[off["qd"] : off["qd"] + nd] = np.clip(
            self.setpoint.q_hat / self.base, self.q_box[0], self.q_box[1]
        )
        for name in ("pup", "pdw", "qup", "qdw"):
            x[off[name] : off[name] + nd] = 1e-2
        return x[self.active_idx]


def _d2s_bus(ybus, v, lam):
    """Second derivatives of lam @ S_bus(V) in polar coordinates."""
    n = len(v)
    ibus = ybus @ v
    diag_lam = sp.diags(lam)
    diag_v = sp.diags(v)
    a = sp.diags(lam * v)
    b = ybus @ diag_v
    c = a @ b.conj()
    d = ybus.conj().T @ diag_v
    e = diag_v.conj() @ (d @ diag_lam - sp.diags(d @ lam))
    f = c - a @ sp.diags(np.conj(ibus))
    g = sp.diags(1.0 / np.abs(v))
    gaa = e + f
    gva = 1j * g @ (e - f)
    gav = gva.T
    gvv = g @ (c + c.T) @ g
    return gaa, gav, gva, gvv


def _d2s_branch(cbr, ybr, v, w):
    """Second derivatives of w @ S_branch(V) for directed branch flows."""
    diag_w = sp.diags(w)
    diag_v = sp.diags(v)
    a = ybr.conj().T @ diag_w @ cbr
    b = diag_v.conj() @ a @ diag_v
    d = sp.diags((a @ v) * np.conj(v))
    e = sp.diags((a.T @ np.conj(v)) * v)
    f = b + b.T
    g = sp.diags(1.0 / np.abs(v))
    haa = f - d - e
    hva = 1j * g @ (b - b.T - d + e)
    hav = hva.T
    hvv = g @ f @ g
    return haa, hav, hva, hvv


def build_problem(net, setpoint, space=None, c_d=None):
    """Assemble the slack-augmented OPF for one sampled setpoint."""
    if space is None:
        space = LoadSpaceParams()
    return OpfProblem(net, setpoint, space, c_d=c_d)


# ------------------------------------------------------------- solving


def _solve_interior_point(prob, cfg):
    model = prob.as_nlp()
    result = ipm.interior_point_solve(
        model,
        prob.warm_start(cfg.flat_start_vm),
        ipm.SolverConfig(
            tolerance=cfg.tolerance,
            max_iterations=cfg.max_iterations,
            barrier_sigma=cfg.barrier_sigma,
        ),
    )
    return result


def _solve_trust_constr(prob, cfg):
    """Alternative engine backed by scipy's trust-constr (slow; small cases)."""
    from scipy.optimize import NonlinearConstraint, minimize

    model = prob.as_nlp()

    def fun(xr):
        return model.objective(xr)[0]

    def jac(xr):
        return model.objective(xr)[1]

    eq = NonlinearConstraint(
        lambda xr: model.equalities(xr)[0], 0.0, 0.0,
        jac=lambda xr: model.equalities(xr)[1].toarray(),
    )
    iq = NonlinearConstraint(
        lambda xr: model.inequalities(xr)[0], -np.inf, 0.0,
        jac=lambda xr: model.inequalities(xr)[1].toarray(),
    )
    res = minimize(
        fun, prob.warm_start(cfg.flat_start_vm), jac=jac, method="trust-constr",
        constraints=[eq, iq],
        options={"gtol": cfg.tolerance, "xtol": 1e-10, "maxiter": 3000},
    )
    g = model.equalities(res.x)[0]
    h = model.inequalities(res.x)[0]
    feas = max(np.abs(g).max(initial=0.0), h.max(initial=0.0), 0.0)
    status = ipm.STATUS_CONVERGED if res.success and feas < 1e-5 else ipm.STATUS_ITERATION_LIMIT
    return ipm.IpmResult(
        x=res.x, status=status, iterations=res.nit, f=float(res.fun),
        lam=np.zeros(0), mu=np.zeros(0), z=np.zeros(0),
        kkt_residual=float(feas), conditions={"feasibility": feas},
    )


SOLVER_ENGINES = {
    "interior-point": _solve_interior_point,
    "trust-constr": _solve_trust_constr,
}


def register_engine(name, fn):
    SOLVER_ENGINES[name] = fn


def solve(prob, cfg=None):
    """Solve the OPF and, on convergence, attach an independent audit."""
    if cfg is None:
        cfg = SolverConfig()
    engine = SOLVER_ENGINES.get(cfg.engine)
    if engine is None:
        raise ConfigurationError(f"unknown solver engine {cfg.engine!r}")
    raw = engine(prob, cfg)

    x = prob.embed(raw.x)
    off, base = prob.offsets, prob.base
    nb, ng, nd = prob.nb, prob.ng, prob.nd

    def seg(name, size):
        return x[off[name] : off[name] + size].copy()

    sol = OpfSolution(
        vm=seg("vm", nb),
        va=seg("va", nb),
        pg=seg("pg", ng) * base,
        qg=seg("qg", ng) * base,
        pd=seg("pd", nd) * base,
        qd=seg("qd", nd) * base,
        slack_p_up=seg("pup", nd) * base,
        slack_p_dw=seg("pdw", nd) * base,
        slack_q_up=seg("qup", nd) * base,
        slack_q_dw=seg("qdw", nd) * base,
        objective=raw.f,
        status=raw.status,
        kkt_residual=raw.kkt_residual,
        iterations=raw.iterations,
    )
    if sol.status == ipm.STATUS_CONVERGED:
        sol.validation = validate(sol, prob.net, prob)
    return sol


# ------------------------------------------------------------- audit


@dataclass
class ValidationReport:
    """Solver-independent feasibility audit (residuals in per unit)."""

    residuals: dict
    tolerance: float = 1e-5

    @property
    def max_residual(self):
        return max(self.residuals.values())

    @property
    def ok(self):
        return self.max_residual <= self.tolerance


def validate(sol, net, prob):
    """Recompute every constraint from scratch via the admittance builders."""
    base = net.base_mva
    v = sol.vm * np.exp(1j * sol.va)
    ybus = build_ybus(net)
    s_inj = v * np.conj(ybus @ v)
    cg, cd = incidence(net, net.generators), incidence(net, net.loads)
    mis = (
        cg @ (sol.pg + 1j * sol.qg) / base
        - cd @ (sol.pd + 1j * sol.qd) / base
        - s_inj
    )
    res = {
        "power_balance": float(
            max(np.abs(mis.real).max(), np.abs(mis.imag).max())
        )
    }

    def bound_violation(value, lo, hi):
        out = 0.0
        if lo is not None:
            out = max(out, float(np.max(lo - value, initial=0.0)))
        if hi is not None:
            out = max(out, float(np.max(value - hi, initial=0.0)))
        return out

    vmin = np.array([b.v_min for b in net.buses])
    vmax = np.array([b.v_max for b in net.buses])
    res["voltage_magnitude"] = bound_violation(sol.vm, vmin, vmax)
    res["reference_angle"] = abs(float(sol.va[net.reference_position]))

    gpmin = np.array([g.p_min for g in net.generators]) / base
    gpmax = np.array([g.p_max for g in net.generators]) / base
    res["generator_active"] = bound_violation(sol.pg / base, gpmin, gpmax)
    gqmin = np.array([g.q_min for g in net.generators]) / base
    gqmax = np.array([g.q_max for g in net.generators]) / base
    res["generator_reactive"] = bound_violation(sol.qg / base, gqmin, gqmax)

    adm = branch_admittances(net)
    flows = adm.flows(v)
    limited = adm.s_max > 0
    if limited.any():
        res["branch_flow"] = float(
            np.max(np.abs(flows[limited]) - adm.s_max[limited] / base, initial=0.0)
        )
    else:
        res["branch_flow"] = 0.0
    pos = net.bus_positions()
    ang = 0.0
    for br in net.branches:
        if not br.in_service:
            continue
        diff = sol.va[pos[br.from_bus]] - sol.va[pos[br.to_bus]]
        ang = max(ang, diff - br.theta_max, br.theta_min - diff)
    res["angle_difference"] = float(ang)

    res["load_box"] = max(
        bound_violation(sol.pd / base, prob.p_box[0], prob.p_box[1]),
        bound_violation(sol.qd / base, prob.q_box[0], prob.q_box[1]),
    )
    ratio = 0.0
    if prob.space.with_ratio:
        for i, d in enumerate(net.loads):
            coeffs = ratio_coefficients(
                d, prob.space.delta_pf, prob.space.alpha_min, prob.space.alpha_max
            )
            if coeffs is None:
                continue
            (cpu, cqu), (cpl, cql) = coeffs
            pi, qi = sol.pd[i] / base, sol.qd[i] / base
            ratio = max(ratio, cpu * pi + cqu * qi, cpl * pi + cql * qi)
    res["load_ratio"] = float(ratio)
    if prob.has_slice:
        gap = abs(sol.pd.sum() - prob.setpoint.p_tot_target) - prob.setpoint.epsilon
        res["total_load_slice"] = float(max(gap, 0.0)) / base
    else:
        res["total_load_slice"] = 0.0

    slack_min = min(
        sol.slack_p_up.min(initial=0.0), sol.slack_p_dw.min(initial=0.0),
        sol.slack_q_up.min(initial=0.0), sol.slack_q_dw.min(initial=0.0),
    )
    res["slack_nonnegative"] = float(max(0.0, -slack_min)) / base
    link_p = sol.pd - prob.setpoint.p_hat - sol.slack_p_dw + sol.slack_p_up
    link_q = sol.qd - prob.setpoint.q_hat - sol.slack_q_dw + sol.slack_q_up
    res["load_link"] = float(
        max(np.abs(link_p).max(initial=0.0), np.abs(link_q).max(initial=0.0))
    ) / base

    return ValidationReport(residuals=res)


def is_feasible(sol):
    """Converged and independently validated; slack activation is allowed."""
    return (
        sol.status == ipm.STATUS_CONVERGED
        and sol.validation is not None
        and sol.validation.ok
    )
