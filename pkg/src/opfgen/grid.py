"""Grid case parsing, network model and admittance construction.

The parser reads the standard MATPOWER-style text case format
(``mpc.baseMVA``, ``mpc.bus``, ``mpc.gen``, ``mpc.branch``, ``mpc.gencost``)
into an immutable :class:`Network`.  Out-of-service generators and branches
are dropped at parse time, so every downstream matrix has a fixed width per
case.  One load is created per bus with nonzero nominal demand.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import CaseParseError, CaseValidationError, UnsupportedFeatureError

# Applied when a branch row carries no usable angle-difference bounds
# (0/0 or +-360 in the file are the usual "unconstrained" conventions).
DEFAULT_ANGLE_LIMIT = math.radians(30.0)


@dataclass(frozen=True)
class Bus:
    id: int
    v_min: float
    v_max: float
    is_reference: bool
    shunt_g: float  # pu admittance at v = 1
    shunt_b: float

    def __post_init__(self):
        if not (0.0 < self.v_min <= self.v_max):
            raise CaseValidationError(
                f"bus {self.id}: voltage bounds must satisfy 0 < v_min <= v_max"
            )


@dataclass(frozen=True)
class Generator:
    id: int
    bus: int
    p_min: float  # MW
    p_max: float
    q_min: float  # MVAr
    q_max: float
    c2: float  # $/MW^2 h
    c1: float  # $/MWh
    c0: float  # $/h
    in_service: bool = True

    def __post_init__(self):
        if self.p_min > self.p_max or self.q_min > self.q_max:
            raise CaseValidationError(f"generator {self.id}: inverted power bounds")
        if self.c2 < 0:
            raise CaseValidationError(f"generator {self.id}: negative quadratic cost")

    def marginal_cost_at_pmax(self):
        return 2.0 * self.c2 * self.p_max + self.c1


@dataclass(frozen=True)
class Load:
    id: int
    bus: int
    p_nom: float  # MW; negative values model embedded generation
    q_nom: float  # MVAr


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charge: float
    tap: float
    shift: float  # radians
    s_max: float  # MVA; 0 means no thermal limit
    theta_min: float  # radians
    theta_max: float
    in_service: bool = True

    def __post_init__(self):
        if self.r == 0.0 and self.x == 0.0:
            raise CaseValidationError(
                f"branch {self.from_bus}-{self.to_bus}: zero series impedance"
            )
        if self.s_max < 0:
            raise CaseValidationError(
                f"branch {self.from_bus}-{self.to_bus}: negative thermal limit"
            )
        if self.theta_min > self.theta_max:
            raise CaseValidationError(
                f"branch {self.from_bus}-{self.to_bus}: inverted angle bounds"
            )

    @property
    def has_thermal_limit(self):
        return self.s_max > 0


@dataclass(frozen=True)
class Network:
    """Validated, immutable network model (safe to share across workers)."""

    name: str
    base_mva: float
    buses: tuple
    generators: tuple
    loads: tuple
    branches: tuple
    # number of branch rows whose angle bounds were defaulted at parse time
    angle_defaults_applied: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.base_mva <= 0:
            raise CaseValidationError("base MVA must be positive")
        refs = [b.id for b in self.buses if b.is_reference]
        if len(refs) != 1:
            raise CaseValidationError(
                f"expected exactly one reference bus, found {len(refs)}"
            )
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise CaseValidationError("duplicate bus ids")
        known = set(ids)
        for g in self.generators:
            if g.bus not in known:
                raise CaseValidationError(f"generator {g.id} references unknown bus {g.bus}")
        for d in self.loads:
            if d.bus not in known:
                raise CaseValidationError(f"load {d.id} references unknown bus {d.bus}")
        for br in self.branches:
            if br.from_bus not in known or br.to_bus not in known:
                raise CaseValidationError(
                    f"branch {br.from_bus}-{br.to_bus} references unknown bus"
                )
        self._check_single_island()

    def _check_single_island(self):
        n = len(self.buses)
        if n == 0:
            raise CaseValidationError("network has no buses")
        pos = self.bus_positions()
        rows, cols = [], []
        for br in self.branches:
            if br.in_service:
                rows.append(pos[br.from_bus])
                cols.append(pos[br.to_bus])
        adj = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        ncomp, _ = connected_components(adj, directed=False)
        if ncomp != 1:
            raise CaseValidationError(f"network splits into {ncomp} islands")

    def bus_positions(self):
        """Map bus id -> dense position in [0, |N|)."""
        return {b.id: i for i, b in enumerate(self.buses)}

    @property
    def reference_position(self):
        return next(i for i, b in enumerate(self.buses) if b.is_reference)

    def limited_branches(self):
        """In-service branches that carry a thermal limit."""
        return [br for br in self.branches if br.in_service and br.has_thermal_limit]

    def fingerprint(self):
        """Stable hash of the network content (used to pair datasets with cases)."""
        return hashlib.sha256(to_case_text(self).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Case file parsing
# ---------------------------------------------------------------------------

_SCALAR_RE = re.compile(r"mpc\.baseMVA\s*=\s*([0-9eE\.\+\-]+)\s*;")
_NAME_RE = re.compile(r"function\s+mpc\s*=\s*(\w+)")


def _strip_comment(line):
    pos = line.find("%")
    return line if pos < 0 else line[:pos]


def _extract_matrix(lines, key):
    """Return (rows, row_line_numbers) for ``mpc.<key> = [ ... ];``."""
    start_re = re.compile(rf"mpc\.{key}\s*=\s*\[")
    start = None
    for i, raw in enumerate(lines):
        if start_re.search(_strip_comment(raw)):
            start = i
            break
    if start is None:
        return None, None
    rows, linenos = [], []
    for i in range(start + 1, len(lines)):
        text = _strip_comment(lines[i]).strip()
        if text.startswith("]"):
            return rows, linenos
        if not text:
            continue
        text = text.rstrip(";").strip()
        if not text:
            continue
        try:
            rows.append([float(tok) for tok in text.split()])
        except ValueError:
            raise CaseParseError(f"non-numeric token in mpc.{key} row", line=i + 1)
        linenos.append(i + 1)
    raise CaseParseError(f"mpc.{key} matrix is not closed", line=start + 1)


def _gencost_coeffs(row, lineno):
    model = int(row[0])
    if model != 2:
        raise UnsupportedFeatureError(
            f"line {lineno}: only polynomial cost model (2) is supported, got {model}"
        )
    ncoef = int(row[3])
    coeffs = row[4 : 4 + ncoef]
    if len(coeffs) != ncoef:
        raise CaseParseError("gencost row shorter than declared", line=lineno)
    # coefficients listed high order first
    lead = coeffs[:-3] if ncoef > 3 else []
    if any(c != 0.0 for c in lead):
        raise UnsupportedFeatureError(
            f"line {lineno}: cost polynomial degree > 2 is not supported"
        )
    tail = coeffs[-3:] if ncoef >= 3 else [0.0] * (3 - ncoef) + coeffs
    c2, c1, c0 = tail
    return c2, c1, c0


def parse_case(path):
    """Parse a MATPOWER-style case file into a :class:`Network`."""
    with open(path) as fh:
        lines = fh.read().splitlines()

    name = None
    for raw in lines:
        m = _NAME_RE.search(_strip_comment(raw))
        if m:
            name = m.group(1)
            break
    if name is None:
        name = "case"

    base = None
    for i, raw in enumerate(lines):
        m = _SCALAR_RE.search(_strip_comment(raw))
        if m:
            base = float(m.group(1))
            break
    if base is None:
        raise CaseParseError("missing mpc.baseMVA")

    bus_rows, bus_lines = _extract_matrix(lines, "bus")
    gen_rows, gen_lines = _extract_matrix(lines, "gen")
    br_rows, br_lines = _extract_matrix(lines, "branch")
    cost_rows, cost_lines = _extract_matrix(lines, "gencost")
    for key, rows in (("bus", bus_rows), ("gen", gen_rows), ("branch", br_rows)):
        if rows is None or not rows:
            raise CaseParseError(f"missing mpc.{key} table")

    buses, loads = [], []
    for row, lineno in zip(bus_rows, bus_lines):
        if len(row) < 13:
            raise CaseParseError("bus row needs 13 columns", line=lineno)
        bus_id, bus_type = int(row[0]), int(row[1])
        buses.append(
            Bus(
                id=bus_id,
                v_min=row[12],
                v_max=row[11],
                is_reference=(bus_type == 3),
                shunt_g=row[4] / base,
                shunt_b=row[5] / base,
            )
        )
        pd, qd = row[2], row[3]
        if pd != 0.0 or qd != 0.0:
            loads.append(Load(id=bus_id, bus=bus_id, p_nom=pd, q_nom=qd))

    if gen_rows is not None and cost_rows is None:
        raise CaseParseError("missing mpc.gencost table")
    if len(cost_rows) == 2 * len(gen_rows):
        cost_rows = cost_rows[: len(gen_rows)]  # second half: reactive costs, unused
        cost_lines = cost_lines[: len(gen_rows)]
    if len(cost_rows) != len(gen_rows):
        raise CaseParseError(
            f"gencost has {len(cost_rows)} rows for {len(gen_rows)} generators"
        )

    gens = []
    for idx, (row, lineno) in enumerate(zip(gen_rows, gen_lines)):
        if len(row) < 10:
            raise CaseParseError("gen row needs at least 10 columns", line=lineno)
        if row[7] <= 0:  # status
            continue
        c2, c1, c0 = _gencost_coeffs(cost_rows[idx], cost_lines[idx])
        gens.append(
            Generator(
                id=idx,
                bus=int(row[0]),
                p_min=row[9],
                p_max=row[8],
                q_min=row[4],
                q_max=row[3],
                c2=c2,
                c1=c1,
                c0=c0,
            )
        )

    branches = []
    n_defaulted = 0
    for row, lineno in zip(br_rows, br_lines):
        if len(row) < 13:
            raise CaseParseError("branch row needs 13 columns", line=lineno)
        if row[10] <= 0:  # status
            continue
        angmin, angmax = row[11], row[12]
        if (angmin == 0.0 and angmax == 0.0) or angmin <= -360.0 or angmax >= 360.0:
            theta_min, theta_max = -DEFAULT_ANGLE_LIMIT, DEFAULT_ANGLE_LIMIT
            n_defaulted += 1
        else:
            theta_min, theta_max = math.radians(angmin), math.radians(angmax)
        branches.append(
            Branch(
                from_bus=int(row[0]),
                to_bus=int(row[1]),
                r=row[2],
                x=row[3],
                b_charge=row[4],
                tap=row[8] if row[8] != 0.0 else 1.0,
                shift=math.radians(row[9]),
                s_max=row[5],
                theta_min=theta_min,
                theta_max=theta_max,
            )
        )

    return Network(
        name=name,
        base_mva=base,
        buses=tuple(buses),
        generators=tuple(gens),
        loads=tuple(loads),
        branches=tuple(branches),
        angle_defaults_applied=n_defaulted,
    )


def to_case_text(net):
    """Serialize a Network back to case text (round-trip stable)."""
    pos2load = {d.bus: d for d in net.loads}
    out = [f"function mpc = {net.name}", "mpc.version = '2';",
           f"mpc.baseMVA = {net.base_mva!r};", "", "mpc.bus = ["]
    for b in net.buses:
        d = pos2load.get(b.id)
        pd = d.p_nom if d else 0.0
        qd = d.q_nom if d else 0.0
        btype = 3 if b.is_reference else 1
        out.append(
            f"\t{b.id}\t{btype}\t{pd!r}\t{qd!r}\t{b.shunt_g * net.base_mva!r}"
            f"\t{b.shunt_b * net.base_mva!r}\t1\t1\t0\t1\t1\t{b.v_max!r}\t{b.v_min!r};"
        )
    out.append("];")
    out.append("")
    out.append("mpc.gen = [")
    for g in net.generators:
        out.append(
            f"\t{g.bus}\t0\t0\t{g.q_max!r}\t{g.q_min!r}\t1\t{net.base_mva!r}\t1"
            f"\t{g.p_max!r}\t{g.p_min!r};"
        )
    out.append("];")
    out.append("")
    out.append("mpc.branch = [")
    for br in net.branches:
        tap = br.tap if br.tap != 1.0 else 0.0
        out.append(
            f"\t{br.from_bus}\t{br.to_bus}\t{br.r!r}\t{br.x!r}\t{br.b_charge!r}"
            f"\t{br.s_max!r}\t0\t0\t{tap!r}\t{math.degrees(br.shift)!r}\t1"
            f"\t{math.degrees(br.theta_min)!r}\t{math.degrees(br.theta_max)!r};"
        )
    out.append("];")
    out.append("")
    out.append("mpc.gencost = [")
    for g in net.generators:
        out.append(f"\t2\t0\t0\t3\t{g.c2!r}\t{g.c1!r}\t{g.c0!r};")
    out.append("];")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Admittance structures
# ---------------------------------------------------------------------------


def _branch_two_port(br):
    """Two-port admittance parameters (yff, yft, ytf, ytt) of one branch."""
    ys = 1.0 / complex(br.r, br.x)
    ysh = 1j * br.b_charge / 2.0
    t = br.tap * np.exp(1j * br.shift)
    yff = (ys + ysh) / (t * np.conj(t))
    yft = -ys / np.conj(t)
    ytf = -ys / t
    ytt = ys + ysh
    return yff, yft, ytf, ytt


def build_ybus(net):
    """Bus admittance matrix (complex CSR, per unit) with taps, shifts,
    line charging and bus shunts."""
    n = len(net.buses)
    pos = net.bus_positions()
    rows, cols, vals = [], [], []
    for br in net.branches:
        if not br.in_service:
            continue
        f, t = pos[br.from_bus], pos[br.to_bus]
        yff, yft, ytf, ytt = _branch_two_port(br)
        rows += [f, f, t, t]
        cols += [f, t, f, t]
        vals += [yff, yft, ytf, ytt]
    for b in net.buses:
        rows.append(pos[b.id])
        cols.append(pos[b.id])
        vals.append(complex(b.shunt_g, b.shunt_b))
    return sp.csr_matrix(
        (np.asarray(vals, dtype=complex), (rows, cols)), shape=(n, n)
    )


@dataclass(frozen=True)
class BranchAdmittances:
    """Two-port parameters for every directed branch orientation.

    Directed branch k runs from bus position ``a_pos[k]`` to ``b_pos[k]`` and
    carries complex flow ``v_a * conj(y_self * v_a + y_mutual * v_b)``.  The
    first half of the arrays lists the from->to orientations in branch order,
    the second half the reversed ones, so row k and row k + n_branch describe
    the two ends of the same physical branch.
    """

    a_pos: np.ndarray
    b_pos: np.ndarray
    y_self: np.ndarray
    y_mutual: np.ndarray
    s_max: np.ndarray  # MVA, 0 where unlimited

    @property
    def n_directed(self):
        return len(self.a_pos)

    def flows(self, v):
        """Complex per-unit flow entering each directed branch at its a-end."""
        va_ = v[self.a_pos]
        return va_ * np.conj(self.y_self * va_ + self.y_mutual * v[self.b_pos])


def branch_admittances(net):
    """Per-branch two-port parameters for both orientations, consistent with
    :func:`build_ybus` (bus injections reconcile with summed branch flows)."""
    pos = net.bus_positions()
    act = [br for br in net.branches if br.in_service]
    f = np.array([pos[br.from_bus] for br in act], dtype=int)
    t = np.array([pos[br.to_bus] for br in act], dtype=int)
    two_port = np.array([_branch_two_port(br) for br in act], dtype=complex)
    smax = np.array([br.s_max for br in act])
    return BranchAdmittances(
        a_pos=np.concatenate([f, t]),
        b_pos=np.concatenate([t, f]),
        y_self=np.concatenate([two_port[:, 0], two_port[:, 3]]),
        y_mutual=np.concatenate([two_port[:, 1], two_port[:, 2]]),
        s_max=np.concatenate([smax, smax]),
    )


def bus_injections(net, v, ybus=None):
    """Complex per-unit power injected into the network at every bus."""
    if ybus is None:
        ybus = build_ybus(net)
    return v * np.conj(ybus @ v)


def incidence(net, elements):
    """Sparse |N| x len(elements) bus-connection matrix for gens or loads."""
    n = len(net.buses)
    pos = net.bus_positions()
    rows = [pos[el.bus] for el in elements]
    cols = list(range(len(elements)))
    return sp.csr_matrix(
        (np.ones(len(elements)), (rows, cols)), shape=(n, len(elements))
    )
