"""Dataset quality metrics: marginal entropy, activation-pattern diversity
and bound activation frequency.

Three scores per variable/constraint class:

* q1 - mean normalized Shannon entropy of each column's histogram, measuring
  how uniformly values spread over their feasible (or empirical) range.
* q2 - average normalized Hamming distance between all pairs of ternary
  activation patterns, measuring diversity in which bounds bind.
* q3 - average normalized activation frequency over the bounds that bind at
  least once, clipped at 1/2 to favor balanced lower/upper activations.

A bound counts as active when the value lies within ``tol_fraction`` of its
feasible range from that bound (branch ends: within that fraction of the
thermal limit).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SchemaError

Q1_CLASSES = ("pg", "qg", "vm", "va")
BOUND_CLASSES = ("pg", "qg", "vm", "sbr")
DEFAULT_BINS = 100
DEFAULT_TOL = 0.01


@dataclass(frozen=True)
class VariableMatrix:
    """K x |T| values of one variable class with its per-column bounds.

    ``lower``/``upper`` of None mark an unbounded class (va).  When
    ``to_values`` is set the matrix holds branch flow magnitudes: ``values``
    is the from-end, ``to_values`` the to-end, and ``upper`` the thermal
    limit (the only meaningful bound).
    """

    values: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    to_values: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.values.ndim != 2:
            raise ValueError("values must be a K x |T| matrix")

    @property
    def n_instances(self):
        return self.values.shape[0]

    @property
    def n_elements(self):
        return self.values.shape[1]

    @property
    def is_branch(self):
        return self.to_values is not None


@dataclass(frozen=True)
class ActivationMatrices:
    """Binary (K x 2|T'|) and ternary (K x |T'|) activation encodings over
    the non-degenerate columns ``columns``."""

    binary: np.ndarray
    ternary: np.ndarray
    columns: tuple
    degenerate: tuple


def activation_matrices(m, tol_fraction=DEFAULT_TOL):
    """Label bound activations of one variable class.

    For lower/upper pairs: value v with bounds [lb, ub] and range r activates
    the lower bound iff v <= lb + tol*r and the upper iff v >= ub - tol*r
    (mutually exclusive for tol < 0.5; ternary entry -1/+1/0).  Branch ends
    activate when |s| >= (1 - tol) * s_max; in the rare event both ends
    qualify, the ternary entry takes the more loaded end (from-end on ties).
    Zero-range columns are excluded and reported as degenerate.
    """
    if not (0.0 < tol_fraction < 0.5):
        raise ValueError("tol_fraction must lie in (0, 0.5)")
    k = m.n_instances

    if m.is_branch:
        smax = np.asarray(m.upper, dtype=float)
        keep = np.flatnonzero(smax > 0)
        degen = np.flatnonzero(smax <= 0)
        thresh = (1.0 - tol_fraction) * smax[keep]
        from_act = m.values[:, keep] >= thresh
        to_act = m.to_values[:, keep] >= thresh
        binary = np.hstack([from_act, to_act]).astype(np.int8)
        ternary = np.zeros((k, len(keep)), dtype=np.int8)
        ternary[from_act] = -1
        ternary[to_act] = 1
        both = from_act & to_act
        if both.any():
            from_wins = m.values[:, keep] >= m.to_values[:, keep]
            ternary[both & from_wins] = -1
            ternary[both & ~from_wins] = 1
        return ActivationMatrices(binary, ternary, tuple(keep), tuple(degen))

    if m.lower is None or m.upper is None:
        raise ValueError("activation needs finite bounds (or branch semantics)")
    lb = np.asarray(m.lower, dtype=float)
    ub = np.asarray(m.upper, dtype=float)
    rng = ub - lb
    keep = np.flatnonzero(rng > 0)
    degen = np.flatnonzero(rng <= 0)
    vals = m.values[:, keep]
    low_act = vals <= lb[keep] + tol_fraction * rng[keep]
    up_act = vals >= ub[keep] - tol_fraction * rng[keep]
    binary = np.hstack([low_act, up_act]).astype(np.int8)
    ternary = np.zeros((k, len(keep)), dtype=np.int8)
    ternary[low_act] = -1
    ternary[up_act] = 1
    return ActivationMatrices(binary, ternary, tuple(keep), tuple(degen))


def _column_entropy(col, lo, hi, bins):
    if hi - lo <= 0:
        return 0.0
    counts, _ = np.histogram(np.clip(col, lo, hi), bins=bins, range=(lo, hi))
    probs = counts[counts > 0] / len(col)
    return float(-(probs * np.log2(probs)).sum() / math.log2(bins))


def q1(m, bins=DEFAULT_BINS):
    """Mean normalized Shannon entropy over columns.

    Bounded columns are binned over their feasible range, unbounded ones
    over their empirical min-max; a constant column scores 0.
    """
    if bins < 2:
        raise ValueError("need at least 2 bins")
    if m.n_instances < 1 or m.n_elements < 1:
        raise ValueError("empty variable matrix")
    entropies = []
    for j in range(m.n_elements):
        col = m.values[:, j]
        if m.lower is not None and m.upper is not None and not m.is_branch:
            lo, hi = m.lower[j], m.upper[j]
            if hi - lo <= 0:
                continue  # degenerate column, excluded
        else:
            lo, hi = float(col.min()), float(col.max())
        entropies.append(_column_entropy(col, lo, hi, bins))
    if not entropies:
        return 0.0
    return float(np.mean(entropies))


def q2(a):
    """Average normalized Hamming distance across all instance pairs.

    Computed in O(K |T|) from per-column state counts: the pairs differing in
    a column are C(K,2) minus the same-state pairs of each ternary state.
    """
    ternary = a.ternary if isinstance(a, ActivationMatrices) else np.asarray(a)
    k, t = ternary.shape
    if k < 2:
        raise ValueError("need at least two instances")
    if t == 0:
        return 0.0
    pairs = k * (k - 1) // 2
    differing = 0
    for state in (-1, 0, 1):
        counts = (ternary == state).sum(axis=0)
        differing -= (counts * (counts - 1) // 2).sum()
    differing += pairs * t
    return float(differing / (pairs * t))


def q3(a, l_nr_max=0):
    """Average normalized activation frequency over non-redundant bounds.

    Returns (score, |L_nr|).  ``l_nr_max`` = 0 normalizes by the dataset's
    own |L_nr|; comparisons pass the largest |L_nr| among the compared
    datasets, penalizing the less complex ones.
    """
    binary = a.binary if isinstance(a, ActivationMatrices) else np.asarray(a)
    k = binary.shape[0]
    counts = binary.sum(axis=0)
    active = counts > 0
    l_nr = int(active.sum())
    if l_nr_max and l_nr_max < l_nr:
        raise ValueError("l_nr_max smaller than the dataset's own |L_nr|")
    if l_nr == 0:
        return 0.0, 0
    denom = l_nr_max if l_nr_max else l_nr
    score = float(np.minimum(counts[active] / k, 0.5).sum() / denom)
    return score, l_nr


@dataclass
class MetricReport:
    q1: dict
    q2: dict
    q3: dict  # class -> {"value", "l_nr", "l_nr_max"}
    degenerate: dict
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for v in self.q1.values():
            assert 0.0 <= v <= 1.0 + 1e-12
        for v in self.q2.values():
            assert 0.0 <= v <= 1.0 + 1e-12
        for v in self.q3.values():
            assert 0.0 <= v["value"] <= 0.5 + 1e-12

    def to_json_dict(self):
        return {
            "schema_version": 1,
            "q1": {c: {"value": v, "percent": round(100 * v, 1)} for c, v in self.q1.items()},
            "q2": {c: {"value": v, "percent": round(100 * v, 1)} for c, v in self.q2.items()},
            "q3": {
                c: {
                    "value": d["value"],
                    "percent": round(100 * d["value"], 1),
                    "l_nr": d["l_nr"],
                    "l_nr_max": d["l_nr_max"],
                }
                for c, d in self.q3.items()
            },
            "degenerate": {c: list(map(int, v)) for c, v in self.degenerate.items()},
            "meta": self.meta,
        }


def _matrices_of(ds, net):
    if isinstance(ds, dict):
        return ds
    return ds.variable_matrices(net)


def evaluate_dataset(ds, net=None, bins=DEFAULT_BINS, tol=DEFAULT_TOL, l_nr_max=None):
    """Full metric report for one dataset.

    q1 covers the primal regression variables (pg, qg, vm, va); q2/q3 cover
    the bound classes (pg, qg, vm and branch apparent power, both ends).
    Single-dataset q3 values are self-normalized and flagged as such.
    """
    mats = _matrices_of(ds, net)
    k = next(iter(mats.values())).n_instances
    if k < 1:
        raise SchemaError("dataset is empty")

    q1_scores = {c: q1(mats[c], bins) for c in Q1_CLASSES}
    q2_scores, q3_scores, degenerate = {}, {}, {}
    for c in BOUND_CLASSES:
        act = activation_matrices(mats[c], tol)
        q2_scores[c] = q2(act) if k >= 2 else 0.0
        cap = (l_nr_max or {}).get(c, 0)
        score, l_nr = q3(act, cap)
        q3_scores[c] = {"value": score, "l_nr": l_nr, "l_nr_max": cap or l_nr}
        degenerate[c] = act.degenerate
    return MetricReport(
        q1=q1_scores,
        q2=q2_scores,
        q3=q3_scores,
        degenerate=degenerate,
        meta={
            "K": k,
            "bins": bins,
            "tol": tol,
            "q3_self_normalized": l_nr_max is None,
        },
    )


def compare(datasets, net=None, bins=DEFAULT_BINS, tol=DEFAULT_TOL, labels=None):
    """Side-by-side metric comparison with a shared q3 normalizer.

    Computes each dataset's |L_nr| per bound class, takes the elementwise
    maximum as the shared normalizer and re-evaluates every q3 with it.
    """
    if len(datasets) < 2:
        raise ValueError("need at least two datasets to compare")
    if labels is None:
        labels = [getattr(ds, "label", f"dataset{i}") for i, ds in enumerate(datasets)]

    all_mats = [_matrices_of(ds, net) for ds in datasets]
    widths = {tuple(m[c].n_elements for c in BOUND_CLASSES) for m in all_mats}
    if len(widths) != 1:
        raise SchemaError("datasets have mismatched element counts")

    l_nr = {c: [] for c in BOUND_CLASSES}
    for mats in all_mats:
        for c in BOUND_CLASSES:
            _, n = q3(activation_matrices(mats[c], tol))
            l_nr[c].append(n)
    shared = {c: max(v) for c, v in l_nr.items()}

    reports = [
        evaluate_dataset(mats, bins=bins, tol=tol, l_nr_max=shared)
        for mats in all_mats
    ]
    return {
        "schema_version": 1,
        "labels": list(labels),
        "l_nr_max": shared,
        "q1": {
            c: {lab: rep.q1[c] for lab, rep in zip(labels, reports)}
            for c in Q1_CLASSES
        },
        "q2": {
            c: {lab: rep.q2[c] for lab, rep in zip(labels, reports)}
            for c in BOUND_CLASSES
        },
        "q3": {
            c: {lab: rep.q3[c]["value"] for lab, rep in zip(labels, reports)}
            for c in BOUND_CLASSES
        },
        "l_nr": {
            c: {lab: rep.q3[c]["l_nr"] for lab, rep in zip(labels, reports)}
            for c in BOUND_CLASSES
        },
        "reports": [rep.to_json_dict() for rep in reports],
    }
