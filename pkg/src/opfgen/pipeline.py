"""End-to-end dataset generation, persistence and reload.

Method "mx" samples a total-load target per instance, slices the load
polytope around it, draws one approximately uniform point per slice and
solves the slack-augmented OPF.  After the first batch the target support is
truncated to the converged hull and later batches draw targets from an
inverse-KDE distribution over converged totals.  Methods "m0" and "m0-20"
draw every load coordinate independently and uniformly in its box (100% or
20% range) and solve the same OPF without ratio or slice rows.

A dataset is a directory: ``meta.json`` + ``instances.jsonl`` (one JSON
object per converged instance, in instance-id order) + ``failures.jsonl``
(+ ``timings.jsonl``, which is excluded from the determinism contract).
Targets and per-target walk seeds are derived from (seed, batch, index)
before dispatch, so output bytes do not depend on the worker count.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import acopf, metrics, schedule
from .errors import (
    ConfigurationError,
    DatasetLoadError,
    GenerationFailedError,
    SchemaError,
)
from .grid import branch_admittances, parse_case
from .polytope import build_load_polytope, load_boxes, sample_uniform_point, slice_polytope

FORMAT_VERSION = 1
METHODS = ("mx", "m0", "m0-20")

# seed-stream tags keeping schedule, walk and box draws independent
_TAG_SCHEDULE = 101
_TAG_WALK = 202
_TAG_BOX = 303


@dataclass
class GenerationConfig:
    method: str = "mx"
    n_samples: int = 100  # targets per batch
    n_batches: int = 1
    delta_p: float = 100.0
    delta_q: float = 100.0
    delta_pf: float = 0.05
    alpha_min: float = 0.01
    alpha_max: float = 0.99
    epsilon_fraction: float = 0.001  # slice half-width as fraction of support width
    eta_fraction: float = 0.05  # inverse-KDE floor as fraction of peak density
    seed: int = 0
    workers: int = 1
    target_k: int | None = None
    c_d: float | None = None
    solver_tolerance: float = 1e-6
    solver_max_iterations: int = 300

    def __post_init__(self):
        method = self.method.lower().replace("/", "-")
        if method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}")
        self.method = method
        if method == "m0-20":
            self.delta_p = 20.0
            self.delta_q = 20.0
        if self.n_samples < 1 or self.n_batches < 1:
            raise ConfigurationError("n_samples and n_batches must be >= 1")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        if not (0.0 < self.epsilon_fraction < 1.0):
            raise ConfigurationError("epsilon_fraction must lie in (0, 1)")
        if self.eta_fraction <= 0:
            raise ConfigurationError("eta_fraction must be positive")


def _space_for(cfg):
    return acopf.LoadSpaceParams(
        delta_p=cfg.delta_p,
        delta_q=cfg.delta_q,
        delta_pf=cfg.delta_pf,
        alpha_min=cfg.alpha_min,
        alpha_max=cfg.alpha_max,
        with_ratio=(cfg.method == "mx"),
    )


# ------------------------------------------------------------- worker side

_WORKER = {}


def _init_worker(net, cfg, polytope, epsilon):
    _WORKER["net"] = net
    _WORKER["cfg"] = cfg
    _WORKER["polytope"] = polytope
    _WORKER["epsilon"] = epsilon
    _WORKER["space"] = _space_for(cfg)
    _WORKER["solver"] = acopf.SolverConfig(
        tolerance=cfg.solver_tolerance, max_iterations=cfg.solver_max_iterations
    )


def _solve_setpoint(setpoint):
    net, cfg = _WORKER["net"], _WORKER["cfg"]
    t0 = time.perf_counter()
    prob = acopf.build_problem(net, setpoint, _WORKER["space"], c_d=cfg.c_d)
    sol = acopf.solve(prob, _WORKER["solver"])
    return sol, time.perf_counter() - t0


def _task_mx(args):
    batch, index, target = args
    cfg = _WORKER["cfg"]
    seed = np.random.SeedSequence([cfg.seed, _TAG_WALK, batch, index])
    try:
        point = sample_uniform_point(
            slice_polytope(_WORKER["polytope"], target, _WORKER["epsilon"]), seed
        )
    except Exception as exc:
        return {
            "ok": False, "batch": batch, "target": target,
            "status": f"slice-sampling-failed: {exc}", "seconds": 0.0,
        }
    nd = len(_WORKER["net"].loads)
    setpoint = acopf.LoadSetpoint(
        p_hat=point[:nd], q_hat=point[nd:],
        p_tot_target=target, epsilon=_WORKER["epsilon"],
    )
    sol, seconds = _solve_setpoint(setpoint)
    return _task_result(sol, setpoint, batch, target, seconds)


def _task_m0(args):
    batch, index, _target = args
    cfg, net = _WORKER["cfg"], _WORKER["net"]
    rng = np.random.default_rng(
        np.random.SeedSequence([cfg.seed, _TAG_BOX, batch, index])
    )
    p_lo, p_hi, q_lo, q_hi = load_boxes(net, cfg.delta_p, cfg.delta_q)
    setpoint = acopf.LoadSetpoint(
        p_hat=rng.uniform(p_lo, p_hi), q_hat=rng.uniform(q_lo, q_hi)
    )
    sol, seconds = _solve_setpoint(setpoint)
    return _task_result(sol, setpoint, batch, None, seconds)


def _task_result(sol, setpoint, batch, target, seconds):
    out = {
        "ok": acopf.is_feasible(sol),
        "batch": batch,
        "target": target,
        "status": sol.status,
        "seconds": seconds,
    }
    if out["ok"]:
        out["record"] = _record_dict(sol, setpoint, batch, target)
    return out


def _record_dict(sol, setpoint, batch, target):
    return {
        "id": None,  # assigned by the collector in schedule order
        "batch": batch,
        "p_tot_target": target,
        "p_hat": setpoint.p_hat.tolist(),
        "q_hat": setpoint.q_hat.tolist(),
        "pd": sol.pd.tolist(),
        "qd": sol.qd.tolist(),
        "vm": sol.vm.tolist(),
        "va": sol.va.tolist(),
        "pg": sol.pg.tolist(),
        "qg": sol.qg.tolist(),
        "slack_p_up": sol.slack_p_up.tolist(),
        "slack_p_dw": sol.slack_p_dw.tolist(),
        "slack_q_up": sol.slack_q_up.tolist(),
        "slack_q_dw": sol.slack_q_dw.tolist(),
        "objective": sol.objective,
        "solver": {
            "status": sol.status,
            "iterations": sol.iterations,
            "kkt_residual": sol.kkt_residual,
            "max_slack": sol.max_slack,
        },
    }


# ------------------------------------------------------------ collector


class _DatasetWriter:
    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        if (self.dir / "instances.jsonl").exists():
            raise ConfigurationError(f"{self.dir} already contains a dataset")
        self._instances = open(self.dir / "instances.jsonl", "w")
        self._failures = open(self.dir / "failures.jsonl", "w")
        self._timings = open(self.dir / "timings.jsonl", "w")
        self.k = 0
        self.n_failed = 0

    def add(self, result):
        if result["ok"]:
            record = result["record"]
            record["id"] = self.k
            self._instances.write(json.dumps(record, separators=(",", ":")) + "\n")
            self._timings.write(
                json.dumps({"id": self.k, "seconds": result["seconds"]}) + "\n"
            )
            self.k += 1
        else:
            self.n_failed += 1
            self._failures.write(
                json.dumps(
                    {
                        "batch": result["batch"],
                        "p_tot_target": result["target"],
                        "status": result["status"],
                    },
                    separators=(",", ":"),
                )
                + "\n"
            )

    def finalize(self, meta):
        self._instances.close()
        self._failures.close()
        self._timings.close()
        meta = dict(meta)
        meta["K"] = self.k
        meta["n_failed"] = self.n_failed
        with open(self.dir / "meta.json", "w") as fh:
            json.dump(meta, fh, indent=2)
        return DatasetHandle(self.dir)


def _run_batch(task_fn, tasks, workers, pool):
    if pool is None:
        return [task_fn(t) for t in tasks]
    chunk = max(1, len(tasks) // (4 * workers))
    return list(pool.map(task_fn, tasks, chunksize=chunk))


# ------------------------------------------------------------- generation


def generate(net, cfg, out_dir, case_path=None):
    """Run the full generation procedure and persist the dataset."""
    writer = _DatasetWriter(out_dir)
    space = _space_for(cfg)
    sup = schedule.support(net, cfg.delta_p)
    epsilon = cfg.epsilon_fraction * sup.width

    polytope = None
    if cfg.method == "mx":
        polytope = build_load_polytope(
            net, cfg.delta_p, cfg.delta_q, cfg.delta_pf, cfg.alpha_min, cfg.alpha_max
        )
    task_fn = _task_mx if cfg.method == "mx" else _task_m0

    resolved_c_d = acopf.build_problem(
        net,
        acopf.LoadSetpoint(
            p_hat=np.array([d.p_nom for d in net.loads]),
            q_hat=np.array([d.q_nom for d in net.loads]),
        ),
        acopf.LoadSpaceParams(
            delta_p=cfg.delta_p, delta_q=cfg.delta_q, with_ratio=False
        ),
        c_d=cfg.c_d,
    ).c_d

    pool = None
    converged = schedule.ConvergedSet()
    truncated = sup
    batch_schedule = []
    try:
        if cfg.workers > 1:
            pool = ProcessPoolExecutor(
                max_workers=cfg.workers,
                initializer=_init_worker,
                initargs=(net, cfg, polytope, epsilon),
            )
        _init_worker(net, cfg, polytope, epsilon)

        batch = 0
        extra_guard = 0
        while True:
            batch += 1
            if cfg.method == "mx":
                seed = np.random.SeedSequence([cfg.seed, _TAG_SCHEDULE, batch])
                if batch == 1:
                    targets = schedule.draw_uniform(sup, cfg.n_samples, seed)
                else:
                    try:
                        eta = schedule.default_eta(converged, truncated, cfg.eta_fraction)
                        density = schedule.fit_weighted(converged, truncated, eta)
                        targets = schedule.draw_weighted(density, cfg.n_samples, seed)
                    except Exception:
                        targets = schedule.draw_uniform(truncated, cfg.n_samples, seed)
            else:
                targets = [None] * cfg.n_samples

            tasks = [(batch, i, t) for i, t in enumerate(targets)]
            results = _run_batch(task_fn, tasks, cfg.workers, pool)

            n_ok = 0
            attempts = []
            for res in results:
                writer.add(res)
                if res["target"] is not None:
                    attempts.append((res["target"], res["ok"]))
                if res["ok"]:
                    n_ok += 1
                    if res["target"] is not None:
                        converged.add(res["target"], batch)
            batch_schedule.append(
                {
                    "batch": batch,
                    "targets": [None if t is None else float(t) for t in targets],
                    "converged": n_ok,
                }
            )
            print(
                f"[{cfg.method}] batch {batch}: {n_ok}/{len(tasks)} converged "
                f"(K={writer.k})",
                flush=True,
            )

            if cfg.method == "mx" and batch == 1:
                if len(converged) == 0:
                    raise GenerationFailedError(
                        "no instance converged in the first batch"
                    )
                truncated = schedule.truncate_support(sup, converged, attempts)

            if batch < cfg.n_batches:
                continue
            if cfg.target_k is not None and writer.k < cfg.target_k:
                if n_ok == 0:
                    raise GenerationFailedError(
                        f"stalled at K={writer.k} < target {cfg.target_k}"
                    )
                extra_guard += 1
                if extra_guard > 1000:
                    raise GenerationFailedError("target_k loop guard tripped")
                continue
            break
    finally:
        if pool is not None:
            pool.shutdown()

    if writer.k == 0:
        raise GenerationFailedError("generation produced zero converged instances")

    meta = {
        "format_version": FORMAT_VERSION,
        "case_name": net.name,
        "case_path": str(Path(case_path).resolve()) if case_path else None,
        "network_fingerprint": net.fingerprint(),
        "base_mva": net.base_mva,
        "config": asdict(cfg),
        "c_d": resolved_c_d,
        "support": [sup.lo, sup.hi],
        "truncated_support": [truncated.lo, truncated.hi],
        "epsilon": epsilon if cfg.method == "mx" else None,
        "angle_defaults_applied": net.angle_defaults_applied,
        "batch_schedule": batch_schedule,
        "created_at": datetime.now(timezone.utc).isoformat(),
    }
    return writer.finalize(meta)


# ------------------------------------------------------------ persistence


@dataclass
class DatasetHandle:
    """A completed dataset directory."""

    path: Path
    meta: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.path = Path(self.path)
        if not self.meta:
            meta_path = self.path / "meta.json"
            if not meta_path.exists():
                raise DatasetLoadError(f"missing {meta_path}")
            try:
                self.meta = json.loads(meta_path.read_text())
            except json.JSONDecodeError as exc:
                raise DatasetLoadError(f"corrupt {meta_path}: {exc}") from None

    @property
    def k(self):
        return self.meta["K"]

    @property
    def label(self):
        return self.meta.get("config", {}).get("method", self.path.name)

    def records(self):
        """Iterate the persisted instances in id order."""
        fname = self.path / "instances.jsonl"
        if not fname.exists():
            raise DatasetLoadError(f"missing {fname}")
        with open(fname) as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    yield json.loads(line)
                except json.JSONDecodeError:
                    raise DatasetLoadError(
                        f"{fname}: corrupt record on line {lineno}"
                    ) from None

    def solve_seconds(self):
        fname = self.path / "timings.jsonl"
        if not fname.exists():
            return []
        with open(fname) as fh:
            return [json.loads(line)["seconds"] for line in fh if line.strip()]

    def variable_matrices(self, net):
        """Reconstruct the metric inputs (pg, qg, vm, va, branch |s|, loads)."""
        if net.fingerprint() != self.meta.get("network_fingerprint"):
            raise SchemaError("dataset was generated from a different case")
        rows = {key: [] for key in ("pg", "qg", "vm", "va", "pd", "qd")}
        count = 0
        for rec in self.records():
            for key in rows:
                rows[key].append(rec[key])
            count += 1
        if count != self.k:
            raise DatasetLoadError(
                f"instances.jsonl holds {count} records, meta says {self.k}"
            )
        arr = {key: np.asarray(val, dtype=float) for key, val in rows.items()}
        ng, nb, nd = len(net.generators), len(net.buses), len(net.loads)
        if arr["pg"].shape[1] != ng or arr["vm"].shape[1] != nb or arr["pd"].shape[1] != nd:
            raise SchemaError("dataset column counts do not match the network")

        base = net.base_mva
        adm = branch_admittances(net)
        limited = adm.s_max > 0
        n_l = int(limited.sum()) // 2
        v = arr["vm"] * np.exp(1j * arr["va"])
        flows = np.abs(
            v[:, adm.a_pos[limited]]
            * np.conj(
                adm.y_self[limited] * v[:, adm.a_pos[limited]]
                + adm.y_mutual[limited] * v[:, adm.b_pos[limited]]
            )
        ) * base
        smax = adm.s_max[limited][:n_l]

        cfg = self.meta.get("config", {})
        p_lo, p_hi, q_lo, q_hi = load_boxes(
            net, cfg.get("delta_p", 100.0), cfg.get("delta_q", 100.0)
        )
        return {
            "pg": metrics.VariableMatrix(
                arr["pg"],
                lower=np.array([g.p_min for g in net.generators]),
                upper=np.array([g.p_max for g in net.generators]),
            ),
            "qg": metrics.VariableMatrix(
                arr["qg"],
                lower=np.array([g.q_min for g in net.generators]),
                upper=np.array([g.q_max for g in net.generators]),
            ),
            "vm": metrics.VariableMatrix(
                arr["vm"],
                lower=np.array([b.v_min for b in net.buses]),
                upper=np.array([b.v_max for b in net.buses]),
            ),
            "va": metrics.VariableMatrix(arr["va"]),
            "sbr": metrics.VariableMatrix(
                flows[:, :n_l], upper=smax, to_values=flows[:, n_l:]
            ),
            "pd": metrics.VariableMatrix(arr["pd"], lower=p_lo, upper=p_hi),
            "qd": metrics.VariableMatrix(arr["qd"], lower=q_lo, upper=q_hi),
        }


def create_dataset(out_dir, net, cfg, case_path=None):
    """Empty dataset directory ready for incremental appends."""
    writer = _DatasetWriter(out_dir)
    return writer.finalize(
        {
            "format_version": FORMAT_VERSION,
            "case_name": net.name,
            "case_path": str(Path(case_path).resolve()) if case_path else None,
            "network_fingerprint": net.fingerprint(),
            "base_mva": net.base_mva,
            "config": asdict(cfg),
            "c_d": cfg.c_d,
            "support": None,
            "truncated_support": None,
            "epsilon": None,
            "angle_defaults_applied": net.angle_defaults_applied,
            "batch_schedule": [],
            "created_at": datetime.now(timezone.utc).isoformat(),
        }
    )


def append_instance(handle, sol, setpoint, batch=1, p_tot_target=None):
    """Persist one feasible solution; returns the assigned instance id."""
    if not acopf.is_feasible(sol):
        raise ValueError("refusing to append an infeasible instance")
    record = _record_dict(sol, setpoint, batch, p_tot_target)
    record["id"] = handle.k
    with open(handle.path / "instances.jsonl", "a") as fh:
        fh.write(json.dumps(record, separators=(",", ":")) + "\n")
    handle.meta["K"] = handle.k + 1
    with open(handle.path / "meta.json", "w") as fh:
        json.dump(handle.meta, fh, indent=2)
    return record["id"]


def load_dataset(path, net=None, audit_fraction=0.0, audit_seed=0):
    """Open a dataset directory; optionally validate a random sample of the
    persisted instances against an independently rebuilt problem."""
    handle = DatasetHandle(Path(path))
    if audit_fraction > 0:
        if net is None:
            raise ValueError("auditing requires the network")
        audit_dataset(handle, net, fraction=audit_fraction, seed=audit_seed)
    return handle


def rebuild_problem(handle, net, record):
    """Reconstruct the OPF instance a record was generated from."""
    cfg = handle.meta["config"]
    setpoint = acopf.LoadSetpoint(
        p_hat=np.asarray(record["p_hat"]),
        q_hat=np.asarray(record["q_hat"]),
        p_tot_target=record.get("p_tot_target"),
        epsilon=handle.meta.get("epsilon") if record.get("p_tot_target") is not None else None,
    )
    space = acopf.LoadSpaceParams(
        delta_p=cfg["delta_p"],
        delta_q=cfg["delta_q"],
        delta_pf=cfg["delta_pf"],
        alpha_min=cfg["alpha_min"],
        alpha_max=cfg["alpha_max"],
        with_ratio=(cfg["method"] == "mx"),
    )
    return acopf.build_problem(net, setpoint, space, c_d=handle.meta.get("c_d"))


def record_to_solution(record):
    arr = lambda key: np.asarray(record[key], dtype=float)
    return acopf.OpfSolution(
        vm=arr("vm"), va=arr("va"), pg=arr("pg"), qg=arr("qg"),
        pd=arr("pd"), qd=arr("qd"),
        slack_p_up=arr("slack_p_up"), slack_p_dw=arr("slack_p_dw"),
        slack_q_up=arr("slack_q_up"), slack_q_dw=arr("slack_q_dw"),
        objective=record["objective"],
        status=record["solver"]["status"],
        kkt_residual=record["solver"]["kkt_residual"],
        iterations=record["solver"]["iterations"],
    )


def audit_dataset(handle, net, fraction=0.05, seed=0):
    """Re-validate a random sample of persisted instances from scratch."""
    if net.fingerprint() != handle.meta.get("network_fingerprint"):
        raise SchemaError("dataset was generated from a different case")
    records = list(handle.records())
    if not records:
        return 0
    rng = np.random.default_rng(seed)
    n_pick = max(1, int(round(fraction * len(records))))
    picks = rng.choice(len(records), size=min(n_pick, len(records)), replace=False)
    for idx in picks:
        rec = records[int(idx)]
        prob = rebuild_problem(handle, net, rec)
        report = acopf.validate(record_to_solution(rec), net, prob)
        if not report.ok:
            raise DatasetLoadError(
                f"instance {rec['id']} fails the feasibility audit "
                f"(max residual {report.max_residual:.2e})"
            )
    return len(picks)


def load_network_for(handle, case_path=None):
    """Parse the case a dataset was generated from, verifying the fingerprint."""
    path = case_path or handle.meta.get("case_path")
    if not path or not Path(path).exists():
        raise DatasetLoadError(
            "case file not found; pass --case explicitly"
        )
    net = parse_case(path)
    if net.fingerprint() != handle.meta.get("network_fingerprint"):
        raise SchemaError(f"case {path} does not match the dataset's network")
    return net
