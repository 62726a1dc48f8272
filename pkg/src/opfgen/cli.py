"""Command-line entry points: generate, evaluate, compare, inspect.

Exit codes: 0 success, 2 configuration/usage error, 3 generation failed,
4 dataset/schema mismatch, 1 other errors.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import metrics, pipeline
from .errors import (
    ConfigurationError,
    DatasetLoadError,
    EmptySupportError,
    GenerationFailedError,
    InfeasibleSpaceError,
    OpfgenError,
    SchemaError,
)
from .grid import parse_case

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_GENERATION = 3
EXIT_SCHEMA = 4


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="opfgen",
        description="Generate and evaluate AC-OPF datasets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate a dataset")
    gen.add_argument("--case", required=True, help="MATPOWER-style case file")
    gen.add_argument("--method", default="mx", choices=["mx", "m0", "m0-20"])
    gen.add_argument("--samples", type=int, default=100, help="targets per batch")
    gen.add_argument("--batches", type=int, default=1)
    gen.add_argument("--range-p", type=float, default=100.0, dest="range_p",
                     help="active-power range in percent of nominal")
    gen.add_argument("--range-q", type=float, default=100.0, dest="range_q")
    gen.add_argument("--delta-pf", type=float, default=0.05)
    gen.add_argument("--alpha-min", type=float, default=0.01)
    gen.add_argument("--alpha-max", type=float, default=0.99)
    gen.add_argument("--epsilon-frac", type=float, default=0.001,
                     help="slice half-width as a fraction of the support width")
    gen.add_argument("--eta", type=float, default=0.05,
                     help="inverse-KDE floor as a fraction of the peak density")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--workers", type=int, default=1)
    gen.add_argument("--target-k", type=int, default=None,
                     help="add batches until K reaches this count")
    gen.add_argument("--out", required=True, help="output dataset directory")

    ev = sub.add_parser("evaluate", help="compute quality metrics for a dataset")
    ev.add_argument("dataset")
    ev.add_argument("--case", default=None, help="case file (defaults to the recorded one)")
    ev.add_argument("--bins", type=int, default=metrics.DEFAULT_BINS)
    ev.add_argument("--tol", type=float, default=metrics.DEFAULT_TOL)
    ev.add_argument("--report", default=None, help="report path (default: <dataset>/report.json)")

    cmp_ = sub.add_parser("compare", help="compare >= 2 datasets over the same case")
    cmp_.add_argument("datasets", nargs="+")
    cmp_.add_argument("--case", default=None)
    cmp_.add_argument("--bins", type=int, default=metrics.DEFAULT_BINS)
    cmp_.add_argument("--tol", type=float, default=metrics.DEFAULT_TOL)
    cmp_.add_argument("--report", default=None)

    ins = sub.add_parser("inspect", help="print dataset metadata")
    ins.add_argument("dataset")
    return parser


def _pct(value):
    return f"{100.0 * value:5.1f}"


def _print_single_report(report):
    print("metric  class  value[%]")
    for cls, val in report.q1.items():
        print(f"q1      {cls:<5} {_pct(val)}")
    for cls, val in report.q2.items():
        print(f"q2      {cls:<5} {_pct(val)}")
    for cls, d in report.q3.items():
        print(f"q3      {cls:<5} {_pct(d['value'])}   |L_nr|={d['l_nr']}")


def _print_comparison(result):
    labels = result["labels"]
    bold = sys.stdout.isatty()

    def fmt_row(metric, cls, values):
        best = max(values)
        cells = []
        for v in values:
            text = _pct(v)
            if v == best:
                text = f"\033[1m{text}\033[0m" if bold else text + "*"
            cells.append(f"{text:>8}")
        return f"{metric:<3} {cls:<5} " + " ".join(cells)

    header = f"{'':3} {'class':<5} " + " ".join(f"{lab:>8}" for lab in labels)
    print(header)
    for metric in ("q1", "q2", "q3"):
        for cls, per_label in result[metric].items():
            print(fmt_row(metric, cls, [per_label[lab] for lab in labels]))
    print("q3 normalized by shared |L_nr_max| =", result["l_nr_max"])


def run_generate(args):
    net = parse_case(args.case)
    cfg = pipeline.GenerationConfig(
        method=args.method,
        n_samples=args.samples,
        n_batches=args.batches,
        delta_p=args.range_p,
        delta_q=args.range_q,
        delta_pf=args.delta_pf,
        alpha_min=args.alpha_min,
        alpha_max=args.alpha_max,
        epsilon_fraction=args.epsilon_frac,
        eta_fraction=args.eta,
        seed=args.seed,
        workers=args.workers,
        target_k=args.target_k,
    )
    handle = pipeline.generate(net, cfg, args.out, case_path=args.case)
    print(f"dataset written to {handle.path} (K={handle.k})")
    return EXIT_OK if handle.k > 0 else EXIT_GENERATION


def run_evaluate(args):
    handle = pipeline.load_dataset(args.dataset)
    net = pipeline.load_network_for(handle, args.case)
    report = metrics.evaluate_dataset(handle, net, bins=args.bins, tol=args.tol)
    _print_single_report(report)
    report_path = args.report or (handle.path / "report.json")
    with open(report_path, "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=2)
    print(f"report written to {report_path}")
    return EXIT_OK


def run_compare(args):
    if len(args.datasets) < 2:
        print("compare needs at least two datasets", file=sys.stderr)
        return EXIT_CONFIG
    handles = [pipeline.load_dataset(p) for p in args.datasets]
    fingerprints = {h.meta.get("network_fingerprint") for h in handles}
    if len(fingerprints) != 1:
        raise SchemaError("datasets were generated from different cases")
    net = pipeline.load_network_for(handles[0], args.case)
    result = metrics.compare(handles, net, bins=args.bins, tol=args.tol)
    _print_comparison(result)
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(result, fh, indent=2)
        print(f"report written to {args.report}")
    return EXIT_OK


def run_inspect(args):
    handle = pipeline.load_dataset(args.dataset)
    meta = dict(handle.meta)
    meta.pop("batch_schedule", None)
    print(json.dumps(meta, indent=2))
    return EXIT_OK


_COMMANDS = {
    "generate": run_generate,
    "evaluate": run_evaluate,
    "compare": run_compare,
    "inspect": run_inspect,
}


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigurationError, EmptySupportError, InfeasibleSpaceError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GenerationFailedError as exc:
        print(f"generation failed: {exc}", file=sys.stderr)
        return EXIT_GENERATION
    except (SchemaError, DatasetLoadError) as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (OpfgenError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
