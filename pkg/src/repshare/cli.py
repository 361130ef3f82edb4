"""Command-line interface wiring all modules together.

Exit codes: 0 success, 1 usage error, 2 validation error (graph, shape,
format, fit, or plan problems; the offending stage or file is named on
stderr), 3 I/O error. Every output file is written atomically.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import adapt, errors, executor, experiment, graph, metrics, planner, similarity, toygen
from .tensor import atomic_write_bytes, read_dumps, read_tensor, write_dumps, write_tensor

log = logging.getLogger("repshare")

_VALIDATION_ERRORS = (
    errors.FormatError,
    errors.ShapeError,
    errors.DegenerateInput,
    errors.UndefinedSimilarity,
    errors.GraphError,
    errors.CutViolation,
    errors.UndefinedCorrelation,
    errors.FitError,
    errors.PlanError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(1)


def _setup_logging() -> None:
    level = os.environ.get("REPSHARE_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise ValueError(f"REPSHARE_LOG must be one of error/info/debug, got {level!r}")
    logging.basicConfig(level=levels[level], format="%(name)s: %(message)s")


def _write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _parse_inject(value: str) -> tuple[int, str]:
    fields = dict(part.split("=", 1) for part in value.split(",") if "=" in part)
    if set(fields) != {"stage", "rep"}:
        raise ValueError(f"--inject expects stage=<t>,rep=<path>, got {value!r}")
    return int(fields["stage"]), fields["rep"]


def _parse_sigmas(value: str) -> tuple[float, ...]:
    return tuple(float(part) for part in value.split(","))


def cmd_gen_toy(args) -> int:
    toygen.gen_toy_pair(args.seed, args.out, n=args.n)
    print(f"toy pair written to {args.out}")
    return 0


def cmd_dump(args) -> int:
    g = graph.load_manifest(args.manifest)
    inputs = read_tensor(args.inputs)
    _, dumps = executor.forward(g, inputs)
    index = write_dumps(dumps, args.out)
    print(f"dumps for {g.name} written to {index}")
    return 0


def cmd_cka(args) -> int:
    reps_a = read_dumps(args.a)
    reps_b = read_dumps(args.b)
    sim = similarity.similarity_matrix(reps_a, reps_b, mode=args.mode, threads=args.threads)
    _write_text(os.path.join(args.out, "similarity.json"), sim.to_json())
    _write_text(os.path.join(args.out, "similarity.csv"), sim.to_csv())
    print(f"{args.mode}-stage similarity written to {args.out}")
    return 0


def cmd_exec(args) -> int:
    g = graph.load_manifest(args.manifest)
    t, rep_path = args.inject
    donor = read_tensor(rep_path)
    if donor.ndim != 4:
        raise errors.ShapeError(f"{rep_path}: donor representation must be rank 4, got {donor.shape}")
    ok, crossing = graph.valid_cut(g, t)
    if not ok:
        raise errors.GraphError(
            f"{g.name} stage {t} is not a valid cut: "
            + ", ".join(f"{p}->{c}" for p, c in crossing)
        )
    spec = adapt.plan_adapt(tuple(donor.shape[1:]), tuple(g.stage(t).out_shape))
    preds = executor.forward_merged(g, executor.InjectionPoint(t, donor, spec))
    out_path = os.path.join(args.out, "predictions.npy")
    write_tensor(np.ascontiguousarray(preds), out_path)
    print(f"merged predictions written to {out_path}")
    return 0


def cmd_sweep(args) -> int:
    donor = graph.load_manifest(args.donor)
    target = graph.load_manifest(args.target)
    inputs = read_tensor(args.inputs)
    rows = experiment.run_sweep(donor, target, inputs, mode=args.mode, threads=args.threads)
    _write_text(os.path.join(args.out, "sweep.csv"), experiment.sweep_csv(rows))
    table = experiment.metric_table(rows, target)
    _write_text(os.path.join(args.out, "metrics.csv"), experiment.metric_table_csv(table))
    print(f"{args.mode}-stage sweep ({len(rows)} pairs) written to {args.out}")
    return 0


def cmd_noise_sweep(args) -> int:
    g = graph.load_manifest(args.manifest)
    inputs = read_tensor(args.inputs)
    rows = experiment.run_noise_sweep(
        g, inputs, target_stage=args.stage, sigmas=args.sigmas, seed=args.seed
    )
    out_path = os.path.join(args.out, "noise.csv")
    _write_text(out_path, experiment.noise_csv(rows))
    print(f"noise sweep ({len(rows)} levels) written to {out_path}")
    return 0


def cmd_correlate(args) -> int:
    import csv as _csv

    try:
        with open(args.table, newline="") as fh:
            rows = list(_csv.DictReader(fh))
    except OSError as exc:
        raise errors.IoError(f"cannot read {args.table}: {exc}") from exc
    missing = {"Acc", "S", "FLOPs", "Size", "Params"} - set(rows[0] if rows else {})
    if missing:
        raise errors.FormatError(f"{args.table}: missing columns {sorted(missing)}")
    report = metrics.correlate_table(rows)
    out_path = os.path.join(args.out, "correlation.json")
    _write_text(out_path, json.dumps(report, indent=2) + "\n")
    for name, r in metrics.ranked_report(report):
        print(f"|r| {name}: {'undefined' if r is None else format(r, '.4f')}")
    return 0


def cmd_fit(args) -> int:
    import csv as _csv

    try:
        with open(args.pairs, newline="") as fh:
            records = list(_csv.DictReader(fh))
    except OSError as exc:
        raise errors.IoError(f"cannot read {args.pairs}: {exc}") from exc
    if not records or args.s_col not in records[0] or args.acc_col not in records[0]:
        raise errors.FormatError(
            f"{args.pairs}: need columns {args.s_col!r} and {args.acc_col!r}"
        )
    pairs = [(float(r[args.s_col]), float(r[args.acc_col])) for r in records]
    est = metrics.fit_estimator(pairs)
    out_path = os.path.join(args.out, "estimator.json")
    _write_text(out_path, est.to_json())
    print(
        f"estimator: threshold={est.threshold} floor={est.floor_value} "
        f"slope={est.slope} intercept={est.intercept}"
    )
    return 0


def cmd_plan(args) -> int:
    donor = graph.load_manifest(args.donor)
    target = graph.load_manifest(args.target)
    try:
        with open(args.sim) as fh:
            sim = similarity.SimilarityMatrix.from_json(fh.read())
        if args.estimator:
            with open(args.estimator) as fh:
                est = metrics.AccuracyEstimator.from_json(fh.read())
        else:
            est = metrics.AccuracyEstimator()
    except (ValueError, KeyError) as exc:
        raise errors.FormatError(f"malformed similarity/estimator JSON: {exc}") from exc
    dumps = read_dumps(args.donor_dumps) if args.donor_dumps else None
    plans = planner.enumerate_plans(donor, target, sim, est, donor_dumps=dumps)
    selected = planner.select_plan(
        plans, args.select, min_similarity=args.min_similarity, budget_bytes=args.budget
    )
    _write_text(os.path.join(args.out, "plans.jsonl"), planner.plans_to_jsonl(plans, selected))
    summary = {"selected": None if selected is None else {**selected.to_dict(), "selected": True}}
    _write_text(os.path.join(args.out, "selected.json"), json.dumps(summary, indent=2) + "\n")
    if selected is None:
        print("no feasible plan")
    else:
        print(
            f"selected: donor stage {selected.donor_stage} -> target stage "
            f"{selected.target_stage} (S={selected.similarity:.4f}, "
            f"saves {selected.savings_bytes} bytes)"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="repshare", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(fn=fn)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--threads", type=int, default=1, help="internal parallelism")
        p.add_argument("--seed", type=int, default=0, help="RNG seed")
        return p

    p = add("gen-toy", cmd_gen_toy, help="emit the deterministic toy model pair")
    p.add_argument("--n", type=int, default=toygen.DEFAULT_N, help="evaluation batch size")

    p = add("dump", cmd_dump, help="run a model and write per-stage representation dumps")
    p.add_argument("--manifest", required=True)
    p.add_argument("--inputs", required=True, help="evaluation batch (.npy)")

    p = add("cka", cmd_cka, help="similarity matrix between two dump sets")
    p.add_argument("--a", required=True, help="donor dumps.json")
    p.add_argument("--b", required=True, help="target dumps.json")
    p.add_argument("--mode", choices=("same", "cross"), default="cross")

    p = add("exec", cmd_exec, help="run a merged model from an injected representation")
    p.add_argument("--manifest", required=True, help="target model manifest")
    p.add_argument("--inject", required=True, type=_parse_inject, metavar="stage=<t>,rep=<path>")

    p = add("sweep", cmd_sweep, help="share every valid stage pair, record S and fidelity")
    p.add_argument("--donor", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--inputs", required=True)
    p.add_argument("--mode", choices=("same", "cross"), default="cross")

    p = add("noise-sweep", cmd_noise_sweep, help="self-share under increasing noise")
    p.add_argument("--manifest", required=True)
    p.add_argument("--inputs", required=True)
    p.add_argument("--stage", type=int, default=experiment.DEFAULT_NOISE_STAGE)
    p.add_argument(
        "--sigmas",
        type=_parse_sigmas,
        default=experiment.DEFAULT_SIGMAS,
        help="comma-separated noise levels, ascending, starting at 0",
    )

    p = add("correlate", cmd_correlate, help="|r| of Acc against each metric column")
    p.add_argument("--table", required=True, help="CSV with Acc,S,FLOPs,Size,Params")

    p = add("fit", cmd_fit, help="fit the piecewise similarity->accuracy estimator")
    p.add_argument("--pairs", required=True, help="CSV of (S, accuracy) observations")
    p.add_argument("--s-col", default="S")
    p.add_argument("--acc-col", default="accuracy")

    p = add("plan", cmd_plan, help="enumerate sharing plans and select the best")
    p.add_argument("--donor", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--sim", required=True, help="similarity.json from the cka command")
    p.add_argument("--estimator", default=None, help="estimator.json (defaults otherwise)")
    p.add_argument("--donor-dumps", default=None, help="donor dumps.json (availability check)")
    p.add_argument("--select", choices=("max-savings", "max-accuracy"), default="max-savings")
    p.add_argument("--min-similarity", type=float, default=planner.DEFAULT_MIN_SIMILARITY)
    p.add_argument("--budget", type=int, default=0, help="minimum savings in bytes")
    return parser


def main(argv=None) -> int:
    try:
        _setup_logging()
        try:
            args = build_parser().parse_args(argv)
        except SystemExit as exc:  # argparse already printed the message
            return exc.code if isinstance(exc.code, int) else 1
        return args.fn(args)
    except _VALIDATION_ERRORS as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except (errors.IoError, OSError) as exc:
        sys.stderr.write(f"i/o error: {exc}\n")
        return 3
    except ValueError as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
