"""Desk-scale reruns of the measurement methodology: same-stage and
cross-stage sharing sweeps, the controlled noise sweep, and the metric
tables feeding correlation reports.

Merged-model quality is measured as fidelity (argmax agreement with the
unmerged target) rather than labeled validation accuracy, so no ground
truth is needed anywhere.
"""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .adapt import plan_adapt
from .similarity import cka_reps
from .errors import GraphError
from .executor import InjectionPoint, fidelity, forward, forward_merged
from .graph import ModelGraph, valid_cut
from .metrics import memory_savings, stage_metrics

log = logging.getLogger("repshare.experiment")

DEFAULT_SIGMAS = (0.0, 0.5, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0)
DEFAULT_NOISE_STAGE = 2


@dataclass(frozen=True)
class SweepRow:
    s: int
    t: int
    similarity: float
    fidelity: float
    savings_bytes: int


def run_sweep(
    donor: ModelGraph,
    target: ModelGraph,
    inputs: np.ndarray,
    mode: str = "cross",
    threads: int = 1,
) -> list[SweepRow]:
    """Share donor stage s into target stage t for every valid pair.

    ``same`` visits only s == t (stage counts must match), ``cross``
    visits the full grid; pairs whose cut is invalid are skipped. Each row
    records similarity, fidelity against the unmerged target, and the
    memory savings of the cut. Row order is (s, t)-lexicographic.
    """
    if mode not in ("same", "cross"):
        raise ValueError(f"mode must be 'same' or 'cross', got {mode!r}")
    if mode == "same" and len(donor.stages) != len(target.stages):
        raise GraphError(
            f"same-stage sweep needs equal stage counts, got "
            f"{len(donor.stages)} vs {len(target.stages)}"
        )
    preds_t, dumps_t = forward(target, inputs)
    _, dumps_d = forward(donor, inputs)
    if mode == "same":
        pairs = [(s.id, s.id) for s in donor.stages]
    else:
        pairs = [(s.id, t.id) for s in donor.stages for t in target.stages]
    pairs = [(s, t) for s, t in pairs if valid_cut(target, t)[0]]

    def run_pair(pair):
        s, t = pair
        donor_rep = dumps_d[s]
        spec = plan_adapt(tuple(donor.stage(s).out_shape), tuple(target.stage(t).out_shape))
        merged = forward_merged(target, InjectionPoint(t, donor_rep, spec))
        return SweepRow(
            s=s,
            t=t,
            similarity=cka_reps(donor_rep, dumps_t[t]),
            fidelity=fidelity(merged, preds_t),
            savings_bytes=memory_savings(target, t),
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run_pair, pairs))
    else:
        rows = [run_pair(p) for p in pairs]
    log.info("%s -> %s %s sweep: %d pairs", donor.name, target.name, mode, len(rows))
    return rows


def sweep_csv(rows: list[SweepRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["s", "t", "S", "fidelity", "savings_bytes"])
    for r in rows:
        writer.writerow([r.s, r.t, repr(r.similarity), repr(r.fidelity), r.savings_bytes])
    return buf.getvalue()


def metric_table(rows: list[SweepRow], target: ModelGraph) -> list[dict]:
    """Per-experiment records joining fidelity with the shared stage's
    conventional metrics, in the layout the correlation report consumes."""
    per_stage = {m.stage_id: m for m in stage_metrics(target)}
    table = []
    for r in rows:
        m = per_stage[r.t]
        table.append(
            {
                "Acc": r.fidelity,
                "S": r.similarity,
                "FLOPs": m.flops,
                "Size": m.rep_size_bytes,
                "Params": m.param_count,
            }
        )
    return table


def metric_table_csv(table: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["Acc", "S", "FLOPs", "Size", "Params"])
    for row in table:
        writer.writerow(
            [repr(float(row["Acc"])), repr(float(row["S"])), row["FLOPs"], row["Size"], row["Params"]]
        )
    return buf.getvalue()


@dataclass(frozen=True)
class NoiseRow:
    sigma: float
    similarity: float
    fidelity: float


def run_noise_sweep(
    g: ModelGraph,
    inputs: np.ndarray,
    target_stage: int = DEFAULT_NOISE_STAGE,
    sigmas: tuple[float, ...] = DEFAULT_SIGMAS,
    seed: int = 0,
) -> list[NoiseRow]:
    """Inject the model's own stage dump corrupted by scaled Gaussian noise.

    The donor at level sigma is dump + N(0, (sigma * std(dump))^2); sigma
    is therefore dimensionless. Requires sigmas sorted ascending and
    starting at 0, whose row comes out as (S, fidelity) = (1, 1).
    """
    if list(sigmas) != sorted(sigmas) or not sigmas or sigmas[0] != 0.0:
        raise ValueError("sigmas must be sorted ascending and include 0 first")
    ok, crossing = valid_cut(g, target_stage)
    if not ok:
        raise GraphError(
            f"{g.name} stage {target_stage} is not a valid cut: "
            + ", ".join(f"{p}->{c}" for p, c in crossing)
        )
    preds, dumps = forward(g, inputs)
    base = dumps[target_stage]
    scale = float(np.std(base))
    spec = plan_adapt(tuple(base.shape[1:]), tuple(base.shape[1:]))
    rng = np.random.default_rng(seed)
    rows = []
    for sigma in sigmas:
        if sigma == 0.0:
            donor = base
        else:
            noise = rng.standard_normal(base.shape).astype(np.float32)
            donor = base + np.float32(sigma * scale) * noise
        merged = forward_merged(g, InjectionPoint(target_stage, donor, spec))
        rows.append(
            NoiseRow(
                sigma=float(sigma),
                similarity=cka_reps(donor, base),
                fidelity=fidelity(merged, preds),
            )
        )
    return rows


def noise_csv(rows: list[NoiseRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["sigma", "S", "fidelity"])
    for r in rows:
        writer.writerow([repr(r.sigma), repr(r.similarity), repr(r.fidelity)])
    return buf.getvalue()
