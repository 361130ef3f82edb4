"""Per-stage cost metrics, memory savings, Pearson r, and the piecewise
similarity-to-accuracy estimator.

Conventions: one multiply-accumulate counts as 2 FLOPs; elementwise and
pooling stages cost one operation per output element; bias parameters are
included in parameter counts (they occupy the memory being optimized).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .errors import FitError, GraphError, UndefinedCorrelation
from .graph import ModelGraph, StageSpec

DEFAULT_THRESHOLD = 0.4
DEFAULT_FLOOR = 0.031


@dataclass(frozen=True)
class StageMetrics:
    stage_id: int
    flops: int
    rep_size_bytes: int
    param_count: int

    @property
    def param_bytes(self) -> int:
        return 4 * self.param_count


def _stage_cost(s: StageSpec) -> tuple[int, int]:
    """(flops, param_count) for one stage."""
    c, h, w = s.out_shape
    out_elems = c * h * w
    p = s.params
    if s.kind == "conv2d":
        flops = 2 * p["c_in"] * p["k_h"] * p["k_w"] * p["c_out"] * h * w
        count = p["c_out"] * p["c_in"] * p["k_h"] * p["k_w"] + p["c_out"]
    elif s.kind == "dense":
        flops = 2 * p["in_dim"] * p["out_dim"]
        count = p["in_dim"] * p["out_dim"] + p["out_dim"]
    elif s.kind == "opaque":
        flops = 0
        count = int(p.get("params_count", 0))
    else:  # relu / pools / add / concat: one op per output element
        flops = out_elems
        count = 0
    return flops, count


def stage_metrics(g: ModelGraph) -> list[StageMetrics]:
    """FLOPs, per-example representation size, and parameter count per stage."""
    out = []
    for s in g.stages:
        flops, count = _stage_cost(s)
        c, h, w = s.out_shape
        out.append(StageMetrics(s.id, flops, 4 * c * h * w, count))
    return out


def memory_savings(g: ModelGraph, t: int) -> int:
    """Bytes of weights not loaded when the prefix up to stage t is shared."""
    if not 0 <= t < len(g.stages):
        raise GraphError(f"{g.name}: unknown stage id {t}")
    per_stage = stage_metrics(g)
    return sum(m.param_bytes for m in per_stage[: t + 1])


def pearson(x: list[float], y: list[float]) -> float:
    """Pearson correlation coefficient of two equal-length samples."""
    if len(x) != len(y):
        raise UndefinedCorrelation(f"lengths differ: {len(x)} vs {len(y)}")
    n = len(x)
    if n < 2:
        raise UndefinedCorrelation(f"need at least 2 points, got {n}")
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    cov = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    vx = math.fsum((a - mx) ** 2 for a in x)
    vy = math.fsum((b - my) ** 2 for b in y)
    if vx == 0.0 or vy == 0.0:
        raise UndefinedCorrelation("zero variance in one of the samples")
    return cov / math.sqrt(vx * vy)


@dataclass(frozen=True)
class AccuracyEstimator:
    """Piecewise similarity -> accuracy model: floor below the threshold,
    a fitted line at or above it. Defaults come from the single measured
    model pair and should be re-fit per pair."""

    threshold: float = DEFAULT_THRESHOLD
    floor_value: float = DEFAULT_FLOOR
    slope: float = 1.0
    intercept: float = 0.0

    def estimate(self, s: float) -> float:
        if s < self.threshold:
            return self.floor_value
        return self.slope * s + self.intercept

    def to_json(self) -> str:
        return json.dumps(
            {
                "threshold": self.threshold,
                "floor_value": self.floor_value,
                "slope": self.slope,
                "intercept": self.intercept,
            },
            indent=2,
        ) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "AccuracyEstimator":
        d = json.loads(text)
        return cls(d["threshold"], d["floor_value"], d["slope"], d["intercept"])


def _line_fit(pts: list[tuple[float, float]]) -> tuple[float, float] | None:
    n = len(pts)
    if n < 2:
        return None
    mx = math.fsum(p[0] for p in pts) / n
    my = math.fsum(p[1] for p in pts) / n
    vx = math.fsum((p[0] - mx) ** 2 for p in pts)
    if vx == 0.0:
        return None
    slope = math.fsum((p[0] - mx) * (p[1] - my) for p in pts) / vx
    return slope, my - slope * mx


def fit_estimator(pairs: list[tuple[float, float]]) -> AccuracyEstimator:
    """Fit the piecewise model by grid search over candidate thresholds.

    Candidates are the observed similarity values plus the default 0.4.
    For each candidate: floor = mean accuracy strictly below it (default
    0.031 when empty), line = least squares on the rest; the candidate
    minimizing total squared error wins, ties broken by smaller threshold.
    """
    if len(pairs) < 4:
        raise FitError(f"need at least 4 (S, accuracy) pairs, got {len(pairs)}")
    if any(not 0.0 <= s <= 1.0 for s, _ in pairs):
        raise FitError("similarity values must lie in [0, 1]")
    candidates = sorted({s for s, _ in pairs} | {DEFAULT_THRESHOLD})
    best = None
    for theta in candidates:
        below = [(s, a) for s, a in pairs if s < theta]
        above = [(s, a) for s, a in pairs if s >= theta]
        fitted = _line_fit(above)
        if fitted is None:
            continue
        slope, intercept = fitted
        floor = math.fsum(a for _, a in below) / len(below) if below else DEFAULT_FLOOR
        sse = math.fsum((a - floor) ** 2 for _, a in below) + math.fsum(
            (a - (slope * s + intercept)) ** 2 for s, a in above
        )
        if best is None or sse < best[0] - 1e-15:
            best = (sse, theta, floor, slope, intercept)
    if best is None:
        raise FitError("no threshold leaves >= 2 distinct similarity values for the line")
    _, theta, floor, slope, intercept = best
    return AccuracyEstimator(theta, floor, slope, intercept)


def correlate_table(rows: list[dict]) -> dict[str, float | None]:
    """|r| between Acc and each metric column; None where r is undefined."""
    if len(rows) < 2:
        raise UndefinedCorrelation(f"need at least 2 rows, got {len(rows)}")
    acc = [float(r["Acc"]) for r in rows]
    report: dict[str, float | None] = {}
    for metric in ("S", "FLOPs", "Size", "Params"):
        col = [float(r[metric]) for r in rows]
        try:
            report[metric] = abs(pearson(acc, col))
        except UndefinedCorrelation:
            report[metric] = None
    return report


def ranked_report(report: dict[str, float | None]) -> list[tuple[str, float | None]]:
    """Metrics sorted by |r| descending, undefined last."""
    return sorted(report.items(), key=lambda kv: (kv[1] is None, -(kv[1] or 0.0), kv[0]))
