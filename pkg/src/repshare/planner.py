"""Enumeration and constrained selection of (donor stage, target stage)
sharing points.

Each candidate pair gets one MergePlan carrying its similarity, shape
adapter, memory savings, and estimated accuracy. Structurally invalid
cuts are kept in the list with a diagnostic instead of being dropped, so
users can see exactly which skip connections block sharing.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .adapt import AdaptSpec, plan_adapt
from .similarity import SimilarityMatrix
from .errors import PlanError
from .graph import ModelGraph, valid_cut
from .metrics import AccuracyEstimator, memory_savings

DEFAULT_MIN_SIMILARITY = 0.4  # below it, measured merged accuracy collapses


@dataclass(frozen=True)
class MergePlan:
    donor_model: str
    donor_stage: int
    target_model: str
    target_stage: int
    similarity: float
    adapt: AdaptSpec
    savings_bytes: int
    estimated_accuracy: float
    valid: bool
    diagnostic: str = ""

    def to_dict(self) -> dict:
        return {
            "donor_model": self.donor_model,
            "donor_stage": self.donor_stage,
            "target_model": self.target_model,
            "target_stage": self.target_stage,
            "similarity": self.similarity,
            "adapt": self.adapt.to_dict(),
            "savings_bytes": self.savings_bytes,
            "estimated_accuracy": self.estimated_accuracy,
            "valid": self.valid,
            "diagnostic": self.diagnostic,
        }

    def to_json_line(self) -> str:
        return json.dumps(self.to_dict())


def enumerate_plans(
    donor: ModelGraph,
    target: ModelGraph,
    sim: SimilarityMatrix,
    estimator: AccuracyEstimator,
    donor_dumps=None,
) -> list[MergePlan]:
    """One plan per (donor stage, target stage) pair, donor-major order.

    Raises PlanError when the similarity matrix lacks an entry for a pair
    or, when dumps are supplied, a donor stage has no dump.
    """
    plans = []
    for s in donor.stages:
        if donor_dumps is not None and s.id not in donor_dumps.stages:
            raise PlanError(f"no dump for donor stage {s.id} of {donor.name}")
        for t in target.stages:
            try:
                similarity = sim.get(s.id, t.id)
            except ValueError as exc:
                raise PlanError(f"similarity matrix lacks stage pair ({s.id}, {t.id})") from exc
            if math.isnan(similarity):
                raise PlanError(f"similarity entry for stage pair ({s.id}, {t.id}) is missing")
            ok, crossing = valid_cut(target, t.id)
            diagnostic = (
                ""
                if ok
                else "skip edges cross the cut: "
                + ", ".join(f"{p}->{c}" for p, c in crossing)
            )
            plans.append(
                MergePlan(
                    donor_model=donor.name,
                    donor_stage=s.id,
                    target_model=target.name,
                    target_stage=t.id,
                    similarity=similarity,
                    adapt=plan_adapt(tuple(s.out_shape), tuple(t.out_shape)),
                    savings_bytes=memory_savings(target, t.id),
                    estimated_accuracy=estimator.estimate(similarity),
                    valid=ok,
                    diagnostic=diagnostic,
                )
            )
    return plans


def _tie_key(p: MergePlan) -> tuple:
    # higher similarity first, then lower (donor, target) stage ids
    return (-p.similarity, p.donor_stage, p.target_stage)


def select_plan(
    plans: list[MergePlan],
    mode: str,
    min_similarity: float = DEFAULT_MIN_SIMILARITY,
    budget_bytes: int = 0,
) -> MergePlan | None:
    """Pick the best valid plan under the given constraint, or None.

    ``max-savings``: among valid plans with S >= min_similarity, maximize
    savings. ``max-accuracy``: among valid plans with savings >=
    budget_bytes, maximize estimated accuracy. Ties break by higher
    similarity, then lower (donor, target) ids; the result is invariant
    under permutation of the plan list.
    """
    if mode == "max-savings":
        feasible = [p for p in plans if p.valid and p.similarity >= min_similarity]
        key = lambda p: (-p.savings_bytes, *_tie_key(p))
    elif mode == "max-accuracy":
        feasible = [p for p in plans if p.valid and p.savings_bytes >= budget_bytes]
        key = lambda p: (-p.estimated_accuracy, *_tie_key(p))
    else:
        raise ValueError(f"mode must be 'max-savings' or 'max-accuracy', got {mode!r}")
    if not feasible:
        return None
    return min(feasible, key=key)


def plans_to_jsonl(plans: list[MergePlan], selected: MergePlan | None) -> str:
    """Serialize plans one per line; the selected one carries "selected": true."""
    lines = []
    for p in plans:
        d = p.to_dict()
        if selected is not None and p is selected:
            d["selected"] = True
        lines.append(json.dumps(d))
    return "\n".join(lines) + "\n"
