"""Linear centered kernel alignment between stage representations.

Similarity of two representations X (n, p) and Y (n, q) is the normalized
HSIC of their Gram matrices K = X Xᵀ and L = Y Yᵀ:

    S = tr(K'L') / sqrt(tr(K'K') * tr(L'L')),   K' = HKH, L' = HLH,

with H = I - (1/n) J the centering matrix. The biased HSIC estimator's
1/(n-1)² factors cancel in the ratio, so they are omitted. Only example
counts must match: p and q are free, which is what makes similarity
comparable across stages with mismatched shapes.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, ShapeError, UndefinedSimilarity
from .tensor import RepresentationSet, flatten_features

# Relative floor below which a centered Gram matrix counts as all-zero.
_ZERO_REL = 1e-24


def gram_linear(x: np.ndarray) -> np.ndarray:
    """Gram matrix K[i,j] = <row_i, row_j> of a rank-2 feature array."""
    if x.ndim != 2:
        raise ShapeError(f"expected rank-2 features, got shape {x.shape}")
    if x.shape[0] < 2:
        raise DegenerateInput(f"need at least 2 examples, got {x.shape[0]}")
    x64 = np.asarray(x, dtype=np.float64)
    return x64 @ x64.T


def _center(k: np.ndarray) -> np.ndarray:
    # HKH expanded: K - row means - col means + grand mean.
    row = k.mean(axis=1, keepdims=True)
    col = k.mean(axis=0, keepdims=True)
    return k - row - col + k.mean()


def cka(x: np.ndarray, y: np.ndarray) -> float:
    """Linear CKA similarity of two feature arrays with a shared example axis.

    Returns S clamped to [0, 1]. Deterministic for identical inputs.
    Raises ShapeError on mismatched n, UndefinedSimilarity when either
    centered Gram matrix is entirely zero (all example rows identical).
    """
    if x.ndim != 2 or y.ndim != 2:
        raise ShapeError(f"expected rank-2 features, got {x.shape} and {y.shape}")
    if x.shape[0] != y.shape[0]:
        raise ShapeError(f"example counts differ: {x.shape[0]} vs {y.shape[0]}")
    kc = _center(gram_linear(x))
    lc = _center(gram_linear(y))
    kk = float(np.sum(kc * kc))
    ll = float(np.sum(lc * lc))
    k_ref = float(np.sum(np.square(x, dtype=np.float64))) ** 2
    l_ref = float(np.sum(np.square(y, dtype=np.float64))) ** 2
    if kk <= _ZERO_REL * max(k_ref, 1.0):
        raise UndefinedSimilarity("first input has zero variance across examples")
    if ll <= _ZERO_REL * max(l_ref, 1.0):
        raise UndefinedSimilarity("second input has zero variance across examples")
    s = float(np.sum(kc * lc)) / math.sqrt(kk * ll)
    return min(1.0, max(0.0, s))


def cka_reps(a: np.ndarray, b: np.ndarray) -> float:
    """CKA of two rank-4 representation dumps, flattened per example."""
    return cka(flatten_features(a), flatten_features(b))


@dataclass(frozen=True)
class SimilarityMatrix:
    """|A| x |B| grid of similarity scores; NaN marks uncomputed cells."""

    stages_a: list[int]
    stages_b: list[int]
    values: np.ndarray

    def get(self, sa: int, sb: int) -> float:
        return float(self.values[self.stages_a.index(sa), self.stages_b.index(sb)])

    def to_json(self) -> str:
        rows = [
            [None if math.isnan(v) else v for v in row]
            for row in self.values.tolist()
        ]
        return json.dumps(
            {"stages_a": self.stages_a, "stages_b": self.stages_b, "values": rows},
            indent=2,
        ) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([""] + [str(s) for s in self.stages_b])
        for sa, row in zip(self.stages_a, self.values):
            writer.writerow([str(sa)] + ["" if math.isnan(v) else repr(float(v)) for v in row])
        return buf.getvalue()

    @classmethod
    def from_json(cls, text: str) -> "SimilarityMatrix":
        data = json.loads(text)
        values = np.array(
            [[math.nan if v is None else float(v) for v in row] for row in data["values"]],
            dtype=np.float64,
        ).reshape(len(data["stages_a"]), len(data["stages_b"]))
        return cls(list(data["stages_a"]), list(data["stages_b"]), values)


def similarity_matrix(
    a: RepresentationSet,
    b: RepresentationSet,
    mode: str = "cross",
    threads: int = 1,
) -> SimilarityMatrix:
    """Assemble the same-stage or cross-stage similarity grid.

    ``same`` fills only diagonal pairs (stage i of A vs stage i of B) and
    requires equal stage counts; ``cross`` fills the full grid.
    """
    if mode not in ("same", "cross"):
        raise ValueError(f"mode must be 'same' or 'cross', got {mode!r}")
    if a.n != b.n:
        raise ShapeError(f"dump sets disagree on example count: n={a.n} vs n={b.n}")
    ids_a, ids_b = a.stage_ids, b.stage_ids
    if mode == "same" and len(ids_a) != len(ids_b):
        raise ShapeError(
            f"same-stage mode needs equal stage counts, got {len(ids_a)} vs {len(ids_b)}"
        )
    feats_a = {s: flatten_features(a[s]) for s in ids_a}
    feats_b = {s: flatten_features(b[s]) for s in ids_b}
    values = np.full((len(ids_a), len(ids_b)), np.nan, dtype=np.float64)
    if mode == "same":
        cells = [(i, i) for i in range(len(ids_a))]
    else:
        cells = [(i, j) for i in range(len(ids_a)) for j in range(len(ids_b))]

    def compute(cell):
        i, j = cell
        return i, j, cka(feats_a[ids_a[i]], feats_b[ids_b[j]])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(compute, cells))
    else:
        results = [compute(c) for c in cells]
    for i, j, s in results:
        values[i, j] = s
    return SimilarityMatrix(list(ids_a), list(ids_b), values)
