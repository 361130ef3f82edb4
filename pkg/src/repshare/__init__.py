"""repshare: representation-similarity guided layer sharing for small CNNs.

Measures linear CKA between stage representations of two models, executes
merged (representation-shared) models on a minimal built-in inference
engine, and searches for memory-optimal sharing points.
"""

from .adapt import AdaptSpec, apply_adapt, plan_adapt
from .similarity import SimilarityMatrix, cka, cka_reps, gram_linear, similarity_matrix
from .executor import InjectionPoint, WeightLoader, fidelity, forward, forward_merged
from .graph import ModelGraph, StageSpec, infer_shapes, load_manifest, save_manifest, valid_cut
from .metrics import (
    AccuracyEstimator,
    StageMetrics,
    correlate_table,
    fit_estimator,
    memory_savings,
    pearson,
    stage_metrics,
)
from .planner import MergePlan, enumerate_plans, select_plan
from .tensor import (
    RepresentationSet,
    read_dumps,
    read_tensor,
    write_dumps,
    write_tensor,
)
from .toygen import gen_toy_pair

__version__ = "0.1.0"
