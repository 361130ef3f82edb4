"""Deterministic desk-scale model pair for experiments and tests.

Generates two small CNNs over 32x32 RGB inputs with 10-way outputs. Both
share an identical three-stage prefix architecture (conv, relu, maxpool)
whose weights differ by a small perturbation; model B additionally has a
skip connection (add) that makes exactly one cut invalid. Also emits a
shared evaluation batch. Equal seeds produce byte-identical trees.
"""

from __future__ import annotations

import os

import numpy as np

from .graph import ModelGraph, StageSpec, load_manifest, save_manifest
from .tensor import write_tensor

DEFAULT_N = 64
_PREFIX_JITTER = 0.35  # relative weight perturbation between the twin prefixes
_PROTOTYPES = 8  # distinct input patterns; gives the eval batch class structure
_INPUT_NOISE = 0.5  # per-example jitter around the prototype


def _conv(sid, name, c_in, c_out, inputs, out_shape):
    return StageSpec(
        id=sid,
        name=name,
        kind="conv2d",
        params={"c_in": c_in, "c_out": c_out, "k_h": 3, "k_w": 3, "stride": 1, "pad": 1},
        inputs=tuple(inputs),
        out_shape=out_shape,
        weights={"kernel": f"weights/s{sid}_kernel.npy", "bias": f"weights/s{sid}_bias.npy"},
    )


def _dense(sid, name, in_dim, out_dim, inputs):
    return StageSpec(
        id=sid,
        name=name,
        kind="dense",
        params={"in_dim": in_dim, "out_dim": out_dim},
        inputs=tuple(inputs),
        out_shape=(out_dim, 1, 1),
        weights={"kernel": f"weights/s{sid}_kernel.npy", "bias": f"weights/s{sid}_bias.npy"},
    )


def _graph_a() -> ModelGraph:
    stages = (
        _conv(0, "conv1", 3, 16, [], (16, 32, 32)),
        StageSpec(1, "relu1", "relu", {}, (0,), (16, 32, 32)),
        StageSpec(2, "pool1", "maxpool2d", {"window": 2, "stride": 2}, (1,), (16, 16, 16)),
        _conv(3, "conv2", 16, 32, [2], (32, 16, 16)),
        StageSpec(4, "relu2", "relu", {}, (3,), (32, 16, 16)),
        StageSpec(5, "gap", "global_avg_pool", {}, (4,), (32, 1, 1)),
        _dense(6, "classifier", 32, 10, [5]),
    )
    return ModelGraph("toy_a", (3, 32, 32), stages, output_stage=6)


def _graph_b() -> ModelGraph:
    # classifies from the flattened spatial map (no pooling collapse), so
    # injected perturbations reach the logits unattenuated
    stages = (
        _conv(0, "conv1", 3, 16, [], (16, 32, 32)),
        StageSpec(1, "relu1", "relu", {}, (0,), (16, 32, 32)),
        StageSpec(2, "pool1", "maxpool2d", {"window": 2, "stride": 2}, (1,), (16, 16, 16)),
        _conv(3, "conv2", 16, 16, [2], (16, 16, 16)),
        StageSpec(4, "skip_add", "add", {}, (2, 3), (16, 16, 16)),
        StageSpec(5, "relu2", "relu", {}, (4,), (16, 16, 16)),
        _dense(6, "classifier", 16 * 16 * 16, 10, [5]),
    )
    return ModelGraph("toy_b", (3, 32, 32), stages, output_stage=6)


def _he(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


def _write_weights(g: ModelGraph, out_dir: str, rng: np.random.Generator, base=None) -> dict:
    """Draw (or perturb) and write all weight tensors; returns them by stage."""
    tensors: dict[int, dict[str, np.ndarray]] = {}
    for s in g.stages:
        if not s.weights:
            continue
        if s.kind == "conv2d":
            p = s.params
            shape = (p["c_out"], p["c_in"], p["k_h"], p["k_w"])
            fan_in = p["c_in"] * p["k_h"] * p["k_w"]
            bias_dim = p["c_out"]
        else:
            shape = (s.params["out_dim"], s.params["in_dim"])
            fan_in = s.params["in_dim"]
            bias_dim = s.params["out_dim"]
        if base is not None and s.id in base and base[s.id]["kernel"].shape == shape:
            ref = base[s.id]
            scale = np.float32(_PREFIX_JITTER * np.std(ref["kernel"]))
            kernel = ref["kernel"] + scale * rng.standard_normal(shape).astype(np.float32)
            bias = ref["bias"] + scale * rng.standard_normal(bias_dim).astype(np.float32)
        else:
            kernel = _he(rng, shape, fan_in)
            bias = (0.01 * rng.standard_normal(bias_dim)).astype(np.float32)
        tensors[s.id] = {"kernel": kernel, "bias": bias}
        for role in ("kernel", "bias"):
            write_tensor(tensors[s.id][role], os.path.join(out_dir, s.weights[role]))
    return tensors


def _eval_inputs(rng: np.random.Generator, n: int) -> np.ndarray:
    """Evaluation batch with class structure: each example is one of a few
    prototype patterns plus jitter. White-noise-only batches would make
    every centered Gram matrix near-isotropic and similarity uninformative."""
    protos = rng.standard_normal((_PROTOTYPES, 3, 32, 32))
    jitter = rng.standard_normal((n, 3, 32, 32))
    assign = np.arange(n) % _PROTOTYPES
    return (protos[assign] + _INPUT_NOISE * jitter).astype(np.float32)


def gen_toy_pair(seed: int, out_dir: str, n: int = DEFAULT_N):
    """Emit manifests, weights, and a shared evaluation batch under out_dir.

    Layout: a/manifest.json, b/manifest.json (weights under each model's
    weights/ subdirectory), inputs.npy. Returns the two loaded, validated
    graphs and the evaluation inputs.
    """
    rng = np.random.default_rng(seed)
    ga, gb = _graph_a(), _graph_b()
    weights_a = _write_weights(ga, os.path.join(out_dir, "a"), rng)
    _write_weights(gb, os.path.join(out_dir, "b"), rng, base=weights_a)
    inputs = _eval_inputs(rng, n)
    write_tensor(inputs, os.path.join(out_dir, "inputs.npy"))
    save_manifest(ga, os.path.join(out_dir, "a", "manifest.json"))
    save_manifest(gb, os.path.join(out_dir, "b", "manifest.json"))
    graph_a = load_manifest(os.path.join(out_dir, "a", "manifest.json"))
    graph_b = load_manifest(os.path.join(out_dir, "b", "manifest.json"))
    return graph_a, graph_b, inputs
