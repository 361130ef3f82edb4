"""Forward execution of model graphs, merged execution, and fidelity.

Merged execution replaces a target model's prefix (stages with id <= t)
with a shape-adapted donor representation injected into stage t's output
slot. Prefix slots are filled with unreadable placeholders so downstream
input indexing is unchanged; touching one is a hard CutViolation rather
than a silent zero. Prefix weight files are never opened.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .adapt import AdaptSpec, apply_adapt
from .errors import CutViolation, GraphError, ShapeError
from .graph import ModelGraph, StageSpec
from .tensor import RepresentationSet, read_tensor

log = logging.getLogger("repshare.executor")


class _Placeholder:
    """Reserved slot for a never-executed prefix stage."""

    __slots__ = ("stage_id",)

    def __init__(self, stage_id: int):
        self.stage_id = stage_id


class WeightLoader:
    """Loads weight tensors on demand and records every file it touches."""

    def __init__(self, graph: ModelGraph):
        self.graph = graph
        self.touched: set[str] = set()
        self._cache: dict[str, np.ndarray] = {}

    def get(self, stage: StageSpec, role: str) -> np.ndarray:
        path = self.graph.weight_path(stage, role)
        if path not in self._cache:
            self.touched.add(path)
            self._cache[path] = read_tensor(path)
        return self._cache[path]


def _conv2d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray, params: dict) -> np.ndarray:
    stride, pad = params["stride"], params["pad"]
    n = x.shape[0]
    c_out, c_in, kh, kw = kernel.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    _, _, oh, ow, _, _ = windows.shape
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n * oh * ow, c_in * kh * kw
    )
    out = cols @ kernel.reshape(c_out, -1).T + bias
    return np.ascontiguousarray(out.reshape(n, oh, ow, c_out).transpose(0, 3, 1, 2))


def _pool(x: np.ndarray, params: dict, reduce: str) -> np.ndarray:
    win, stride = params["window"], params["stride"]
    windows = sliding_window_view(x, (win, win), axis=(2, 3))[:, :, ::stride, ::stride]
    if reduce == "max":
        return np.ascontiguousarray(windows.max(axis=(4, 5)))
    return np.ascontiguousarray(windows.mean(axis=(4, 5), dtype=np.float32))


def _run_stage(stage: StageSpec, ins: list[np.ndarray], loader: WeightLoader) -> np.ndarray:
    kind = stage.kind
    if kind == "conv2d":
        return _conv2d(ins[0], loader.get(stage, "kernel"), loader.get(stage, "bias"), stage.params)
    if kind == "relu":
        return np.maximum(ins[0], np.float32(0.0))
    if kind == "maxpool2d":
        return _pool(ins[0], stage.params, "max")
    if kind == "avgpool2d":
        return _pool(ins[0], stage.params, "mean")
    if kind == "global_avg_pool":
        return ins[0].mean(axis=(2, 3), keepdims=True, dtype=np.float32)
    if kind == "dense":
        flat = ins[0].reshape(ins[0].shape[0], -1)
        out = flat @ loader.get(stage, "kernel").T + loader.get(stage, "bias")
        return out[:, :, None, None]
    if kind == "add":
        acc = ins[0]
        for extra in ins[1:]:
            acc = acc + extra
        return acc
    if kind == "concat_channels":
        return np.concatenate(ins, axis=1)
    raise GraphError(f"stage {stage.id}: kind {kind!r} is not executable")


def _gather(slots: list, stage: StageSpec, model_input) -> list[np.ndarray]:
    sources = stage.inputs if stage.inputs else (None,)
    ins = []
    for src in sources:
        value = model_input if src is None else slots[src]
        if isinstance(value, _Placeholder) or value is None:
            what = "model input" if src is None else f"stage {src} output"
            raise CutViolation(
                f"stage {stage.id} tried to read the {what}, which is behind the cut"
            )
        ins.append(value)
    return ins


def forward(
    g: ModelGraph, inputs: np.ndarray, loader: WeightLoader | None = None
) -> tuple[np.ndarray, RepresentationSet]:
    """Run all stages in id order; return (logits, per-stage dumps)."""
    if inputs.ndim != 4 or tuple(inputs.shape[1:]) != tuple(g.input_shape):
        raise ShapeError(
            f"{g.name}: inputs {inputs.shape} do not match input_shape {g.input_shape}"
        )
    loader = loader or WeightLoader(g)
    slots: list = [None] * len(g.stages)
    for stage in g.stages:
        slots[stage.id] = _run_stage(stage, _gather(slots, stage, inputs), loader)
    dumps = RepresentationSet(model=g.name, stages={s.id: slots[s.id] for s in g.stages})
    preds = slots[g.output_stage].reshape(inputs.shape[0], -1)
    return preds, dumps


@dataclass(frozen=True)
class InjectionPoint:
    """A donor representation standing in for the target's stage-t output."""

    target_stage: int
    donor_rep: np.ndarray  # (n, C_s, H_s, W_s)
    adapt: AdaptSpec


def forward_merged(
    g: ModelGraph, inj: InjectionPoint, loader: WeightLoader | None = None
) -> np.ndarray:
    """Execute only stages after the cut, seeded by the adapted donor rep.

    Stages with id <= t are never executed and their weights never read;
    their slots hold placeholders purely for index alignment.
    """
    t = inj.target_stage
    stage_t = g.stage(t)
    if tuple(inj.adapt.dst_shape) != tuple(stage_t.out_shape):
        raise ShapeError(
            f"{g.name} stage {t}: adapter target {inj.adapt.dst_shape} "
            f"does not match stage out_shape {tuple(stage_t.out_shape)}"
        )
    loader = loader or WeightLoader(g)
    slots: list = [_Placeholder(i) for i in range(len(g.stages))]
    slots[t] = apply_adapt(inj.adapt, inj.donor_rep)
    log.debug("%s: injected %s -> stage %d", g.name, inj.donor_rep.shape, t)
    for stage in g.stages[t + 1 :]:
        slots[stage.id] = _run_stage(stage, _gather(slots, stage, None), loader)
    return slots[g.output_stage].reshape(inj.donor_rep.shape[0], -1)


def fidelity(p_merged: np.ndarray, p_original: np.ndarray) -> float:
    """Fraction of examples whose argmax class agrees (ties: lowest index)."""
    if p_merged.shape != p_original.shape:
        raise ShapeError(f"prediction shapes differ: {p_merged.shape} vs {p_original.shape}")
    if p_merged.ndim != 2 or p_merged.shape[0] < 1:
        raise ShapeError(f"expected (n, classes) predictions, got {p_merged.shape}")
    agree = np.argmax(p_merged, axis=1) == np.argmax(p_original, axis=1)
    return float(np.mean(agree))
