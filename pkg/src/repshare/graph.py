"""Model DAGs: stage specs, manifest I/O, shape inference, and cut validity.

A stage is one graph node (a group of same-type layers collapsed to its
aggregate parameters). Stage ids are topological indices; every input
edge points to a lower id. A cut at stage t is valid when no edge other
than t's own output crosses it, which is exactly the condition under
which the prefix can be replaced by an injected representation.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .errors import GraphError, IoError
from .tensor import atomic_write_bytes, read_tensor_shape

Shape3 = tuple[int, int, int]

STAGE_KINDS = (
    "conv2d",
    "relu",
    "maxpool2d",
    "avgpool2d",
    "global_avg_pool",
    "dense",
    "add",
    "concat_channels",
    "opaque",  # exported from an external framework; metadata only
)

# Virtual producer id for the model input in edge listings.
INPUT_ID = -1


@dataclass(frozen=True)
class StageSpec:
    id: int
    name: str
    kind: str
    params: dict = field(default_factory=dict)
    inputs: tuple[int, ...] = ()
    out_shape: Shape3 = (0, 0, 0)
    weights: dict = field(default_factory=dict)  # role -> path relative to manifest


@dataclass(frozen=True)
class ModelGraph:
    name: str
    input_shape: Shape3
    stages: tuple[StageSpec, ...]
    output_stage: int
    base_dir: str = "."  # weight paths resolve against this

    def stage(self, stage_id: int) -> StageSpec:
        if not 0 <= stage_id < len(self.stages):
            raise GraphError(f"{self.name}: unknown stage id {stage_id}")
        return self.stages[stage_id]

    def weight_path(self, stage: StageSpec, role: str) -> str:
        return os.path.join(self.base_dir, stage.weights[role])

    def edges(self) -> list[tuple[int, int]]:
        """All (producer, consumer) edges; the model input is producer -1."""
        out = []
        for s in self.stages:
            if s.inputs:
                out.extend((p, s.id) for p in s.inputs)
            else:
                out.append((INPUT_ID, s.id))
        return out


def _conv_out(h: int, w: int, params: dict) -> tuple[int, int]:
    kh, kw = params["k_h"], params["k_w"]
    stride, pad = params["stride"], params["pad"]
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    return oh, ow


def _pool_out(h: int, w: int, params: dict) -> tuple[int, int]:
    win, stride = params["window"], params["stride"]
    return (h - win) // stride + 1, (w - win) // stride + 1


def infer_shapes(g: ModelGraph) -> dict[int, Shape3]:
    """Recompute every stage's (C,H,W) from producers; validate structure.

    Raises GraphError (naming the stage) on dangling inputs, topology
    violations, kind/param inconsistencies, or negative dimensions.
    """
    shapes: dict[int, Shape3] = {}
    seen_output = False
    for idx, s in enumerate(g.stages):
        if s.id != idx:
            raise GraphError(f"{g.name}: stage ids must be 0..{len(g.stages) - 1} in order, found {s.id} at {idx}")
        if s.kind not in STAGE_KINDS:
            raise GraphError(f"{g.name} stage {s.id}: unknown kind {s.kind!r}")
        for p in s.inputs:
            if not 0 <= p < s.id:
                raise GraphError(f"{g.name} stage {s.id}: input {p} is not a lower stage id")
        ins = [shapes[p] for p in s.inputs] if s.inputs else [tuple(g.input_shape)]
        kind, params = s.kind, s.params
        if kind == "conv2d":
            (c, h, w) = _only(ins, g.name, s.id)
            if c != params["c_in"]:
                raise GraphError(f"{g.name} stage {s.id}: conv c_in={params['c_in']} but producer has C={c}")
            oh, ow = _conv_out(h, w, params)
            shape = (params["c_out"], oh, ow)
        elif kind in ("relu",):
            shape = _only(ins, g.name, s.id)
        elif kind in ("maxpool2d", "avgpool2d"):
            (c, h, w) = _only(ins, g.name, s.id)
            oh, ow = _pool_out(h, w, params)
            shape = (c, oh, ow)
        elif kind == "global_avg_pool":
            (c, h, w) = _only(ins, g.name, s.id)
            shape = (c, 1, 1)
        elif kind == "dense":
            (c, h, w) = _only(ins, g.name, s.id)
            if c * h * w != params["in_dim"]:
                raise GraphError(
                    f"{g.name} stage {s.id}: dense in_dim={params['in_dim']} "
                    f"but producer flattens to {c * h * w}"
                )
            shape = (params["out_dim"], 1, 1)
        elif kind == "add":
            if len(ins) < 2:
                raise GraphError(f"{g.name} stage {s.id}: add needs >= 2 inputs")
            if any(i != ins[0] for i in ins[1:]):
                raise GraphError(f"{g.name} stage {s.id}: add inputs disagree on shape: {ins}")
            shape = ins[0]
        elif kind == "concat_channels":
            if len(ins) < 2:
                raise GraphError(f"{g.name} stage {s.id}: concat needs >= 2 inputs")
            if any(i[1:] != ins[0][1:] for i in ins[1:]):
                raise GraphError(f"{g.name} stage {s.id}: concat inputs disagree on (H,W): {ins}")
            shape = (sum(i[0] for i in ins), ins[0][1], ins[0][2])
        else:  # opaque: trust the declared shape, nothing to recompute
            shape = tuple(s.out_shape)
        if min(shape) < 1:
            raise GraphError(f"{g.name} stage {s.id}: computed non-positive shape {shape}")
        if tuple(s.out_shape) != tuple(shape):
            raise GraphError(
                f"{g.name} stage {s.id}: declared out_shape {tuple(s.out_shape)} "
                f"but {kind} computes {shape}"
            )
        shapes[s.id] = tuple(shape)
        seen_output = seen_output or s.id == g.output_stage
    if not seen_output:
        raise GraphError(f"{g.name}: output stage {g.output_stage} does not exist")
    _check_reachability(g)
    return shapes


def _only(ins: list, name: str, sid: int) -> Shape3:
    if len(ins) != 1:
        raise GraphError(f"{name} stage {sid}: expected exactly one input, got {len(ins)}")
    return tuple(ins[0])


def _check_reachability(g: ModelGraph) -> None:
    consumed = {p for s in g.stages for p in s.inputs}
    consumed.add(g.output_stage)
    for s in g.stages:
        if s.id not in consumed:
            raise GraphError(f"{g.name} stage {s.id}: unreachable (never consumed, not the output)")


_WEIGHT_SHAPES = {
    "conv2d": lambda p: {
        "kernel": (p["c_out"], p["c_in"], p["k_h"], p["k_w"]),
        "bias": (p["c_out"],),
    },
    "dense": lambda p: {"kernel": (p["out_dim"], p["in_dim"]), "bias": (p["out_dim"],)},
}


def check_weights(g: ModelGraph) -> None:
    """Verify referenced weight files exist and declare the right shapes.

    Only NPY headers are read; payloads stay untouched.
    """
    for s in g.stages:
        expected = _WEIGHT_SHAPES.get(s.kind, lambda p: {})(s.params)
        if set(expected) != set(s.weights):
            raise GraphError(
                f"{g.name} stage {s.id}: {s.kind} expects weights {sorted(expected)}, "
                f"manifest lists {sorted(s.weights)}"
            )
        for role, shape in expected.items():
            path = g.weight_path(s, role)
            if not os.path.exists(path):
                raise IoError(f"{g.name} stage {s.id}: missing weight file {path}")
            stored = read_tensor_shape(path)
            if tuple(stored) != tuple(shape):
                raise GraphError(
                    f"{g.name} stage {s.id}: weight {role} has shape {stored}, expected {shape}"
                )


def valid_cut(g: ModelGraph, t: int) -> tuple[bool, list[tuple[int, int]]]:
    """Is a cut at stage t executable from an injected stage-t output alone?

    True iff every stage after t consumes only inputs produced at or after
    t. Returns (ok, violating_edges); each violation is a (producer,
    consumer) pair crossing the cut, with -1 standing for the model input.
    """
    g.stage(t)  # raises GraphError on unknown id
    violations = [(p, c) for (p, c) in g.edges() if c > t and p < t and p != t]
    return (not violations, violations)


def load_manifest(path: str) -> ModelGraph:
    """Load and fully validate a model manifest (shapes, topology, weights)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise GraphError(f"{path}: invalid manifest JSON: {exc}") from exc
    try:
        stages = tuple(
            StageSpec(
                id=int(s["id"]),
                name=str(s["name"]),
                kind=str(s["kind"]),
                params=dict(s.get("params", {})),
                inputs=tuple(int(i) for i in s.get("inputs", [])),
                out_shape=tuple(s["out_shape"]),
                weights=dict(s.get("weights", {})),
            )
            for s in data["stages"]
        )
        g = ModelGraph(
            name=str(data["name"]),
            input_shape=tuple(data["input_shape"]),
            stages=stages,
            output_stage=int(data["output_stage"]),
            base_dir=os.path.dirname(os.path.abspath(path)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise GraphError(f"{path}: malformed manifest: {exc!r}") from exc
    infer_shapes(g)
    check_weights(g)
    return g


def manifest_dict(g: ModelGraph) -> dict:
    return {
        "name": g.name,
        "input_shape": list(g.input_shape),
        "output_stage": g.output_stage,
        "stages": [
            {
                "id": s.id,
                "name": s.name,
                "kind": s.kind,
                "params": s.params,
                "inputs": list(s.inputs),
                "out_shape": list(s.out_shape),
                **({"weights": s.weights} if s.weights else {}),
            }
            for s in g.stages
        ],
    }


def save_manifest(g: ModelGraph, path: str) -> None:
    atomic_write_bytes(path, (json.dumps(manifest_dict(g), indent=2) + "\n").encode("utf-8"))
