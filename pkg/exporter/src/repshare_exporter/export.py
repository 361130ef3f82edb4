"""Export per-stage activations of a PyTorch model in repshare's formats.

The user names the stage boundaries (module names from named_modules());
each named module becomes one opaque stage. Running the model once over a
fixed batch captures every boundary's output, which is written as one
float32 NPY per stage plus a dumps.json index and an opaque-stage
manifest. No similarity math happens here: the primary tool owns that.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np
import torch


class ExportError(Exception):
    """Bad stage names, unusable outputs, or a malformed batch."""


def _write_bytes(path: str, data: bytes) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _save_f4(arr: np.ndarray, path: str) -> None:
    # float32 C-order np.save output is exactly the subset the primary reads
    assert arr.dtype == np.float32
    import io

    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(arr))
    _write_bytes(path, buf.getvalue())


def _as_rep(name: str, out) -> np.ndarray:
    if not isinstance(out, torch.Tensor):
        raise ExportError(f"stage {name!r}: output is {type(out).__name__}, not a tensor")
    if not out.dtype.is_floating_point:
        raise ExportError(f"stage {name!r}: output dtype {out.dtype} is not floating point")
    arr = out.detach().cpu().to(torch.float32).numpy()
    if arr.ndim < 2 or arr.ndim > 4:
        raise ExportError(f"stage {name!r}: output rank {arr.ndim} unsupported (need 2..4)")
    while arr.ndim < 4:
        arr = arr[..., None]
    if not np.all(np.isfinite(arr)):
        raise ExportError(f"stage {name!r}: output contains NaN or Inf")
    return np.ascontiguousarray(arr)


def export(
    model: torch.nn.Module,
    stage_names: list[str],
    batch: np.ndarray,
    out_dir: str,
    model_name: str = "model",
) -> str:
    """Run ``model`` on ``batch`` once and write dumps + manifest to out_dir.

    Returns the path of the dumps.json index. Stage i is the module named
    ``stage_names[i]``; stages appear in the manifest as an opaque chain
    with parameter counts and output shapes but no weights.
    """
    if batch.ndim != 4:
        raise ExportError(f"batch must be (n, C, H, W), got shape {batch.shape}")
    if batch.shape[0] < 2:
        raise ExportError(f"batch needs at least 2 examples, got {batch.shape[0]}")
    if not stage_names:
        raise ExportError("no stage names given")
    modules = dict(model.named_modules())
    missing = [s for s in stage_names if s not in modules]
    if missing:
        available = ", ".join(sorted(n for n in modules if n))
        raise ExportError(f"unknown module name(s) {missing}; available: {available}")

    captured: dict[str, list] = {name: [] for name in stage_names}
    hooks = [
        modules[name].register_forward_hook(
            lambda _m, _i, out, name=name: captured[name].append(out)
        )
        for name in stage_names
    ]
    model.eval()
    try:
        with torch.no_grad():
            model(torch.from_numpy(batch).to(torch.float32))
    finally:
        for h in hooks:
            h.remove()

    reps: dict[str, np.ndarray] = {}
    for name in stage_names:
        outs = captured[name]
        if len(outs) != 1:
            raise ExportError(
                f"stage {name!r} fired {len(outs)} times in one forward pass; "
                "boundaries must be modules invoked exactly once"
            )
        rep = _as_rep(name, outs[0])
        if rep.shape[0] != batch.shape[0]:
            raise ExportError(
                f"stage {name!r}: leading dim {rep.shape[0]} does not match batch {batch.shape[0]}"
            )
        reps[name] = rep

    index = {"model": model_name, "n": int(batch.shape[0]), "stages": {}}
    stages = []
    for i, name in enumerate(stage_names):
        rel = os.path.join(model_name, f"{i}.npy")
        _save_f4(reps[name], os.path.join(out_dir, rel))
        index["stages"][str(i)] = rel
        params = sum(p.numel() for p in modules[name].parameters())
        stages.append(
            {
                "id": i,
                "name": name,
                "kind": "opaque",
                "params": {"params_count": int(params)},
                "inputs": [] if i == 0 else [i - 1],
                "out_shape": [int(d) for d in reps[name].shape[1:]],
            }
        )
    manifest = {
        "name": model_name,
        "input_shape": [int(d) for d in batch.shape[1:]],
        "output_stage": len(stage_names) - 1,
        "stages": stages,
    }
    _write_bytes(
        os.path.join(out_dir, "manifest.json"),
        (json.dumps(manifest, indent=2) + "\n").encode("ascii"),
    )
    index_path = os.path.join(out_dir, "dumps.json")
    _write_bytes(index_path, (json.dumps(index, indent=2) + "\n").encode("ascii"))
    return index_path


def load_model(spec: str) -> tuple[torch.nn.Module, str]:
    """Resolve 'package.module:attr' into a model instance and a name.

    The attribute may be an nn.Module or a zero-argument factory for one.
    """
    import importlib

    if ":" not in spec:
        raise ExportError(f"model spec must look like 'package.module:attr', got {spec!r}")
    mod_name, attr = spec.split(":", 1)
    try:
        obj = getattr(importlib.import_module(mod_name), attr)
    except (ImportError, AttributeError) as exc:
        raise ExportError(f"cannot resolve model spec {spec!r}: {exc}") from exc
    model = obj() if callable(obj) and not isinstance(obj, torch.nn.Module) else obj
    if not isinstance(model, torch.nn.Module):
        raise ExportError(f"{spec!r} did not yield a torch.nn.Module")
    return model, attr
