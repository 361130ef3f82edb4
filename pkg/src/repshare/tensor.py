"""Dense float32 tensors and bit-exact file I/O.

Every value the toolkit touches (representations, weights, evaluation
inputs) is a row-major float32 array stored in a strict subset of the
NPY v1.0 format:

  magic ``\\x93NUMPY``, version ``\\x01\\x00``, 2-byte little-endian
  header length, then an ASCII header literal
  ``{'descr': '<f4', 'fortran_order': False, 'shape': (d1, d2, ...), }``
  space-padded so the whole preamble is a multiple of 64 bytes and
  terminated by a newline, followed by the raw little-endian float32
  payload in C order.

The reader rejects anything outside the subset instead of coercing.
"""

from __future__ import annotations

import ast
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, IoError, ShapeError, UnsupportedDtype, UnsupportedLayout

MAGIC = b"\x93NUMPY"
VERSION = b"\x01\x00"
HEADER_ALIGN = 64


def check_tensor(arr: np.ndarray, what: str = "tensor") -> np.ndarray:
    """Validate the tensor invariants: float32, rank >= 1, positive dims, finite."""
    if not isinstance(arr, np.ndarray):
        raise FormatError(f"{what}: expected ndarray, got {type(arr).__name__}")
    if arr.dtype != np.float32:
        raise UnsupportedDtype(f"{what}: dtype must be float32, got {arr.dtype}")
    if arr.ndim < 1:
        raise FormatError(f"{what}: scalars are rejected (minimum rank 1)")
    if any(d < 1 for d in arr.shape):
        raise FormatError(f"{what}: shape entries must be positive, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"{what}: contains NaN or Inf")
    return arr


def _build_header(shape: tuple[int, ...]) -> bytes:
    literal = "{'descr': '<f4', 'fortran_order': False, 'shape': %s, }" % repr(tuple(shape))
    base = len(MAGIC) + len(VERSION) + 2 + len(literal) + 1
    pad = (HEADER_ALIGN - base % HEADER_ALIGN) % HEADER_ALIGN
    header = literal.encode("ascii") + b" " * pad + b"\n"
    if len(header) >= 1 << 16:
        raise FormatError(f"header too long for v1.0 ({len(header)} bytes)")
    return header


def tensor_bytes(arr: np.ndarray) -> bytes:
    """Serialize to the NPY subset; deterministic, byte-identical per input."""
    check_tensor(arr)
    header = _build_header(arr.shape)
    return (
        MAGIC
        + VERSION
        + len(header).to_bytes(2, "little")
        + header
        + np.ascontiguousarray(arr).tobytes()
    )


def atomic_write_bytes(path: str, data: bytes) -> None:
    """Write via a temp file in the same directory and rename into place."""
    directory = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def write_tensor(arr: np.ndarray, path: str) -> None:
    """Write ``arr`` to ``path`` in the NPY subset (atomic, deterministic)."""
    atomic_write_bytes(path, tensor_bytes(arr))


def _parse_header(raw: bytes, path: str) -> tuple[tuple[int, ...], int]:
    """Return (shape, payload_offset), enforcing the subset byte-exactly."""
    if len(raw) < 10 or raw[:6] != MAGIC:
        raise FormatError(f"{path}: bad magic bytes")
    if raw[6:8] != VERSION:
        raise FormatError(f"{path}: unsupported NPY version {raw[6]}.{raw[7]}")
    hlen = int.from_bytes(raw[8:10], "little")
    offset = 10 + hlen
    if len(raw) < offset:
        raise FormatError(f"{path}: truncated header")
    if offset % HEADER_ALIGN != 0:
        raise FormatError(f"{path}: preamble length {offset} not a multiple of {HEADER_ALIGN}")
    header = raw[10:offset]
    if not header.endswith(b"\n"):
        raise FormatError(f"{path}: header not newline-terminated")
    try:
        text = header.decode("ascii")
        meta = ast.literal_eval(text.strip())
    except (UnicodeDecodeError, ValueError, SyntaxError) as exc:
        raise FormatError(f"{path}: unparseable header: {exc}") from exc
    if not isinstance(meta, dict) or set(meta) != {"descr", "fortran_order", "shape"}:
        raise FormatError(f"{path}: header keys must be descr/fortran_order/shape")
    if meta["descr"] != "<f4":
        raise UnsupportedDtype(f"{path}: dtype {meta['descr']!r}, only '<f4' supported")
    if meta["fortran_order"] is not False:
        raise UnsupportedLayout(f"{path}: fortran_order must be False")
    shape = meta["shape"]
    if (
        not isinstance(shape, tuple)
        or len(shape) < 1
        or not all(isinstance(d, int) and d >= 1 for d in shape)
    ):
        raise FormatError(f"{path}: shape must be a non-empty tuple of positive ints, got {shape!r}")
    return tuple(shape), offset


def read_tensor_shape(path: str) -> tuple[int, ...]:
    """Read only the header and return the stored shape (payload untouched)."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read(10)
            if len(raw) == 10 and raw[:6] == MAGIC:
                hlen = int.from_bytes(raw[8:10], "little")
                raw += fh.read(hlen)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    shape, _ = _parse_header(raw, path)
    return shape


def read_tensor(path: str) -> np.ndarray:
    """Read a tensor, bit-exactly reversing :func:`write_tensor`."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    shape, offset = _parse_header(raw, path)
    count = 1
    for d in shape:
        count *= d
    payload = raw[offset:]
    if len(payload) != 4 * count:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {4 * count}")
    arr = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32, copy=True)
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"{path}: contains NaN or Inf")
    arr.setflags(write=False)
    return arr


def as_representation(arr: np.ndarray) -> np.ndarray:
    """Normalize a representation to rank 4 by appending singleton dims.

    (n,) -> (n,1,1,1); (n,C) -> (n,C,1,1); (n,C,H) -> (n,C,H,1).
    """
    if arr.ndim > 4:
        raise ShapeError(f"representation rank {arr.ndim} > 4 for shape {arr.shape}")
    while arr.ndim < 4:
        arr = arr.reshape(arr.shape + (1,))
    return arr


def flatten_features(rep: np.ndarray) -> np.ndarray:
    """Flatten each example's (C,H,W) block row-major into one feature row."""
    return rep.reshape(rep.shape[0], -1)


@dataclass(frozen=True)
class RepresentationSet:
    """Per-stage representation dumps from one model on one evaluation batch."""

    model: str
    stages: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.stages:
            raise ShapeError("representation set has no stages")
        ns = {rep.shape[0] for rep in self.stages.values()}
        if len(ns) != 1:
            raise ShapeError(f"{self.model}: stages disagree on example count: {sorted(ns)}")
        if self.n < 2:
            raise ShapeError(f"{self.model}: need n >= 2 examples, got {self.n}")

    @property
    def n(self) -> int:
        return next(iter(self.stages.values())).shape[0]

    @property
    def stage_ids(self) -> list[int]:
        return sorted(self.stages)

    def __getitem__(self, stage_id: int) -> np.ndarray:
        return self.stages[stage_id]


def write_dumps(reps: RepresentationSet, out_dir: str) -> str:
    """Write one NPY per stage under ``out_dir/<model>/`` plus a dumps.json index."""
    index = {"model": reps.model, "n": reps.n, "stages": {}}
    for sid in reps.stage_ids:
        rel = os.path.join(reps.model, f"{sid}.npy")
        write_tensor(reps.stages[sid], os.path.join(out_dir, rel))
        index["stages"][str(sid)] = rel
    index_path = os.path.join(out_dir, "dumps.json")
    atomic_write_bytes(index_path, (json.dumps(index, indent=2) + "\n").encode("ascii"))
    return index_path


def read_dumps(index_path: str) -> RepresentationSet:
    """Load a dump set from its dumps.json index; reps normalized to rank 4."""
    try:
        with open(index_path, "r", encoding="ascii") as fh:
            index = json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read {index_path}: {exc}") from exc
    except (ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"{index_path}: invalid dumps index: {exc}") from exc
    base = os.path.dirname(os.path.abspath(index_path))
    stages = {}
    for key, rel in index["stages"].items():
        rep = as_representation(read_tensor(os.path.join(base, rel)))
        stages[int(key)] = rep
    reps = RepresentationSet(model=index["model"], stages=stages)
    if reps.n != index["n"]:
        raise FormatError(
            f"{index_path}: index declares n={index['n']} but dumps have n={reps.n}"
        )
    return reps
