"""Shape adaptation of a donor representation to a target stage's shape.

Channel counts are matched by uniform index sampling (with repetition when
the target is wider), spatial resolutions by nearest-neighbor index
mapping; both directions use the same floor-based rule, so no value is
ever interpolated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

Shape3 = tuple[int, int, int]


@dataclass(frozen=True)
class AdaptSpec:
    """Recipe transforming (C_s,H_s,W_s) activations into (C_t,H_t,W_t)."""

    src_shape: Shape3
    dst_shape: Shape3
    channel_map: tuple[int, ...]
    spatial_mode: str  # "identity" | "nearest-resize"

    def to_dict(self) -> dict:
        return {
            "src_shape": list(self.src_shape),
            "dst_shape": list(self.dst_shape),
            "channel_map": list(self.channel_map),
            "spatial_mode": self.spatial_mode,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AdaptSpec":
        return cls(
            src_shape=tuple(data["src_shape"]),
            dst_shape=tuple(data["dst_shape"]),
            channel_map=tuple(data["channel_map"]),
            spatial_mode=data["spatial_mode"],
        )


def plan_adapt(src: Shape3, dst: Shape3) -> AdaptSpec:
    """Build the adapter spec for a (C,H,W) -> (C,H,W) transform.

    channel_map[j] = floor(j * C_s / C_t): uniform subsampling when the
    donor is wider, uniform repetition when it is narrower, identity when
    equal. Spatial mode is identity iff the resolutions already agree.
    """
    cs, hs, ws = src
    ct, ht, wt = dst
    if min(cs, hs, ws, ct, ht, wt) < 1:
        raise ShapeError(f"shapes must be positive, got {src} -> {dst}")
    channel_map = tuple(j * cs // ct for j in range(ct))
    spatial = "identity" if (hs, ws) == (ht, wt) else "nearest-resize"
    return AdaptSpec(tuple(src), tuple(dst), channel_map, spatial)


def apply_adapt(spec: AdaptSpec, rep: np.ndarray) -> np.ndarray:
    """Apply an adapter to a rank-4 (n, C_s, H_s, W_s) representation."""
    if rep.ndim != 4:
        raise ShapeError(f"expected rank-4 representation, got shape {rep.shape}")
    if tuple(rep.shape[1:]) != tuple(spec.src_shape):
        raise ShapeError(
            f"representation trailing shape {tuple(rep.shape[1:])} "
            f"does not match adapter source {spec.src_shape}"
        )
    cs, hs, ws = spec.src_shape
    ct, ht, wt = spec.dst_shape
    if spec.spatial_mode == "identity" and tuple(spec.channel_map) == tuple(range(cs)) and cs == ct:
        return rep
    out = rep[:, list(spec.channel_map), :, :]
    if spec.spatial_mode == "nearest-resize":
        rows = [u * hs // ht for u in range(ht)]
        cols = [v * ws // wt for v in range(wt)]
        out = out[:, :, rows, :][:, :, :, cols]
    return out
