"""Depth normalizations: batch-level, per-image, box-region mean, and level rescaling.

Raw maps hold inverse depth (larger = closer); every normalization here
inverts to distance-proportional values in [0, 1] with 1 most distant. A
degenerate range (max == min) maps to all zeros: no depth signal means no
reweighting signal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, KeyLookupError
from .types import Box, DepthMap, NormalizedDepthMap


@dataclass(frozen=True)
class BatchDepth:
    """Depth maps from one training batch plus their global value range."""

    maps: tuple[DepthMap, ...]
    d_min_batch: float
    d_max_batch: float

    @classmethod
    def from_maps(cls, maps: Sequence[DepthMap]) -> "BatchDepth":
        if not maps:
            raise DomainError("batch requires at least one depth map")
        d_min = min(float(m.values.min()) for m in maps)
        d_max = max(float(m.values.max()) for m in maps)
        return cls(maps=tuple(maps), d_min_batch=d_min, d_max_batch=d_max)

    def __post_init__(self) -> None:
        if not self.maps:
            raise DomainError("batch requires at least one depth map")
        if self.d_min_batch > self.d_max_batch:
            raise DomainError("batch min exceeds batch max")


def _invert_normalize(values: np.ndarray, d_min: float, d_max: float) -> np.ndarray:
    if d_max == d_min:
        return np.zeros_like(values, dtype=np.float64)
    out = 1.0 - (values.astype(np.float64) - d_min) / (d_max - d_min)
    return np.clip(out, 0.0, 1.0)


def normalize_batch(batch: BatchDepth) -> list[NormalizedDepthMap]:
    """Normalize every map against the batch-wide range, inverted to distance."""
    return [
        NormalizedDepthMap(_invert_normalize(m.values, batch.d_min_batch, batch.d_max_batch))
        for m in batch.maps
    ]


def normalize_image(depth_map: DepthMap) -> NormalizedDepthMap:
    """Normalize one map against its own range, inverted to distance."""
    values = depth_map.values
    return NormalizedDepthMap(_invert_normalize(values, float(values.min()), float(values.max())))


def _box_pixel_range(lo: float, hi: float, size: int) -> tuple[int, int]:
    """Integer pixels p with lo <= p <= hi, clamped to [0, size); nearest pixel for thin boxes."""
    p_lo = max(0, math.ceil(lo))
    p_hi = min(size - 1, math.floor(hi))
    if p_lo > p_hi:
        center = min(max((lo + hi) / 2.0, 0.0), float(size - 1))
        p_lo = p_hi = int(round(center))
    return p_lo, p_hi


def box_region_mean(depth_map: DepthMap, box: Box) -> float:
    """Mean raw value over the integer pixels covered by the box."""
    x1, y1, x2, y2 = box
    h, w = depth_map.height, depth_map.width
    if x2 < 0 or y2 < 0 or x1 > w - 1 or y1 > h - 1:
        raise DomainError(f"box ({x1}, {y1}, {x2}, {y2}) lies fully outside a {w}x{h} image")
    w_lo, w_hi = _box_pixel_range(x1, x2, w)
    h_lo, h_hi = _box_pixel_range(y1, y2, h)
    return float(depth_map.values[h_lo:h_hi + 1, w_lo:w_hi + 1].mean(dtype=np.float64))


def box_depth(
    depth_map: DepthMap,
    box: Box,
    *,
    d_min: float | None = None,
    d_max: float | None = None,
) -> float:
    """Mean inverse depth over the box region, min-max normalized and inverted.

    `d_min`/`d_max` default to the map's own range (per-image normalization);
    pass batch extrema to normalize against a whole batch instead.
    """
    region_mean = box_region_mean(depth_map, box)
    if d_min is None:
        d_min = float(depth_map.values.min())
    if d_max is None:
        d_max = float(depth_map.values.max())
    if d_max == d_min:
        return 0.0
    return float(min(max(1.0 - (region_mean - d_min) / (d_max - d_min), 0.0), 1.0))


class DepthLookup:
    """Box-depth evaluation over a corpus of per-image depth maps.

    Caches each map's value range so repeated box queries stay cheap; missing
    images raise a lookup error naming the image.
    """

    def __init__(self, depth_maps: dict[str, DepthMap] | "DepthLookup"):
        if isinstance(depth_maps, DepthLookup):
            self._maps = depth_maps._maps
            self._ranges = depth_maps._ranges
            return
        self._maps = dict(depth_maps)
        self._ranges: dict[str, tuple[float, float]] = {}

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._maps

    def map_for(self, image_id: str) -> DepthMap:
        try:
            return self._maps[image_id]
        except KeyError:
            raise KeyLookupError(f"no depth map for image {image_id!r}") from None

    def depth_of(self, image_id: str, box: Box) -> float:
        depth_map = self.map_for(image_id)
        if image_id not in self._ranges:
            values = depth_map.values
            self._ranges[image_id] = (float(values.min()), float(values.max()))
        d_min, d_max = self._ranges[image_id]
        return box_depth(depth_map, box, d_min=d_min, d_max=d_max)


DepthMaps = dict[str, DepthMap] | DepthLookup


def _pool_weights(src: int, dst: int) -> np.ndarray:
    """(dst, src) area-overlap weight matrix; each row sums to 1."""
    weights = np.zeros((dst, src), dtype=np.float64)
    cell = src / dst
    for i in range(dst):
        lo = i * cell
        hi = (i + 1) * cell
        j_lo = int(math.floor(lo))
        j_hi = min(int(math.ceil(hi)), src)
        for j in range(j_lo, j_hi):
            overlap = min(hi, j + 1) - max(lo, j)
            if overlap > 0:
                weights[i, j] = overlap / cell
    return weights


def downsample_to_level(norm_map: NormalizedDepthMap, h_l: int, w_l: int) -> NormalizedDepthMap:
    """Area-average pooling onto an (h_l, w_l) grid, handling fractional source cells."""
    h, w = norm_map.height, norm_map.width
    if not (1 <= h_l <= h and 1 <= w_l <= w):
        raise DomainError(f"target size {h_l}x{w_l} must satisfy 1 <= target <= source ({h}x{w})")
    if h_l == h and w_l == w:
        return norm_map
    rows = _pool_weights(h, h_l)
    cols = _pool_weights(w, w_l)
    pooled = rows @ norm_map.values @ cols.T
    return NormalizedDepthMap(np.clip(pooled, 0.0, 1.0))
