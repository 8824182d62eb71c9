"""Artifact loading and in-loop application.

File formats mirrored here (DPM1 grids, weight-record JSONL, lookup-table
JSON v1) are validated on load; unknown version tags are rejected. The spline
deployment math matches the producer: clamped uniform cubic basis, threshold
clip(tau0 - sum psi_m B_m(d), 0, 1), box depth as the inverted normalized
box-region mean.
"""

from __future__ import annotations

import json
import math
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

DPM1_MAGIC = b"DPM1"
LUT_FORMAT = "depthprior-lut-v1"
_HEADER = struct.Struct("<4sII")
_MASK_NAME = re.compile(r"^(?P<image>.+)\.L(?P<level>\d+)\.K(?P<stratum>\d+)\.dpm$")
_DEGREE = 3


class BundleFormatError(ValueError):
    """An artifact file is malformed or carries an unknown version tag."""


class MissingWeightError(KeyError):
    """A loss refers to an object with no weight record."""


def read_depth_grid(path: str | Path) -> np.ndarray:
    """Read a DPM1 file into a float (H, W) grid."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise BundleFormatError(f"{path}: truncated header")
    magic, width, height = _HEADER.unpack_from(data)
    if magic != DPM1_MAGIC:
        raise BundleFormatError(f"{path}: bad magic {magic!r}")
    if len(data) != _HEADER.size + 4 * width * height:
        raise BundleFormatError(f"{path}: payload size mismatch for {width}x{height}")
    grid = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).astype(np.float64)
    if not np.isfinite(grid).all():
        raise BundleFormatError(f"{path}: non-finite values")
    return grid.reshape(height, width)


@dataclass(frozen=True)
class CurveEntry:
    tau0: float
    domain: tuple[float, float]
    psi: tuple[float, ...]
    rho: float


@dataclass(frozen=True)
class AdapterBundle:
    """Validated in-memory mirrors of the produced artifacts."""

    weights: dict[str, dict[int, float]] = field(default_factory=dict)
    depth_norms: dict[str, dict[int, float]] = field(default_factory=dict)
    masks: dict[tuple[str, int, int], np.ndarray] = field(default_factory=dict)
    curves: dict[float, CurveEntry] = field(default_factory=dict)

    def weight_for(self, image_id: str, object_index: int) -> float:
        try:
            return self.weights[image_id][object_index]
        except KeyError:
            raise MissingWeightError(
                f"no weight record for object ({image_id!r}, {object_index})") from None

    def mask_for(self, image_id: str, level: int, stratum: int) -> np.ndarray:
        try:
            return self.masks[(image_id, level, stratum)]
        except KeyError:
            raise KeyError(f"no mask for ({image_id!r}, level {level}, stratum {stratum})") from None

    def curve_for(self, tau0: float) -> CurveEntry:
        try:
            return self.curves[tau0]
        except KeyError:
            raise KeyError(
                f"no lookup entry for tau0={tau0}; available: {sorted(self.curves)}") from None

    def mask_levels(self, image_id: str) -> list[int]:
        return sorted({lvl for (img, lvl, _k) in self.masks if img == image_id})

    def mask_strata(self, image_id: str) -> list[int]:
        return sorted({k for (img, _lvl, k) in self.masks if img == image_id})


def _load_weights(path: str | Path) -> tuple[dict[str, dict[int, float]], dict[str, dict[int, float]]]:
    weights: dict[str, dict[int, float]] = {}
    depth_norms: dict[str, dict[int, float]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                image = str(record["image"])
                index = int(record["object_index"])
                weight = float(record["weight"])
                depth = float(record["depth_norm"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise BundleFormatError(f"{path}: bad weight record on line {lineno}: {exc}") from exc
            if index in weights.setdefault(image, {}):
                raise BundleFormatError(f"{path}: duplicate object ({image!r}, {index}) on line {lineno}")
            weights[image][index] = weight
            depth_norms.setdefault(image, {})[index] = depth
    return weights, depth_norms


def _load_masks(mask_dir: str | Path) -> dict[tuple[str, int, int], np.ndarray]:
    masks: dict[tuple[str, int, int], np.ndarray] = {}
    for path in sorted(Path(mask_dir).glob("*.dpm")):
        match = _MASK_NAME.match(path.name)
        if match is None:
            continue
        grid = read_depth_grid(path)
        if not np.isin(grid, (0.0, 1.0)).all():
            raise BundleFormatError(f"{path}: mask values must be 0 or 1")
        key = (match["image"], int(match["level"]), int(match["stratum"]))
        masks[key] = grid.astype(bool)
    return masks


def _load_lut(path: str | Path) -> dict[float, CurveEntry]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise BundleFormatError(f"{path}: malformed JSON: {exc.msg}") from exc
    if not isinstance(data, Mapping) or data.get("format") != LUT_FORMAT:
        raise BundleFormatError(
            f"{path}: unknown lookup-table format tag {data.get('format')!r}")
    curves: dict[float, CurveEntry] = {}
    for entry in data.get("entries", []):
        tau0 = float(entry["tau0"])
        if tau0 in curves:
            raise BundleFormatError(f"{path}: duplicate tau0 {tau0}")
        psi = tuple(float(v) for v in entry["psi"])
        if len(psi) < 4:
            raise BundleFormatError(f"{path}: entry {tau0} needs at least 4 coefficients")
        curves[tau0] = CurveEntry(
            tau0=tau0,
            domain=(float(entry["knot_domain"][0]), float(entry["knot_domain"][1])),
            psi=psi,
            rho=float(entry["rho"]),
        )
    if not curves:
        raise BundleFormatError(f"{path}: lookup table has no entries")
    return curves


def load_bundle(
    weights_path: str | Path | None = None,
    mask_dir: str | Path | None = None,
    lut_path: str | Path | None = None,
) -> AdapterBundle:
    """Load any subset of the artifacts into one validated bundle."""
    weights: dict[str, dict[int, float]] = {}
    depth_norms: dict[str, dict[int, float]] = {}
    if weights_path is not None:
        weights, depth_norms = _load_weights(weights_path)
    masks = _load_masks(mask_dir) if mask_dir is not None else {}
    curves = _load_lut(lut_path) if lut_path is not None else {}
    return AdapterBundle(weights=weights, depth_norms=depth_norms, masks=masks, curves=curves)


# ---------------------------------------------------------------------------
# Training-side application
# ---------------------------------------------------------------------------

def apply_weights(bundle: AdapterBundle, losses: Iterable[Mapping[str, Any]]) -> float:
    """(1/N) sum w_i (cls_i + box_i) with weights looked up per object.

    Each loss is a mapping with image, object_index, cls_loss, box_loss.
    """
    total = 0.0
    count = 0
    for loss in losses:
        weight = bundle.weight_for(str(loss["image"]), int(loss["object_index"]))
        total += weight * (float(loss["cls_loss"]) + float(loss["box_loss"]))
        count += 1
    if count == 0:
        raise ValueError("needs at least one loss entry")
    return total / count


def stratified_loss_terms(
    bundle: AdapterBundle,
    image_id: str,
    cls_losses: Sequence[np.ndarray],
    box_losses: Sequence[np.ndarray],
) -> list[float]:
    """Per-stratum loss terms for one image: (1/L) sum_l sum_cells (cls+box) * mask_k.

    Callers combine the returned terms with their own stratum weights.
    """
    levels = bundle.mask_levels(image_id)
    strata = bundle.mask_strata(image_id)
    if not levels:
        raise KeyError(f"no masks loaded for image {image_id!r}")
    if len(cls_losses) != len(levels) or len(box_losses) != len(levels):
        raise ValueError(f"expected loss grids for {len(levels)} levels")
    terms = [0.0] * len(strata)
    for level, cls_grid, box_grid in zip(levels, cls_losses, box_losses):
        combined = np.asarray(cls_grid, dtype=np.float64) + np.asarray(box_grid, dtype=np.float64)
        for idx, stratum in enumerate(strata):
            mask = bundle.mask_for(image_id, level, stratum)
            if combined.shape != mask.shape:
                raise ValueError(
                    f"loss grid shape {combined.shape} does not match mask {mask.shape} at level {level}")
            terms[idx] += float(combined[mask].sum())
    return [t / len(levels) for t in terms]


# ---------------------------------------------------------------------------
# Inference-side application
# ---------------------------------------------------------------------------

def _basis_values(entry: CurveEntry, d: float) -> np.ndarray:
    lo, hi = entry.domain
    d = min(max(d, lo), hi)
    n = len(entry.psi)
    knots = np.concatenate(([lo] * _DEGREE, np.linspace(lo, hi, n - 2), [hi] * _DEGREE))
    if d >= hi:
        span = n - 1
    elif d <= lo:
        span = _DEGREE
    else:
        span = int(np.searchsorted(knots, d, side="right")) - 1
    values = np.zeros(_DEGREE + 1)
    left = np.zeros(_DEGREE + 1)
    right = np.zeros(_DEGREE + 1)
    values[0] = 1.0
    for j in range(1, _DEGREE + 1):
        left[j] = d - knots[span + 1 - j]
        right[j] = knots[span + j] - d
        saved = 0.0
        for r in range(j):
            temp = values[r] / (right[r + 1] + left[j - r])
            values[r] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        values[j] = saved
    out = np.zeros(n)
    out[span - _DEGREE:span + 1] = values
    return out


def threshold_for_depth(entry: CurveEntry, d: float) -> float:
    """clip(tau0 - sum psi_m B_m(d), 0, 1)."""
    adjustment = float(_basis_values(entry, d) @ np.asarray(entry.psi))
    return min(max(entry.tau0 - adjustment, 0.0), 1.0)


def _box_depth(grid: np.ndarray, box: Sequence[float]) -> float:
    x1, y1, x2, y2 = (float(v) for v in box)
    h, w = grid.shape
    if x2 < 0 or y2 < 0 or x1 > w - 1 or y1 > h - 1:
        raise ValueError(f"box ({x1}, {y1}, {x2}, {y2}) lies fully outside a {w}x{h} grid")

    def pixel_range(lo: float, hi: float, size: int) -> tuple[int, int]:
        p_lo = max(0, math.ceil(lo))
        p_hi = min(size - 1, math.floor(hi))
        if p_lo > p_hi:
            center = min(max((lo + hi) / 2.0, 0.0), float(size - 1))
            p_lo = p_hi = int(round(center))
        return p_lo, p_hi

    w_lo, w_hi = pixel_range(x1, x2, w)
    h_lo, h_hi = pixel_range(y1, y2, h)
    region_mean = float(grid[h_lo:h_hi + 1, w_lo:w_hi + 1].mean())
    d_min = float(grid.min())
    d_max = float(grid.max())
    if d_max == d_min:
        return 0.0
    return min(max(1.0 - (region_mean - d_min) / (d_max - d_min), 0.0), 1.0)


def filter_detections(
    bundle: AdapterBundle,
    detections: Sequence[Mapping[str, Any]],
    depth_map: np.ndarray | str | Path,
    tau0: float,
) -> list[Mapping[str, Any]]:
    """Keep detections scoring at or above the depth-adjusted threshold; order preserved.

    Detections are mappings carrying x1, y1, x2, y2, score (extra keys pass
    through untouched). The depth map is a raw inverse-depth grid or a DPM1
    path.
    """
    entry = bundle.curve_for(float(tau0))
    grid = depth_map if isinstance(depth_map, np.ndarray) else read_depth_grid(depth_map)
    grid = np.asarray(grid, dtype=np.float64)
    kept = []
    for det in detections:
        box = (det["x1"], det["y1"], det["x2"], det["y2"])
        threshold = threshold_for_depth(entry, _box_depth(grid, box))
        if float(det["score"]) >= threshold:
            kept.append(det)
    return kept
