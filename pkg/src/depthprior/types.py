"""Domain types shared across the toolkit.

All types are immutable after construction (arrays are frozen read-only) and
safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterator, Mapping, Sequence

import numpy as np

from .errors import DomainError, KeyLookupError

Box = tuple[float, float, float, float]


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


def _validate_box(box: Sequence[float]) -> Box:
    x1, y1, x2, y2 = (float(v) for v in box)
    if not all(np.isfinite(v) for v in (x1, y1, x2, y2)):
        raise DomainError(f"box ({x1}, {y1}, {x2}, {y2}) has non-finite coordinates")
    if not (x1 < x2 and y1 < y2):
        raise DomainError(f"degenerate box ({x1}, {y1}, {x2}, {y2}): requires x1 < x2 and y1 < y2")
    return (x1, y1, x2, y2)


@dataclass(frozen=True)
class DepthMap:
    """Raw depth-estimator output grid.

    Values are inverse depth: larger means closer to the camera. Stored
    row-major with the origin at the top-left pixel. Kept in float64 so
    normalizations are affine-invariant; the on-disk format quantizes to
    float32.
    """

    values: np.ndarray  # (height, width) float64, finite, >= 0

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DomainError(f"depth map must be a 2-D grid with positive size, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise DomainError("depth map contains non-finite values")
        if (arr < 0).any():
            raise DomainError("depth map contains negative values")
        object.__setattr__(self, "values", _freeze(arr))

    @property
    def height(self) -> int:
        return int(self.values.shape[0])

    @property
    def width(self) -> int:
        return int(self.values.shape[1])


@dataclass(frozen=True)
class NormalizedDepthMap:
    """Distance-proportional depth grid in [0, 1], 1 being most distant."""

    values: np.ndarray  # (height, width) float64 in [0, 1]

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DomainError(f"normalized map must be a 2-D grid with positive size, got shape {arr.shape}")
        if not np.isfinite(arr).all() or arr.min() < 0.0 or arr.max() > 1.0:
            raise DomainError("normalized depth values must lie in [0, 1]")
        object.__setattr__(self, "values", _freeze(arr))

    @property
    def height(self) -> int:
        return int(self.values.shape[0])

    @property
    def width(self) -> int:
        return int(self.values.shape[1])


@dataclass(frozen=True)
class Detection:
    """One detector output box with confidence score."""

    image_id: str
    box: Box
    score: float
    class_id: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "box", _validate_box(self.box))
        if not (0.0 <= self.score <= 1.0):
            raise DomainError(f"score {self.score} outside [0, 1]")
        if self.class_id < 0:
            raise DomainError(f"class id {self.class_id} is negative")


@dataclass(frozen=True)
class GroundTruthBox:
    """One annotated object box."""

    image_id: str
    box: Box
    class_id: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "box", _validate_box(self.box))
        if self.class_id < 0:
            raise DomainError(f"class id {self.class_id} is negative")


@dataclass(frozen=True)
class ThresholdCurve:
    """Depth-dependent confidence threshold: tau(d) = clip(tau0 - sum_m psi_m B_m(d), 0, 1).

    `psi` holds the J spline adjustment coefficients over `knot_domain`;
    `rho` records the minimum admissible threshold the curve was fitted for.
    """

    tau0: float
    knot_domain: tuple[float, float]
    psi: tuple[float, ...]
    rho: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.tau0 <= 1.0):
            raise DomainError(f"tau0 {self.tau0} outside [0, 1]")
        lo, hi = (float(v) for v in self.knot_domain)
        if not (0.0 <= lo < hi <= 1.0):
            raise DomainError(f"knot domain ({lo}, {hi}) must satisfy 0 <= lo < hi <= 1")
        object.__setattr__(self, "knot_domain", (lo, hi))
        object.__setattr__(self, "psi", tuple(float(v) for v in self.psi))
        if len(self.psi) < 4:
            raise DomainError(f"curve needs at least 4 coefficients, got {len(self.psi)}")
        if not all(np.isfinite(self.psi)):
            raise DomainError("curve coefficients must be finite")
        if not (0.0 <= self.rho <= 1.0):
            raise DomainError(f"rho {self.rho} outside [0, 1]")

    @property
    def num_coeffs(self) -> int:
        return len(self.psi)


@dataclass(frozen=True)
class LookupTable:
    """Fitted threshold curves keyed by reference threshold, plus the fit configuration."""

    entries: tuple[ThresholdCurve, ...]
    fit_config: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        entries = tuple(self.entries)
        if not entries:
            raise DomainError("lookup table requires at least one entry")
        taus = [c.tau0 for c in entries]
        if any(b <= a for a, b in zip(taus, taus[1:])):
            raise DomainError(f"entry keys must be strictly increasing, got {taus}")
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "fit_config", dict(self.fit_config))

    @property
    def taus(self) -> tuple[float, ...]:
        return tuple(c.tau0 for c in self.entries)

    def curve_for(self, tau0: float) -> ThresholdCurve:
        for curve in self.entries:
            if curve.tau0 == tau0:
                return curve
        raise KeyLookupError(f"no entry for tau0={tau0}; available: {list(self.taus)}")

    def __iter__(self) -> Iterator[ThresholdCurve]:
        return iter(self.entries)


@dataclass(frozen=True)
class MatchReport:
    """TD/ED/MD accounting with depth-binned histograms and a score-depth match-rate grid.

    `per_depth_bins` maps each of "gt", "td", "ed", "md" to a fixed-width
    histogram over normalized depth [0, 1]. `grid` holds per (score bin,
    depth bin) match rates with None marking empty cells; `grid_counts`
    holds the corresponding detection counts.
    """

    td: int
    ed: int
    md: int
    per_depth_bins: Mapping[str, tuple[int, ...]]
    grid: tuple[tuple[float | None, ...], ...]
    grid_counts: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        if min(self.td, self.ed, self.md) < 0:
            raise DomainError("report counts must be non-negative")
        bins = {k: tuple(int(v) for v in vs) for k, vs in dict(self.per_depth_bins).items()}
        missing = {"gt", "td", "ed", "md"} - set(bins)
        if missing:
            raise DomainError(f"per_depth_bins missing series {sorted(missing)}")
        object.__setattr__(self, "per_depth_bins", bins)
        grid = tuple(tuple(None if v is None else float(v) for v in row) for row in self.grid)
        for row in grid:
            for v in row:
                if v is not None and not (0.0 <= v <= 1.0):
                    raise DomainError(f"grid cell {v} outside [0, 1]")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "grid_counts", tuple(tuple(int(v) for v in row) for row in self.grid_counts))

    def to_dict(self) -> dict[str, Any]:
        return {
            "td": self.td,
            "ed": self.ed,
            "md": self.md,
            "per_depth_bins": {k: list(v) for k, v in self.per_depth_bins.items()},
            "grid": [list(row) for row in self.grid],
            "grid_counts": [list(row) for row in self.grid_counts],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "MatchReport":
        return cls(
            td=int(data["td"]),
            ed=int(data["ed"]),
            md=int(data["md"]),
            per_depth_bins={k: tuple(v) for k, v in data["per_depth_bins"].items()},
            grid=tuple(tuple(row) for row in data["grid"]),
            grid_counts=tuple(tuple(row) for row in data["grid_counts"]),
        )
