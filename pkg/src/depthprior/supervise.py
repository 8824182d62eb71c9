"""Training-time supervision artifacts.

Per-object loss weights in every weighting mode (the exponential default plus
the ablation variants), close/distant stratification masks over feature-level
grids, stratified loss aggregation in both normalization conventions, and a
finite-difference check of the stratified gradient decomposition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .depthnorm import downsample_to_level
from .errors import DomainError
from .types import NormalizedDepthMap


class WeightingTag(str, Enum):
    DLW = "dlw"            # 1 + alpha * exp(d_norm)
    RAW_D = "raw_d"        # raw estimator output, no normalization
    INV_ONLY = "inv_only"  # 1 - d_norm: normalized but closeness-proportional
    EXP_NOINV = "exp_noinv"  # exp(1 - d_norm)
    LINEAR = "linear"      # d_norm
    QUADRATIC = "quadratic"  # d_norm ** 2
    BW = "bw"              # one batch-wide scalar: dlw formula on the batch-mean d_norm
    IW = "iw"              # one per-image scalar: dlw formula on the image-mean d_norm


@dataclass(frozen=True)
class WeightingMode:
    tag: WeightingTag = WeightingTag.DLW
    alpha: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "tag", WeightingTag(self.tag))
        if self.tag in (WeightingTag.DLW, WeightingTag.BW, WeightingTag.IW) and self.alpha <= 0:
            raise DomainError(f"alpha must be positive for mode {self.tag.value}, got {self.alpha}")


def dlw_weight(d_norm: float, alpha: float) -> float:
    """Exponential far-object weight 1 + alpha * exp(d_norm); increasing in both arguments."""
    if not (0.0 <= d_norm <= 1.0):
        raise DomainError(f"d_norm {d_norm} outside [0, 1]")
    if alpha <= 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    return 1.0 + alpha * math.exp(d_norm)


def ablation_weight(value: float, mode: WeightingMode) -> float:
    """Weight under one of the ablation weighting modes.

    For BW/IW, `value` is the batch-/image-mean of the per-object normalized
    depths; for RAW_D it is the raw estimator output; otherwise it is the
    object's normalized depth.
    """
    tag = mode.tag
    if tag == WeightingTag.RAW_D:
        if value < 0 or not math.isfinite(value):
            raise DomainError(f"raw depth {value} must be finite and non-negative")
        return float(value)
    if not (0.0 <= value <= 1.0):
        raise DomainError(f"normalized depth {value} outside [0, 1] for mode {tag.value}")
    if tag == WeightingTag.DLW:
        return dlw_weight(value, mode.alpha)
    if tag == WeightingTag.INV_ONLY:
        return 1.0 - value
    if tag == WeightingTag.EXP_NOINV:
        return math.exp(1.0 - value)
    if tag == WeightingTag.LINEAR:
        return float(value)
    if tag == WeightingTag.QUADRATIC:
        return float(value) ** 2
    if tag in (WeightingTag.BW, WeightingTag.IW):
        return dlw_weight(value, mode.alpha)
    raise DomainError(f"unhandled weighting mode {tag!r}")


@dataclass(frozen=True)
class ObjectLoss:
    """Per-object classification and box losses with the object's normalized depth."""

    image_id: str
    object_index: int
    cls_loss: float
    box_loss: float
    depth_norm: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.cls_loss) and math.isfinite(self.box_loss)):
            raise DomainError("losses must be finite")
        if self.cls_loss < 0 or self.box_loss < 0:
            raise DomainError("losses must be non-negative")
        if not (0.0 <= self.depth_norm <= 1.0):
            raise DomainError(f"depth_norm {self.depth_norm} outside [0, 1]")


def object_weights(losses: Sequence[ObjectLoss], mode: WeightingMode) -> list[float]:
    """Per-object weights for `weighted_total_loss` under the given mode."""
    if not losses:
        raise DomainError("needs at least one object loss")
    if mode.tag == WeightingTag.BW:
        mean = sum(o.depth_norm for o in losses) / len(losses)
        return [dlw_weight(mean, mode.alpha)] * len(losses)
    if mode.tag == WeightingTag.IW:
        by_image: dict[str, list[float]] = {}
        for obj in losses:
            by_image.setdefault(obj.image_id, []).append(obj.depth_norm)
        image_weight = {img: dlw_weight(sum(ds) / len(ds), mode.alpha) for img, ds in by_image.items()}
        return [image_weight[o.image_id] for o in losses]
    return [ablation_weight(o.depth_norm, mode) for o in losses]


def weighted_total_loss(losses: Sequence[ObjectLoss], mode: WeightingMode) -> float:
    """(1/N) sum_i w_i (cls_i + box_i) over all objects in the batch."""
    weights = object_weights(losses, mode)
    total = sum(w * (o.cls_loss + o.box_loss) for w, o in zip(weights, losses))
    return total / len(losses)


# ---------------------------------------------------------------------------
# Stratification
# ---------------------------------------------------------------------------

class StratMode(str, Enum):
    ABSOLUTE = "absolute"   # cuts threshold normalized depth directly
    QUANTILE = "quantile"   # cuts are quantile levels of the image's values


@dataclass(frozen=True)
class StratConfig:
    """Close/distant split parameters.

    For the binary split (K=2) the single cut level comes from `beta`; finer
    partitions pass K-1 strictly increasing `cuts` explicitly (quantile
    levels in quantile mode, absolute thresholds otherwise).
    """

    beta: float = 0.5
    mode: StratMode = StratMode.QUANTILE
    lambdas: tuple[float, ...] = (1.0, 2.0)
    cuts: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", StratMode(self.mode))
        object.__setattr__(self, "lambdas", tuple(float(v) for v in self.lambdas))
        if not (0.0 < self.beta < 1.0):
            raise DomainError(f"beta {self.beta} outside (0, 1)")
        if len(self.lambdas) < 2:
            raise DomainError("need at least two strata")
        if any(v <= 0 for v in self.lambdas):
            raise DomainError("stratum weights must be positive")
        if self.cuts is not None:
            cuts = tuple(float(v) for v in self.cuts)
            object.__setattr__(self, "cuts", cuts)
            if len(cuts) != self.num_strata - 1:
                raise DomainError(f"{self.num_strata} strata need {self.num_strata - 1} cuts, got {len(cuts)}")
            if any(not 0.0 < c < 1.0 for c in cuts):
                raise DomainError("cuts must lie in (0, 1)")
            if any(b <= a for a, b in zip(cuts, cuts[1:])):
                raise DomainError("cuts must be strictly increasing")
        elif self.num_strata != 2:
            raise DomainError("explicit cuts are required for more than two strata")

    @property
    def num_strata(self) -> int:
        return len(self.lambdas)

    @property
    def cut_levels(self) -> tuple[float, ...]:
        return self.cuts if self.cuts is not None else (self.beta,)


@dataclass(frozen=True)
class StratMasks:
    """Per-level binary stratum masks; at every cell exactly one stratum is set."""

    levels: tuple[np.ndarray, ...]  # each (K, H_l, W_l) bool

    def __post_init__(self) -> None:
        levels = tuple(np.asarray(m, dtype=bool) for m in self.levels)
        if not levels:
            raise DomainError("masks need at least one level")
        k = levels[0].shape[0]
        for m in levels:
            if m.ndim != 3 or m.shape[0] != k:
                raise DomainError("every level must hold the same number of stratum masks")
            if not (m.sum(axis=0) == 1).all():
                raise DomainError("stratum masks must partition every cell")
            m.flags.writeable = False
        object.__setattr__(self, "levels", levels)

    @property
    def num_strata(self) -> int:
        return int(self.levels[0].shape[0])

    @property
    def num_levels(self) -> int:
        return len(self.levels)


def _resolve_cuts(norm_map: NormalizedDepthMap, cfg: StratConfig) -> np.ndarray:
    levels = np.asarray(cfg.cut_levels, dtype=np.float64)
    if cfg.mode == StratMode.QUANTILE:
        return np.quantile(norm_map.values, levels)
    return levels


def build_strat_masks(
    norm_map: NormalizedDepthMap,
    cfg: StratConfig,
    levels: Sequence[tuple[int, int]],
) -> StratMasks:
    """Assign every cell of every rescaled level to a depth stratum.

    Quantile-mode cuts are taken from the full-resolution image before
    rescaling, so strata stay consistent across levels. Ties go to the more
    distant stratum (value >= cut).
    """
    if not levels:
        raise DomainError("needs at least one feature level")
    cuts = _resolve_cuts(norm_map, cfg)
    k = cfg.num_strata
    out = []
    for h_l, w_l in levels:
        grid = downsample_to_level(norm_map, h_l, w_l).values
        stratum = np.digitize(grid, cuts, right=False)  # value >= cut goes up
        masks = np.stack([stratum == idx for idx in range(k)])
        out.append(masks)
    return StratMasks(levels=tuple(out))


def stratified_loss(
    cls_losses: Sequence[Sequence[np.ndarray]],
    box_losses: Sequence[Sequence[np.ndarray]],
    masks: Sequence[StratMasks],
    lambdas: Sequence[float],
    *,
    per_stratum_mean: bool = False,
) -> float:
    """Combine per-cell losses into the stratified total sum_k lambda_k L_k.

    Default is the masked-sum form, L_k = (1/L) sum_l (1/N) sum_n sum_cells
    (cls+box) * mask_k. With `per_stratum_mean` each stratum is instead
    averaged over its own cell count across all images and levels; an empty
    stratum contributes zero either way.
    """
    n_images = len(masks)
    if n_images == 0 or len(cls_losses) != n_images or len(box_losses) != n_images:
        raise DomainError("losses and masks must cover the same images")
    k = masks[0].num_strata
    n_levels = masks[0].num_levels
    sums = np.zeros(k)
    counts = np.zeros(k, dtype=np.int64)
    for cls_img, box_img, mask_img in zip(cls_losses, box_losses, masks):
        if mask_img.num_strata != k or mask_img.num_levels != n_levels:
            raise DomainError("inconsistent stratum or level counts across images")
        if len(cls_img) != n_levels or len(box_img) != n_levels:
            raise DomainError("per-level losses must match the mask level count")
        for cls_grid, box_grid, level_masks in zip(cls_img, box_img, mask_img.levels):
            cls_grid = np.asarray(cls_grid, dtype=np.float64)
            box_grid = np.asarray(box_grid, dtype=np.float64)
            if cls_grid.shape != level_masks.shape[1:] or box_grid.shape != level_masks.shape[1:]:
                raise DomainError(
                    f"loss grid shape {cls_grid.shape} does not match mask shape {level_masks.shape[1:]}")
            combined = cls_grid + box_grid
            for idx in range(k):
                sums[idx] += combined[level_masks[idx]].sum()
                counts[idx] += int(level_masks[idx].sum())
    if per_stratum_mean:
        terms = np.divide(sums, counts, out=np.zeros(k), where=counts > 0)
    else:
        terms = sums / (n_levels * n_images)
    lambdas = np.asarray(lambdas, dtype=np.float64)
    if lambdas.shape != (k,):
        raise DomainError(f"expected {k} stratum weights, got {lambdas.shape}")
    return float(lambdas @ terms)


# ---------------------------------------------------------------------------
# Gradient decomposition check
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ToyQuadratic:
    """Samples with losses 0.5 * (a_i . theta - b_i)^2; gradients are exact."""

    a: np.ndarray  # (n, p)
    b: np.ndarray  # (n,)

    def __post_init__(self) -> None:
        a = np.asarray(self.a, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        if a.ndim != 2 or b.shape != (a.shape[0],):
            raise DomainError("need a (n, p) coefficient matrix and n targets")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    def loss(self, i: int, theta: np.ndarray) -> float:
        return 0.5 * float(self.a[i] @ theta - self.b[i]) ** 2

    def grad(self, i: int, theta: np.ndarray) -> np.ndarray:
        return (float(self.a[i] @ theta - self.b[i])) * self.a[i]


def stratified_toy_loss(
    quad: ToyQuadratic,
    theta: np.ndarray,
    strata: Sequence[Sequence[int]],
    lambdas: Sequence[float],
) -> float:
    """sum_k lambda_k * mean of per-sample losses in stratum k (empty strata contribute 0)."""
    total = 0.0
    for lam, members in zip(lambdas, strata):
        if not members:
            continue
        total += lam * sum(quad.loss(i, theta) for i in members) / len(members)
    return total


def stratified_toy_gradient(
    quad: ToyQuadratic,
    theta: np.ndarray,
    strata: Sequence[Sequence[int]],
    lambdas: Sequence[float],
) -> np.ndarray:
    """sum_k (lambda_k / |S_k|) sum_{i in S_k} grad_i: the per-stratum scaled decomposition."""
    out = np.zeros_like(np.asarray(theta, dtype=np.float64))
    for lam, members in zip(lambdas, strata):
        if not members:
            continue
        scale = lam / len(members)
        for i in members:
            out += scale * quad.grad(i, theta)
    return out


def strat_gradient_check(
    quad: ToyQuadratic,
    theta: np.ndarray,
    strata: Sequence[Sequence[int]],
    lambdas: Sequence[float],
    *,
    step: float = 1e-6,
) -> float:
    """Max abs deviation between the analytic decomposition and central differences."""
    if not any(len(s) > 0 for s in strata):
        raise DomainError("at least one stratum must be nonempty")
    theta = np.asarray(theta, dtype=np.float64)
    analytic = stratified_toy_gradient(quad, theta, strata, lambdas)
    numeric = np.zeros_like(theta)
    for j in range(theta.size):
        hi = theta.copy()
        lo = theta.copy()
        hi[j] += step
        lo[j] -= step
        numeric[j] = (
            stratified_toy_loss(quad, hi, strata, lambdas)
            - stratified_toy_loss(quad, lo, strata, lambdas)
        ) / (2 * step)
    return float(np.abs(analytic - numeric).max())
