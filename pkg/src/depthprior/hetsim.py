"""Desk-scale verification of the depth-variance theory.

Samples losses whose variance grows as sigma0^2 d^2 + sigma_eps^2, and runs a
tiny seeded SGD regression under different sample weightings to expose the
resulting depth bias and its compensation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class SimConfig:
    kappa: float = 1.0
    alpha_signal: float = 1.0
    sigma_eps: float = 0.1
    n_samples: int = 10_000
    depth_range: tuple[float, float] = (0.05, 1.0)
    seed: int = 0
    mean_level: float = 2.0  # mean of the sampled losses in the bias experiment

    def __post_init__(self) -> None:
        if self.kappa <= 0:
            raise DomainError("kappa must be positive")
        if self.alpha_signal < 0:
            raise DomainError("alpha_signal must be non-negative")
        if self.sigma_eps < 0:
            raise DomainError("sigma_eps must be non-negative")
        if self.n_samples < 1:
            raise DomainError("n_samples must be at least 1")
        lo, hi = self.depth_range
        if lo <= 0 or hi < lo:
            raise DomainError(f"depth range ({lo}, {hi}) must satisfy 0 < lo <= hi")

    @property
    def sigma0_sq(self) -> float:
        return self.alpha_signal ** 2 / self.kappa


def loss_variance(d: np.ndarray | float, sigma0_sq: float, sigma_eps_sq: float) -> np.ndarray | float:
    """Conditional loss variance sigma0^2 d^2 + sigma_eps^2."""
    return sigma0_sq * np.square(d) + sigma_eps_sq


def compensating_weight(d: np.ndarray | float, sigma0_sq: float, sigma_eps_sq: float):
    """Variance-proportional weight; w(2d)/w(d) tends to 4 as sigma_eps vanishes."""
    return loss_variance(d, sigma0_sq, sigma_eps_sq)


def sample_losses(cfg: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    """Depths uniform over the range, zero-mean Gaussian losses with the model variance."""
    rng = np.random.default_rng(cfg.seed)
    lo, hi = cfg.depth_range
    depths = rng.uniform(lo, hi, cfg.n_samples)
    std = np.sqrt(loss_variance(depths, cfg.sigma0_sq, cfg.sigma_eps ** 2))
    losses = rng.normal(0.0, 1.0, cfg.n_samples) * std
    return depths, losses


def binned_variance(
    depths: np.ndarray, losses: np.ndarray, bins: int, depth_range: tuple[float, float]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(mean d^2, sample variance, count) per uniform depth bin; empty bins give NaN."""
    lo, hi = depth_range
    edges = np.linspace(lo, hi, bins + 1)
    idx = np.clip(np.digitize(depths, edges) - 1, 0, bins - 1)
    mean_d2 = np.full(bins, math.nan)
    variances = np.full(bins, math.nan)
    counts = np.zeros(bins, dtype=np.int64)
    for b in range(bins):
        mask = idx == b
        counts[b] = int(mask.sum())
        if counts[b] >= 2:
            mean_d2[b] = float(np.mean(depths[mask] ** 2))
            variances[b] = float(np.var(losses[mask], ddof=1))
    return mean_d2, variances, counts


class Weighting(str, Enum):
    UNIFORM = "uniform"
    COMPENSATING = "compensating"
    DLW_EXPONENTIAL = "dlw-exponential"


@dataclass(frozen=True)
class BiasTrajectory:
    """Per-depth-bin squared error of the trained regressor at epoch checkpoints."""

    epochs: tuple[int, ...]
    bin_centers: tuple[float, ...]
    errors: np.ndarray  # (len(epochs), bins)

    def final_errors(self) -> np.ndarray:
        return self.errors[-1]

    def far_near_gap(self) -> float:
        """Mean error over the far half of the bins minus the near half, at the final epoch."""
        final = self.final_errors()
        half = len(final) // 2
        return float(final[half:].mean() - final[:half].mean())

    def rows(self) -> list[tuple[int, int, float]]:
        return [
            (epoch, b, float(self.errors[e, b]))
            for e, epoch in enumerate(self.epochs)
            for b in range(self.errors.shape[1])
        ]


def _weights_for(depths: np.ndarray, weighting: Weighting, cfg: SimConfig) -> np.ndarray:
    if weighting == Weighting.UNIFORM:
        return np.ones_like(depths)
    if weighting == Weighting.COMPENSATING:
        raw = compensating_weight(depths, cfg.sigma0_sq, cfg.sigma_eps ** 2)
        mean = raw.mean()
        return raw / mean if mean > 0 else np.ones_like(depths)
    lo, hi = cfg.depth_range
    span = hi - lo
    d_norm = (depths - lo) / span if span > 0 else np.zeros_like(depths)
    raw = 1.0 + np.exp(d_norm)
    return raw / raw.mean()


def bias_experiment(
    cfg: SimConfig,
    weighting: Weighting | str,
    *,
    bins: int = 10,
    epochs: int = 60,
    lr: float = 0.002,
    checkpoints: Sequence[int] | None = None,
) -> BiasTrajectory:
    """Fit a per-bin constant regressor by weighted SGD on a fixed noisy dataset.

    Targets are mean_level plus heteroscedastic noise; weights are normalized
    to mean one so the overall learning-rate scale is comparable across
    weightings. Per-sample updates within an epoch are applied in a seeded
    shuffled order (evaluated per bin in closed form, which is exact because
    bins do not share parameters). Recorded error is (theta_b - mean_level)^2.
    """
    weighting = Weighting(weighting)
    rng = np.random.default_rng(cfg.seed)
    lo, hi = cfg.depth_range
    depths = rng.uniform(lo, hi, cfg.n_samples)
    std = np.sqrt(loss_variance(depths, cfg.sigma0_sq, cfg.sigma_eps ** 2))
    targets = cfg.mean_level + rng.normal(0.0, 1.0, cfg.n_samples) * std

    weights = _weights_for(depths, weighting, cfg)
    step = lr * weights
    if step.max() >= 1.0:
        raise DomainError("lr too large: per-sample step lr*w must stay below 1")

    edges = np.linspace(lo, hi, bins + 1)
    bin_of = np.clip(np.digitize(depths, edges) - 1, 0, bins - 1)
    centers = tuple(float(v) for v in (edges[:-1] + edges[1:]) / 2)

    if checkpoints is None:
        checkpoints = tuple(range(1, epochs + 1))
    checkpoints = tuple(sorted(set(int(c) for c in checkpoints)))
    if not checkpoints or checkpoints[0] < 1 or checkpoints[-1] > epochs:
        raise DomainError("checkpoints must lie in [1, epochs]")

    theta = np.zeros(bins)
    recorded = np.zeros((len(checkpoints), bins))
    record_at = {epoch: i for i, epoch in enumerate(checkpoints)}
    for epoch in range(1, epochs + 1):
        order = rng.permutation(cfg.n_samples)
        ordered_bins = bin_of[order]
        for b in range(bins):
            members = order[ordered_bins == b]
            if members.size == 0:
                continue
            f = 1.0 - step[members]
            # suffix products turn the sequential EMA into one vectorized pass
            prods = np.concatenate((np.cumprod(f[::-1])[::-1], [1.0]))
            theta[b] = theta[b] * prods[0] + float(np.sum(step[members] * targets[members] * prods[1:]))
        if epoch in record_at:
            recorded[record_at[epoch]] = (theta - cfg.mean_level) ** 2
    return BiasTrajectory(epochs=checkpoints, bin_centers=centers, errors=recorded)
