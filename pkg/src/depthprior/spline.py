"""Clamped uniform cubic B-spline basis and threshold-curve evaluation.

The basis is a partition of unity, so equal coefficients collapse the
adjustment to a constant and coefficient box bounds translate directly into
bounds on the evaluated threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .types import ThresholdCurve

DEGREE = 3


@dataclass(frozen=True)
class BasisSpec:
    """J cubic basis functions on a clamped uniform knot vector over `domain`."""

    num_coeffs: int
    domain: tuple[float, float]
    knots: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.num_coeffs < 4:
            raise DomainError(f"cubic basis needs at least 4 coefficients, got {self.num_coeffs}")
        lo, hi = (float(v) for v in self.domain)
        if not lo < hi:
            raise DomainError(f"domain ({lo}, {hi}) must satisfy lo < hi")
        object.__setattr__(self, "domain", (lo, hi))
        # 4 repeats at each end, uniform interior: len == num_coeffs + 4
        interior = np.linspace(lo, hi, self.num_coeffs - 2)
        knots = np.concatenate(([lo] * DEGREE, interior, [hi] * DEGREE))
        knots.flags.writeable = False
        object.__setattr__(self, "knots", knots)

    def span(self, d: float) -> int:
        """Knot span index i with knots[i] <= d < knots[i+1] (last span closed)."""
        knots = self.knots
        if d >= self.domain[1]:
            return self.num_coeffs - 1
        if d <= self.domain[0]:
            return DEGREE
        return int(np.searchsorted(knots, d, side="right")) - 1


def basis_eval(spec: BasisSpec, d: float) -> np.ndarray:
    """All J basis values at `d` (clamped into the domain).

    Cox-de Boor recursion in its triangular form over the single span that
    supports `d`: exactly degree+1 entries are nonzero, they are >= 0, and
    they sum to 1.
    """
    lo, hi = spec.domain
    d = min(max(float(d), lo), hi)
    i = spec.span(d)
    knots = spec.knots
    values = np.zeros(DEGREE + 1)
    left = np.zeros(DEGREE + 1)
    right = np.zeros(DEGREE + 1)
    values[0] = 1.0
    for j in range(1, DEGREE + 1):
        left[j] = d - knots[i + 1 - j]
        right[j] = knots[i + j] - d
        saved = 0.0
        for r in range(j):
            temp = values[r] / (right[r + 1] + left[j - r])
            values[r] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        values[j] = saved
    out = np.zeros(spec.num_coeffs)
    out[i - DEGREE:i + 1] = values
    return out


def basis_matrix(spec: BasisSpec, ds: np.ndarray) -> np.ndarray:
    """(len(ds), J) matrix of basis values, one row per depth."""
    return np.stack([basis_eval(spec, float(d)) for d in np.asarray(ds, dtype=np.float64)])


def curve_basis(curve: ThresholdCurve) -> BasisSpec:
    return BasisSpec(num_coeffs=curve.num_coeffs, domain=curve.knot_domain)


def threshold_at(curve: ThresholdCurve, d: float) -> float:
    """Evaluate tau(d) = clip(tau0 - sum_m psi_m B_m(d), 0, 1)."""
    basis = basis_eval(curve_basis(curve), d)
    adjustment = float(basis @ np.asarray(curve.psi))
    return float(min(max(curve.tau0 - adjustment, 0.0), 1.0))


def thresholds_at(curve: ThresholdCurve, ds: np.ndarray) -> np.ndarray:
    """Vectorized `threshold_at` over many depths."""
    adjust = basis_matrix(curve_basis(curve), ds) @ np.asarray(curve.psi)
    return np.clip(curve.tau0 - adjust, 0.0, 1.0)
