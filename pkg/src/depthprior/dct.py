"""Depth-adaptive confidence threshold fitting and deployment.

Fits per-reference-threshold spline adjustment coefficients by seeded
derivative-free search, maximizing true detections under a hard-penalized
false-detection allowance, assembles the results into a lookup table, and
filters detection lists against a deployed table entry.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Sequence

import numpy as np

from .depthnorm import DepthLookup, DepthMaps
from .errors import DomainError
from .matching import MatchConfig, filter_by_threshold
from .spline import BasisSpec, basis_matrix
from .types import Detection, GroundTruthBox, LookupTable, ThresholdCurve

DEFAULT_TAUS = tuple(round(0.1 * i, 1) for i in range(1, 10))


class ObjectiveVariant(str, Enum):
    BASE = "base"            # TP minus the excess-FP penalty
    ABS_RATIO = "abs_ratio"  # adds the absolute TD/ED ratio term
    REL_RATIO = "rel_ratio"  # adds the ratio improvement over the static baseline


class CoeffBounds(str, Enum):
    SAFE = "safe"        # psi in [0, tau0 - rho]: thresholds stay in [rho, tau0] without clipping
    LITERAL = "literal"  # psi in [rho, 1]: every threshold drops by at least rho


@dataclass(frozen=True)
class OptimizerConfig:
    """Seeded population search settings; `budget` caps total objective evaluations."""

    seed: int = 0
    population: int = 32
    generations: int = 200
    budget: int | None = None
    stagnation: int = 40
    mutation: float = 0.7
    crossover: float = 0.9

    def __post_init__(self) -> None:
        if self.population < 4:
            raise DomainError("population must be at least 4")
        if self.generations < 1:
            raise DomainError("generations must be at least 1")
        if self.budget is not None and self.budget < self.population:
            raise DomainError("budget must cover at least one full population evaluation")


@dataclass(frozen=True)
class FitConfig:
    taus: tuple[float, ...] = DEFAULT_TAUS
    num_coeffs: int = 10
    domain: tuple[float, float] = (0.0, 0.9)
    epsilon: float = 0.1
    gamma: float = 1000.0
    rho: float = 0.1
    objective_variant: ObjectiveVariant = ObjectiveVariant.BASE
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    coeff_bounds_mode: CoeffBounds = CoeffBounds.SAFE
    match: MatchConfig = field(default_factory=MatchConfig)

    def __post_init__(self) -> None:
        object.__setattr__(self, "taus", tuple(float(t) for t in self.taus))
        object.__setattr__(self, "objective_variant", ObjectiveVariant(self.objective_variant))
        object.__setattr__(self, "coeff_bounds_mode", CoeffBounds(self.coeff_bounds_mode))
        if not self.taus:
            raise DomainError("needs at least one reference threshold")
        if any(not 0.0 <= t <= 1.0 for t in self.taus):
            raise DomainError("reference thresholds must lie in [0, 1]")
        if any(b <= a for a, b in zip(self.taus, self.taus[1:])):
            raise DomainError("reference thresholds must be strictly increasing")
        if self.epsilon < 0:
            raise DomainError("epsilon must be non-negative")
        if self.gamma <= 0:
            raise DomainError("gamma must be positive")
        if not (0.0 <= self.rho <= min(self.taus)) or self.rho >= 1.0:
            raise DomainError(f"rho {self.rho} must satisfy 0 <= rho <= min(taus) and rho < 1")
        if self.num_coeffs < 4:
            raise DomainError("needs at least 4 spline coefficients")

    def bounds_for(self, tau0: float) -> tuple[float, float]:
        if self.coeff_bounds_mode == CoeffBounds.LITERAL:
            return (self.rho, 1.0)
        return (0.0, max(tau0 - self.rho, 0.0))

    def to_dict(self) -> dict[str, Any]:
        return {
            "taus": list(self.taus),
            "knots": self.num_coeffs,
            "domain": [self.domain[0], self.domain[1]],
            "epsilon": self.epsilon,
            "gamma": self.gamma,
            "rho": self.rho,
            "objective": self.objective_variant.value,
            "coeff_bounds": self.coeff_bounds_mode.value,
            "seed": self.optimizer.seed,
            "population": self.optimizer.population,
            "generations": self.optimizer.generations,
            "budget": self.optimizer.budget,
            "stagnation": self.optimizer.stagnation,
            "iou_threshold": self.match.iou_threshold,
            "class_aware": self.match.class_aware,
        }


@dataclass(frozen=True)
class FitOutcome:
    curve: ThresholdCurve
    tp_static: int
    fp_static: int
    tp_star: int
    fp_star: int
    objective_value: float
    evaluations_used: int


# ---------------------------------------------------------------------------
# Precomputed corpus structures
# ---------------------------------------------------------------------------

class CorpusIndex:
    """Per-detection depths, basis rows, and matching candidates for repeated filtering.

    Thresholded TP/FP counting reduces to a retained-mask pass. When every
    detection overlaps at most one admissible GT the greedy count is computed
    with array ops; otherwise a per-image greedy walk in score order runs.
    """

    def __init__(
        self,
        dets: Sequence[Detection],
        gts: Sequence[GroundTruthBox],
        depth_maps: DepthMaps,
        match_cfg: MatchConfig,
        basis: BasisSpec,
    ):
        if not dets and not gts:
            raise DomainError("empty fitting corpus")
        depths = DepthLookup(depth_maps)
        self.scores = np.asarray([d.score for d in dets], dtype=np.float64)
        self.depths = np.asarray(
            [depths.depth_of(d.image_id, d.box) for d in dets], dtype=np.float64)
        self.basis = basis_matrix(basis, self.depths) if dets else np.zeros((0, basis.num_coeffs))

        from .matching import iou as _iou

        gt_by_image: dict[str, list[int]] = {}
        for j, gt in enumerate(gts):
            gt_by_image.setdefault(gt.image_id, []).append(j)
        self.num_gts = len(gts)

        self.candidates: list[list[int]] = []
        for det in dets:
            cands = []
            for j in gt_by_image.get(det.image_id, []):
                if match_cfg.class_aware and gts[j].class_id != det.class_id:
                    continue
                overlap = _iou(det.box, gts[j].box)
                if overlap >= match_cfg.iou_threshold:
                    cands.append((overlap, j))
            cands.sort(key=lambda c: (-c[0], c[1]))
            self.candidates.append([j for _, j in cands])

        det_by_image: dict[str, list[int]] = {}
        for det_index, det in enumerate(dets):
            det_by_image.setdefault(det.image_id, []).append(det_index)
        self.image_orders = [
            sorted(indices, key=lambda i: (-self.scores[i], i))
            for indices in det_by_image.values()
        ]
        self._single = all(len(c) <= 1 for c in self.candidates)
        self._cand_gt = np.asarray(
            [c[0] if c else -1 for c in self.candidates], dtype=np.int64)

    def thresholds(self, tau0: float, psi: np.ndarray | None) -> np.ndarray:
        if psi is None:
            return np.full(len(self.scores), float(tau0))
        return np.clip(tau0 - self.basis @ np.asarray(psi, dtype=np.float64), 0.0, 1.0)

    def counts(self, thresholds: np.ndarray) -> tuple[int, int]:
        """Greedy (TP, FP) over detections retained at the per-detection thresholds."""
        retained = self.scores >= thresholds
        n_retained = int(retained.sum())
        if self._single:
            gt_ids = self._cand_gt[retained]
            tp = int(np.unique(gt_ids[gt_ids >= 0]).size)
            return tp, n_retained - tp
        claimed = np.zeros(self.num_gts, dtype=bool)
        tp = 0
        for order in self.image_orders:
            for i in order:
                if not retained[i]:
                    continue
                for j in self.candidates[i]:
                    if not claimed[j]:
                        claimed[j] = True
                        tp += 1
                        break
        return tp, n_retained - tp


def _ratio(tp: int, fp: int) -> float:
    return tp / (fp if fp > 0 else fp + 1)


def _score(tp: int, fp: int, tp_static: int, fp_static: int, cfg: FitConfig) -> float:
    penalty = cfg.gamma * max(0.0, fp - fp_static * (1.0 + cfg.epsilon))
    if cfg.objective_variant == ObjectiveVariant.BASE:
        return tp - penalty
    delta = (tp - tp_static) - (fp - fp_static)
    if cfg.objective_variant == ObjectiveVariant.ABS_RATIO:
        return delta + _ratio(tp, fp) - penalty
    return delta + (_ratio(tp, fp) - _ratio(tp_static, fp_static)) - penalty


def objective(
    psi: Sequence[float],
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthBox],
    depth_maps: DepthMaps,
    tau0: float,
    cfg: FitConfig = FitConfig(),
) -> tuple[float, int, int]:
    """(M, TP, FP) of one coefficient vector against the static baseline at tau0."""
    basis = BasisSpec(num_coeffs=cfg.num_coeffs, domain=cfg.domain)
    index = CorpusIndex(dets, gts, depth_maps, cfg.match, basis)
    tp_static, fp_static = index.counts(index.thresholds(tau0, None))
    tp, fp = index.counts(index.thresholds(tau0, np.asarray(psi, dtype=np.float64)))
    return _score(tp, fp, tp_static, fp_static, cfg), tp, fp


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

Evaluate = Callable[[np.ndarray], tuple[float, tuple[int, int]]]
GenerationLog = Callable[[int, float, tuple[int, int]], None]


def de_optimize(
    evaluate: Evaluate,
    dim: int,
    lower: float,
    upper: float,
    cfg: OptimizerConfig,
    on_generation: GenerationLog | None = None,
) -> tuple[np.ndarray, float, tuple[int, int], int]:
    """Box-constrained rand/1/bin differential evolution, fully seeded.

    The zero vector is always member 0 of the initial population. Ties keep
    the lower candidate index, so the reduction to the best member does not
    depend on evaluation order. Returns (best x, best value, best payload,
    evaluations used).
    """
    rng = np.random.default_rng(cfg.seed)
    span = upper - lower
    pop = lower + span * rng.random((cfg.population, dim))
    pop[0] = 0.0  # no-op candidate; may sit outside literal bounds by design
    evals = 0
    budget = cfg.budget if cfg.budget is not None else np.inf

    values = np.empty(cfg.population)
    payloads: list[tuple[int, int]] = [(0, 0)] * cfg.population
    for i in range(cfg.population):
        values[i], payloads[i] = evaluate(pop[i])
        evals += 1

    best_i = int(np.argmax(values))
    best_x = pop[best_i].copy()
    best_value = float(values[best_i])
    best_payload = payloads[best_i]
    stagnant = 0

    for generation in range(cfg.generations):
        if evals >= budget or stagnant >= cfg.stagnation:
            break
        improved = False
        for i in range(cfg.population):
            if evals >= budget:
                break
            r1, r2, r3 = _pick_distinct(rng, cfg.population, i)
            mutant = pop[r1] + cfg.mutation * (pop[r2] - pop[r3])
            cross = rng.random(dim) < cfg.crossover
            cross[rng.integers(dim)] = True
            trial = np.where(cross, mutant, pop[i])
            np.clip(trial, lower, upper, out=trial)
            value, payload = evaluate(trial)
            evals += 1
            if value >= values[i]:  # accept equal values to drift across count plateaus
                pop[i] = trial
                values[i] = value
                payloads[i] = payload
                if value > best_value:
                    best_x = trial.copy()
                    best_value = float(value)
                    best_payload = payload
                    improved = True
        stagnant = 0 if improved else stagnant + 1
        if on_generation is not None:
            on_generation(generation, best_value, best_payload)
    return best_x, best_value, best_payload, evals


def _pick_distinct(rng: np.random.Generator, size: int, exclude: int) -> tuple[int, int, int]:
    picks: list[int] = []
    while len(picks) < 3:
        candidate = int(rng.integers(size))
        if candidate != exclude and candidate not in picks:
            picks.append(candidate)
    return picks[0], picks[1], picks[2]


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

def _fit_with_index(
    index: CorpusIndex,
    tau0: float,
    cfg: FitConfig,
    opt_cfg: OptimizerConfig,
    log: Callable[[dict[str, Any]], None] | None = None,
) -> FitOutcome:
    tp_static, fp_static = index.counts(index.thresholds(tau0, None))
    allowed_fp = fp_static * (1.0 + cfg.epsilon)
    lower, upper = cfg.bounds_for(tau0)

    def evaluate(psi: np.ndarray) -> tuple[float, tuple[int, int]]:
        tp, fp = index.counts(index.thresholds(tau0, psi))
        return _score(tp, fp, tp_static, fp_static, cfg), (tp, fp)

    def on_generation(generation: int, best_value: float, payload: tuple[int, int]) -> None:
        if log is not None:
            log({"tau0": tau0, "generation": generation, "best_m": best_value,
                 "tp": payload[0], "fp": payload[1]})

    extra_evals = 0
    if upper <= lower:
        # degenerate box (tau0 == rho in safe mode): only the no-op candidate exists
        best_psi = np.zeros(cfg.num_coeffs)
        best_value, (tp, fp) = evaluate(best_psi)
        extra_evals += 1
        evals = 0
    else:
        best_psi, best_value, (tp, fp), evals = de_optimize(
            evaluate, cfg.num_coeffs, lower, upper, opt_cfg, on_generation)

    # Feasibility repair: shrink toward the no-op curve until within the allowance.
    for _ in range(200):
        if fp <= allowed_fp:
            break
        best_psi = best_psi * 0.7
        best_value, (tp, fp) = evaluate(best_psi)
        extra_evals += 1
    zero_value, (zero_tp, zero_fp) = evaluate(np.zeros(cfg.num_coeffs))
    extra_evals += 1
    if fp > allowed_fp or best_value < zero_value:
        best_psi = np.zeros(cfg.num_coeffs)
        best_value, (tp, fp) = zero_value, (zero_tp, zero_fp)

    if cfg.coeff_bounds_mode == CoeffBounds.SAFE:
        # partition of unity keeps the pre-clip threshold inside [rho, tau0]
        adjust = index.basis @ best_psi if len(best_psi) and index.basis.size else np.zeros(1)
        if adjust.size and (adjust.min() < -1e-9 or adjust.max() > tau0 - cfg.rho + 1e-9):
            raise AssertionError("safe-bounds threshold range violated")

    curve = ThresholdCurve(
        tau0=float(tau0),
        knot_domain=cfg.domain,
        psi=tuple(float(v) for v in best_psi),
        rho=cfg.rho,
    )
    return FitOutcome(
        curve=curve,
        tp_static=tp_static,
        fp_static=fp_static,
        tp_star=tp,
        fp_star=fp,
        objective_value=float(best_value),
        evaluations_used=evals + extra_evals,
    )


def fit_curve(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthBox],
    depth_maps: DepthMaps,
    tau0: float,
    cfg: FitConfig = FitConfig(),
    log: Callable[[dict[str, Any]], None] | None = None,
) -> FitOutcome:
    """Fit one threshold curve at `tau0`; deterministic for a given seed."""
    if not dets or not gts:
        raise DomainError("fitting needs a nonempty validation corpus")
    basis = BasisSpec(num_coeffs=cfg.num_coeffs, domain=cfg.domain)
    index = CorpusIndex(dets, gts, depth_maps, cfg.match, basis)
    return _fit_with_index(index, float(tau0), cfg, cfg.optimizer, log)


def _seed_for(base_seed: int, tau0: float) -> int:
    return base_seed * 1009 + int(round(tau0 * 1000))


def build_lut(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthBox],
    depth_maps: DepthMaps,
    cfg: FitConfig = FitConfig(),
    log: Callable[[dict[str, Any]], None] | None = None,
) -> LookupTable:
    """Fit every configured reference threshold into a lookup table.

    Each tau0 fits independently under a seed derived from the base seed, so
    results do not depend on fit order.
    """
    if not dets or not gts:
        raise DomainError("fitting needs a nonempty validation corpus")
    basis = BasisSpec(num_coeffs=cfg.num_coeffs, domain=cfg.domain)
    index = CorpusIndex(dets, gts, depth_maps, cfg.match, basis)
    entries = []
    for tau0 in cfg.taus:
        opt_cfg = replace(cfg.optimizer, seed=_seed_for(cfg.optimizer.seed, tau0))
        entries.append(_fit_with_index(index, tau0, cfg, opt_cfg, log).curve)
    return LookupTable(entries=tuple(entries), fit_config=cfg.to_dict())


def apply_lut(
    dets: Sequence[Detection],
    depth_maps: DepthMaps,
    tau0: float,
    lut: LookupTable,
) -> list[Detection]:
    """Filter detections with the table entry at exactly `tau0`; order preserved."""
    curve = lut.curve_for(float(tau0))
    return filter_by_threshold(dets, depth_maps, curve)


def jsonl_logger(fh) -> Callable[[dict[str, Any]], None]:
    """Fit-log sink writing one JSON record per generation."""

    def log(record: dict[str, Any]) -> None:
        fh.write(json.dumps(record) + "\n")

    return log
