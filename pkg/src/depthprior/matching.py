"""Detection-GT matching and evaluation.

Greedy score-descending one-to-one matching under an IoU gate, TD/ED/MD
accounting with depth-binned histograms and score-depth match-rate grids,
Pareto threshold sweeps, COCO-style mAP/mAR, and the empirical cost-ratio
threshold estimator.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .depthnorm import DepthLookup, DepthMaps
from .errors import DomainError, KeyLookupError
from .spline import threshold_at
from .types import Box, Detection, GroundTruthBox, LookupTable, MatchReport, ThresholdCurve

ThresholdSource = float | ThresholdCurve


@dataclass(frozen=True)
class MatchConfig:
    iou_threshold: float = 0.5
    class_aware: bool = True
    md_score_floor: float = 0.1

    def __post_init__(self) -> None:
        if not (0.0 < self.iou_threshold <= 1.0):
            raise DomainError(f"iou threshold {self.iou_threshold} outside (0, 1]")


@dataclass(frozen=True)
class CostModel:
    """Application costs for rejecting a true detection (c_fn) and accepting a false one (c_fp)."""

    c_fn: float
    c_fp: float

    def __post_init__(self) -> None:
        if self.c_fn <= 0 or self.c_fp <= 0:
            raise DomainError("both costs must be positive")


def iou(box_a: Box, box_b: Box) -> float:
    """Intersection over union on continuous coordinates."""
    ax1, ay1, ax2, ay2 = box_a
    bx1, by1, bx2, by2 = box_b
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union


@dataclass(frozen=True)
class MatchResult:
    """Greedy matching outcome for one image: det i -> gt index or None, and the reverse."""

    det_to_gt: tuple[int | None, ...]
    gt_to_det: tuple[int | None, ...]

    @property
    def num_td(self) -> int:
        return sum(1 for g in self.det_to_gt if g is not None)

    @property
    def num_ed(self) -> int:
        return sum(1 for g in self.det_to_gt if g is None)

    @property
    def num_md(self) -> int:
        return sum(1 for d in self.gt_to_det if d is None)

    def pairs(self) -> set[tuple[int, int]]:
        return {(i, g) for i, g in enumerate(self.det_to_gt) if g is not None}


def match_image(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthBox],
    cfg: MatchConfig = MatchConfig(),
) -> MatchResult:
    """Greedy one-to-one matching within one image.

    Detections claim GT in score order (ties keep input order); each claims
    the unmatched same-class GT with the highest IoU at or above the gate.
    """
    ids = {d.image_id for d in dets} | {g.image_id for g in gts}
    if len(ids) > 1:
        raise DomainError(f"records mix image ids: {sorted(ids)}")
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    det_to_gt: list[int | None] = [None] * len(dets)
    gt_to_det: list[int | None] = [None] * len(gts)
    for i in order:
        det = dets[i]
        best_gt = None
        best_iou = 0.0
        for j, gt in enumerate(gts):
            if gt_to_det[j] is not None:
                continue
            if cfg.class_aware and gt.class_id != det.class_id:
                continue
            overlap = iou(det.box, gt.box)
            if overlap >= cfg.iou_threshold and overlap > best_iou:
                best_gt = j
                best_iou = overlap
        if best_gt is not None:
            det_to_gt[i] = best_gt
            gt_to_det[best_gt] = i
    return MatchResult(tuple(det_to_gt), tuple(gt_to_det))


def _group_by_image(items: Sequence) -> dict[str, list]:
    grouped: dict[str, list] = {}
    for item in items:
        grouped.setdefault(item.image_id, []).append(item)
    return grouped


def detection_threshold(det: Detection, source: ThresholdSource, depths: DepthLookup) -> float:
    if isinstance(source, ThresholdCurve):
        return threshold_at(source, depths.depth_of(det.image_id, det.box))
    return float(source)


def filter_by_threshold(
    dets: Sequence[Detection],
    depth_maps: DepthMaps,
    source: ThresholdSource,
) -> list[Detection]:
    """Keep detections scoring at or above the (possibly depth-dependent) threshold; order preserved."""
    depths = DepthLookup(depth_maps)
    return [d for d in dets if d.score >= detection_threshold(d, source, depths)]


def matched_flags(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthBox],
    cfg: MatchConfig = MatchConfig(),
) -> tuple[list[bool], list[bool]]:
    """Per-detection and per-GT matched flags over the whole corpus (order preserved)."""
    det_groups: dict[str, list[int]] = {}
    for i, det in enumerate(dets):
        det_groups.setdefault(det.image_id, []).append(i)
    gt_groups: dict[str, list[int]] = {}
    for j, gt in enumerate(gts):
        gt_groups.setdefault(gt.image_id, []).append(j)
    det_matched = [False] * len(dets)
    gt_matched = [False] * len(gts)
    for image_id in set(det_groups) | set(gt_groups):
        det_idx = det_groups.get(image_id, [])
        gt_idx = gt_groups.get(image_id, [])
        result = match_image([dets[i] for i in det_idx], [gts[j] for j in gt_idx], cfg)
        for local, global_i in enumerate(det_idx):
            det_matched[global_i] = result.det_to_gt[local] is not None
        for local, global_j in enumerate(gt_idx):
            gt_matched[global_j] = result.gt_to_det[local] is not None
    return det_matched, gt_matched


def _bin_index(value: float, bins: int) -> int:
    return min(int(value * bins), bins - 1)


def match_rate_grid(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthBox],
    depth_maps: DepthMaps,
    score_bins: int = 10,
    depth_bins: int = 10,
    cfg: MatchConfig = MatchConfig(),
) -> tuple[tuple[tuple[float | None, ...], ...], tuple[tuple[int, ...], ...]]:
    """Fraction of detections matching GT per (score bin, depth bin) cell.

    Computed over the full detection pool; empty cells are None. Returns
    (rates, counts).
    """
    if score_bins < 1 or depth_bins < 1:
        raise DomainError("bin counts must be at least 1")
    depths = DepthLookup(depth_maps)
    det_matched, _ = matched_flags(dets, gts, cfg)
    matched = np.zeros((score_bins, depth_bins), dtype=np.int64)
    totals = np.zeros((score_bins, depth_bins), dtype=np.int64)
    for det, is_match in zip(dets, det_matched):
        s = _bin_index(det.score, score_bins)
        d = _bin_index(depths.depth_of(det.image_id, det.box), depth_bins)
        totals[s, d] += 1
        matched[s, d] += int(is_match)
    rates = tuple(
        tuple(
            (matched[s, d] / totals[s, d]) if totals[s, d] > 0 else None
            for d in range(depth_bins)
        )
        for s in range(score_bins)
    )
    counts = tuple(tuple(int(v) for v in row) for row in totals)
    return rates, counts


def count_report(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthBox],
    depth_maps: DepthMaps,
    cfg: MatchConfig = MatchConfig(),
    threshold_source: ThresholdSource = 0.5,
    depth_hist_bins: int = 10,
    grid_bins: tuple[int, int] = (10, 10),
) -> MatchReport:
    """Filter, match, and account TD/ED/MD with depth-binned histograms.

    TD/ED are counted after filtering by `threshold_source`; MD counts GT
    unmatched by the raw pool at score >= cfg.md_score_floor, which is the
    threshold-independent notion of a miss. Histogram binning needs a depth
    map per image; with a constant threshold, items from images without one
    still count toward the totals but are left out of the histograms.
    """
    depths = DepthLookup(depth_maps)

    retained = [d for d in dets if d.score >= detection_threshold(d, threshold_source, depths)]
    retained_matched, _ = matched_flags(retained, gts, cfg)
    td = sum(retained_matched)
    ed = len(retained) - td

    floor_pool = [d for d in dets if d.score >= cfg.md_score_floor]
    _, gt_recovered = matched_flags(floor_pool, gts, cfg)
    md = len(gts) - sum(gt_recovered)

    hist = {key: np.zeros(depth_hist_bins, dtype=np.int64) for key in ("gt", "td", "ed", "md")}

    def depth_or_none(image_id: str, box: Box) -> float | None:
        try:
            return depths.depth_of(image_id, box)
        except KeyLookupError:
            if isinstance(threshold_source, ThresholdCurve):
                raise
            return None

    for gt, recovered in zip(gts, gt_recovered):
        d = depth_or_none(gt.image_id, gt.box)
        if d is None:
            continue
        hist["gt"][_bin_index(d, depth_hist_bins)] += 1
        if not recovered:
            hist["md"][_bin_index(d, depth_hist_bins)] += 1
    for det, is_match in zip(retained, retained_matched):
        d = depth_or_none(det.image_id, det.box)
        if d is None:
            continue
        hist["td" if is_match else "ed"][_bin_index(d, depth_hist_bins)] += 1

    grid_dets = dets if isinstance(threshold_source, ThresholdCurve) else \
        [d for d in dets if d.image_id in depths]
    grid, grid_counts = match_rate_grid(grid_dets, gts, depths, grid_bins[0], grid_bins[1], cfg)
    return MatchReport(
        td=td,
        ed=ed,
        md=md,
        per_depth_bins={k: tuple(int(v) for v in vs) for k, vs in hist.items()},
        grid=grid,
        grid_counts=grid_counts,
    )


def pareto_sweep(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthBox],
    depth_maps: DepthMaps,
    taus: Sequence[float],
    lut: LookupTable | None = None,
    cfg: MatchConfig = MatchConfig(),
) -> list[dict[str, float | int]]:
    """TD/ED per reference threshold, with starred curve-based columns when a table is given."""
    if not taus:
        raise DomainError("needs at least one reference threshold")
    if any(b <= a for a, b in zip(taus, taus[1:])):
        raise DomainError("reference thresholds must be sorted ascending")
    rows: list[dict[str, float | int]] = []
    for tau0 in taus:
        report = count_report(dets, gts, depth_maps, cfg, float(tau0))
        row: dict[str, float | int] = {"tau0": float(tau0), "td": report.td, "ed": report.ed}
        if lut is not None:
            curve = lut.curve_for(float(tau0))
            star = count_report(dets, gts, depth_maps, cfg, curve)
            row["td_star"] = star.td
            row["ed_star"] = star.ed
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# COCO-style metrics
# ---------------------------------------------------------------------------

_IOU_THRESHOLDS = tuple(np.round(np.arange(0.5, 1.0, 0.05), 2))
_AREA_RANGES = {
    "all": (0.0, math.inf),
    "small": (0.0, 32.0 ** 2),
    "medium": (32.0 ** 2, 96.0 ** 2),
    "large": (96.0 ** 2, math.inf),
}
_RECALL_POINTS = np.round(np.linspace(0.0, 1.0, 101), 2)
_MAX_DETS = 100


def _box_area(box: Box) -> float:
    return (box[2] - box[0]) * (box[3] - box[1])


def _eval_class_area(det_groups, gt_groups, iou_t: float, area_range: tuple[float, float]):
    """Accumulate (scores, tp flags) after ignore handling plus the positive count."""
    lo, hi = area_range
    scores: list[float] = []
    tps: list[bool] = []
    n_pos = 0
    for image_id in sorted(set(det_groups) | set(gt_groups)):
        img_dets = det_groups.get(image_id, [])
        img_gts = gt_groups.get(image_id, [])
        gt_ignore = [not (lo <= _box_area(g.box) < hi) for g in img_gts]
        n_pos += sum(1 for ig in gt_ignore if not ig)
        # Evaluate non-ignored GT first so real matches take precedence.
        gt_order = sorted(range(len(img_gts)), key=lambda j: gt_ignore[j])
        claimed = [False] * len(img_gts)
        for det, ious in img_dets:
            best_j = -1
            best_iou = 0.0
            for j in gt_order:
                if claimed[j]:
                    continue
                if best_j >= 0 and gt_ignore[j] and not gt_ignore[best_j]:
                    break  # remaining candidates are all ignored; keep the real match
                if ious[j] >= iou_t and ious[j] > best_iou:
                    best_iou = ious[j]
                    best_j = j
            if best_j >= 0:
                claimed[best_j] = True
                if not gt_ignore[best_j]:
                    scores.append(det.score)
                    tps.append(True)
                # matched-to-ignored detections are dropped entirely
            elif lo <= _box_area(det.box) < hi:
                scores.append(det.score)
                tps.append(False)
            # unmatched detections outside the size range are dropped
    return np.asarray(scores), np.asarray(tps, dtype=bool), n_pos


def _average_precision(scores: np.ndarray, tps: np.ndarray, n_pos: int) -> tuple[float, float]:
    """(101-point interpolated AP, max recall) for one class/threshold/area cell."""
    if n_pos == 0:
        return math.nan, math.nan
    if scores.size == 0:
        return 0.0, 0.0
    order = np.argsort(-scores, kind="stable")
    tps = tps[order]
    cum_tp = np.cumsum(tps)
    cum_fp = np.cumsum(~tps)
    recall = cum_tp / n_pos
    precision = cum_tp / (cum_tp + cum_fp)
    # precision envelope: best precision achievable at or beyond each point;
    # grid matching gets a tiny slack so exact-ratio recalls land on their point
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    indices = np.searchsorted(recall, _RECALL_POINTS - 1e-12, side="left")
    sampled = np.where(indices < envelope.size, envelope[np.minimum(indices, envelope.size - 1)], 0.0)
    return float(sampled.mean()), float(recall[-1])


def coco_map(dets: Sequence[Detection], gts: Sequence[GroundTruthBox]) -> dict[str, float]:
    """COCO-style mAP/mAR summary.

    mAP averages 101-point interpolated AP over classes and IoU gates
    0.5:0.05:0.95; size bins split GT by pixel area at 32^2 and 96^2 with the
    usual ignore handling; mAR is max recall at 100 detections per image.
    Undefined cells (no GT in a size bin) are skipped; a metric with no
    defined cells reports -1.0.
    """
    if not gts:
        raise DomainError("COCO metrics need at least one ground-truth box")
    classes = sorted({g.class_id for g in gts})
    ap: dict[tuple[int, float, str], float] = {}
    ar: dict[tuple[int, float, str], float] = {}
    for cls in classes:
        cls_dets = [d for d in dets if d.class_id == cls]
        cls_gts = [g for g in gts if g.class_id == cls]
        det_groups_raw = _group_by_image(cls_dets)
        gt_groups = _group_by_image(cls_gts)
        det_groups: dict[str, list] = {}
        for image_id, img_dets in det_groups_raw.items():
            img_dets = sorted(img_dets, key=lambda d: -d.score)[:_MAX_DETS]
            img_gts = gt_groups.get(image_id, [])
            det_groups[image_id] = [
                (det, [iou(det.box, g.box) for g in img_gts]) for det in img_dets
            ]
        for iou_t in _IOU_THRESHOLDS:
            for name, area_range in _AREA_RANGES.items():
                scores, tps, n_pos = _eval_class_area(det_groups, gt_groups, iou_t, area_range)
                cell_ap, cell_recall = _average_precision(scores, tps, n_pos)
                ap[(cls, iou_t, name)] = cell_ap
                ar[(cls, iou_t, name)] = cell_recall

    def summarize(values: dict, area: str, iou_t: float | None = None) -> float:
        cells = [
            v
            for (c, t, a), v in values.items()
            if a == area and (iou_t is None or t == iou_t) and not math.isnan(v)
        ]
        return float(np.mean(cells)) if cells else -1.0

    return {
        "mAP": summarize(ap, "all"),
        "mAP50": summarize(ap, "all", 0.5),
        "mAP_S": summarize(ap, "small"),
        "mAP_M": summarize(ap, "medium"),
        "mAP_L": summarize(ap, "large"),
        "mAR": summarize(ar, "all"),
        "mAR_S": summarize(ar, "small"),
        "mAR_M": summarize(ar, "medium"),
        "mAR_L": summarize(ar, "large"),
    }


# ---------------------------------------------------------------------------
# Empirical cost-ratio thresholds
# ---------------------------------------------------------------------------

def empirical_optimal_threshold(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthBox],
    depth_maps: DepthMaps,
    cost: CostModel,
    bins: int = 10,
    cfg: MatchConfig = MatchConfig(),
) -> list[float]:
    """Smallest score per depth bin where the matched-odds meet the cost ratio.

    Within each bin, P_TP at score s is the matched fraction among detections
    scoring >= s (cumulative counts). Returns 1.0 for bins where no score
    qualifies and NaN for bins holding no detections.
    """
    if bins < 1:
        raise DomainError("bins must be at least 1")
    depths = DepthLookup(depth_maps)
    det_matched, _ = matched_flags(dets, gts, cfg)
    per_bin: list[list[tuple[float, bool]]] = [[] for _ in range(bins)]
    for det, is_match in zip(dets, det_matched):
        per_bin[_bin_index(depths.depth_of(det.image_id, det.box), bins)].append((det.score, is_match))
    ratio = cost.c_fp / cost.c_fn
    out: list[float] = []
    for entries in per_bin:
        if not entries:
            out.append(math.nan)
            continue
        entries.sort(key=lambda e: -e[0])
        scores = np.asarray([s for s, _ in entries])
        matched = np.cumsum([m for _, m in entries])
        totals = np.arange(1, len(entries) + 1)
        chosen = 1.0
        # scan candidate thresholds from the smallest score upward; evaluate
        # each tie group at its last descending index so cumulative counts
        # cover every detection scoring >= that threshold
        for i in range(len(entries) - 1, -1, -1):
            if i + 1 < len(entries) and scores[i] == scores[i + 1]:
                continue
            p_tp = matched[i] / totals[i]
            odds = math.inf if p_tp == 1.0 else p_tp / (1.0 - p_tp)
            if odds >= ratio:
                chosen = float(scores[i])
                break
        out.append(chosen)
    return out


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def write_report_json(report: MatchReport, path: str | Path, extra: Mapping | None = None) -> None:
    payload = report.to_dict()
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def write_histogram_csv(report: MatchReport, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["depth_bin", "gt", "td", "ed", "md"])
        series = report.per_depth_bins
        for b in range(len(series["gt"])):
            writer.writerow([b, series["gt"][b], series["td"][b], series["ed"][b], series["md"][b]])


def write_grid_csv(report: MatchReport, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["score_bin", "depth_bin", "match_rate", "count"])
        for s, row in enumerate(report.grid):
            for d, value in enumerate(row):
                writer.writerow([s, d, "" if value is None else value, report.grid_counts[s][d]])
