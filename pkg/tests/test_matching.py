"""Matching, reports, sweeps, COCO metrics, and cost-ratio thresholds."""

import math

import numpy as np
import pytest

from depthprior import (
    CostModel,
    Detection,
    DomainError,
    GroundTruthBox,
    LookupTable,
    MatchConfig,
    ThresholdCurve,
    coco_map,
    count_report,
    empirical_optimal_threshold,
    iou,
    match_image,
    match_rate_grid,
    pareto_sweep,
)
from depthprior.matching import filter_by_threshold, matched_flags

from synth import CorpusBuilder, cell_box, mixed_corpus, sweep_corpus


class TestIou:
    def test_identical(self):
        assert iou((0, 0, 2, 2), (0, 0, 2, 2)) == 1.0

    def test_disjoint(self):
        assert iou((0, 0, 2, 2), (5, 5, 7, 7)) == 0.0

    def test_partial_overlap(self):
        assert iou((0, 0, 2, 2), (1, 1, 3, 3)) == pytest.approx(1 / 7)

    def test_symmetry(self):
        a, b = (0, 0, 4, 3), (2, 1, 6, 5)
        assert iou(a, b) == iou(b, a)


def bruteforce_max_matching(dets, gts, cfg):
    """Exhaustive max-cardinality assignment under the same admissibility rule."""
    admissible = []
    for det in dets:
        options = [
            j for j, gt in enumerate(gts)
            if (not cfg.class_aware or gt.class_id == det.class_id)
            and iou(det.box, gt.box) >= cfg.iou_threshold
        ]
        admissible.append(options)

    best = 0

    def recurse(i, used, count):
        nonlocal best
        if count + (len(dets) - i) <= best:
            return
        if i == len(dets):
            best = max(best, count)
            return
        recurse(i + 1, used, count)
        for j in admissible[i]:
            if j not in used:
                recurse(i + 1, used | {j}, count + 1)

    recurse(0, frozenset(), 0)
    return best


def random_separated_instance(rng):
    """Random instance where every detection admits at most one GT (non-adversarial)."""
    builder = CorpusBuilder(seed=int(rng.integers(1 << 31)))
    image_id = "inst"
    n_gt = int(rng.integers(0, 7))
    n_extra = int(rng.integers(0, 4))
    gt_cells = []
    for _ in range(n_gt):
        depth = float(rng.uniform(0.1, 0.9))
        cls = int(rng.integers(0, 2))
        builder.add_missed(image_id, depth, cls)
        gt_cells.append((builder.gts[-1].box, cls))
    dets = []
    n_det = int(rng.integers(0, 7))
    for _ in range(n_det):
        if gt_cells and rng.random() < 0.7:
            box, cls = gt_cells[int(rng.integers(len(gt_cells)))]
            dx = float(rng.uniform(-0.4, 0.4))
            det_box = (box[0] + dx, box[1], box[2] + dx, box[3])
            det_cls = cls if rng.random() < 0.8 else 1 - cls
            dets.append(Detection(image_id, det_box, float(rng.uniform(0, 1)), det_cls))
        else:
            builder.image(image_id)
            col = 4 + 5 * int(rng.integers(0, 18))
            row = int(rng.integers(0, builder.num_rows))
            for _ in range(n_extra + 1):
                if all(abs(col - c) >= 5 or r != row for (c, r) in builder._used[image_id]):
                    break
                col = 4 + 5 * int(rng.integers(0, 18))
                row = int(rng.integers(0, builder.num_rows))
            else:
                continue
            builder._used[image_id].add((col, row))
            dets.append(Detection(image_id, cell_box(col, row), float(rng.uniform(0, 1)),
                                  int(rng.integers(0, 2))))
    return dets, builder.gts


class TestGreedyMatching:
    def test_exact_hit(self):
        gt = GroundTruthBox("a", (0, 0, 10, 10), 0)
        det = Detection("a", (0, 0, 10, 10), 0.9, 0)
        result = match_image([det], [gt])
        assert result.num_td == 1 and result.num_ed == 0 and result.num_md == 0

    def test_detection_without_gt(self):
        det = Detection("a", (0, 0, 10, 10), 0.9, 0)
        result = match_image([det], [])
        assert result.num_td == 0 and result.num_ed == 1

    def test_class_aware_blocks_cross_class(self):
        gt = GroundTruthBox("a", (0, 0, 10, 10), 1)
        det = Detection("a", (0, 0, 10, 10), 0.9, 0)
        assert match_image([det], [gt]).num_td == 0
        relaxed = MatchConfig(class_aware=False)
        assert match_image([det], [gt], relaxed).num_td == 1

    def test_mixed_image_ids_rejected(self):
        with pytest.raises(DomainError):
            match_image([Detection("a", (0, 0, 1, 1), 0.5, 0)],
                        [GroundTruthBox("b", (0, 0, 1, 1), 0)])

    def test_score_order_priority(self):
        gt = GroundTruthBox("a", (0, 0, 10, 10), 0)
        weak = Detection("a", (0, 0, 10, 10), 0.3, 0)
        strong = Detection("a", (1, 0, 11, 10), 0.8, 0)
        result = match_image([weak, strong], [gt])
        assert result.det_to_gt == (None, 0)

    def test_matches_bruteforce_on_500_separated_instances(self):
        rng = np.random.default_rng(2024)
        cfg = MatchConfig()
        for _ in range(500):
            dets, gts = random_separated_instance(rng)
            result = match_image(dets, gts, cfg) if (dets or gts) else None
            td = result.num_td if result else 0
            assert td == bruteforce_max_matching(dets, gts, cfg)
            if result:
                assert result.num_ed == len(dets) - td
                assert result.num_md == len(gts) - td

    def test_documented_divergence_from_optimal(self):
        # Greedy is the chosen behavior: the top-scoring detection takes its
        # best-IoU GT even when a different assignment would match more pairs.
        gts = [GroundTruthBox("a", (0, 0, 10, 10), 0), GroundTruthBox("a", (5, 0, 15, 10), 0)]
        dets = [Detection("a", (2, 0, 12, 10), 0.9, 0), Detection("a", (0, 0, 10, 10), 0.8, 0)]
        cfg = MatchConfig()
        result = match_image(dets, gts, cfg)
        assert result.num_td == 1  # greedy outcome
        assert bruteforce_max_matching(dets, gts, cfg) == 2  # optimal differs


class TestCountReport:
    def naive_recount(self, dets, gts, maps, cfg, source):
        retained = filter_by_threshold(dets, maps, source)
        det_matched, _ = matched_flags(retained, gts, cfg)
        td = sum(det_matched)
        floor_pool = [d for d in dets if d.score >= cfg.md_score_floor]
        _, recovered = matched_flags(floor_pool, gts, cfg)
        return td, len(retained) - td, len(gts) - sum(recovered)

    def test_zero_curve_equals_constant(self):
        builder = mixed_corpus(seed=5)
        curve = ThresholdCurve(tau0=0.55, knot_domain=(0.0, 0.9), psi=(0.0,) * 10, rho=0.1)
        by_curve = count_report(builder.dets, builder.gts, builder.maps, MatchConfig(), curve)
        by_const = count_report(builder.dets, builder.gts, builder.maps, MatchConfig(), 0.55)
        assert by_curve == by_const

    def test_zero_curve_same_matched_pairs(self):
        builder = mixed_corpus(seed=6)
        curve = ThresholdCurve(tau0=0.4, knot_domain=(0.0, 0.9), psi=(0.0,) * 10, rho=0.1)
        kept_curve = filter_by_threshold(builder.dets, builder.maps, curve)
        kept_const = filter_by_threshold(builder.dets, builder.maps, 0.4)
        assert kept_curve == kept_const
        flags_curve, _ = matched_flags(kept_curve, builder.gts)
        flags_const, _ = matched_flags(kept_const, builder.gts)
        pairs_curve = {(d.image_id, d.box) for d, m in zip(kept_curve, flags_curve) if m}
        pairs_const = {(d.image_id, d.box) for d, m in zip(kept_const, flags_const) if m}
        assert pairs_curve == pairs_const

    def test_tau_one_on_unmatchable_corpus(self):
        builder = CorpusBuilder(seed=1)
        for i in range(3):
            builder.add_missed(f"im{i}", 0.5)
            builder.add_unmatched(f"im{i}", 0.3, 0.9)
        report = count_report(builder.dets, builder.gts, builder.maps, MatchConfig(), 1.0)
        assert report.td == 0 and report.ed == 0 and report.md == len(builder.gts)

    def test_counts_match_naive_recount(self):
        builder = mixed_corpus(seed=12, n_images=50)
        cfg = MatchConfig()
        for source in (0.3, 0.6,
                       ThresholdCurve(tau0=0.5, knot_domain=(0.0, 0.9),
                                      psi=(0.0, 0.0, 0.0, 0.05, 0.1, 0.1, 0.2, 0.2, 0.3, 0.3), rho=0.1)):
            report = count_report(builder.dets, builder.gts, builder.maps, cfg, source)
            td, ed, md = self.naive_recount(builder.dets, builder.gts, builder.maps, cfg, source)
            assert (report.td, report.ed, report.md) == (td, ed, md)
            retained = filter_by_threshold(builder.dets, builder.maps, source)
            assert report.td + report.ed == len(retained)

    def test_report_dict_round_trip(self):
        builder = mixed_corpus(seed=10)
        report = count_report(builder.dets, builder.gts, builder.maps, MatchConfig(), 0.5)
        from depthprior import MatchReport

        assert MatchReport.from_dict(report.to_dict()) == report

    def test_missing_map_with_curve_names_image(self):
        builder = mixed_corpus(seed=15, n_images=3)
        maps = dict(builder.maps)
        dropped = sorted(maps)[0]
        del maps[dropped]
        curve = ThresholdCurve(tau0=0.5, knot_domain=(0.0, 0.9), psi=(0.0,) * 10, rho=0.1)
        from depthprior import KeyLookupError

        with pytest.raises(KeyLookupError, match=dropped):
            count_report(builder.dets, builder.gts, maps, MatchConfig(), curve)

    def test_missing_map_with_constant_still_counts(self):
        builder = mixed_corpus(seed=15, n_images=3)
        maps = dict(builder.maps)
        del maps[sorted(maps)[0]]
        full = count_report(builder.dets, builder.gts, builder.maps, MatchConfig(), 0.5)
        partial = count_report(builder.dets, builder.gts, maps, MatchConfig(), 0.5)
        assert (partial.td, partial.ed, partial.md) == (full.td, full.ed, full.md)
        assert sum(partial.per_depth_bins["gt"]) < sum(full.per_depth_bins["gt"])

    def test_histograms_account_everything(self):
        builder = mixed_corpus(seed=9)
        report = count_report(builder.dets, builder.gts, builder.maps, MatchConfig(), 0.5)
        bins = report.per_depth_bins
        assert sum(bins["gt"]) == len(builder.gts)
        assert sum(bins["td"]) == report.td
        assert sum(bins["ed"]) == report.ed
        assert sum(bins["md"]) == report.md
        # matched-or-missed GT never double counts at thresholds above the floor
        assert report.td + report.md <= len(builder.gts)


class TestMatchRateGrid:
    def test_all_matched_cells_one(self):
        builder = CorpusBuilder(seed=2)
        for i in range(4):
            builder.add_matched(f"im{i}", 0.2 + 0.15 * i, 0.1 + 0.2 * i)
        grid, counts = match_rate_grid(builder.dets, builder.gts, builder.maps)
        for row, count_row in zip(grid, counts):
            for value, count in zip(row, count_row):
                assert (value is None) == (count == 0)
                if value is not None:
                    assert value == 1.0

    def test_no_gt_cells_zero(self):
        builder = CorpusBuilder(seed=3)
        for i in range(4):
            builder.add_unmatched(f"im{i}", 0.3 + 0.1 * i, 0.2 + 0.2 * i)
        grid, _ = match_rate_grid(builder.dets, builder.gts, builder.maps)
        occupied = [v for row in grid for v in row if v is not None]
        assert occupied and all(v == 0.0 for v in occupied)

    def test_matches_naive_filtering_oracle(self):
        builder = mixed_corpus(seed=13)
        score_bins, depth_bins = 5, 4
        grid, counts = match_rate_grid(builder.dets, builder.gts, builder.maps, score_bins, depth_bins)
        det_matched, _ = matched_flags(builder.dets, builder.gts)
        from depthprior import DepthLookup

        depths = DepthLookup(builder.maps)
        for s in range(score_bins):
            for d in range(depth_bins):
                members = [
                    m for det, m in zip(builder.dets, det_matched)
                    if min(int(det.score * score_bins), score_bins - 1) == s
                    and min(int(depths.depth_of(det.image_id, det.box) * depth_bins), depth_bins - 1) == d
                ]
                assert counts[s][d] == len(members)
                if members:
                    assert grid[s][d] == pytest.approx(sum(members) / len(members))
                else:
                    assert grid[s][d] is None


class TestParetoSweep:
    def test_single_tau_matches_report(self):
        builder = mixed_corpus(seed=21)
        rows = pareto_sweep(builder.dets, builder.gts, builder.maps, [0.5])
        report = count_report(builder.dets, builder.gts, builder.maps, MatchConfig(), 0.5)
        assert rows == [{"tau0": 0.5, "td": report.td, "ed": report.ed}]

    def test_zero_psi_lut_stars_equal_plain(self):
        builder = mixed_corpus(seed=22)
        taus = [round(0.1 * i, 1) for i in range(1, 10)]
        curves = tuple(
            ThresholdCurve(tau0=t, knot_domain=(0.0, 0.9), psi=(0.0,) * 10, rho=0.1) for t in taus)
        lut = LookupTable(entries=curves)
        rows = pareto_sweep(builder.dets, builder.gts, builder.maps, taus, lut)
        for row in rows:
            assert row["td_star"] == row["td"]
            assert row["ed_star"] == row["ed"]

    def test_monotone_counts(self):
        builder = sweep_corpus(seed=30)
        taus = [round(0.1 * i, 1) for i in range(1, 10)]
        rows = pareto_sweep(builder.dets, builder.gts, builder.maps, taus)
        tds = [r["td"] for r in rows]
        eds = [r["ed"] for r in rows]
        assert tds == sorted(tds, reverse=True)
        assert eds == sorted(eds, reverse=True)

    def test_missing_lut_key_raises(self):
        builder = mixed_corpus(seed=23)
        lut = LookupTable(entries=(
            ThresholdCurve(tau0=0.5, knot_domain=(0.0, 0.9), psi=(0.0,) * 10, rho=0.1),))
        from depthprior import KeyLookupError

        with pytest.raises(KeyLookupError, match="0.5"):
            pareto_sweep(builder.dets, builder.gts, builder.maps, [0.4], lut)

    def test_unsorted_taus_rejected(self):
        builder = mixed_corpus(seed=23)
        with pytest.raises(DomainError, match="sorted"):
            pareto_sweep(builder.dets, builder.gts, builder.maps, [0.6, 0.4])


# ---------------------------------------------------------------------------
# COCO metrics
# ---------------------------------------------------------------------------

def big_box(x, y, size=100.0):
    return (x, y, x + size, y + size)


def hand_instance():
    """20 boxes, one per image: 12 large GT, 8 detections with known outcomes."""
    gts = [GroundTruthBox(f"im{i}", big_box(0, 0), 0) for i in range(12)]
    dets = [
        Detection("im0", big_box(0, 0), 0.95, 0),    # exact hit
        Detection("im1", big_box(20, 0), 0.90, 0),   # IoU 2/3: hit for gates <= 0.65
        Detection("im2", big_box(500, 500), 0.85, 0),  # false
        Detection("im3", big_box(0, 0), 0.80, 0),    # exact hit
        Detection("im4", big_box(0, 0), 0.75, 0),    # exact hit
        Detection("im5", big_box(500, 500), 0.70, 0),  # false
        Detection("im6", big_box(0, 0), 0.65, 0),    # exact hit
        Detection("im7", big_box(0, 0), 0.60, 0),    # exact hit
    ]
    return dets, gts


def reference_coco(dets, gts):
    """Independent plain-loop reference for the COCO summary."""

    def area(box):
        return (box[2] - box[0]) * (box[3] - box[1])

    def overlap(a, b):
        w = min(a[2], b[2]) - max(a[0], b[0])
        h = min(a[3], b[3]) - max(a[1], b[1])
        if w <= 0 or h <= 0:
            return 0.0
        inter = w * h
        return inter / (area(a) + area(b) - inter)

    gates = [0.5 + 0.05 * k for k in range(10)]
    ranges = {"all": (0, float("inf")), "small": (0, 32 ** 2),
              "medium": (32 ** 2, 96 ** 2), "large": (96 ** 2, float("inf"))}
    classes = sorted({g.class_id for g in gts})
    images = sorted({x.image_id for x in list(dets) + list(gts)})
    ap_cells, ar_cells = {}, {}
    for cls in classes:
        for gate in gates:
            for name, (lo, hi) in ranges.items():
                scored = []
                n_pos = 0
                for image in images:
                    img_dets = sorted(
                        [d for d in dets if d.image_id == image and d.class_id == cls],
                        key=lambda d: -d.score)[:100]
                    img_gts = [g for g in gts if g.image_id == image and g.class_id == cls]
                    ignore = [not (lo <= area(g.box) < hi) for g in img_gts]
                    n_pos += ignore.count(False)
                    taken = [False] * len(img_gts)
                    order = sorted(range(len(img_gts)), key=lambda j: ignore[j])
                    for det in img_dets:
                        pick, pick_iou = -1, 0.0
                        for j in order:
                            if taken[j]:
                                continue
                            if pick >= 0 and ignore[j] and not ignore[pick]:
                                break
                            v = overlap(det.box, img_gts[j].box)
                            if v >= gate and v > pick_iou:
                                pick, pick_iou = j, v
                        if pick >= 0:
                            taken[pick] = True
                            if not ignore[pick]:
                                scored.append((det.score, 1))
                        elif lo <= area(det.box) < hi:
                            scored.append((det.score, 0))
                key = (cls, gate, name)
                if n_pos == 0:
                    ap_cells[key] = ar_cells[key] = None
                    continue
                scored.sort(key=lambda p: -p[0])
                tp = fp = 0
                points = []
                for _, hit in scored:
                    tp += hit
                    fp += 1 - hit
                    points.append((tp / n_pos, tp / (tp + fp)))
                best_ap = 0.0
                for k in range(101):
                    r = k / 100
                    candidates = [p for rec, p in points if rec >= r - 1e-12]
                    best_ap += max(candidates) if candidates else 0.0
                ap_cells[key] = best_ap / 101
                ar_cells[key] = points[-1][0] if points else 0.0

    def combine(cells, name, gate=None):
        values = [v for (c, g, n), v in cells.items()
                  if n == name and (gate is None or g == gate) and v is not None]
        return sum(values) / len(values) if values else -1.0

    return {
        "mAP": combine(ap_cells, "all"),
        "mAP50": combine(ap_cells, "all", 0.5),
        "mAP_S": combine(ap_cells, "small"),
        "mAP_M": combine(ap_cells, "medium"),
        "mAP_L": combine(ap_cells, "large"),
        "mAR": combine(ar_cells, "all"),
        "mAR_S": combine(ar_cells, "small"),
        "mAR_M": combine(ar_cells, "medium"),
        "mAR_L": combine(ar_cells, "large"),
    }


class TestCocoMap:
    def perfect_fixture(self):
        gts, dets = [], []
        sizes = [10.0, 50.0, 200.0]  # one GT per size bin
        for i, size in enumerate(sizes * 3):
            image = f"p{i}"
            gts.append(GroundTruthBox(image, (0, 0, size, size), i % 2))
            dets.append(Detection(image, (0, 0, size, size), 1.0, i % 2))
        return dets, gts

    def test_perfect_detections(self):
        dets, gts = self.perfect_fixture()
        metrics = coco_map(dets, gts)
        for key in ("mAP", "mAP50", "mAP_S", "mAP_M", "mAP_L", "mAR", "mAR_S", "mAR_M", "mAR_L"):
            assert metrics[key] == pytest.approx(1.0), key

    def test_no_detections_all_zero(self):
        _, gts = self.perfect_fixture()
        metrics = coco_map([], gts)
        assert all(v == 0.0 for v in metrics.values())

    def test_empty_gt_rejected(self):
        with pytest.raises(DomainError):
            coco_map([], [])

    def test_hand_instance_frozen_values(self):
        dets, gts = hand_instance()
        metrics = coco_map(dets, gts)
        # precision envelopes worked out on paper for both gate regimes
        ap_low = (17 * 1.0 + 17 * 0.8 + 17 * 0.75) / 101       # gates 0.50..0.65
        ap_high = (9 * 1.0 + 33 * 0.625) / 101                 # gates 0.70..0.95
        assert metrics["mAP50"] == pytest.approx(ap_low, abs=1e-4)
        assert metrics["mAP"] == pytest.approx((4 * ap_low + 6 * ap_high) / 10, abs=1e-4)
        assert metrics["mAR"] == pytest.approx((4 * 0.5 + 6 * 5 / 12) / 10, abs=1e-4)
        assert metrics["mAP_L"] == pytest.approx(metrics["mAP"], abs=1e-12)
        assert metrics["mAP_S"] == -1.0 and metrics["mAP_M"] == -1.0

    def test_hand_instance_matches_reference(self):
        dets, gts = hand_instance()
        got = coco_map(dets, gts)
        expected = reference_coco(dets, gts)
        for key, value in expected.items():
            assert got[key] == pytest.approx(value, abs=1e-4), key

    def test_random_corpus_matches_reference(self):
        rng = np.random.default_rng(77)
        gts, dets = [], []
        for i in range(12):
            image = f"r{i}"
            for _ in range(3):
                size = float(rng.choice([8, 40, 120]))
                x, y = rng.uniform(0, 300, 2)
                cls = int(rng.integers(0, 2))
                gts.append(GroundTruthBox(image, (x, y, x + size, y + size), cls))
                if rng.random() < 0.8:
                    dx = float(rng.uniform(-0.2, 0.2) * size)
                    dets.append(Detection(image, (x + dx, y, x + size + dx, y + size),
                                          float(rng.uniform(0.1, 1)), cls))
            if rng.random() < 0.5:
                x, y = rng.uniform(400, 600, 2)
                dets.append(Detection(image, (x, y, x + 30, y + 30),
                                      float(rng.uniform(0.1, 1)), int(rng.integers(0, 2))))
        got = coco_map(dets, gts)
        expected = reference_coco(dets, gts)
        for key, value in expected.items():
            assert got[key] == pytest.approx(value, abs=1e-9), key


class TestEmpiricalThreshold:
    def test_all_matched_gives_min_score(self):
        builder = CorpusBuilder(seed=40)
        scores = {}
        for i in range(5):
            for j, depth in enumerate([0.15, 0.55, 0.95]):
                score = 0.2 + 0.13 * i + 0.02 * j
                builder.add_matched(f"im{i}", depth, score)
                scores.setdefault(int(depth * 10) if depth < 1 else 9, []).append(score)
        out = empirical_optimal_threshold(
            builder.dets, builder.gts, builder.maps, CostModel(c_fn=1, c_fp=5), bins=10)
        for b, values in scores.items():
            assert out[b] == pytest.approx(min(values))

    def test_unreachable_ratio_returns_one(self):
        builder = CorpusBuilder(seed=41)
        for i in range(5):
            builder.add_unmatched(f"im{i}", 0.5, 0.9 - 0.1 * i)  # top of the bin is unmatched
            builder.add_matched(f"im{i}", 0.5, 0.3)
        out = empirical_optimal_threshold(
            builder.dets, builder.gts, builder.maps, CostModel(c_fn=1e-9, c_fp=1), bins=1)
        assert out[0] == 1.0

    def test_empty_bin_sentinel(self):
        builder = CorpusBuilder(seed=42)
        builder.add_matched("im0", 0.95, 0.8)
        out = empirical_optimal_threshold(
            builder.dets, builder.gts, builder.maps, CostModel(c_fn=1, c_fp=1), bins=10)
        assert math.isnan(out[0]) and out[9] == pytest.approx(0.8)

    def test_matches_exhaustive_scan(self):
        builder = CorpusBuilder(seed=43)
        rng = np.random.default_rng(43)
        for i in range(12):
            image = f"im{i}"
            for _ in range(3):
                score = round(float(rng.uniform(0.05, 0.99)), 1)  # coarse grid forces ties
                if rng.random() < 0.55:
                    builder.add_matched(image, float(rng.uniform(0.55, 0.65)), score)
                else:
                    builder.add_unmatched(image, float(rng.uniform(0.55, 0.65)), score)
        cost = CostModel(c_fn=1.0, c_fp=1.0)
        out = empirical_optimal_threshold(builder.dets, builder.gts, builder.maps, cost, bins=1)

        det_matched, _ = matched_flags(builder.dets, builder.gts)
        entries = sorted(zip([d.score for d in builder.dets], det_matched))
        expected = 1.0
        for s, _ in entries:  # exhaustive scan over every candidate threshold
            above = [m for sc, m in entries if sc >= s]
            p = sum(above) / len(above)
            odds = math.inf if p == 1.0 else p / (1 - p)
            if odds >= 1.0:
                expected = s
                break
        assert out[0] == pytest.approx(expected)

    def test_tied_scores_use_full_tie_group(self):
        # two detections share the qualifying score: one matched, one not
        builder = CorpusBuilder(seed=44)
        builder.add_unmatched("im0", 0.5, 0.9)
        builder.add_matched("im0", 0.5, 0.6)
        builder.add_unmatched("im0", 0.5, 0.6)
        builder.add_matched("im0", 0.5, 0.6)
        builder.add_matched("im0", 0.5, 0.6)
        # at s=0.6 the pool is {3 matched, 2 unmatched}: odds 3/2 >= 1.2
        out = empirical_optimal_threshold(
            builder.dets, builder.gts, builder.maps, CostModel(c_fn=1.0, c_fp=1.2), bins=1)
        assert out[0] == pytest.approx(0.6)
