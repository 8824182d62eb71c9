#!/usr/bin/env python3
"""Generate the committed fixture set for the adapter package.

Produces depth maps, ground truth, weight records, stratification masks, a
fitted lookup table, detection lists, and the expected outputs the adapter
must reproduce. Rerunning overwrites adapter/tests/fixtures deterministically.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "tests"))

from synth import recoverable_corpus  # noqa: E402

from depthprior import (  # noqa: E402
    FitConfig,
    ObjectLoss,
    OptimizerConfig,
    StratConfig,
    WeightingMode,
    apply_lut,
    build_lut,
    build_strat_masks,
    normalize_image,
    stratified_loss,
    weighted_total_loss,
    write_depth_map,
    write_detections,
    write_groundtruth,
    write_lookup_table,
)
from depthprior.cli import main as cli_main  # noqa: E402
from depthprior.io import detection_to_record, read_weight_records  # noqa: E402

FIXTURES = ROOT / "adapter" / "tests" / "fixtures"


def build() -> None:
    rng = np.random.default_rng(424242)
    corpus = recoverable_corpus(tau0=0.5, seed=42, n_images=6, planted=20)

    depth_dir = FIXTURES / "depth"
    mask_dir = FIXTURES / "masks"
    for folder in (FIXTURES, depth_dir, mask_dir):
        folder.mkdir(parents=True, exist_ok=True)
        for stale in folder.glob("*.dpm"):
            stale.unlink()

    for image_id, depth_map in corpus.maps.items():
        write_depth_map(depth_map.values, depth_dir / f"{image_id}.dpm")
    write_detections(corpus.dets, FIXTURES / "detections.jsonl")
    write_groundtruth(corpus.gts, FIXTURES / "groundtruth.jsonl")

    # weight records via the CLI surface (single batch of all images)
    assert cli_main([
        "dlw", "--depth-dir", str(depth_dir), "--groundtruth", str(FIXTURES / "groundtruth.jsonl"),
        "--alpha", "1.0", "--out", str(FIXTURES / "weights.jsonl"),
    ]) == 0
    (FIXTURES / "weights.jsonl.meta.json").unlink(missing_ok=True)  # machine-specific paths

    # stratification masks for two feature levels
    strat_cfg = StratConfig(beta=0.5, mode="quantile", lambdas=(1.0, 2.0))
    levels = [(10, 24), (5, 12)]
    for image_id, depth_map in corpus.maps.items():
        masks = build_strat_masks(normalize_image(depth_map), strat_cfg, levels)
        for level_idx, level_masks in enumerate(masks.levels, start=1):
            for stratum in range(masks.num_strata):
                name = f"{image_id}.L{level_idx}.K{stratum + 1}.dpm"
                write_depth_map(level_masks[stratum].astype("f4"), mask_dir / name)

    # fitted lookup table
    fit_cfg = FitConfig(taus=(0.4, 0.5, 0.7),
                        optimizer=OptimizerConfig(seed=5, population=16, generations=30,
                                                  stagnation=12))
    lut = build_lut(corpus.dets, corpus.gts, corpus.maps, fit_cfg)
    write_lookup_table(lut, FIXTURES / "lut.json")

    # expected filtered detections per table entry
    filtered = {
        str(tau0): [detection_to_record(d) for d in apply_lut(corpus.dets, corpus.maps, tau0, lut)]
        for tau0 in (0.4, 0.5, 0.7)
    }

    # per-object losses + the weighted total the adapter must reproduce
    records = read_weight_records(FIXTURES / "weights.jsonl")
    losses = []
    object_losses = []
    for record in records:
        cls_loss = round(float(rng.uniform(0, 2)), 6)
        box_loss = round(float(rng.uniform(0, 2)), 6)
        losses.append({"image": record["image"], "object_index": record["object_index"],
                       "cls_loss": cls_loss, "box_loss": box_loss})
        object_losses.append(ObjectLoss(record["image"], record["object_index"],
                                        cls_loss, box_loss, record["depth_norm"]))
    (FIXTURES / "losses.json").write_text(json.dumps(losses, indent=2) + "\n")
    expected_weighted = weighted_total_loss(object_losses, WeightingMode(tag="dlw", alpha=1.0))

    # per-level loss grids for one image + the per-stratum terms
    grid_image = sorted(corpus.maps)[0]
    cls_grids = [np.round(rng.uniform(0, 1, shape), 6) for shape in levels]
    box_grids = [np.round(rng.uniform(0, 1, shape), 6) for shape in levels]
    masks = build_strat_masks(normalize_image(corpus.maps[grid_image]), strat_cfg, levels)
    strat_terms = [
        stratified_loss([cls_grids], [box_grids], [masks], one_hot)
        for one_hot in ((1.0, 0.0), (0.0, 1.0))
    ]
    (FIXTURES / "loss_grids.json").write_text(json.dumps({
        "image": grid_image,
        "cls": [g.tolist() for g in cls_grids],
        "box": [g.tolist() for g in box_grids],
    }, indent=2) + "\n")

    # a bulk weight file for lookup checks
    bulk = []
    for i in range(1000):
        bulk.append({"image": f"bulk{i % 25}", "object_index": i // 25,
                     "depth_norm": round(float(rng.uniform(0, 1)), 6),
                     "weight": round(float(rng.uniform(1, 4)), 6)})
    with open(FIXTURES / "bulk_weights.jsonl", "w", encoding="utf-8") as fh:
        for record in bulk:
            fh.write(json.dumps(record) + "\n")

    (FIXTURES / "expected.json").write_text(json.dumps({
        "weighted_total_loss": expected_weighted,
        "strat_terms": {grid_image: strat_terms},
        "filtered": filtered,
    }, indent=2) + "\n")
    print(f"fixtures written to {FIXTURES}")


if __name__ == "__main__":
    build()
