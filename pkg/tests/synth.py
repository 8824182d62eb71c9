"""Synthetic corpus builders shared by the test suite.

Depth maps are horizontal inverse-depth gradients (D = 1 - w/(W-1)), so a box
centered on column c has per-image normalized depth exactly c/(W-1). Objects
live on a grid of separated cells, which keeps every detection overlapping at
most one ground-truth box.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from depthprior import DepthMap, Detection, GroundTruthBox

WIDTH = 96
HEIGHT = 40
ROW_HEIGHT = 8
BOX_HALF = 1  # box spans columns [c-1, c+1]


def gradient_map(width: int = WIDTH, height: int = HEIGHT) -> DepthMap:
    cols = 1.0 - np.arange(width, dtype=np.float32) / (width - 1)
    return DepthMap(np.tile(cols, (height, 1)))


def column_for_depth(depth: float, width: int = WIDTH) -> int:
    return int(round(depth * (width - 1)))


def cell_box(column: int, row: int) -> tuple[float, float, float, float]:
    y = row * ROW_HEIGHT + 2
    return (column - BOX_HALF, y, column + BOX_HALF, y + 4)


@dataclass
class CorpusBuilder:
    """Accumulates detections/GT on the separated cell grid, one gradient map per image."""

    seed: int = 0
    width: int = WIDTH
    height: int = HEIGHT
    dets: list[Detection] = field(default_factory=list)
    gts: list[GroundTruthBox] = field(default_factory=list)
    maps: dict[str, DepthMap] = field(default_factory=dict)
    _used: dict[str, set[tuple[int, int]]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.rng = np.random.default_rng(self.seed)
        self._template = gradient_map(self.width, self.height)

    @property
    def num_rows(self) -> int:
        return self.height // ROW_HEIGHT

    def image(self, image_id: str) -> str:
        if image_id not in self.maps:
            self.maps[image_id] = self._template
            self._used[image_id] = set()
        return image_id

    def _claim_cell(self, image_id: str, depth: float) -> tuple[int, int]:
        column = column_for_depth(depth, self.width)
        used = self._used[image_id]
        rows = list(range(self.num_rows))
        self.rng.shuffle(rows)
        for row in rows:
            # keep one empty slot of separation between columns in a row
            if all(abs(column - c) >= 5 for (c, r) in used if r == row):
                used.add((column, row))
                return column, row
        raise RuntimeError(f"no free cell for depth {depth} in {image_id}")

    def add_matched(self, image_id: str, depth: float, score: float, class_id: int = 0,
                    jitter: float = 0.0) -> None:
        """A GT box plus one detection on it (IoU 1, or >= 0.5 with jitter)."""
        image_id = self.image(image_id)
        column, row = self._claim_cell(image_id, depth)
        box = cell_box(column, row)
        self.gts.append(GroundTruthBox(image_id, box, class_id))
        det_box = box
        if jitter:
            dx = float(self.rng.uniform(-jitter, jitter))
            det_box = (box[0] + dx, box[1], box[2] + dx, box[3])
        self.dets.append(Detection(image_id, det_box, score, class_id))

    def add_unmatched(self, image_id: str, depth: float, score: float, class_id: int = 0) -> None:
        """A detection in an empty cell (matches nothing)."""
        image_id = self.image(image_id)
        column, row = self._claim_cell(image_id, depth)
        self.dets.append(Detection(image_id, cell_box(column, row), score, class_id))

    def add_missed(self, image_id: str, depth: float, class_id: int = 0) -> None:
        """A GT box with no detection anywhere near it."""
        image_id = self.image(image_id)
        column, row = self._claim_cell(image_id, depth)
        self.gts.append(GroundTruthBox(image_id, cell_box(column, row), class_id))


def mixed_corpus(seed: int = 0, n_images: int = 30) -> CorpusBuilder:
    """Generic corpus: matched and unmatched detections across depths and scores."""
    builder = CorpusBuilder(seed=seed)
    rng = builder.rng
    for i in range(n_images):
        image_id = f"img{i:03d}"
        for _ in range(3):
            builder.add_matched(image_id, float(rng.uniform(0.1, 0.9)), float(rng.uniform(0.3, 0.99)))
        for _ in range(2):
            builder.add_unmatched(image_id, float(rng.uniform(0.1, 0.9)), float(rng.uniform(0.15, 0.99)))
        if i % 3 == 0:
            builder.add_missed(image_id, float(rng.uniform(0.1, 0.9)))
        if i % 4 == 0:
            builder.add_unmatched(image_id, float(rng.uniform(0.1, 0.9)), float(rng.uniform(0.0, 0.08)))
    return builder


def recoverable_corpus(
    tau0: float = 0.5,
    seed: int = 7,
    n_images: int = 25,
    planted: int = 100,
) -> CorpusBuilder:
    """Planted-signal corpus for threshold-curve fitting.

    `planted` matched detections sit at depth > 0.75 scoring just below tau0
    with no unmatched detections in that region, near-depth unmatched
    distractors sit just below tau0, and a static population keeps both
    TP_static and FP_static positive.
    """
    builder = CorpusBuilder(seed=seed)
    rng = builder.rng
    images = [f"val{i:03d}" for i in range(n_images)]
    for idx in range(planted):
        image_id = images[idx % n_images]
        depth = float(rng.uniform(0.76, 0.88))
        score = float(rng.uniform(tau0 - 0.14, tau0 - 0.015))
        builder.add_matched(image_id, depth, score)
    for idx in range(2 * n_images):
        image_id = images[idx % n_images]
        depth = float(rng.uniform(0.08, 0.28))
        score = float(rng.uniform(tau0 - 0.14, tau0 - 0.03))
        builder.add_unmatched(image_id, depth, score)
    for idx in range(2 * n_images):
        image_id = images[idx % n_images]
        builder.add_matched(image_id, float(rng.uniform(0.1, 0.65)), float(rng.uniform(min(tau0 + 0.05, 0.95), 0.99)))
    for idx in range(n_images):
        image_id = images[idx % n_images]
        builder.add_unmatched(image_id, float(rng.uniform(0.35, 0.65)), float(rng.uniform(min(tau0 + 0.05, 0.95), 0.99)))
    return builder


def sweep_corpus(seed: int = 3, n_images: int = 30) -> CorpusBuilder:
    """Recoverable signal across the whole score range: far matched detections at
    every score level, near unmatched distractors likewise, plus high-score anchors."""
    builder = CorpusBuilder(seed=seed)
    rng = builder.rng
    for i in range(n_images):
        image_id = f"swp{i:03d}"
        for _ in range(4):
            builder.add_matched(image_id, float(rng.uniform(0.74, 0.89)), float(rng.uniform(0.05, 0.99)))
        for _ in range(2):
            builder.add_unmatched(image_id, float(rng.uniform(0.08, 0.3)), float(rng.uniform(0.05, 0.99)))
        builder.add_matched(image_id, float(rng.uniform(0.35, 0.65)), float(rng.uniform(0.9, 0.99)))
        builder.add_unmatched(image_id, float(rng.uniform(0.35, 0.65)), float(rng.uniform(0.9, 0.99)))
    return builder
