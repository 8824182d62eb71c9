"""In-process consumer of depthprior training and inference artifacts.

Loads weight records, stratification masks, and threshold lookup tables
produced by the main toolkit and applies them to in-loop loss values and
post-NMS detection lists. Never refits or rematches anything: the artifacts
are the single source of truth.
"""

from .bundle import (
    AdapterBundle,
    BundleFormatError,
    MissingWeightError,
    apply_weights,
    filter_detections,
    load_bundle,
    read_depth_grid,
    stratified_loss_terms,
    threshold_for_depth,
)

__version__ = "0.1.0"
