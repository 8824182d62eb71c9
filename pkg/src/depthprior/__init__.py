"""Depth-aware detection toolkit.

Turns monocular depth maps into training supervision artifacts (per-object
loss weights and close/distant stratification masks) and inference-time
depth-adaptive confidence thresholds fitted by constrained black-box search,
with a matching/evaluation harness and a variance-theory simulator.
"""

from .depthnorm import (
    BatchDepth,
    DepthLookup,
    box_depth,
    downsample_to_level,
    normalize_batch,
    normalize_image,
)
from .dct import (
    CoeffBounds,
    FitConfig,
    FitOutcome,
    ObjectiveVariant,
    OptimizerConfig,
    apply_lut,
    build_lut,
    fit_curve,
    objective,
)
from .errors import DepthPriorError, DomainError, FormatError, KeyLookupError
from .hetsim import BiasTrajectory, SimConfig, Weighting, bias_experiment, sample_losses
from .io import (
    read_depth_map,
    read_detections,
    read_groundtruth,
    read_lookup_table,
    read_weight_records,
    write_depth_map,
    write_detections,
    write_groundtruth,
    write_lookup_table,
    write_weight_records,
)
from .matching import (
    CostModel,
    MatchConfig,
    coco_map,
    count_report,
    empirical_optimal_threshold,
    iou,
    match_image,
    match_rate_grid,
    pareto_sweep,
)
from .spline import BasisSpec, basis_eval, threshold_at
from .supervise import (
    ObjectLoss,
    StratConfig,
    StratMasks,
    WeightingMode,
    WeightingTag,
    ablation_weight,
    build_strat_masks,
    dlw_weight,
    strat_gradient_check,
    stratified_loss,
    weighted_total_loss,
)
from .types import (
    DepthMap,
    Detection,
    GroundTruthBox,
    LookupTable,
    MatchReport,
    NormalizedDepthMap,
    ThresholdCurve,
)

__version__ = "0.1.0"
