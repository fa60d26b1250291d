"""Scale-insensitive detection operators.

Context-aware RoI pooling with an exact backward pass, bilinear-kernel
transposed convolution, scale-based proposal routing, coordinate-averaging
soft-NMS, and scale-binned average-precision evaluation, plus synthetic
scenes for comparing the pooling paths.
"""

from .errors import EmptyRoiError, FileFormatError, GenerationError, UndefinedScoreError
from .evaluation import (
    BinResult,
    GroundTruth,
    MatchLabel,
    MatchResult,
    ScaleBin,
    average_precision,
    evaluate_by_scale,
    match_detections,
    scale_bin,
)
from .geometry import Box, Roi, iou
from .pooling import (
    CaseTag,
    GridRect,
    PoolRecord,
    PooledFeature,
    caroi_pool_backward,
    caroi_pool_forward,
    dispatch_case,
    grid_rect,
    roi_pool_forward,
)
from .postprocess import Detection, nms, soft_nms_avg
from .routing import (
    BranchAssignment,
    ScaleStats,
    fit_scale_stats,
    fuse,
    quantile_thresholds,
    route,
    sample_threshold,
)
from .synth import SyntheticScene, gen_scene, resample_bilinear, structure_score
from .tensor import (
    BilinearKernel,
    Tensor3,
    bilinear_profile,
    deconv2d,
    deconv2d_input_grad,
    load_tensor,
    make_bilinear_kernel,
    save_tensor,
)

__version__ = "0.1.0"

__all__ = [
    "BilinearKernel",
    "BinResult",
    "Box",
    "BranchAssignment",
    "CaseTag",
    "Detection",
    "EmptyRoiError",
    "FileFormatError",
    "GenerationError",
    "GridRect",
    "GroundTruth",
    "MatchLabel",
    "MatchResult",
    "PoolRecord",
    "PooledFeature",
    "Roi",
    "ScaleBin",
    "ScaleStats",
    "SyntheticScene",
    "Tensor3",
    "UndefinedScoreError",
    "average_precision",
    "bilinear_profile",
    "caroi_pool_backward",
    "caroi_pool_forward",
    "deconv2d",
    "deconv2d_input_grad",
    "dispatch_case",
    "evaluate_by_scale",
    "fit_scale_stats",
    "fuse",
    "gen_scene",
    "grid_rect",
    "iou",
    "load_tensor",
    "make_bilinear_kernel",
    "match_detections",
    "nms",
    "quantile_thresholds",
    "resample_bilinear",
    "roi_pool_forward",
    "route",
    "sample_threshold",
    "save_tensor",
    "scale_bin",
    "soft_nms_avg",
    "structure_score",
]
