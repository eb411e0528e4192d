"""Fusion of object detections gathered across photometric test-time augmentations.

Boxes that several augmented views agree on are combined coordinate by
coordinate with a Choquet integral over an overlap-based fuzzy measure.
"""

from .augment import AugmentationSpec, apply, full_roster, roster
from .detector import DetectorBinding, SyntheticModel, detect, open_detector
from .errors import DetFusionError, ZeroAgreement
from .estimators import Augmenter, BoxFuser, DetectionFusion
from .evaluation import average_iou, compare_methods, detection_count, make_record, mean_ap
from .fusion import Detection, FusionMethod, FusionResult, dispatch, fuse_aabbfi, fuse_average, fuse_median, fuse_nms
from .geometry import AABB, Interval, iou
from .grouping import DetectionPool, group, object_count
from .measure import FuzzyMeasure, agreement_chain, agreement_measure, choquet, choquet_interval, validate_measure
from .pipeline import PipelineConfig, PipelineReport, batch, run

__version__ = "0.1.0"

__all__ = [
    "AABB", "AugmentationSpec", "Augmenter", "BoxFuser", "DetFusionError", "Detection",
    "DetectionFusion", "DetectionPool", "DetectorBinding", "FusionMethod", "FusionResult",
    "FuzzyMeasure", "Interval", "PipelineConfig", "PipelineReport", "SyntheticModel", "ZeroAgreement",
    "agreement_chain", "agreement_measure", "apply", "average_iou", "batch", "choquet",
    "choquet_interval", "compare_methods", "detect", "detection_count", "dispatch", "full_roster",
    "fuse_aabbfi", "fuse_average", "fuse_median", "fuse_nms", "group", "iou", "make_record",
    "mean_ap", "object_count", "open_detector", "roster", "run", "validate_measure",
]
