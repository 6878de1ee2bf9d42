"""Iterative automated labeling for keypoint (pose) datasets."""

from .geometry import CornerBox, brute_force_nms, confidence_filter, iou, nms, to_corners
from .label_io import (
    Manifest,
    load_dataset,
    open_dataset,
    parse_label_file,
    parse_predictions,
    read_manifest,
    serialize_label_file,
    write_dataset,
    write_manifest,
    write_predictions,
)
from .merge import IterationStats, count_stats, growth_pct, merge_labels
from .metrics import (
    MatchResult,
    MetricsReport,
    ap_range,
    average_precision,
    evaluate,
    keypoint_mse,
    match_detections,
    precision_recall,
)
from .model import (
    Detection,
    ImageRecord,
    Keypoint,
    LabelSet,
    NormBBox,
    PoseInstance,
    validate_instance,
)
from .pipeline import PipelineConfig, RunReport, load_config, run_iteration, run_pipeline
from .synth import NoiseProfile, make_fixture, synth_predict

__version__ = "0.1.0"
