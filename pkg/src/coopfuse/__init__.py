"""Cooperative BEV feature fusion: weighted maxout with feature enhancement,
plus the synthetic multi-vehicle LiDAR harness used to measure it."""

from .alignment import AlignedPair, OverlapRegion, align, split_regions
from .codec import (
    BandwidthReport,
    ChecksumError,
    CodecError,
    HeaderError,
    MagicError,
    PayloadError,
    TruncatedError,
    bandwidth_report,
    decode,
    encode,
)
from .config import METHODS, ConfigError, RunConfig, load_config
from .detector import (
    CdfTable,
    Detection,
    EvalConfig,
    MatchResult,
    PrecisionReport,
    detect,
    detections_to_world,
    evaluate,
    improvement_cdf,
    iou,
    match,
    range_cdf,
)
from .fusion import (
    EnhanceConfig,
    FusionReport,
    WeightConfig,
    coff_fuse,
    coff_fuse_multi,
    enhance,
    maxout_baseline,
    similarity,
    weight,
    weight_branch,
    weighted_maxout,
)
from .grid import (
    FeatureClass,
    FeatureMap,
    GridSpec,
    Pose2D,
    classify_feature,
    world_to_cell,
)
from .runner import RunSummary, ScenarioResult, explain, run, run_scenario
from .scene import (
    GroundTruthBox,
    LidarModel,
    Scene,
    TEMPLATES,
    VehicleNode,
    build_scenario,
    cast_rays,
    extract_features,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
