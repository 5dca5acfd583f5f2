"""Point-cloud instance segmentation by hierarchical radius grouping and mask refinement."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    GroundTruthInstance,
    InvariantError,
    ParseError,
    PipelineConfig,
    PointCloud,
    ShiftedCloud,
    ValidationError,
    load_cloud,
    save_cloud,
    shift_points,
    voxel_downsample,
)
from .hpg import Group, GroupingResult, hierarchical_group  # noqa: E402
from .inference import Prediction, nms, segment_scene  # noqa: E402
from .evaluation import EvalReport, evaluate  # noqa: E402

__all__ = [
    "__version__",
    "EvalReport",
    "GroundTruthInstance",
    "Group",
    "GroupingResult",
    "InvariantError",
    "ParseError",
    "PipelineConfig",
    "PointCloud",
    "Prediction",
    "ShiftedCloud",
    "ValidationError",
    "evaluate",
    "hierarchical_group",
    "load_cloud",
    "nms",
    "save_cloud",
    "segment_scene",
    "shift_points",
    "voxel_downsample",
]
