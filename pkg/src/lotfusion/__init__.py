"""lotfusion: decentralized multi-camera parking-lot vehicle counting.

Camera nodes detect vehicles in their own view, register pairwise
homographies with their neighbors once at startup, exchange detection
masks each round, and report per-view counts plus overlap duplicates to a
sink that forms the global count. Everything runs over an in-process
simulated network or plain TCP, deterministically for a fixed seed.
"""

__version__ = "0.1.0"

from .detection import DetectorNoise, Observation, ScriptedDetector, SyntheticDetector, detect
from .errors import LotfusionError
from .geometry import (
    Correspondence,
    Homography,
    ImageBounds,
    MaskPolygon,
    RansacParams,
    apply,
    compose,
    estimate_dlt,
    estimate_ransac,
    invert,
    iou,
    project_mask,
)
from .protocol import (
    CountReport,
    NodeState,
    compute_mu,
    node_initialize,
    node_local_count,
    sink_aggregate,
    sink_global_count,
)
from .registration import (
    Feature,
    MatchCandidate,
    RegistrationConfig,
    compute_pairwise_homography,
    distance_filter,
    match_descriptors,
    ratio_filter,
)
from .runner import ProtocolRunner, RoundTrace
from .scenario import (
    ParkingWorld,
    SequenceSpec,
    WorldConfig,
    generate_world,
    preset,
    render_observation,
    standard_suite,
    true_global_count,
    true_pairwise_homography,
)

__all__ = [
    "__version__",
    "LotfusionError",
    "Homography",
    "MaskPolygon",
    "ImageBounds",
    "Correspondence",
    "RansacParams",
    "apply",
    "compose",
    "invert",
    "iou",
    "project_mask",
    "estimate_dlt",
    "estimate_ransac",
    "Feature",
    "MatchCandidate",
    "RegistrationConfig",
    "match_descriptors",
    "ratio_filter",
    "distance_filter",
    "compute_pairwise_homography",
    "Observation",
    "DetectorNoise",
    "detect",
    "SyntheticDetector",
    "ScriptedDetector",
    "NodeState",
    "CountReport",
    "compute_mu",
    "node_initialize",
    "node_local_count",
    "sink_aggregate",
    "sink_global_count",
    "ProtocolRunner",
    "RoundTrace",
    "WorldConfig",
    "ParkingWorld",
    "SequenceSpec",
    "generate_world",
    "render_observation",
    "true_global_count",
    "true_pairwise_homography",
    "standard_suite",
    "preset",
]
