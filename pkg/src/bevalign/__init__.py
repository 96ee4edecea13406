"""BEV instance alignment: contrastive pairing of LiDAR and camera
instance features on a shared bird's-eye-view grid, robust to calibration
and timing noise."""

__version__ = "0.1.0"

from .alignfuse import (
    AlignConfig,
    AlignEntry,
    AlignmentResult,
    EmptyNeighborhoodError,
    FusedMap,
    PipelineOutput,
    align,
    align_instances,
    fuse,
)
from .contrastive import (
    LengthMismatchError,
    LossConfig,
    LossReport,
    NoPairsError,
    ProjectionHead,
    ScenePairs,
    TrainConfig,
    TrainResult,
    ZeroVectorError,
    cosine_sim,
    info_nce,
    init_heads,
    log_softmax_stable,
    sq_distance,
    train_heads,
)
from .experiment import (
    ConfigError,
    ExperimentConfig,
    RunReport,
    load_config,
    metrics_csv,
    parse_config,
    run_experiment,
    write_outputs,
)
from .grid import (
    FeatureMap,
    GridMeta,
    MetaMismatchError,
    OutOfBoundsError,
    PlanarTransform,
    apply_transform,
    bilinear_sample,
    default_meta,
    grid_to_world,
    load_feature_map,
    read_bevf,
    save_feature_map,
    world_to_grid,
    write_bevf,
)
from .instance import (
    InstanceConfig,
    InvalidKernelError,
    Proposal,
    RoiFeature,
    extract_instances,
    roi_sample,
    sparse_max_pool_peaks,
)
from .pairing import (
    Box2D,
    EmptyInputError,
    KdIndex,
    PairConfig,
    PairSet,
    build_kd,
    build_pairs,
    iou,
    knn_negatives,
    positive_pairs,
)
from .scenesim import (
    AppliedNoise,
    Metrics,
    NoiseSpec,
    NotRunError,
    PlacementFailureError,
    Scene,
    SceneConfig,
    SceneObject,
    apply_spatial_noise,
    apply_temporal_noise,
    eval_alignment,
    gen_scene,
    hash64,
    load_scene,
    save_scene,
)

__all__ = [
    "__version__",
    "AlignConfig",
    "AlignEntry",
    "AlignmentResult",
    "AppliedNoise",
    "Box2D",
    "ConfigError",
    "EmptyInputError",
    "EmptyNeighborhoodError",
    "ExperimentConfig",
    "FeatureMap",
    "FusedMap",
    "GridMeta",
    "InstanceConfig",
    "InvalidKernelError",
    "KdIndex",
    "LengthMismatchError",
    "LossConfig",
    "LossReport",
    "Metrics",
    "MetaMismatchError",
    "NoPairsError",
    "NoiseSpec",
    "NotRunError",
    "OutOfBoundsError",
    "PairConfig",
    "PairSet",
    "PipelineOutput",
    "PlacementFailureError",
    "PlanarTransform",
    "ProjectionHead",
    "Proposal",
    "RoiFeature",
    "RunReport",
    "Scene",
    "SceneConfig",
    "SceneObject",
    "ScenePairs",
    "TrainConfig",
    "TrainResult",
    "ZeroVectorError",
    "align",
    "align_instances",
    "apply_spatial_noise",
    "apply_temporal_noise",
    "apply_transform",
    "bilinear_sample",
    "build_kd",
    "build_pairs",
    "cosine_sim",
    "default_meta",
    "eval_alignment",
    "extract_instances",
    "fuse",
    "gen_scene",
    "grid_to_world",
    "hash64",
    "info_nce",
    "init_heads",
    "iou",
    "knn_negatives",
    "load_config",
    "load_feature_map",
    "load_scene",
    "log_softmax_stable",
    "metrics_csv",
    "parse_config",
    "positive_pairs",
    "read_bevf",
    "roi_sample",
    "run_experiment",
    "save_feature_map",
    "save_scene",
    "sparse_max_pool_peaks",
    "sq_distance",
    "train_heads",
    "world_to_grid",
    "write_bevf",
]
