"""Uncertainty quantification for 6D object-pose estimates.

Renders the object model under an estimated pose, compares the silhouette
with the instance segmentation, and turns the overlap into a calibrated
uncertainty; ships an ensemble-disagreement baseline, the TP/FP/FN
evaluation methodology with threshold sweeps, a synthetic benchmark
generator, and a CLI wiring it all together.
"""

from .geometry import (
    CameraIntrinsics,
    ModelPoints,
    Pose,
    TriangleMesh,
    sample_model_points,
)
from .masks import BinaryMask, iou_matrix, mask_iou, rle_decode, rle_encode
from .render import DepthRenderer, RenderResult, mask_from_depth, render_depth
from .maskval import (
    EstimateAssessment,
    MaskValConfig,
    PoseEstimate,
    Segmentation,
    UncertaintyReport,
    certainty_two_stage,
    match_greedy,
    quantify_scene,
    uncertainty,
)
from .ensemble import (
    AddNormalization,
    add_disagreement,
    associate_streams,
    calibrate_d_min,
    ensemble_quantify,
    normalize_add,
)
from .metrics import (
    EvalCurves,
    EvalImage,
    GroundTruthObject,
    ImageCounts,
    ScoredEstimate,
    auc,
    classify_image,
    correlation_pairs,
    dataset_scores,
    mdd,
    spearman,
    sweep_curves,
    threshold_for_target,
)
from .dataset import (
    EstimateRecord,
    MeshParseError,
    PerturbationSpec,
    SceneFormatError,
    SceneRecord,
    SegmentationRecord,
    box_mesh,
    default_model_points,
    degrade_mask,
    generate_benchmark,
    load_mesh,
    load_scene,
    model_points_for,
    octahedron_mesh,
    perturb_pose,
    save_mesh,
    save_scene,
)

__version__ = "0.1.0"

__all__ = [
    "AddNormalization",
    "BinaryMask",
    "CameraIntrinsics",
    "DepthRenderer",
    "EstimateAssessment",
    "EstimateRecord",
    "EvalCurves",
    "EvalImage",
    "GroundTruthObject",
    "ImageCounts",
    "MaskValConfig",
    "MeshParseError",
    "ModelPoints",
    "PerturbationSpec",
    "Pose",
    "PoseEstimate",
    "RenderResult",
    "SceneFormatError",
    "SceneRecord",
    "ScoredEstimate",
    "Segmentation",
    "SegmentationRecord",
    "TriangleMesh",
    "UncertaintyReport",
    "add_disagreement",
    "associate_streams",
    "auc",
    "box_mesh",
    "calibrate_d_min",
    "certainty_two_stage",
    "classify_image",
    "correlation_pairs",
    "dataset_scores",
    "default_model_points",
    "degrade_mask",
    "ensemble_quantify",
    "generate_benchmark",
    "iou_matrix",
    "load_mesh",
    "load_scene",
    "mask_from_depth",
    "mask_iou",
    "match_greedy",
    "mdd",
    "model_points_for",
    "normalize_add",
    "octahedron_mesh",
    "perturb_pose",
    "quantify_scene",
    "render_depth",
    "rle_decode",
    "rle_encode",
    "sample_model_points",
    "save_mesh",
    "save_scene",
    "spearman",
    "sweep_curves",
    "threshold_for_target",
    "uncertainty",
]
