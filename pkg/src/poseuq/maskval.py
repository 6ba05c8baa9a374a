"""Silhouette-based uncertainty for 6D pose estimates.

For every pose hypothesis the object model is rendered under that pose and
its silhouette compared with the instance segmentation masks of the same
class. The certainty of an estimate is the IOU of its rendered mask with
the segmentation it gets associated to; the uncertainty is

    u = 1 - c * v   if v < alpha      (object partly out of view)
    u = 1 - c       otherwise

where v is the in-view visibility ratio reported by the renderer and alpha
sets how early the visibility discount kicks in.

Association is either `greedy` (repeatedly take the globally largest IOU,
one-to-one, stopping below `min_match_iou`) or `two_stage` (the pose stage
consumed its own segmentation, so the pairing is already known, via
instance ids or by position).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .geometry import CameraIntrinsics, Pose, TriangleMesh
from .masks import BinaryMask, as_mask, iou_matrix, mask_iou  # noqa: F401  (re-exported API)
from .render import DepthRenderer, mask_from_depth

DEFAULT_ALPHA = 0.8
DEFAULT_MIN_MATCH_IOU = 0.01

ASSOCIATION_MODES = ("greedy", "two_stage")


@dataclass(frozen=True)
class MaskValConfig:
    alpha: float = DEFAULT_ALPHA
    pad_factor: int = 3
    min_match_iou: float = DEFAULT_MIN_MATCH_IOU
    association_mode: str = "greedy"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if not 0.0 <= self.min_match_iou <= 1.0:
            raise ValueError("min_match_iou must be in [0, 1]")
        if self.association_mode not in ASSOCIATION_MODES:
            raise ValueError(f"association_mode must be one of {ASSOCIATION_MODES}")


@dataclass(frozen=True)
class PoseEstimate:
    pose: Pose
    class_id: str
    instance_id: Optional[int] = None


@dataclass(frozen=True)
class Segmentation:
    mask: BinaryMask
    class_id: str
    instance_id: Optional[int] = None


@dataclass(frozen=True)
class EstimateAssessment:
    """Per-estimate outcome: certainty c, visibility v, uncertainty u."""

    certainty: float
    visibility: float
    uncertainty: float
    matched_segmentation: Optional[int] = None
    truncated: bool = False
    unmatched: bool = False


@dataclass(frozen=True)
class UncertaintyReport:
    assessments: tuple[EstimateAssessment, ...] = field(default_factory=tuple)

    def uncertainties(self) -> np.ndarray:
        return np.array([a.uncertainty for a in self.assessments])

    def __len__(self):
        return len(self.assessments)

    def __getitem__(self, i) -> EstimateAssessment:
        return self.assessments[i]


@dataclass(frozen=True)
class GreedyMatch:
    """One-to-one partial assignment of pose rows to mask columns."""

    assignment: tuple[Optional[int], ...]
    certainties: np.ndarray


def match_greedy(iou, min_match_iou: float = DEFAULT_MIN_MATCH_IOU) -> GreedyMatch:
    """Greedy one-to-one matching on an (N, K) IOU matrix.

    Repeatedly picks the globally largest remaining entry and removes its
    row and column; stops once the best remaining IOU drops below
    `min_match_iou`. Ties break toward the lowest pose index, then the
    lowest mask index. Unassigned poses get certainty 0.
    """
    m = np.asarray(iou, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("iou matrix must be 2D")
    if m.size and (m.min() < 0 or m.max() > 1):
        raise ValueError("iou entries must lie in [0, 1]")
    n, k = m.shape
    assignment: list[Optional[int]] = [None] * n
    certainties = np.zeros(n)
    work = m.copy()
    for _ in range(min(n, k)):
        best = work.max() if work.size else -1.0
        if best < min_match_iou:
            break
        i, j = min(map(tuple, np.argwhere(work == best)))
        assignment[i] = int(j)
        certainties[i] = m[i, j]
        work[i, :] = -1.0
        work[:, j] = -1.0
    return GreedyMatch(tuple(assignment), certainties)


def certainty_two_stage(iou) -> np.ndarray:
    """Certainties when pose i was built from segmentation i: the diagonal."""
    m = np.asarray(iou, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"two-stage certainty needs a square IOU matrix, got {m.shape}")
    return np.diagonal(m).copy()


def uncertainty(c: float, v: float, alpha: float = DEFAULT_ALPHA) -> float:
    """Certainty to uncertainty, discounted by visibility below alpha."""
    for name, val in (("c", c), ("v", v), ("alpha", alpha)):
        if not 0.0 <= val <= 1.0:
            raise ValueError(f"{name} must be in [0, 1], got {val}")
    if v < alpha:
        return 1.0 - c * v
    return 1.0 - c


def _pair_two_stage(estimates, est_idx, segmentations, seg_idx, class_id):
    """Known-association pairing inside one class: by instance id, else by position."""
    if all(estimates[i].instance_id is not None for i in est_idx) and all(
        segmentations[k].instance_id is not None for k in seg_idx
    ):
        by_id = {segmentations[k].instance_id: k for k in seg_idx}
        return [by_id.get(estimates[i].instance_id) for i in est_idx]
    if len(est_idx) != len(seg_idx):
        raise ValueError(
            f"two_stage association for class {class_id!r} needs instance ids "
            f"or equal counts ({len(est_idx)} poses vs {len(seg_idx)} masks)"
        )
    return list(seg_idx)


def quantify_scene(
    estimates: Sequence[PoseEstimate],
    segmentations: Sequence[Segmentation],
    models: Mapping[str, TriangleMesh],
    intrinsics: CameraIntrinsics,
    config: MaskValConfig = MaskValConfig(),
    renderer: DepthRenderer | None = None,
) -> UncertaintyReport:
    """Assess every pose estimate of a scene against the segmentation masks.

    Masks are only compared against estimates of the same class. Estimates
    whose render has no pixels, or that fail to match any mask, come back
    with certainty 0, uncertainty 1 and the `unmatched` flag.
    """
    for est in estimates:
        if est.class_id not in models:
            raise ValueError(f"no object model for class {est.class_id!r}")
    shape = (intrinsics.height, intrinsics.width)
    seg_masks = []
    for k, seg in enumerate(segmentations):
        m = as_mask(seg.mask)
        if m.shape != shape:
            raise ValueError(
                f"segmentation {k} has shape {m.shape}, camera expects {shape}"
            )
        seg_masks.append(m)

    if renderer is None:
        renderer = DepthRenderer(pad_factor=config.pad_factor)
    renders = [renderer.render(est.pose, models[est.class_id], intrinsics) for est in estimates]
    rendered_masks = [mask_from_depth(r.depth) for r in renders]

    certainty = np.zeros(len(estimates))
    matched: list[Optional[int]] = [None] * len(estimates)

    for class_id in sorted({est.class_id for est in estimates}):
        est_idx = [
            i
            for i, est in enumerate(estimates)
            if est.class_id == class_id and rendered_masks[i].any()
        ]
        seg_idx = [k for k, seg in enumerate(segmentations) if seg.class_id == class_id]
        if not est_idx:
            continue
        if config.association_mode == "greedy":
            sub = iou_matrix(
                [rendered_masks[i] for i in est_idx], [seg_masks[k] for k in seg_idx]
            )
            result = match_greedy(sub, config.min_match_iou)
            for row, i in enumerate(est_idx):
                j = result.assignment[row]
                if j is not None:
                    matched[i] = seg_idx[j]
                    certainty[i] = result.certainties[row]
        else:
            pairs = _pair_two_stage(estimates, est_idx, segmentations, seg_idx, class_id)
            for i, k in zip(est_idx, pairs):
                if k is not None:
                    matched[i] = k
                    certainty[i] = mask_iou(rendered_masks[i], seg_masks[k])

    assessments = []
    for i in range(len(estimates)):
        v = renders[i].visibility
        if matched[i] is None:
            assessments.append(
                EstimateAssessment(
                    certainty=0.0,
                    visibility=v,
                    uncertainty=1.0,
                    matched_segmentation=None,
                    truncated=renders[i].truncated,
                    unmatched=True,
                )
            )
        else:
            assessments.append(
                EstimateAssessment(
                    certainty=float(certainty[i]),
                    visibility=v,
                    uncertainty=uncertainty(float(certainty[i]), v, config.alpha),
                    matched_segmentation=matched[i],
                    truncated=renders[i].truncated,
                    unmatched=False,
                )
            )
    return UncertaintyReport(tuple(assessments))
