"""Ensemble disagreement baseline for pose uncertainty.

Runs two independent pose estimators over the same scene and scores each
object by how much the two hypotheses disagree: the mean distance between
model points transformed by either pose (ADD), normalized into [0, 1] with
a cap that ignores gross outliers. An object the secondary estimator did
not find at all gets uncertainty 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .geometry import ModelPoints, Pose
from .maskval import PoseEstimate

DEFAULT_D_MAX = 0.05


@dataclass(frozen=True)
class AddNormalization:
    """Linear map from disagreement in meters to uncertainty in [0, 1]."""

    d_min: float = 0.0
    d_max: float = DEFAULT_D_MAX

    def __post_init__(self):
        if not 0.0 <= self.d_min < self.d_max:
            raise ValueError(
                f"need 0 <= d_min < d_max, got d_min={self.d_min}, d_max={self.d_max}"
            )


def add_disagreement(p1: Pose, p2: Pose, model: ModelPoints) -> float:
    """Mean Euclidean distance between model points under two poses."""
    pts = np.asarray(model, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] == 0:
        raise ValueError("model points must be a non-empty (N, 3) array")
    delta = p1.apply(pts) - p2.apply(pts)
    return float(np.linalg.norm(delta, axis=1).mean())


def normalize_add(d: float, norm: AddNormalization = AddNormalization()) -> float:
    if d < 0:
        raise ValueError("disagreement must be non-negative")
    scaled = (d - norm.d_min) / (norm.d_max - norm.d_min)
    return float(min(max(scaled, 0.0), 1.0))


def ensemble_quantify(
    primary: Sequence[PoseEstimate],
    secondary: Sequence[Optional[PoseEstimate]],
    models: Mapping[str, ModelPoints],
    norm: AddNormalization = AddNormalization(),
) -> np.ndarray:
    """Uncertainty per primary estimate from an aligned secondary stream.

    `secondary[i]` is the second estimator's hypothesis for the same object
    as `primary[i]`, or None when it produced no pose for that object
    (which counts as maximal disagreement, u = 1).
    """
    if len(primary) != len(secondary):
        raise ValueError(
            f"streams must be aligned, got {len(primary)} primary vs {len(secondary)} secondary"
        )
    out = np.ones(len(primary))
    for i, (est, other) in enumerate(zip(primary, secondary)):
        if est.class_id not in models:
            raise ValueError(f"no model points for class {est.class_id!r}")
        if other is None:
            continue
        d = add_disagreement(est.pose, other.pose, models[est.class_id])
        out[i] = normalize_add(d, norm)
    return out


def associate_streams(
    primary: Sequence[PoseEstimate],
    secondary: Sequence[PoseEstimate],
    models: Mapping[str, ModelPoints],
) -> list[Optional[PoseEstimate]]:
    """Align a secondary pose stream with the primary one, object by object.

    Within each class the pairing uses instance ids when both sides carry
    them, otherwise greedy nearest-ADD (globally smallest disagreement
    first, one-to-one). Returns one entry per primary estimate, None where
    no secondary pose was paired.
    """
    aligned: list[Optional[PoseEstimate]] = [None] * len(primary)
    for class_id in sorted({est.class_id for est in primary}):
        if class_id not in models:
            raise ValueError(f"no model points for class {class_id!r}")
        rows = [i for i, est in enumerate(primary) if est.class_id == class_id]
        cols = [k for k, est in enumerate(secondary) if est.class_id == class_id]
        if not cols:
            continue
        if all(primary[i].instance_id is not None for i in rows) and all(
            secondary[k].instance_id is not None for k in cols
        ):
            by_id = {secondary[k].instance_id: k for k in cols}
            for i in rows:
                k = by_id.get(primary[i].instance_id)
                if k is not None:
                    aligned[i] = secondary[k]
            continue
        dist = np.array(
            [
                [
                    add_disagreement(primary[i].pose, secondary[k].pose, models[class_id])
                    for k in cols
                ]
                for i in rows
            ]
        )
        for _ in range(min(len(rows), len(cols))):
            best = dist.min()
            if not np.isfinite(best):
                break
            r, c = min(map(tuple, np.argwhere(dist == best)))
            aligned[rows[r]] = secondary[cols[c]]
            dist[r, :] = np.inf
            dist[:, c] = np.inf
    return aligned


def calibrate_d_min(disagreements: Iterable[float]) -> float:
    """Smallest observed disagreement, for datasets where 0 is too loose."""
    values = [d for d in disagreements if d is not None and np.isfinite(d)]
    if not values:
        raise ValueError("no disagreement values to calibrate from")
    smallest = min(values)
    if smallest < 0:
        raise ValueError("disagreements must be non-negative")
    return float(smallest)
