"""Binary mask primitives: IOU, batched IOU matrices and run-length coding.

A binary mask is a 2D bool array indexed [row, col] = [v, u]; shape is
(height, width). `as_mask` normalizes {0,1} integer input.
"""

from __future__ import annotations

import numpy as np

# Type alias for documentation purposes: (H, W) bool array.
BinaryMask = np.ndarray


def as_mask(data) -> np.ndarray:
    """Validate and convert mask-like input to a 2D bool array."""
    m = np.asarray(data)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"mask must be a non-empty 2D grid, got shape {m.shape}")
    if m.dtype != bool:
        if not np.isin(m, (0, 1)).all():
            raise ValueError("mask entries must be 0 or 1")
        m = m.astype(bool)
    return m


def mask_iou(a, b) -> float:
    """Intersection over union of two equally sized binary masks.

    Empty union yields 0.0 by convention.
    """
    a = as_mask(a)
    b = as_mask(b)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    inter = np.count_nonzero(a & b)
    return inter / union


def iou_matrix(rendered_masks, seg_masks) -> np.ndarray:
    """Pairwise IOU of N rendered masks against K segmentation masks.

    Returns an (N, K) float array with entries in [0, 1].
    """
    out = np.zeros((len(rendered_masks), len(seg_masks)))
    for i, a in enumerate(rendered_masks):
        for k, b in enumerate(seg_masks):
            out[i, k] = mask_iou(a, b)
    return out


# The IOU matrix is a plain (N, K) float array.
IouMatrix = np.ndarray


def rle_encode(mask) -> list[int]:
    """Row-major run-length encoding, alternating 0-run/1-run counts.

    The first count is always the leading 0-run (possibly 0 when the mask
    starts with a 1). The counts sum to width*height.
    """
    flat = as_mask(mask).ravel()
    n = flat.size
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [n]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return [int(r) for r in runs]


def rle_decode(runs, width: int, height: int) -> np.ndarray:
    """Inverse of `rle_encode`; validates that the counts fill the grid."""
    runs = [int(r) for r in runs]
    if any(r < 0 for r in runs):
        raise ValueError("negative run length")
    if sum(runs) != width * height:
        raise ValueError(f"run lengths sum to {sum(runs)}, expected {width * height}")
    values = np.zeros(sum(runs), dtype=bool)
    pos = 0
    bit = False
    for r in runs:
        if bit:
            values[pos : pos + r] = True
        pos += r
        bit = not bit
    return values.reshape(height, width)
