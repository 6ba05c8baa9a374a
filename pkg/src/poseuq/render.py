"""CPU z-buffer triangle rasterizer producing per-object depth maps.

The renderer draws a single posed mesh and reports, next to the depth map,
which fraction of the object's silhouette falls inside the image window.
That ratio is obtained by rasterizing once onto a padded canvas (pad_factor
times the image size, principal point shifted so the real image window sits
at the center) and counting silhouette pixels inside vs. everywhere:

    visibility = pixels inside window / pixels on padded canvas

The depth map returned is exactly the window crop of that padded render, so
`visibility == 0` iff the depth map is empty.

Rasterization rules: a pixel is covered when its center (integer + 0.5)
lies inside the projected triangle, edge ties resolved by a top-left fill
rule; the z-buffer keeps camera-space z interpolated perspective-correctly;
no anti-aliasing and no backface culling. Triangles are clipped against
z = znear before projection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import CameraIntrinsics, Pose, TriangleMesh
from .masks import BinaryMask

DEFAULT_PAD_FACTOR = 3
DEFAULT_ZNEAR = 1e-4

# Per-pixel depth in meters, 0 meaning background; shape (H, W).
DepthMap = np.ndarray


@dataclass(frozen=True)
class RenderResult:
    depth: DepthMap
    visibility: float
    truncated: bool  # silhouette touches the padded canvas border
    window_pixels: int = 0  # silhouette pixels inside the image window
    padded_pixels: int = 0  # silhouette pixels on the whole padded canvas


def mask_from_depth(depth) -> BinaryMask:
    """Binary silhouette: 1 where the depth map is nonzero."""
    return np.asarray(depth) > 0


class DepthRenderer:
    """Owns scratch buffers; use one instance per thread."""

    def __init__(self, pad_factor: int = DEFAULT_PAD_FACTOR, znear: float = DEFAULT_ZNEAR):
        if pad_factor < 1 or int(pad_factor) != pad_factor:
            raise ValueError("pad_factor must be a positive integer")
        if znear <= 0:
            raise ValueError("znear must be positive")
        self.pad_factor = int(pad_factor)
        self.znear = float(znear)
        self._zbuf = None

    def _scratch(self, shape):
        if self._zbuf is None or self._zbuf.shape != shape:
            self._zbuf = np.empty(shape)
        self._zbuf.fill(np.inf)
        return self._zbuf

    def render(self, pose: Pose, mesh: TriangleMesh, intrinsics: CameraIntrinsics) -> RenderResult:
        w, h = intrinsics.width, intrinsics.height
        wp, hp = self.pad_factor * w, self.pad_factor * h
        ox, oy = (wp - w) // 2, (hp - h) // 2

        zbuf = self._scratch((hp, wp))
        verts_cam = pose.apply(mesh.vertices)
        _rasterize(
            zbuf,
            verts_cam,
            mesh.triangles,
            intrinsics.fx,
            intrinsics.fy,
            intrinsics.cx + ox,
            intrinsics.cy + oy,
            self.znear,
        )

        covered = np.isfinite(zbuf)
        total = int(np.count_nonzero(covered))
        window = np.where(covered[oy : oy + h, ox : ox + w], zbuf[oy : oy + h, ox : ox + w], 0.0)
        window.setflags(write=False)
        inside = int(np.count_nonzero(window))
        visibility = inside / total if total else 0.0
        truncated = bool(
            covered[0, :].any()
            or covered[-1, :].any()
            or covered[:, 0].any()
            or covered[:, -1].any()
        )
        return RenderResult(
            depth=window,
            visibility=visibility,
            truncated=truncated,
            window_pixels=inside,
            padded_pixels=total,
        )


def render_depth(
    pose: Pose,
    mesh: TriangleMesh,
    intrinsics: CameraIntrinsics,
    pad_factor: int = DEFAULT_PAD_FACTOR,
    znear: float = DEFAULT_ZNEAR,
) -> RenderResult:
    """One-shot render with a throwaway DepthRenderer."""
    return DepthRenderer(pad_factor=pad_factor, znear=znear).render(pose, mesh, intrinsics)


def _clip_near(tri, znear):
    """Clip one camera-space triangle against z >= znear.

    Returns a list of 0, 1 or 2 (3, 3) triangles.
    """
    z = tri[:, 2]
    keep = z >= znear
    n_in = int(keep.sum())
    if n_in == 3:
        return [tri]
    if n_in == 0:
        return []
    poly = []
    for i in range(3):
        j = (i + 1) % 3
        vi, vj = tri[i], tri[j]
        if keep[i]:
            poly.append(vi)
        if keep[i] != keep[j]:
            t = (znear - vi[2]) / (vj[2] - vi[2])
            poly.append(vi + t * (vj - vi))
    return [np.stack((poly[0], poly[k], poly[k + 1])) for k in range(1, len(poly) - 1)]


def _edge_accepts(w, ax, ay, bx, by):
    """Coverage test for one edge a->b of a positively oriented triangle.

    Pixels exactly on the edge count only for top edges (horizontal, going
    right) and left edges (going up, i.e. decreasing v).
    """
    if ay == by:
        top_left = bx > ax
    else:
        top_left = by < ay
    if top_left:
        return w >= 0
    return w > 0


def _raster_triangle(zbuf, px0, py0, px1, py1, px2, py2, z0, z1, z2):
    area = (px1 - px0) * (py2 - py0) - (py1 - py0) * (px2 - px0)
    if area == 0:
        return
    if area < 0:
        px1, py1, z1, px2, py2, z2 = px2, py2, z2, px1, py1, z1
        area = -area

    hc, wc = zbuf.shape
    x0 = max(0, math.ceil(min(px0, px1, px2) - 0.5))
    x1 = min(wc - 1, math.floor(max(px0, px1, px2) - 0.5))
    y0 = max(0, math.ceil(min(py0, py1, py2) - 0.5))
    y1 = min(hc - 1, math.floor(max(py0, py1, py2) - 0.5))
    if x1 < x0 or y1 < y0:
        return

    cxs = np.arange(x0, x1 + 1) + 0.5
    cys = (np.arange(y0, y1 + 1) + 0.5)[:, None]
    w0 = (px2 - px1) * (cys - py1) - (py2 - py1) * (cxs - px1)
    w1 = (px0 - px2) * (cys - py2) - (py0 - py2) * (cxs - px2)
    w2 = (px1 - px0) * (cys - py0) - (py1 - py0) * (cxs - px0)

    cov = (
        _edge_accepts(w0, px1, py1, px2, py2)
        & _edge_accepts(w1, px2, py2, px0, py0)
        & _edge_accepts(w2, px0, py0, px1, py1)
    )
    if not cov.any():
        return

    # Perspective-correct: 1/z is affine in screen space.
    inv_z = (w0 / z0 + w1 / z1 + w2 / z2) / area
    region = zbuf[y0 : y1 + 1, x0 : x1 + 1]
    with np.errstate(divide="ignore", over="ignore"):
        z_pix = 1.0 / inv_z
    update = cov & (z_pix < region)
    region[update] = z_pix[update]


def _rasterize(zbuf, verts_cam, triangles, fx, fy, cx, cy, znear):
    for tri_idx in triangles:
        tri = verts_cam[tri_idx]
        if tri[:, 2].min() >= znear:
            pieces = (tri,)
        else:
            pieces = _clip_near(tri, znear)
        for piece in pieces:
            z = piece[:, 2]
            u = fx * piece[:, 0] / z + cx
            v = fy * piece[:, 1] / z + cy
            _raster_triangle(zbuf, u[0], v[0], u[1], v[1], u[2], v[2], z[0], z[1], z[2])
