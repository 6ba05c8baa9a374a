"""Rigid-body transforms, pinhole projection and model-point utilities.

Coordinate conventions used throughout the package:

  Camera frame (right-handed, standard computer vision):
    +x right, +y down, +z forward along the optical axis.
  Image frame:
    pixel (0, 0) at the top-left corner, u right, v down,
    pixel centers at integer + 0.5.

All lengths are meters, all pixel quantities are pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

# A rotation matrix is accepted as-is when ||R^T R - I||_F is below this.
ROTATION_TOL = 1e-6
# Ingestion (file loading) re-orthonormalizes up to this deviation, then rejects.
ROTATION_REPAIR_TOL = 1e-3


def _as_readonly(a, dtype, shape):
    out = np.ascontiguousarray(np.asarray(a, dtype=dtype))
    if out.shape != shape:
        raise ValueError(f"expected shape {shape}, got {out.shape}")
    out.setflags(write=False)
    return out


def nearest_rotation(m):
    """Closest rotation matrix to `m` in the Frobenius sense (via SVD)."""
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=np.float64))
    r = u @ vt
    if np.linalg.det(r) < 0:
        r = u @ np.diag([1.0, 1.0, -1.0]) @ vt
    return r


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform: x_cam = rotation @ x_model + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = _as_readonly(self.rotation, np.float64, (3, 3))
        t = _as_readonly(self.translation, np.float64, (3,))
        if not np.all(np.isfinite(r)) or not np.all(np.isfinite(t)):
            raise ValueError("pose contains non-finite entries")
        dev = np.linalg.norm(r.T @ r - np.eye(3))
        if dev >= ROTATION_TOL:
            raise ValueError(f"rotation is not orthonormal (deviation {dev:.3g})")
        if abs(np.linalg.det(r) - 1.0) > ROTATION_TOL:
            raise ValueError("rotation determinant is not 1 (reflection or scale)")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_rt(cls, rotation, translation):
        """Build a pose from possibly rounded data (e.g. JSON files).

        Rotations within ROTATION_REPAIR_TOL of orthonormal are snapped to the
        nearest rotation; anything worse is rejected.
        """
        r = np.asarray(rotation, dtype=np.float64).reshape(3, 3)
        dev = np.linalg.norm(r.T @ r - np.eye(3))
        if dev >= ROTATION_TOL:
            if dev >= ROTATION_REPAIR_TOL or np.linalg.det(r) <= 0:
                raise ValueError(
                    f"matrix is too far from a rotation to repair (deviation {dev:.3g})"
                )
            r = nearest_rotation(r)
        return cls(r, translation)

    @classmethod
    def from_quaternion(cls, q, translation=(0.0, 0.0, 0.0)):
        """Pose from a unit quaternion in (w, x, y, z) order."""
        w, x, y, z = np.asarray(q, dtype=np.float64)
        n = math.sqrt(w * w + x * x + y * y + z * z)
        if n == 0:
            raise ValueError("zero quaternion")
        w, x, y, z = w / n, x / n, y / n, z / n
        r = np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )
        return cls(r, translation)

    @classmethod
    def from_axis_angle(cls, axis, angle_rad, translation=(0.0, 0.0, 0.0)):
        """Pose rotating by `angle_rad` about `axis` (Rodrigues formula)."""
        a = np.asarray(axis, dtype=np.float64)
        n = np.linalg.norm(a)
        if n == 0:
            raise ValueError("zero rotation axis")
        a = a / n
        k = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
        r = np.eye(3) + math.sin(angle_rad) * k + (1 - math.cos(angle_rad)) * (k @ k)
        return cls(nearest_rotation(r), translation)

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other: apply `other` first, then `self`."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Pose":
        return Pose(self.rotation.T, -self.rotation.T @ self.translation)

    def apply(self, points):
        """Transform an (N, 3) array of points."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def matrix(self):
        """4x4 homogeneous transform."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera: fx, fy, cx, cy in pixels; width/height in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if int(self.width) < 1 or int(self.height) < 1:
            raise ValueError("image size must be at least 1x1")
        object.__setattr__(self, "fx", float(self.fx))
        object.__setattr__(self, "fy", float(self.fy))
        object.__setattr__(self, "cx", float(self.cx))
        object.__setattr__(self, "cy", float(self.cy))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    def shifted(self, dx_px: float, dy_px: float, width: int, height: int) -> "CameraIntrinsics":
        """Same camera with the principal point moved and a new canvas size."""
        return CameraIntrinsics(self.fx, self.fy, self.cx + dx_px, self.cy + dy_px, width, height)

    def matrix(self):
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Triangle mesh: vertices (V, 3) in meters, triangles (T, 3) vertex indices."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        t = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int64))
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError("vertices must be (V, 3)")
        if t.ndim != 2 or t.shape[1] != 3:
            raise ValueError("triangles must be (T, 3)")
        if len(t) < 1:
            raise ValueError("mesh has no triangles")
        if not np.all(np.isfinite(v)):
            raise ValueError("mesh has non-finite vertices")
        if t.min(initial=0) < 0 or (len(t) and t.max() >= len(v)):
            raise ValueError("triangle index out of range")
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    def triangle_areas(self):
        a = self.vertices[self.triangles[:, 0]]
        b = self.vertices[self.triangles[:, 1]]
        c = self.vertices[self.triangles[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def bounding_sphere(self):
        """(center, radius) of a sphere around the vertex centroid."""
        center = self.vertices.mean(axis=0)
        radius = float(np.linalg.norm(self.vertices - center, axis=1).max())
        return center, radius


# Model point clouds are plain (N, 3) float arrays.
ModelPoints = np.ndarray


class Projection(NamedTuple):
    u: float
    v: float
    z: float

    @property
    def behind_camera(self) -> bool:
        return self.z <= 0


def transform_points(pose: Pose, points) -> np.ndarray:
    """Apply `pose` to an (N, 3) point array, preserving order."""
    return pose.apply(points)


def project(intrinsics: CameraIntrinsics, point_cam) -> Projection:
    """Project a camera-frame point to pixel coordinates.

    Points with z <= 0 are flagged via Projection.behind_camera and get
    NaN pixel coordinates; clipping is the caller's business.
    """
    x, y, z = np.asarray(point_cam, dtype=np.float64)
    if z <= 0:
        return Projection(math.nan, math.nan, float(z))
    return Projection(
        intrinsics.fx * x / z + intrinsics.cx,
        intrinsics.fy * y / z + intrinsics.cy,
        float(z),
    )


def back_project(intrinsics: CameraIntrinsics, u: float, v: float, z: float):
    """Pixel + depth back to a camera-frame point (inverse of `project`)."""
    x = (u - intrinsics.cx) * z / intrinsics.fx
    y = (v - intrinsics.cy) * z / intrinsics.fy
    return np.array([x, y, z])


def sample_model_points(mesh: TriangleMesh, n: int, seed: int) -> np.ndarray:
    """Draw `n` points area-uniformly from the mesh surface.

    Deterministic for a fixed seed. Raises on a mesh with zero total area.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    areas = mesh.triangle_areas()
    total = areas.sum()
    if total <= 0:
        raise ValueError("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    tri_idx = rng.choice(len(areas), size=n, p=areas / total)
    a = mesh.vertices[mesh.triangles[tri_idx, 0]]
    b = mesh.vertices[mesh.triangles[tri_idx, 1]]
    c = mesh.vertices[mesh.triangles[tri_idx, 2]]
    r1 = rng.random(n)
    r2 = rng.random(n)
    flip = r1 + r2 > 1.0
    r1[flip] = 1.0 - r1[flip]
    r2[flip] = 1.0 - r2[flip]
    return a + r1[:, None] * (b - a) + r2[:, None] * (c - a)
