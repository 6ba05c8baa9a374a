"""Scene and mesh files, plus a synthetic benchmark generator.

File formats
------------
Meshes are an ASCII PLY subset: float vertex properties x, y, z (in
meters) and triangular faces. Scenes are one JSON document each:

    {
      "image_id": 0,
      "camera": {"fx": .., "fy": .., "cx": .., "cy": .., "width": .., "height": ..},
      "objects": [
        {"class_id": "box", "instance_id": 1,
         "rotation": [r00, r01, r02, r10, ..., r22],   # row-major
         "translation": [x, y, z], "visible_fraction": 0.93}
      ],
      "segmentations": [
        {"class_id": "box", "instance_id": 1, "rle": [0-run, 1-run, ...]}
      ],
      "estimates": {
        "primary": [
          {"class_id": "box", "instance_id": 1, "rotation": [...],
           "translation": [...], "true_mdd": 0.004,
           "certainty": 0.9, "visibility": 1.0, "uncertainty": 0.1}
        ]
      }
    }

Masks are run-length encoded row-major, alternating run lengths starting
with a (possibly zero) background run. Floats round-trip bit-exactly
through JSON. `true_mdd` and the c/v/u fields are optional; the latter
appear once a quantifier has run.

Generator
---------
`generate_benchmark` places objects at non-overlapping bounding spheres
fully inside the camera frustum, renders ground-truth visible-surface
masks with a combined z-buffer across objects, and derives estimate
streams by perturbing the true poses (Gaussian translation per axis,
rotation about a random axis through the model origin, occasional fixed-
magnitude translation outliers) and degrading the masks (one erosion or
dilation pass, then pixel dropout). Each image draws from
default_rng([seed, image_index]), so any image regenerates identically
on its own.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import ndimage

from .geometry import CameraIntrinsics, Pose, TriangleMesh, sample_model_points
from .masks import rle_decode, rle_encode
from .metrics import EvalImage, GroundTruthObject, ScoredEstimate, mdd
from .render import DepthRenderer

MODEL_POINT_COUNT = 512
MODEL_POINT_SEED = 0


class MeshParseError(ValueError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class SceneFormatError(ValueError):
    def __init__(self, path: str, message: str):
        self.json_path = path
        super().__init__(f"{path}: {message}")


def default_model_points(mesh: TriangleMesh) -> np.ndarray:
    """The canonical point sample used for MDD and disagreement scoring."""
    return sample_model_points(mesh, MODEL_POINT_COUNT, seed=MODEL_POINT_SEED)


def model_points_for(models: Mapping[str, TriangleMesh]) -> dict[str, np.ndarray]:
    return {name: default_model_points(mesh) for name, mesh in models.items()}


# ---------------------------------------------------------------------------
# meshes


def box_mesh(extents=0.1, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Axis-aligned box; extents is a scalar or per-axis (sx, sy, sz)."""
    e = np.broadcast_to(np.asarray(extents, dtype=np.float64), 3) / 2.0
    c = np.asarray(center, dtype=np.float64)
    verts = np.array(
        [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]
    ) * e + c
    faces = np.array(
        [
            [0, 1, 3], [0, 3, 2],
            [4, 6, 7], [4, 7, 5],
            [0, 4, 5], [0, 5, 1],
            [2, 3, 7], [2, 7, 6],
            [0, 2, 6], [0, 6, 4],
            [1, 5, 7], [1, 7, 3],
        ]
    )
    return TriangleMesh(verts, faces)


def octahedron_mesh(radius=0.05, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    c = np.asarray(center, dtype=np.float64)
    verts = np.array(
        [
            [1, 0, 0], [-1, 0, 0],
            [0, 1, 0], [0, -1, 0],
            [0, 0, 1], [0, 0, -1],
        ],
        dtype=np.float64,
    ) * float(radius) + c
    faces = np.array(
        [
            [0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4],
            [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5],
        ]
    )
    return TriangleMesh(verts, faces)


def load_mesh(path) -> TriangleMesh:
    """Parse an ASCII PLY file with float x/y/z vertices and triangle faces."""
    with open(path, "r") as fh:
        lines = fh.read().splitlines()

    def need(idx):
        if idx >= len(lines):
            raise MeshParseError(len(lines) + 1, "unexpected end of file")
        return lines[idx].strip()

    if need(0) != "ply":
        raise MeshParseError(1, "not a PLY file (missing 'ply' magic)")
    if need(1).split() != ["format", "ascii", "1.0"]:
        raise MeshParseError(2, "only 'format ascii 1.0' is supported")

    n_verts = n_faces = None
    vertex_props: list[str] = []
    element = None
    i = 2
    while True:
        line = need(i)
        i += 1
        if line == "end_header":
            break
        tok = line.split()
        if not tok or tok[0] == "comment":
            continue
        if tok[0] == "element":
            if len(tok) != 3 or not tok[2].isdigit():
                raise MeshParseError(i, "malformed element declaration")
            element = tok[1]
            if element == "vertex":
                n_verts = int(tok[2])
            elif element == "face":
                n_faces = int(tok[2])
            else:
                raise MeshParseError(i, f"unsupported element {element!r}")
        elif tok[0] == "property":
            if element == "vertex":
                if len(tok) != 3 or tok[1] not in ("float", "float32", "double", "float64"):
                    raise MeshParseError(i, "vertex properties must be scalar floats")
                vertex_props.append(tok[2])
            elif element == "face":
                if tok[1] != "list" or tok[-1] not in ("vertex_indices", "vertex_index"):
                    raise MeshParseError(i, "face property must be a vertex index list")
            else:
                raise MeshParseError(i, "property before any element")
        else:
            raise MeshParseError(i, f"unexpected header line {line!r}")

    if n_verts is None or n_faces is None:
        raise MeshParseError(i, "header must declare vertex and face elements")
    if vertex_props != ["x", "y", "z"]:
        raise MeshParseError(i, f"vertex properties must be x, y, z; got {vertex_props}")
    if n_faces == 0:
        raise MeshParseError(i, "mesh has no faces")

    verts = np.zeros((n_verts, 3))
    for k in range(n_verts):
        tok = need(i + k).split()
        if len(tok) != 3:
            raise MeshParseError(i + k + 1, f"expected 3 coordinates, got {len(tok)}")
        try:
            verts[k] = [float(t) for t in tok]
        except ValueError:
            raise MeshParseError(i + k + 1, f"bad vertex coordinates {tok}") from None
    i += n_verts

    faces = np.zeros((n_faces, 3), dtype=np.int64)
    for k in range(n_faces):
        tok = need(i + k).split()
        if len(tok) != 4 or tok[0] != "3":
            raise MeshParseError(i + k + 1, "faces must be triangles ('3 i j k')")
        try:
            faces[k] = [int(t) for t in tok[1:]]
        except ValueError:
            raise MeshParseError(i + k + 1, f"bad face indices {tok[1:]}") from None

    try:
        return TriangleMesh(verts, faces)
    except ValueError as e:
        raise MeshParseError(i + n_faces, str(e)) from None


def save_mesh(path, mesh: TriangleMesh) -> None:
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(mesh.vertices)}",
        "property float x",
        "property float y",
        "property float z",
        f"element face {len(mesh.triangles)}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    for v in mesh.vertices:
        lines.append(f"{float(v[0])!r} {float(v[1])!r} {float(v[2])!r}")
    for f in mesh.triangles:
        lines.append(f"3 {int(f[0])} {int(f[1])} {int(f[2])}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# scene records


@dataclass(frozen=True)
class SegmentationRecord:
    mask: np.ndarray
    class_id: str
    instance_id: Optional[int] = None


@dataclass(frozen=True)
class EstimateRecord:
    pose: Pose
    class_id: str
    instance_id: Optional[int] = None
    true_mdd: Optional[float] = None
    certainty: Optional[float] = None
    visibility: Optional[float] = None
    uncertainty: Optional[float] = None


@dataclass(frozen=True)
class SceneRecord:
    image_id: int
    camera: CameraIntrinsics
    objects: tuple[GroundTruthObject, ...] = ()
    segmentations: tuple[SegmentationRecord, ...] = ()
    estimates: dict[str, tuple[EstimateRecord, ...]] = field(default_factory=dict)

    def __post_init__(self):
        shape = (self.camera.height, self.camera.width)
        for k, seg in enumerate(self.segmentations):
            if seg.mask.shape != shape:
                raise SceneFormatError(
                    f"segmentations[{k}]", f"mask shape {seg.mask.shape} != camera {shape}"
                )
        for name, items in (
            ("objects", self.objects),
            ("segmentations", self.segmentations),
            *((f"estimates.{s}", v) for s, v in self.estimates.items()),
        ):
            seen = set()
            for k, item in enumerate(items):
                if item.instance_id is None:
                    continue
                if item.instance_id in seen:
                    raise SceneFormatError(
                        f"{name}[{k}]", f"duplicate instance_id {item.instance_id}"
                    )
                seen.add(item.instance_id)

    def eval_image(self, stream: str) -> EvalImage:
        """Quantified estimates of one stream as evaluation input."""
        if stream not in self.estimates:
            raise ValueError(f"scene {self.image_id} has no estimate stream {stream!r}")
        scored = []
        for k, est in enumerate(self.estimates[stream]):
            if est.uncertainty is None:
                raise ValueError(
                    f"estimate {k} of stream {stream!r} has no uncertainty; quantify first"
                )
            scored.append(
                ScoredEstimate(est.pose, est.class_id, est.uncertainty, est.instance_id)
            )
        return EvalImage(tuple(scored), tuple(self.objects))


def _need(obj, key, path, kinds, kind_name):
    if not isinstance(obj, dict):
        raise SceneFormatError(path, "expected a JSON object")
    if key not in obj:
        raise SceneFormatError(path, f"missing field {key!r}")
    val = obj[key]
    if kinds is not None and (isinstance(val, bool) or not isinstance(val, kinds)):
        raise SceneFormatError(f"{path}.{key}", f"expected {kind_name}")
    return val


def _number(obj, key, path):
    return float(_need(obj, key, path, (int, float), "a number"))


def _opt_number(obj, key, path, lo=None, hi=None):
    if key not in obj or obj[key] is None:
        return None
    val = _number(obj, key, path)
    if lo is not None and not (lo <= val <= (hi if hi is not None else math.inf)):
        raise SceneFormatError(f"{path}.{key}", f"value {val} out of range")
    return val


def _instance_id(obj, path):
    val = obj.get("instance_id")
    if val is None:
        return None
    if isinstance(val, bool) or not isinstance(val, int):
        raise SceneFormatError(f"{path}.instance_id", "expected an integer or null")
    return val


def _pose_from(obj, path) -> Pose:
    rot = _need(obj, "rotation", path, list, "a list")
    tra = _need(obj, "translation", path, list, "a list")
    if len(rot) != 9:
        raise SceneFormatError(f"{path}.rotation", f"expected 9 entries, got {len(rot)}")
    if len(tra) != 3:
        raise SceneFormatError(f"{path}.translation", f"expected 3 entries, got {len(tra)}")
    try:
        return Pose.from_rt(np.reshape(np.asarray(rot, dtype=np.float64), (3, 3)), tra)
    except (ValueError, TypeError) as e:
        raise SceneFormatError(f"{path}.rotation", str(e)) from None


def _pose_to(pose: Pose) -> dict:
    return {
        "rotation": [float(x) for x in np.asarray(pose.rotation).ravel()],
        "translation": [float(x) for x in np.asarray(pose.translation)],
    }


def load_scene(path) -> SceneRecord:
    with open(path, "r") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise SceneFormatError("$", f"invalid JSON: {e}") from None

    image_id = _need(doc, "image_id", "$", int, "an integer")
    cam = _need(doc, "camera", "$", dict, "an object")
    try:
        camera = CameraIntrinsics(
            fx=_number(cam, "fx", "$.camera"),
            fy=_number(cam, "fy", "$.camera"),
            cx=_number(cam, "cx", "$.camera"),
            cy=_number(cam, "cy", "$.camera"),
            width=_need(cam, "width", "$.camera", int, "an integer"),
            height=_need(cam, "height", "$.camera", int, "an integer"),
        )
    except ValueError as e:
        if isinstance(e, SceneFormatError):
            raise
        raise SceneFormatError("$.camera", str(e)) from None

    objects = []
    for k, obj in enumerate(_need(doc, "objects", "$", list, "a list")):
        p = f"$.objects[{k}]"
        vis = _number(obj, "visible_fraction", p)
        try:
            objects.append(
                GroundTruthObject(
                    pose=_pose_from(obj, p),
                    class_id=_need(obj, "class_id", p, str, "a string"),
                    visible_fraction=vis,
                    instance_id=_instance_id(obj, p),
                )
            )
        except ValueError as e:
            if isinstance(e, SceneFormatError):
                raise
            raise SceneFormatError(p, str(e)) from None

    segmentations = []
    for k, seg in enumerate(_need(doc, "segmentations", "$", list, "a list")):
        p = f"$.segmentations[{k}]"
        runs = _need(seg, "rle", p, list, "a list")
        try:
            mask = rle_decode(runs, camera.width, camera.height)
        except ValueError as e:
            raise SceneFormatError(f"{p}.rle", str(e)) from None
        segmentations.append(
            SegmentationRecord(
                mask=mask,
                class_id=_need(seg, "class_id", p, str, "a string"),
                instance_id=_instance_id(seg, p),
            )
        )

    streams: dict[str, tuple[EstimateRecord, ...]] = {}
    for stream, entries in sorted(_need(doc, "estimates", "$", dict, "an object").items()):
        if not isinstance(entries, list):
            raise SceneFormatError(f"$.estimates.{stream}", "expected a list")
        records = []
        for k, est in enumerate(entries):
            p = f"$.estimates.{stream}[{k}]"
            records.append(
                EstimateRecord(
                    pose=_pose_from(est, p),
                    class_id=_need(est, "class_id", p, str, "a string"),
                    instance_id=_instance_id(est, p),
                    true_mdd=_opt_number(est, "true_mdd", p, lo=0.0),
                    certainty=_opt_number(est, "certainty", p, 0.0, 1.0),
                    visibility=_opt_number(est, "visibility", p, 0.0, 1.0),
                    uncertainty=_opt_number(est, "uncertainty", p, 0.0, 1.0),
                )
            )
        streams[stream] = tuple(records)

    try:
        return SceneRecord(image_id, camera, tuple(objects), tuple(segmentations), streams)
    except SceneFormatError as e:
        raise SceneFormatError(f"$.{e.json_path}", str(e).split(": ", 1)[1]) from None


def save_scene(path, scene: SceneRecord) -> None:
    doc = {
        "image_id": scene.image_id,
        "camera": {
            "fx": float(scene.camera.fx),
            "fy": float(scene.camera.fy),
            "cx": float(scene.camera.cx),
            "cy": float(scene.camera.cy),
            "width": scene.camera.width,
            "height": scene.camera.height,
        },
        "objects": [
            {
                **_pose_to(o.pose),
                "class_id": o.class_id,
                "instance_id": o.instance_id,
                "visible_fraction": float(o.visible_fraction),
            }
            for o in scene.objects
        ],
        "segmentations": [
            {
                "class_id": s.class_id,
                "instance_id": s.instance_id,
                "rle": rle_encode(s.mask),
            }
            for s in scene.segmentations
        ],
        "estimates": {
            stream: [_estimate_to(e) for e in records]
            for stream, records in scene.estimates.items()
        },
    }
    with open(path, "w", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _estimate_to(est: EstimateRecord) -> dict:
    out = {
        **_pose_to(est.pose),
        "class_id": est.class_id,
        "instance_id": est.instance_id,
    }
    for key in ("true_mdd", "certainty", "visibility", "uncertainty"):
        val = getattr(est, key)
        if val is not None:
            out[key] = float(val)
    return out


# ---------------------------------------------------------------------------
# synthetic benchmark generation


@dataclass(frozen=True)
class PerturbationSpec:
    translation_sigma: float = 0.0  # meters, per axis
    rotation_sigma_deg: float = 0.0  # axis-angle magnitude
    outlier_probability: float = 0.0
    outlier_translation: float = 0.0  # meters
    mask_morph_radius: int = 0  # erosion/dilation passes, pixels
    mask_dropout: float = 0.0  # per-pixel drop probability

    def __post_init__(self):
        for name in (
            "translation_sigma",
            "rotation_sigma_deg",
            "outlier_translation",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("outlier_probability", "mask_dropout"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.mask_morph_radius < 0 or int(self.mask_morph_radius) != self.mask_morph_radius:
            raise ValueError("mask_morph_radius must be a non-negative integer")

    def scaled(self, factor: float) -> "PerturbationSpec":
        """Same spec with the pose noise sigmas scaled; mask noise unchanged."""
        if factor < 0:
            raise ValueError("factor must be non-negative")
        return PerturbationSpec(
            translation_sigma=self.translation_sigma * factor,
            rotation_sigma_deg=self.rotation_sigma_deg * factor,
            outlier_probability=self.outlier_probability,
            outlier_translation=self.outlier_translation,
            mask_morph_radius=self.mask_morph_radius,
            mask_dropout=self.mask_dropout,
        )


def perturb_pose(pose: Pose, spec: PerturbationSpec, rng: np.random.Generator) -> Pose:
    """Noisy copy of a pose: rotation about a random axis through the model
    origin, Gaussian translation, occasional fixed-magnitude outlier."""
    dt = rng.normal(0.0, spec.translation_sigma, 3)
    angle = abs(rng.normal(0.0, math.radians(spec.rotation_sigma_deg)))
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    if rng.random() < spec.outlier_probability:
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        dt = dt + direction * spec.outlier_translation
    wobble = Pose.from_axis_angle(axis, angle).rotation
    return Pose.from_rt(wobble @ pose.rotation, np.asarray(pose.translation) + dt)


def degrade_mask(mask, spec: PerturbationSpec, rng: np.random.Generator) -> np.ndarray:
    """Erode or dilate (coin flip), then drop pixels independently."""
    out = np.asarray(mask, dtype=bool)
    if spec.mask_morph_radius > 0:
        op = ndimage.binary_dilation if rng.random() < 0.5 else ndimage.binary_erosion
        out = op(out, iterations=spec.mask_morph_radius)
    if spec.mask_dropout > 0:
        out = out & (rng.random(out.shape) >= spec.mask_dropout)
    return np.asarray(out, dtype=bool)


def _frustum_interval(lo_plane, hi_plane, z, radius):
    """World-coordinate interval keeping a sphere inside two frustum planes.

    Planes are (a, b) for the constraint a*coord + b*z >= 0; the sphere
    center must keep a margin of radius times the plane normal's length.
    """
    (a0, b0), (a1, b1) = lo_plane, hi_plane
    lo = (radius * math.hypot(a0, b0) - b0 * z) / a0
    hi = (radius * math.hypot(a1, b1) - b1 * z) / a1
    return lo, hi


def _place_objects(classes, models, spheres, intrinsics, n, rng, z_range, max_attempts):
    placed = []  # (class_id, pose, world sphere center, radius)
    K = intrinsics
    for _ in range(n):
        cls = classes[int(rng.integers(len(classes)))]
        center_m, radius = spheres[cls]
        for _attempt in range(max_attempts):
            q = rng.normal(size=4)
            q /= np.linalg.norm(q)
            z = rng.uniform(z_range[0], z_range[1])
            x_lo, x_hi = _frustum_interval((K.fx, K.cx), (-K.fx, K.width - K.cx), z, radius)
            y_lo, y_hi = _frustum_interval((K.fy, K.cy), (-K.fy, K.height - K.cy), z, radius)
            if x_hi <= x_lo or y_hi <= y_lo:
                continue
            center_w = np.array([rng.uniform(x_lo, x_hi), rng.uniform(y_lo, y_hi), z])
            if all(
                np.linalg.norm(center_w - cw) > radius + r for _, _, cw, r in placed
            ):
                rot = Pose.from_quaternion(q).rotation
                pose = Pose.from_rt(rot, center_w - rot @ center_m)
                placed.append((cls, pose, center_w, radius))
                break
        else:
            raise RuntimeError(
                f"could not place object {len(placed) + 1} of {n} without overlap "
                f"after {max_attempts} attempts; reduce the count or enlarge z_range"
            )
    return placed


def generate_benchmark(
    models: Mapping[str, TriangleMesh],
    intrinsics: CameraIntrinsics,
    n_images: int,
    objects_per_image,
    spec: PerturbationSpec,
    seed: int,
    secondary_spec: Optional[PerturbationSpec] = None,
    z_range=(0.6, 1.1),
    max_attempts: int = 200,
) -> list[SceneRecord]:
    """Synthetic scenes with ground truth, masks and perturbed estimates.

    `objects_per_image` is a fixed count or an inclusive (lo, hi) range.
    Each estimate carries its exact error (`true_mdd`) over the canonical
    model point sample. When `secondary_spec` is given a second stream
    named "secondary" is generated from the same ground truth.
    """
    if n_images < 1:
        raise ValueError("n_images must be >= 1")
    if not models:
        raise ValueError("need at least one object model")
    if not 0 < z_range[0] < z_range[1]:
        raise ValueError("z_range must be ascending and positive")
    classes = sorted(models)
    points = model_points_for(models)
    spheres = {c: models[c].bounding_sphere() for c in classes}
    renderer = DepthRenderer()

    scenes = []
    for i in range(n_images):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        if np.iterable(objects_per_image):
            lo, hi = objects_per_image
            n_obj = int(rng.integers(lo, hi, endpoint=True))
        else:
            n_obj = int(objects_per_image)
        placed = _place_objects(
            classes, models, spheres, intrinsics, n_obj, rng, z_range, max_attempts
        )

        renders = [renderer.render(pose, models[cls], intrinsics) for cls, pose, _, _ in placed]
        if placed:
            depth = np.stack([r.depth for r in renders])
            occupied = np.where(depth > 0, depth, np.inf)
            front = occupied.argmin(axis=0)
            covered = np.isfinite(occupied.min(axis=0))
            surface = [(front == k) & covered for k in range(len(placed))]
        else:
            surface = []

        objects = []
        segmentations = []
        primary = []
        secondary = []
        for k, (cls, pose, _, _) in enumerate(placed):
            visible = (
                int(surface[k].sum()) / renders[k].padded_pixels
                if renders[k].padded_pixels
                else 0.0
            )
            objects.append(GroundTruthObject(pose, cls, visible, instance_id=k + 1))

            est = perturb_pose(pose, spec, rng)
            primary.append(
                EstimateRecord(
                    pose=est,
                    class_id=cls,
                    instance_id=k + 1,
                    true_mdd=mdd(est, pose, points[cls]),
                )
            )
            if secondary_spec is not None:
                est2 = perturb_pose(pose, secondary_spec, rng)
                secondary.append(
                    EstimateRecord(
                        pose=est2,
                        class_id=cls,
                        instance_id=k + 1,
                        true_mdd=mdd(est2, pose, points[cls]),
                    )
                )
            seg = degrade_mask(surface[k], spec, rng)
            if seg.any():
                segmentations.append(SegmentationRecord(seg, cls, instance_id=k + 1))

        streams = {"primary": tuple(primary)}
        if secondary_spec is not None:
            streams["secondary"] = tuple(secondary)
        scenes.append(
            SceneRecord(
                image_id=i,
                camera=intrinsics,
                objects=tuple(objects),
                segmentations=tuple(segmentations),
                estimates=streams,
            )
        )
    return scenes
