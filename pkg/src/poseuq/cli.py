"""Command-line runner: generate scenes, quantify uncertainty, evaluate.

Subcommands
-----------
generate    write synthetic benchmark scenes plus a manifest
quantify    score a pose stream (maskval or ensemble-add) into new scene files
evaluate    sweep error thresholds, emit curves.csv and summary.json
threshold   pick the uncertainty threshold meeting an AP target at one e_t

Flag values override config-file values (--config, a JSON object of the
same names), which override built-in defaults. Model meshes are read from
--models or the POSEUQ_MODEL_DIR environment variable; every *.ply file
defines one class named after the file stem.

Exit codes: 0 success, 2 usage or validation error, 3 malformed data file.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .dataset import (
    MeshParseError,
    PerturbationSpec,
    SceneFormatError,
    SceneRecord,
    generate_benchmark,
    load_mesh,
    load_scene,
    model_points_for,
    save_scene,
)
from .ensemble import AddNormalization, associate_streams, ensemble_quantify
from .geometry import CameraIntrinsics
from .maskval import MaskValConfig, PoseEstimate, Segmentation, quantify_scene
from .metrics import (
    DEFAULT_AP_TARGET,
    DEFAULT_THETA_V,
    classify_image,
    dataset_scores,
    sweep_curves,
    threshold_for_target,
    write_curves_csv,
    write_summary_json,
)
from .render import DepthRenderer

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3

MODEL_DIR_ENV = "POSEUQ_MODEL_DIR"
SCENE_GLOB = "scene_*.json"

_DEFAULTS = {
    # quantification
    "method": "maskval",
    "stream": "primary",
    "secondary_stream": "secondary",
    "alpha": 0.8,
    "pad_factor": 3,
    "min_match_iou": 0.01,
    "association_mode": "greedy",
    "d_min": 0.0,
    "d_max": 0.05,
    # evaluation
    "theta_v": DEFAULT_THETA_V,
    "ap_target": DEFAULT_AP_TARGET,
    "e_t": 0.015,
    "e_t_min": 0.0,
    "e_t_max": 0.03,
    "e_t_points": 61,
    # generation
    "seed": 0,
    "n_images": 20,
    "objects_per_image": "1-4",
    "translation_sigma": 0.0,
    "rotation_sigma_deg": 0.0,
    "outlier_probability": 0.0,
    "outlier_translation": 0.0,
    "mask_morph_radius": 0,
    "mask_dropout": 0.0,
    "secondary_noise_scale": None,
    "fx": 500.0,
    "fy": 500.0,
    "cx": 320.0,
    "cy": 240.0,
    "width": 640,
    "height": 480,
    "z_min": 0.6,
    "z_max": 1.1,
    # execution
    "jobs": 1,
}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


@dataclass(frozen=True)
class RunConfig:
    """Merged settings of one invocation (defaults < config file < flags)."""

    subcommand: str
    in_dir: Optional[str]
    out_dir: Optional[str]
    models_dir: Optional[str]
    values: dict

    def __getattr__(self, name):
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(name) from None


def _add_common(sub, names):
    flags = {
        "alpha": dict(type=float),
        "pad_factor": dict(type=int),
        "min_match_iou": dict(type=float),
        "association_mode": dict(choices=("greedy", "two_stage")),
        "d_min": dict(type=float),
        "d_max": dict(type=float),
        "theta_v": dict(type=float),
        "ap_target": dict(type=float),
        "e_t": dict(type=float),
        "e_t_min": dict(type=float),
        "e_t_max": dict(type=float),
        "e_t_points": dict(type=int),
        "seed": dict(type=int),
        "n_images": dict(type=int),
        "objects_per_image": dict(type=str, metavar="N or LO-HI"),
        "translation_sigma": dict(type=float),
        "rotation_sigma_deg": dict(type=float),
        "outlier_probability": dict(type=float),
        "outlier_translation": dict(type=float),
        "mask_morph_radius": dict(type=int),
        "mask_dropout": dict(type=float),
        "secondary_noise_scale": dict(type=float),
        "fx": dict(type=float),
        "fy": dict(type=float),
        "cx": dict(type=float),
        "cy": dict(type=float),
        "width": dict(type=int),
        "height": dict(type=int),
        "z_min": dict(type=float),
        "z_max": dict(type=float),
        "stream": dict(type=str),
        "secondary_stream": dict(type=str),
        "jobs": dict(type=int),
    }
    for name in names:
        sub.add_argument(f"--{name.replace('_', '-')}", default=None, **flags[name])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poseuq", description="Pose-estimate uncertainty quantification toolkit"
    )
    subs = parser.add_subparsers(dest="subcommand", required=True)

    gen = subs.add_parser("generate", help="write a synthetic benchmark")
    gen.add_argument("--out", required=True, help="output scene directory")
    gen.add_argument("--models", default=None, help=f"model dir (or ${MODEL_DIR_ENV})")
    gen.add_argument("--config", default=None, help="JSON config file")
    _add_common(
        gen,
        (
            "seed", "n_images", "objects_per_image",
            "translation_sigma", "rotation_sigma_deg",
            "outlier_probability", "outlier_translation",
            "mask_morph_radius", "mask_dropout", "secondary_noise_scale",
            "fx", "fy", "cx", "cy", "width", "height", "z_min", "z_max",
        ),
    )

    qua = subs.add_parser("quantify", help="score a pose stream with uncertainties")
    qua.add_argument("--in", dest="in_dir", required=True, help="input scene directory")
    qua.add_argument("--out", required=True, help="output scene directory")
    qua.add_argument("--models", default=None)
    qua.add_argument("--config", default=None)
    qua.add_argument("--method", choices=("maskval", "ensemble-add"), default=None)
    _add_common(
        qua,
        (
            "stream", "secondary_stream",
            "alpha", "pad_factor", "min_match_iou", "association_mode",
            "d_min", "d_max", "jobs",
        ),
    )

    eva = subs.add_parser("evaluate", help="emit threshold-sweep curves and summary")
    eva.add_argument("--in", dest="in_dir", required=True)
    eva.add_argument("--out", required=True)
    eva.add_argument("--models", default=None)
    eva.add_argument("--config", default=None)
    _add_common(eva, ("stream", "theta_v", "ap_target", "e_t_min", "e_t_max", "e_t_points"))

    thr = subs.add_parser("threshold", help="pick u_T for an AP target at one e_t")
    thr.add_argument("--in", dest="in_dir", required=True)
    thr.add_argument("--models", default=None)
    thr.add_argument("--config", default=None)
    _add_common(thr, ("stream", "theta_v", "ap_target", "e_t"))

    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = dict(_DEFAULTS)
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path) as fh:
                loaded = json.load(fh)
        except json.JSONDecodeError as e:
            raise CliError(EXIT_USAGE, f"config file {config_path}: invalid JSON: {e}")
        if not isinstance(loaded, dict):
            raise CliError(EXIT_USAGE, f"config file {config_path}: expected a JSON object")
        for key, val in loaded.items():
            if key not in values:
                raise CliError(EXIT_USAGE, f"config file {config_path}: unknown key {key!r}")
            values[key] = val
    for key in values:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    if getattr(args, "method", None) is not None:
        values["method"] = args.method
    models = getattr(args, "models", None) or os.environ.get(MODEL_DIR_ENV)
    return RunConfig(
        subcommand=args.subcommand,
        in_dir=getattr(args, "in_dir", None),
        out_dir=getattr(args, "out", None),
        models_dir=models,
        values=values,
    )


def _load_models(models_dir: Optional[str]) -> dict:
    if not models_dir:
        raise CliError(
            EXIT_USAGE, f"no model directory: pass --models or set ${MODEL_DIR_ENV}"
        )
    root = Path(models_dir)
    if not root.is_dir():
        raise CliError(EXIT_USAGE, f"model directory {models_dir} does not exist")
    models = {p.stem: load_mesh(p) for p in sorted(root.glob("*.ply"))}
    if not models:
        raise CliError(EXIT_USAGE, f"no *.ply model files in {models_dir}")
    return models


def _scene_files(in_dir: str) -> list[Path]:
    root = Path(in_dir)
    if not root.is_dir():
        raise CliError(EXIT_USAGE, f"scene directory {in_dir} does not exist")
    files = sorted(root.glob(SCENE_GLOB))
    if not files:
        raise CliError(EXIT_USAGE, f"no scene files ({SCENE_GLOB}) in {in_dir}")
    return files


def _parse_span(text):
    """Object count per image: '3' or inclusive '1-4'."""
    raw = str(text)
    try:
        if "-" in raw.lstrip("-"):
            lo, hi = raw.split("-", 1)
            lo, hi = int(lo), int(hi)
            if lo > hi or lo < 0:
                raise ValueError
            return (lo, hi)
        n = int(raw)
        if n < 0:
            raise ValueError
        return n
    except ValueError:
        raise CliError(
            EXIT_USAGE, f"objects_per_image must be 'N' or 'LO-HI', got {raw!r}"
        ) from None


def _sha256(path) -> str:
    return "sha256:" + hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path, doc) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_generate(cfg: RunConfig) -> int:
    models = _load_models(cfg.models_dir)
    spec = PerturbationSpec(
        translation_sigma=cfg.translation_sigma,
        rotation_sigma_deg=cfg.rotation_sigma_deg,
        outlier_probability=cfg.outlier_probability,
        outlier_translation=cfg.outlier_translation,
        mask_morph_radius=cfg.mask_morph_radius,
        mask_dropout=cfg.mask_dropout,
    )
    secondary = (
        spec.scaled(cfg.secondary_noise_scale)
        if cfg.secondary_noise_scale is not None
        else None
    )
    camera = CameraIntrinsics(
        fx=cfg.fx, fy=cfg.fy, cx=cfg.cx, cy=cfg.cy, width=cfg.width, height=cfg.height
    )
    scenes = generate_benchmark(
        models,
        camera,
        cfg.n_images,
        _parse_span(cfg.objects_per_image),
        spec,
        seed=cfg.seed,
        secondary_spec=secondary,
        z_range=(cfg.z_min, cfg.z_max),
    )
    out = Path(cfg.out_dir)
    os.makedirs(out, exist_ok=True)
    files = {}
    for scene in scenes:
        name = f"scene_{scene.image_id:05d}.json"
        save_scene(out / name, scene)
        files[name] = _sha256(out / name)
    manifest = {
        "command": "generate",
        "seed": cfg.seed,
        "n_images": cfg.n_images,
        "objects_per_image": str(cfg.objects_per_image),
        "camera": {
            "fx": cfg.fx, "fy": cfg.fy, "cx": cfg.cx, "cy": cfg.cy,
            "width": cfg.width, "height": cfg.height,
        },
        "z_range": [cfg.z_min, cfg.z_max],
        "perturbation": asdict(spec),
        "secondary_noise_scale": cfg.secondary_noise_scale,
        "models": {name: _sha256(Path(cfg.models_dir) / f"{name}.ply") for name in models},
        "files": files,
    }
    _write_json(out / "manifest.json", manifest)
    print(f"wrote {len(scenes)} scenes and manifest.json to {out}")
    return EXIT_OK


def _quantify_maskval(scene: SceneRecord, models, cfg, renderer) -> SceneRecord:
    if cfg.stream not in scene.estimates:
        raise CliError(
            EXIT_USAGE, f"scene {scene.image_id} has no estimate stream {cfg.stream!r}"
        )
    estimates = [
        PoseEstimate(e.pose, e.class_id, e.instance_id)
        for e in scene.estimates[cfg.stream]
    ]
    segmentations = [
        Segmentation(s.mask, s.class_id, s.instance_id) for s in scene.segmentations
    ]
    mv = MaskValConfig(
        alpha=cfg.alpha,
        pad_factor=cfg.pad_factor,
        min_match_iou=cfg.min_match_iou,
        association_mode=cfg.association_mode,
    )
    try:
        report = quantify_scene(estimates, segmentations, models, scene.camera, mv, renderer)
    except ValueError as e:
        raise CliError(EXIT_USAGE, f"scene {scene.image_id}: {e}") from None
    updated = tuple(
        replace(
            record,
            certainty=a.certainty,
            visibility=a.visibility,
            uncertainty=a.uncertainty,
        )
        for record, a in zip(scene.estimates[cfg.stream], report.assessments)
    )
    return replace(scene, estimates={**scene.estimates, cfg.stream: updated})


def _quantify_ensemble(scene: SceneRecord, points, cfg) -> SceneRecord:
    if cfg.stream not in scene.estimates:
        raise CliError(
            EXIT_USAGE, f"scene {scene.image_id} has no estimate stream {cfg.stream!r}"
        )
    if cfg.secondary_stream not in scene.estimates:
        raise CliError(
            EXIT_USAGE,
            f"scene {scene.image_id} has no stream {cfg.secondary_stream!r}; "
            "ensemble-add needs a second estimate stream",
        )
    primary = [
        PoseEstimate(e.pose, e.class_id, e.instance_id)
        for e in scene.estimates[cfg.stream]
    ]
    secondary = [
        PoseEstimate(e.pose, e.class_id, e.instance_id)
        for e in scene.estimates[cfg.secondary_stream]
    ]
    norm = AddNormalization(d_min=cfg.d_min, d_max=cfg.d_max)
    try:
        aligned = associate_streams(primary, secondary, points)
        u = ensemble_quantify(primary, aligned, points, norm)
    except ValueError as e:
        raise CliError(EXIT_USAGE, f"scene {scene.image_id}: {e}") from None
    updated = tuple(
        replace(record, uncertainty=float(ui))
        for record, ui in zip(scene.estimates[cfg.stream], u)
    )
    return replace(scene, estimates={**scene.estimates, cfg.stream: updated})


_WORKER: dict = {}


def _init_quantify_worker(models_dir, cfg_values):
    cfg = RunConfig("quantify", None, None, models_dir, cfg_values)
    _WORKER["cfg"] = cfg
    _WORKER["models"] = _load_models(models_dir)
    _WORKER["points"] = model_points_for(_WORKER["models"])
    _WORKER["renderer"] = DepthRenderer(pad_factor=cfg.pad_factor)


def _quantify_task(path_str: str) -> SceneRecord:
    cfg = _WORKER["cfg"]
    scene = load_scene(path_str)
    if cfg.method == "maskval":
        return _quantify_maskval(scene, _WORKER["models"], cfg, _WORKER["renderer"])
    return _quantify_ensemble(scene, _WORKER["points"], cfg)


def cmd_quantify(cfg: RunConfig) -> int:
    files = _scene_files(cfg.in_dir)
    out = Path(cfg.out_dir)
    if out.resolve() == Path(cfg.in_dir).resolve():
        raise CliError(EXIT_USAGE, "output directory must differ from the input directory")
    os.makedirs(out, exist_ok=True)
    if cfg.jobs > 1:
        with ProcessPoolExecutor(
            max_workers=cfg.jobs,
            initializer=_init_quantify_worker,
            initargs=(cfg.models_dir, cfg.values),
        ) as pool:
            results = list(pool.map(_quantify_task, [str(p) for p in files]))
    else:
        _init_quantify_worker(cfg.models_dir, cfg.values)
        results = [_quantify_task(str(p)) for p in files]
    for path, scene in zip(files, results):
        save_scene(out / path.name, scene)
    print(f"quantified {len(results)} scenes ({cfg.method}) into {out}")
    return EXIT_OK


def _load_eval_images(cfg: RunConfig):
    scenes = [load_scene(p) for p in _scene_files(cfg.in_dir)]
    try:
        images = [s.eval_image(cfg.stream) for s in scenes]
    except ValueError as e:
        raise CliError(EXIT_USAGE, str(e)) from None
    if sum(len(im.estimates) for im in images) == 0:
        raise CliError(EXIT_USAGE, f"no estimates in stream {cfg.stream!r}; nothing to evaluate")
    points = model_points_for(_load_models(cfg.models_dir))
    return images, points


def cmd_evaluate(cfg: RunConfig) -> int:
    images, points = _load_eval_images(cfg)
    grid = np.linspace(cfg.e_t_min, cfg.e_t_max, cfg.e_t_points)
    curves = sweep_curves(
        images, points, e_grid=grid, ap_target=cfg.ap_target, theta_v=cfg.theta_v
    )
    out = Path(cfg.out_dir)
    os.makedirs(out, exist_ok=True)
    write_curves_csv(out / "curves.csv", curves)
    write_summary_json(out / "summary.json", curves)
    rho = "undefined" if curves.spearman_rho is None else f"{curves.spearman_rho:.4f}"
    print(f"AUC_AR={curves.auc_ar:.4f} spearman_rho={rho}; wrote curves.csv summary.json to {out}")
    return EXIT_OK


def cmd_threshold(cfg: RunConfig) -> int:
    images, points = _load_eval_images(cfg)
    u_t = threshold_for_target(
        images, points, cfg.e_t, ap_target=cfg.ap_target, theta_v=cfg.theta_v
    )
    if u_t is None:
        print("u_T=INFEASIBLE")
        return EXIT_OK
    counts = [
        classify_image(im.estimates, im.ground_truth, points, cfg.e_t, cfg.theta_v, u_t)
        for im in images
    ]
    scores = dataset_scores(counts)
    print(f"u_T={u_t!r}")
    print(f"AP={scores.ap!r}")
    print(f"AR={scores.ar!r}")
    print(f"ARU={scores.aru!r}")
    return EXIT_OK


_COMMANDS = {
    "generate": cmd_generate,
    "quantify": cmd_quantify,
    "evaluate": cmd_evaluate,
    "threshold": cmd_threshold,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return _COMMANDS[args.subcommand](cfg)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except (MeshParseError, SceneFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


def entrypoint() -> None:
    sys.exit(main())
