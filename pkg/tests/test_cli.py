import hashlib
import json

import numpy as np
import pytest

from poseuq import box_mesh, octahedron_mesh, save_mesh
from poseuq.cli import main


def write_models(root):
    models = root / "models"
    models.mkdir(exist_ok=True)
    save_mesh(models / "box.ply", box_mesh(0.08))
    save_mesh(models / "oct.ply", octahedron_mesh(0.05))
    return models


GEN_FLAGS = [
    "--fx", "60", "--fy", "60", "--cx", "24", "--cy", "24",
    "--width", "48", "--height", "48",
    "--z-min", "0.45", "--z-max", "0.7",
    "--objects-per-image", "1-2",
    "--translation-sigma", "0.004",
    "--rotation-sigma-deg", "1.5",
    "--mask-dropout", "0.01",
    "--secondary-noise-scale", "2.0",
    "--seed", "5",
    "--n-images", "6",
]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """models + generated scenes + a maskval-quantified copy, built once."""
    root = tmp_path_factory.mktemp("cli")
    models = write_models(root)
    raw = root / "raw"
    assert main(["generate", "--out", str(raw), "--models", str(models)] + GEN_FLAGS) == 0
    scored = root / "scored"
    assert (
        main(
            [
                "quantify",
                "--in", str(raw),
                "--out", str(scored),
                "--models", str(models),
                "--method", "maskval",
            ]
        )
        == 0
    )
    return {"root": root, "models": models, "raw": raw, "scored": scored}


def test_generate_writes_scenes_and_manifest(workspace):
    raw = workspace["raw"]
    scenes = sorted(raw.glob("scene_*.json"))
    assert len(scenes) == 6
    manifest = json.loads((raw / "manifest.json").read_text())
    assert manifest["command"] == "generate"
    assert manifest["seed"] == 5
    assert set(manifest["models"]) == {"box", "oct"}
    for name, digest in manifest["files"].items():
        blob = (raw / name).read_bytes()
        assert digest == "sha256:" + hashlib.sha256(blob).hexdigest()


def test_generate_scenes_have_two_streams(workspace):
    doc = json.loads(next(iter(sorted(workspace["raw"].glob("scene_*.json")))).read_text())
    assert set(doc["estimates"]) == {"primary", "secondary"}
    for est in doc["estimates"]["primary"]:
        assert "uncertainty" not in est
        assert est["true_mdd"] >= 0.0


def test_quantify_maskval_scores_every_estimate(workspace):
    for path in sorted(workspace["scored"].glob("scene_*.json")):
        doc = json.loads(path.read_text())
        for est in doc["estimates"]["primary"]:
            assert 0.0 <= est["uncertainty"] <= 1.0
            assert 0.0 <= est["certainty"] <= 1.0
            assert 0.0 <= est["visibility"] <= 1.0
        # the secondary stream is untouched by maskval
        for est in doc["estimates"]["secondary"]:
            assert "uncertainty" not in est


def test_quantify_refuses_in_place(workspace):
    raw = workspace["raw"]
    code = main(
        ["quantify", "--in", str(raw), "--out", str(raw), "--models", str(workspace["models"])]
    )
    assert code == 2


def test_quantify_ensemble_needs_secondary_stream(workspace, tmp_path):
    out = tmp_path / "ens"
    code = main(
        [
            "quantify",
            "--in", str(workspace["raw"]),
            "--out", str(out),
            "--models", str(workspace["models"]),
            "--method", "ensemble-add",
        ]
    )
    assert code == 0
    doc = json.loads(next(iter(sorted(out.glob("scene_*.json")))).read_text())
    assert all("uncertainty" in e for e in doc["estimates"]["primary"])

    # strip the secondary stream and try again
    solo = tmp_path / "solo"
    solo.mkdir()
    for path in workspace["raw"].glob("scene_*.json"):
        doc = json.loads(path.read_text())
        del doc["estimates"]["secondary"]
        (solo / path.name).write_text(json.dumps(doc))
    code = main(
        [
            "quantify",
            "--in", str(solo),
            "--out", str(tmp_path / "ens2"),
            "--models", str(workspace["models"]),
            "--method", "ensemble-add",
        ]
    )
    assert code == 2


def test_jobs_do_not_change_output(workspace, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out, jobs in ((a, "1"), (b, "2")):
        code = main(
            [
                "quantify",
                "--in", str(workspace["raw"]),
                "--out", str(out),
                "--models", str(workspace["models"]),
                "--jobs", jobs,
            ]
        )
        assert code == 0
    for pa in sorted(a.glob("*.json")):
        assert pa.read_bytes() == (b / pa.name).read_bytes()


def test_evaluate_writes_curves_and_summary(workspace, tmp_path, capsys):
    out = tmp_path / "eval"
    code = main(
        [
            "evaluate",
            "--in", str(workspace["scored"]),
            "--out", str(out),
            "--models", str(workspace["models"]),
        ]
    )
    assert code == 0
    printed = capsys.readouterr().out
    assert "AUC_AR=" in printed and "spearman_rho=" in printed
    lines = (out / "curves.csv").read_text().strip().split("\n")
    assert lines[0] == "e_t_m,u_T,AP,AR,ARU,AR_star"
    assert len(lines) == 62
    summary = json.loads((out / "summary.json").read_text())
    assert summary["counts"]["images"] == 6
    assert "auc_ar" in summary and "infeasible_e_t_m" in summary


def test_evaluate_rejects_unquantified_scenes(workspace, tmp_path, capsys):
    code = main(
        [
            "evaluate",
            "--in", str(workspace["raw"]),
            "--out", str(tmp_path / "bad"),
            "--models", str(workspace["models"]),
        ]
    )
    assert code == 2
    assert "quantify first" in capsys.readouterr().err


def test_threshold_reports_feasible_and_infeasible(workspace, capsys):
    base = [
        "threshold",
        "--in", str(workspace["scored"]),
        "--models", str(workspace["models"]),
    ]
    code = main(base + ["--e-t", "0.05", "--ap-target", "0.5"])
    assert code == 0
    out = capsys.readouterr().out
    assert out.startswith("u_T=")
    assert "AP=" in out and "ARU=" in out

    code = main(base + ["--e-t", "0.0"])
    assert code == 0
    assert "u_T=INFEASIBLE" in capsys.readouterr().out


def test_threshold_matches_evaluate_grid_row(workspace, tmp_path, capsys):
    out = tmp_path / "eval"
    assert main(["evaluate", "--in", str(workspace["scored"]), "--out", str(out),
                 "--models", str(workspace["models"])]) == 0
    rows = [line.split(",") for line in
            (out / "curves.csv").read_text().strip().split("\n")[1:]]
    row = next(r for r in rows if float(r[0]) == 0.015)
    capsys.readouterr()
    assert main(["threshold", "--in", str(workspace["scored"]), "--models",
                 str(workspace["models"]), "--e-t", "0.015"]) == 0
    printed = capsys.readouterr().out
    if row[1] == "nan":
        assert "u_T=INFEASIBLE" in printed
    else:
        u_line, ap_line = printed.strip().split("\n")[:2]
        assert float(u_line.removeprefix("u_T=")) == float(row[1])
        assert float(ap_line.removeprefix("AP=")) == float(row[2])


def test_zero_noise_quantify_is_nearly_certain(workspace, tmp_path):
    raw = tmp_path / "raw"
    flags = [f for f in GEN_FLAGS]
    flags[flags.index("--translation-sigma") + 1] = "0"
    flags[flags.index("--rotation-sigma-deg") + 1] = "0"
    flags[flags.index("--mask-dropout") + 1] = "0"
    flags[flags.index("--n-images") + 1] = "3"
    assert main(["generate", "--out", str(raw), "--models",
                 str(workspace["models"])] + flags) == 0
    scored = tmp_path / "scored"
    assert main(["quantify", "--in", str(raw), "--out", str(scored),
                 "--models", str(workspace["models"])]) == 0
    for path in sorted(scored.glob("scene_*.json")):
        doc = json.loads(path.read_text())
        assert doc["estimates"]["primary"]
        for est in doc["estimates"]["primary"]:
            assert est["uncertainty"] <= 0.05


def test_missing_model_directory_is_usage_error(workspace, tmp_path, capsys):
    code = main(
        ["generate", "--out", str(tmp_path / "x"), "--models", str(tmp_path / "nope")]
    )
    assert code == 2
    assert "does not exist" in capsys.readouterr().err


def test_model_dir_from_environment(workspace, tmp_path, monkeypatch):
    monkeypatch.setenv("POSEUQ_MODEL_DIR", str(workspace["models"]))
    out = tmp_path / "envgen"
    code = main(["generate", "--out", str(out), "--n-images", "1", "--seed", "3"])
    assert code == 0
    assert (out / "scene_00000.json").exists()


def test_invalid_perturbation_flag_is_usage_error(workspace, tmp_path, capsys):
    code = main(
        [
            "generate",
            "--out", str(tmp_path / "x"),
            "--models", str(workspace["models"]),
            "--translation-sigma", "-0.5",
        ]
    )
    assert code == 2


def test_bad_objects_span_is_usage_error(workspace, tmp_path, capsys):
    code = main(
        [
            "generate",
            "--out", str(tmp_path / "x"),
            "--models", str(workspace["models"]),
            "--objects-per-image", "4-1",
        ]
    )
    assert code == 2
    assert "objects_per_image" in capsys.readouterr().err


def test_config_file_and_flag_precedence(workspace, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_images": 3, "z_min": 0.45, "z_max": 0.7}))
    out1 = tmp_path / "from_config"
    assert (
        main(
            [
                "generate",
                "--out", str(out1),
                "--models", str(workspace["models"]),
                "--config", str(cfg),
            ]
        )
        == 0
    )
    assert len(list(out1.glob("scene_*.json"))) == 3

    out2 = tmp_path / "flag_wins"
    assert (
        main(
            [
                "generate",
                "--out", str(out2),
                "--models", str(workspace["models"]),
                "--config", str(cfg),
                "--n-images", "2",
            ]
        )
        == 0
    )
    assert len(list(out2.glob("scene_*.json"))) == 2


def test_unknown_config_key_is_usage_error(workspace, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    code = main(
        [
            "generate",
            "--out", str(tmp_path / "x"),
            "--models", str(workspace["models"]),
            "--config", str(cfg),
        ]
    )
    assert code == 2
    assert "unknown key" in capsys.readouterr().err


def test_malformed_scene_file_is_data_error(workspace, tmp_path, capsys):
    broken = tmp_path / "broken"
    broken.mkdir()
    (broken / "scene_00000.json").write_text("{")
    code = main(
        [
            "quantify",
            "--in", str(broken),
            "--out", str(tmp_path / "out"),
            "--models", str(workspace["models"]),
        ]
    )
    assert code == 3
    assert "invalid JSON" in capsys.readouterr().err


def test_malformed_mesh_file_is_data_error(workspace, tmp_path, capsys):
    models = tmp_path / "models"
    models.mkdir()
    (models / "bad.ply").write_text("not a mesh\n")
    code = main(["generate", "--out", str(tmp_path / "x"), "--models", str(models)])
    assert code == 3
    assert "line 1" in capsys.readouterr().err


def test_generate_reruns_byte_identical(workspace, tmp_path):
    args = lambda out: (
        ["generate", "--out", str(out), "--models", str(workspace["models"])] + GEN_FLAGS
    )
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(args(a)) == 0
    assert main(args(b)) == 0
    files_a = sorted(p.name for p in a.iterdir())
    files_b = sorted(p.name for p in b.iterdir())
    assert files_a == files_b
    for name in files_a:
        assert (a / name).read_bytes() == (b / name).read_bytes()
