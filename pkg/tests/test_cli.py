import json

import pytest
import yaml

from scbct.cli import main
from scbct.metaimage import read_metaimage
from scbct.phantoms import write_case


@pytest.fixture(scope="module")
def env(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    paths = write_case(root / "case", dims=(16, 16, 16))
    cfg = root / "cfg.yaml"
    cfg.write_text(yaml.safe_dump({
        "geometry": {"det_rows": 32, "det_cols": 32, "n_views": 12},
        "ossart": {"n_subsets": 3, "n_epochs": 2},
        "noise_sigma": 0.02,
    }))
    return root, paths, str(cfg)


def run(env, *argv):
    root, _, cfg = env
    return main([*argv, "--config", cfg])


def test_extract_induce_project_reconstruct(env, tmp_path, capsys):
    root, paths, _ = env
    out = str(tmp_path)
    assert run(env, "extract", "--cbct", paths["cbct"], "--preset", "1,7", "--output", out) == 0
    assert (tmp_path / "artifact_p1.mha").exists() and (tmp_path / "artifact_p7.mha").exists()
    assert run(env, "induce", "--pct", paths["pct"], "--artifact", str(tmp_path / "artifact_p1.mha"),
               "--output", out) == 0
    induced = read_metaimage(tmp_path / "induced.mha")
    assert induced.values.min() == 0 and induced.values.max() == 1
    assert run(env, "project", "--volume", str(tmp_path / "induced.mha"), "--output", out, "--seed", "3") == 0
    assert (tmp_path / "projections.json").exists()
    assert run(env, "reconstruct", "--projections", str(tmp_path / "projections.mha"), "--output", out) == 0
    recon = read_metaimage(tmp_path / "recon.mha")
    assert recon.grid.same_as(induced.grid)


def test_synthesize_compare_manifest(env, tmp_path, capsys):
    root, paths, _ = env
    out = tmp_path / "syn"
    rc = run(env, "synthesize", "--pct", paths["pct"], "--cbct", paths["cbct"], "--mask",
             f"esophagus={paths['masks']['esophagus']}", "--preset", "2", "--seed", "42", "--output", str(out))
    assert rc == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["seed"] == 42 and [r["preset_index"] for r in man["records"]] == [2]

    capsys.readouterr()
    assert run(env, "compare", "--a", paths["pct"], "--b", paths["cbct"], "--rescale",
               "--output", str(tmp_path / "cmp"), "--histogram", "--bins", "16", "--preset-index", "2") == 0
    rep = json.loads(capsys.readouterr().out)
    assert set(rep) == {"ssim", "rmse", "cc", "uqi", "preset_index", "params"}
    assert len((tmp_path / "cmp" / "histogram_a.csv").read_text().splitlines()) == 17

    assert run(env, "manifest", str(out / "manifest.json"), "--augment", "1,8", "--output",
               str(tmp_path / "train")) == 0
    ds = json.loads((tmp_path / "train" / "training_manifest.json").read_text())
    assert ds["n_pairs"] == 3
    assert run(env, "manifest", str(out / "manifest.json"), "--augment", "none", "--output",
               str(tmp_path / "train0")) == 0
    assert json.loads((tmp_path / "train0" / "training_manifest.json").read_text())["n_pairs"] == 1


def test_seg_and_dose_eval(env, tmp_path, capsys):
    root, paths, _ = env
    m = paths["masks"]["esophagus"]
    assert run(env, "seg-eval", "--pred", m, "--truth", m, "--dose", paths["dose"], "--volume-cc", "0.005",
               "--output", str(tmp_path)) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["dice"] == 1.0 and rep["hd95_mm"] == 0.0 and rep["mean_dose_diff"] == 0.0
    assert run(env, "dose-eval", "--dose", paths["dose"], "--mask", m, "--volume-cc", "0.005",
               "--output", str(tmp_path)) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["d0.005cc"] >= rep["mean_dose"]
    assert (tmp_path / "dvh.csv").read_text().startswith("dose_Gy,volume_cc")


def test_augment(env, tmp_path):
    root, paths, _ = env
    assert run(env, "augment", "--image", paths["pct"], "--mask", paths["masks"]["esophagus"],
               "--augment", "all", "--output", str(tmp_path)) == 0
    assert len(list(tmp_path.glob("aug*_image.mha"))) == 8 == len(list(tmp_path.glob("aug*_mask.mha")))


@pytest.mark.parametrize("argv,stage", [
    (["compare", "--a", "missing.mha", "--b", "missing.mha"], "stage compare"),
    (["dose-eval", "--dose", "missing.mha", "--mask", "missing.mha"], "stage dose-eval"),
    (["extract", "--cbct", "missing.mha", "--preset", "9"], "preset 9"),
])
def test_errors_are_stage_tagged(env, tmp_path, capsys, argv, stage):
    assert run(env, *argv, "--output", str(tmp_path)) == 2
    assert stage in capsys.readouterr().err


def test_synthesize_failure_exit_code(env, tmp_path, monkeypatch, capsys):
    from scbct import pipeline
    root, paths, _ = env

    def broken(*a, **k):
        raise FloatingPointError("diverged")

    monkeypatch.setattr(pipeline, "reconstruct", broken)
    rc = run(env, "synthesize", "--pct", paths["pct"], "--cbct", paths["cbct"], "--preset", "1",
             "--output", str(tmp_path))
    assert rc == 1
    assert "[preset 1, stage reconstruct]" in capsys.readouterr().err


def test_unknown_config_key(env, tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("noise: 1\n")
    assert main(["extract", "--cbct", "x.mha", "--config", str(bad)]) == 2
    assert "unknown key(s) noise" in capsys.readouterr().err
