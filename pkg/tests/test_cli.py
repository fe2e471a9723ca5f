import json

import numpy as np
import pytest

from nnlci import cli
from nnlci.config import (ConfigError, PipelineConfig, config_from_dict, load_config,
                          save_config)
from nnlci.geometry import translated_case
from nnlci.network import DEFAULT_SIZES, load_checkpoint


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def small_config(workdir):
    return {
        "schema_version": 1,
        "workdir": str(workdir),
        "seed": 3,
        "cases": {"training": [], "testing": [],
                  "extra_training": [translated_case(0.15).to_dict(),
                                     translated_case(-0.3, 0.05).to_dict()],
                  "extra_testing": [translated_case(0.12).to_dict()]},
        "mesh": {"nx": 20, "ny": 5, "finest_refinements": 1},
        "solver": {"max_steps": 150},
        "network": [202, 8, 4],
        "training": {"epochs": 40, "lr": 1e-3, "seed": 3},
    }


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Runs every stage once on a tiny configuration."""
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(small_config(root / "work")))
    outputs = {}

    def call(*argv):
        code = cli.main([str(a) for a in argv])
        outputs[argv[0]] = code
        return code

    assert call("mesh", "--config", cfg_path) == 0
    assert call("solve", "--config", cfg_path) == 0
    assert call("dataset", "build", "--cases", cfg_path) == 0
    assert call("dataset", "build", "--cases", cfg_path, "--role", "testing",
                "--dump-stencils", root / "stencils.txt") == 0
    assert call("train", "--dataset", root / "work/datasets/training.dat", "--config", cfg_path,
                "--out", root / "model.ckpt") == 0
    return root, cfg_path


def test_default_config_round_trip(tmp_path):
    cfg = PipelineConfig()
    assert cfg.network == list(DEFAULT_SIZES) and cfg.training.epochs == 50000
    save_config(cfg, tmp_path / "c.json")
    back = load_config(tmp_path / "c.json")
    assert back.to_dict() == cfg.to_dict()
    assert len(back.cases.cases("training")) == 27 and len(back.cases.cases("testing")) == 4


def test_config_rejects_unknown_keys_and_versions():
    with pytest.raises(ConfigError, match="solvr"):
        config_from_dict({"solvr": {}})
    with pytest.raises(ConfigError, match="cfl_number"):
        config_from_dict({"solver": {"cfl_number": 0.3}})
    with pytest.raises(ConfigError, match="schema_version"):
        config_from_dict({"schema_version": 7})
    with pytest.raises(ConfigError):
        config_from_dict({"network": [10, 4]})
    with pytest.raises(ConfigError):
        config_from_dict({"cases": {"training": ["bumps"]}})
    with pytest.raises(ConfigError):
        config_from_dict({"solver": {"cfl": -1}})


def test_files_written(pipeline):
    root, _ = pipeline
    work = root / "work"
    assert len(list((work / "meshes").glob("*.mesh"))) == 9
    assert len(list((work / "solutions").glob("*.sol"))) == 9
    assert (work / "datasets/training.dat").exists() and (work / "datasets/testing.dat").exists()
    lines = (root / "stencils.txt").read_text().splitlines()
    assert len(lines) == 3200 and lines[0].startswith("dx+0.12_m+0.00 ")
    model = load_checkpoint(root / "model.ckpt")
    assert model.sizes == (202, 8, 4) and model.metadata["epochs"] == 40


def test_solve_is_byte_reproducible(pipeline, tmp_path, capsys):
    root, cfg_path = pipeline
    work = root / "work"
    case = translated_case(0.12)
    (tmp_path / "case.json").write_text(json.dumps(case.to_dict()))
    mesh = work / "meshes" / f"{case.case_id}_coarse.mesh"
    code, out, _ = run(capsys, "solve", "--config", cfg_path, "--case", tmp_path / "case.json",
                       "--mesh", mesh, "--out", tmp_path / "again.sol")
    assert code == 0 and "150 steps" in out
    first = (work / "solutions" / f"{case.case_id}_coarse.sol").read_bytes()
    assert (tmp_path / "again.sol").read_bytes() == first


def test_train_is_reproducible(pipeline, tmp_path, capsys):
    root, cfg_path = pipeline
    code, _, _ = run(capsys, "train", "--dataset", root / "work/datasets/training.dat",
                     "--config", cfg_path, "--out", tmp_path / "again.ckpt")
    assert code == 0
    assert (tmp_path / "again.ckpt").read_bytes() == (root / "model.ckpt").read_bytes()
    code, _, _ = run(capsys, "--seed", 4, "train", "--dataset", root / "work/datasets/training.dat",
                     "--config", cfg_path, "--out", tmp_path / "other.ckpt")
    assert code == 0
    assert (tmp_path / "other.ckpt").read_bytes() != (root / "model.ckpt").read_bytes()


def test_predict_evaluate_report(pipeline, tmp_path, capsys):
    root, cfg_path = pipeline
    code, out, _ = run(capsys, "predict", "--model", root / "model.ckpt", "--config", cfg_path,
                       "--case", "dx+0.12_m+0.00", "--out", tmp_path / "pred.txt")
    assert code == 0 and "points predicted in" in out
    pred = np.loadtxt(tmp_path / "pred.txt")
    assert pred.shape[1] == 6
    code, out, _ = run(capsys, "evaluate", "--model", root / "model.ckpt", "--config", cfg_path)
    assert code == 0 and "relative L1" in out
    reports = root / "work" / "reports"
    for ext in ("csv", "json", "vtk"):
        assert (reports / f"dx+0.12_m+0.00.{ext}").exists()
    code, out, _ = run(capsys, "report", "--config", cfg_path, "--out", tmp_path / "table.json")
    assert code == 0
    assert out.splitlines()[-1].startswith("Total")
    rows = json.loads((tmp_path / "table.json").read_text())
    assert [r["case"] for r in rows] == ["dx+0.12_m+0.00", "Total"]
    metrics = json.loads((reports / "dx+0.12_m+0.00.json").read_text())
    assert rows[0]["relative_l1"] == pytest.approx(metrics["relative_l1"], rel=1e-12)


def test_missing_artifacts_name_the_stage(tmp_path, capsys):
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(small_config(tmp_path / "empty")))
    code, _, err = run(capsys, "dataset", "build", "--cases", cfg_path)
    assert code == 2 and "nnlci solve" in err
    code, _, err = run(capsys, "train", "--dataset", tmp_path / "none.dat", "--config", cfg_path,
                       "--out", tmp_path / "m.ckpt")
    assert code == 2 and "nnlci dataset build" in err
    code, _, err = run(capsys, "evaluate", "--model", tmp_path / "m.ckpt", "--config", cfg_path)
    assert code == 2 and "nnlci train" in err


def test_usage_errors(tmp_path, capsys):
    assert run(capsys, "frobnicate")[0] == 1
    assert run(capsys, "solve")[0] == 1
    cfg_path = tmp_path / "bad.json"
    cfg_path.write_text('{"solver": {"cfll": 1}}')
    code, _, err = run(capsys, "mesh", "--config", cfg_path)
    assert code == 1 and "cfll" in err
    cfg_path.write_text("{not json")
    assert run(capsys, "mesh", "--config", cfg_path)[0] == 1
    assert run(capsys, "--help")[0] == 0


def test_unknown_case_id(pipeline, capsys):
    root, cfg_path = pipeline
    code, _, err = run(capsys, "predict", "--model", root / "model.ckpt", "--config", cfg_path,
                       "--case", "dx+9.99_m+0.00")
    assert code == 1 and "dx+9.99" in err


def test_mesh_out_single_level(pipeline, tmp_path, capsys):
    _, cfg_path = pipeline
    code, _, _ = run(capsys, "mesh", "--config", cfg_path, "--case", "dx+0.12_m+0.00",
                     "--level", "finer", "--mesh-out", tmp_path / "f.mesh")
    assert code == 0
    assert (tmp_path / "f.mesh").read_text().split()[1] == "800"
