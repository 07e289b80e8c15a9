import json
import subprocess
import sys

import pytest

from dualcam.cli import build_parser, main
from dualcam.config import PipelineConfig

from conftest import small_config

STAGES = ["simulate", "align", "link", "optimize", "evaluate"]


@pytest.fixture(scope="module")
def config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.json"
    path.write_text(json.dumps(small_config().to_dict()))
    return path


@pytest.fixture(scope="module")
def full_run(tmp_path_factory, config_file):
    out = tmp_path_factory.mktemp("full")
    assert main(["full", "--config", str(config_file), "--seed", "5", "--out", str(out), "--report", str(out / "summary.json")]) == 0
    return out


def test_full_writes_every_stage(full_run):
    for stage in STAGES:
        assert (full_run / f"{stage}.report.json").is_file()
    for stage in STAGES[:-1]:
        assert (full_run / f"{stage}.scene.json").is_file()
    summary = json.loads((full_run / "summary.json").read_text())
    assert summary["stages"] == STAGES


def test_full_reports_all_marker_pairs(full_run):
    rep = json.loads((full_run / "evaluate.report.json").read_text())
    assert len(rep["distances"]["rows"]) == 36
    assert rep["distances"]["columns"][-2:] == ["true_distance", "est_distance"]


def test_full_is_byte_identical(full_run, tmp_path, config_file):
    assert main(["full", "--config", str(config_file), "--seed", "5", "--out", str(tmp_path), "--report", str(tmp_path / "summary.json")]) == 0
    for f in sorted(full_run.iterdir()):
        assert (tmp_path / f.name).read_bytes() == f.read_bytes(), f.name


def test_separate_stages_equal_full(full_run, tmp_path, config_file):
    prev = None
    for stage in STAGES:
        args = [stage, "--report", str(tmp_path / f"{stage}.report.json")]
        if stage == "simulate":
            args += ["--config", str(config_file), "--seed", "5"]
        else:
            args += ["--in", str(prev)]
        if stage != "evaluate":
            prev = tmp_path / f"{stage}.scene.json"
            args += ["--out", str(prev)]
        assert main(args) == 0, stage
    for stage in STAGES:
        assert (tmp_path / f"{stage}.report.json").read_bytes() == (full_run / f"{stage}.report.json").read_bytes()
    for stage in STAGES[:-1]:
        assert (tmp_path / f"{stage}.scene.json").read_bytes() == (full_run / f"{stage}.scene.json").read_bytes()


def test_parallel_align_matches_deterministic(full_run, tmp_path):
    out = tmp_path / "a.scene.json"
    assert main(["align", "--no-deterministic", "--in", str(full_run / "simulate.scene.json"), "--out", str(out), "--report", str(tmp_path / "r.json")]) == 0
    assert out.read_bytes() == (full_run / "align.scene.json").read_bytes()


def test_align_without_trajectory_names_stage(full_run, tmp_path, capsys):
    doc = json.loads((full_run / "simulate.scene.json").read_text())
    doc["trajectory"] = None
    scene = tmp_path / "no_traj.json"
    scene.write_text(json.dumps(doc))
    code = main(["align", "--in", str(scene), "--out", str(tmp_path / "x.json")])
    assert code == 1
    err = capsys.readouterr().err
    assert "stage align" in err and "trajectory" in err


def test_stage_out_of_order(full_run, tmp_path, capsys):
    code = main(["optimize", "--in", str(full_run / "simulate.scene.json"), "--out", str(tmp_path / "x.json")])
    assert code == 1
    assert "stage optimize" in capsys.readouterr().err


def test_missing_input_file(tmp_path, capsys):
    assert main(["link", "--in", str(tmp_path / "absent.json"), "--out", str(tmp_path / "x.json")]) == 1
    assert "stage link" in capsys.readouterr().err


def test_bad_config_file(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"optimizer": {"no_such_option": 1}}))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "s.json")]) == 1
    assert "no_such_option" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [["bogus"], ["full", "--seed", "x"], ["align", "--frobnicate"], []])
def test_usage_errors_exit_2(argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2


def test_parser_flags():
    args = build_parser().parse_args(["full", "--seed", "3", "--out", "o"])
    assert args.deterministic is True and args.seed == 3
    assert build_parser().parse_args(["align", "--no-deterministic"]).deterministic is False


def test_module_entry_point(tmp_path, config_file):
    out = tmp_path / "s.json"
    proc = subprocess.run(
        [sys.executable, "-m", "dualcam.cli", "simulate", "--config", str(config_file), "--seed", "1", "--out", str(out)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["markers"] == 9
    bad = subprocess.run([sys.executable, "-m", "dualcam.cli", "nope"], capture_output=True, text=True)
    assert bad.returncode == 2


def test_config_round_trip():
    cfg = small_config()
    assert PipelineConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
