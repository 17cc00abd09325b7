import json
import subprocess
import sys

import pytest

from ccminer import cli
from ccminer.cli import main
from ccminer.io import canonical_report

U_TURN_SCENARIO = {
    "template": "four_way_intersection",
    "n_vehicles": 3,
    "duration": 80.0,
    "routes": ["W_E", "N_S", "S_N"],
    "injections": [{"kind": "u_turn", "target": 0}],
}


@pytest.fixture
def scene(tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    scenario = tmp_path / "scenario.json"
    scenario.write_text(json.dumps(U_TURN_SCENARIO))
    out = tmp_path / "scene"
    assert main(["generate", str(scenario), "--seed", "0", "--out-dir", str(out)]) == 0
    return out


def test_generate_writes_the_scene(scene):
    names = sorted(p.name for p in scene.iterdir())
    assert names == ["ground_truth.json", "map.json", "trajectories.csv"]
    truth = json.loads((scene / "ground_truth.json").read_text())
    (ev,) = truth["events"]
    assert ev["kind"] == "u_turn" and ev["ego_id"] == "v00"


def test_detect_then_rerun_with_the_echoed_config(scene, tmp_path):
    first = tmp_path / "r1.json"
    second = tmp_path / "r2.json"
    base = ["detect", str(scene / "trajectories.csv"), "--map", str(scene / "map.json")]
    assert main(base + ["--out", str(first)]) == 0
    assert main(base + ["--config", str(first), "--out", str(second)]) == 0
    assert first.read_bytes() == second.read_bytes()
    doc = json.loads(first.read_text())
    kinds = [(d["kind"], d["ego_id"]) for d in doc["detections"]]
    assert ("u_turn", "v00") in kinds
    assert doc["format_version"] == 1
    assert set(doc["scores"]) == {"v00", "v01", "v02"}
    assert doc["inputs"]["map"]["name"] == "map.json"


def test_report_is_stable_apart_from_the_timestamp(scene, tmp_path, monkeypatch):
    base = ["detect", str(scene / "trajectories.csv"), "--map", str(scene / "map.json")]
    main(base + ["--out", str(tmp_path / "a.json")])
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1800000000")
    main(base + ["--out", str(tmp_path / "b.json")])
    a = json.loads((tmp_path / "a.json").read_text())
    b = json.loads((tmp_path / "b.json").read_text())
    assert a["generated_at"] != b["generated_at"]
    assert canonical_report(a) == canonical_report(b)


def test_classify_switches_mode(scene, tmp_path):
    report = tmp_path / "r.json"
    main(["detect", str(scene / "trajectories.csv"), "--map", str(scene / "map.json"), "--out", str(report)])
    out = tmp_path / "analysis.json"
    assert main(["classify", str(report), "--mode", "analysis", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["mode"] == "analysis"
    assert len(doc["detections"]) == len(json.loads(report.read_text())["detections"])


def test_metrics_lists_pairs(scene, tmp_path, capsys):
    assert main(["metrics", str(scene / "trajectories.csv")]) == 0
    doc = json.loads(capsys.readouterr().out)
    for row in doc["pairs"]:
        assert row["a"] != row["b"]
        assert row["min_distance"] >= 0


def test_plot(scene, tmp_path):
    report = tmp_path / "r.json"
    main(["detect", str(scene / "trajectories.csv"), "--map", str(scene / "map.json"), "--out", str(report)])
    svg = tmp_path / "scene.svg"
    args = ["plot", str(scene / "trajectories.csv"), "--map", str(scene / "map.json"), "--report", str(report)]
    assert main(args + ["--out", str(svg)]) == 0
    assert 'class="detection"' in svg.read_text()


def test_missing_file_is_an_input_error(tmp_path, capsys):
    assert main(["detect", str(tmp_path / "nope.csv")]) == 1
    assert "error" in capsys.readouterr().err


def test_malformed_row_is_an_input_error(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("track_id,t,x,y\na,0,0,0\na,zz,1,0\n")
    assert main(["detect", str(bad)]) == 1
    assert "line 3" in capsys.readouterr().err


def test_unknown_config_key(scene, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"no_such_threshold": 1}))
    assert main(["detect", str(scene / "trajectories.csv"), "--config", str(cfg)]) == 1


def test_bad_arguments_exit_with_one():
    assert main(["detect"]) == 1
    assert main(["frobnicate"]) == 1


def test_internal_failure_exits_with_two(scene, monkeypatch):
    def boom(*args, **kwargs):
        raise RuntimeError("bug")

    monkeypatch.setattr(cli, "run_all", boom)
    assert main(["detect", str(scene / "trajectories.csv")]) == 2


def test_detections_do_not_change_the_exit_code(scene, tmp_path):
    # the scene contains a u-turn, yet the run succeeds
    assert main(["detect", str(scene / "trajectories.csv"), "--map", str(scene / "map.json"),
                 "--out", str(tmp_path / "r.json")]) == 0


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "ccminer", "--version"], capture_output=True, text=True)
    assert res.returncode == 0
    assert res.stdout.startswith("ccminer ")
