import io
import json
import math
from xml.etree import ElementTree

import numpy as np
import pytest

from ccminer.detectors import Detection, DetectorConfig, run_all
from ccminer.environment import DanglingReference, SchemaError
from ccminer.io import (
    EmptyInput,
    IoError,
    ParseError,
    build_report,
    canonical_report,
    detection_from_dict,
    detection_to_dict,
    map_from_dict,
    map_to_dict,
    parse_map,
    parse_report,
    parse_trajectories,
    serialize_map,
    serialize_report,
    serialize_trajectories,
)
from ccminer.svg import render_svg, svg_document
from ccminer.synthetic import ScenarioSpec, build_map, generate_nominal, recovery_case
from ccminer.taxonomy import Mode, RowStage, label, situation_merge
from ccminer.trajectory import Dataset, Trajectory


def parse(text, fmt="csv"):
    return parse_trajectories(io.StringIO(text), fmt)


def test_two_row_csv():
    ds = parse("track_id,t,x,y\na,0.0,0.0,0.0\na,0.1,1.0,0.0\n")
    (traj,) = ds.trajectories
    assert traj.id == "a" and len(traj) == 2
    assert traj.heading[0] == pytest.approx(0.0)


def test_bad_number_reports_the_line():
    text = "# units\ntrack_id,t,x,y\na,0.0,0,0\na,abc,1,0\n"
    with pytest.raises(ParseError) as info:
        parse(text)
    assert info.value.line == 4
    assert "line 4" in str(info.value)


def test_time_order_errors_point_at_the_row():
    text = "track_id,t,x,y\na,0.0,0,0\na,0.2,1,0\na,0.1,2,0\n"
    with pytest.raises(ParseError) as info:
        parse(text)
    assert info.value.line == 4


def test_empty_input():
    with pytest.raises(EmptyInput):
        parse("")
    with pytest.raises(EmptyInput):
        parse("# units only\ntrack_id,t,x,y\n")
    with pytest.raises(EmptyInput):
        parse("\n", "jsonl")


def test_missing_header_column():
    with pytest.raises(ParseError):
        parse("track_id,t,x\na,0,0\n")


def test_unknown_columns_are_ignored_with_a_warning():
    with pytest.warns(UserWarning, match="lane_hint"):
        ds = parse("track_id,t,x,y,lane_hint\na,0,0,0,L1\na,1,1,0,L1\n")
    assert len(ds["a"]) == 2


def test_jsonl_lines():
    text = json.dumps({"track_id": 7, "t": [0, 1, 2], "x": [0, 1, 2], "y": [0, 0, 0], "class": "bicycle"}) + "\n"
    (traj,) = parse(text, "jsonl").trajectories
    assert traj.id == "7" and traj.road_user_class == "bicycle"
    with pytest.raises(ParseError) as info:
        parse(text + "{not json\n", "jsonl")
    assert info.value.line == 2


def random_dataset(seed):
    rng = np.random.default_rng(seed)
    trajs = []
    for k in range(int(rng.integers(1, 5))):
        n = int(rng.integers(2, 40))
        t = np.cumsum(rng.uniform(0.01, 0.5, n)) + rng.uniform(-100, 100)
        x = rng.normal(0, 1e3, n)
        y = rng.normal(0, 1e-3, n)
        heading = rng.uniform(-math.pi, math.pi, n)
        extra = {"speed": rng.uniform(0, 40, n)} if rng.random() < 0.5 else {}
        cls = str(rng.choice(["car", "truck", "pedestrian"]))
        trajs.append(Trajectory.from_arrays(f"id {k},{seed}", t, x, y, heading, road_user_class=cls, **extra))
    return Dataset(tuple(trajs))


@pytest.mark.parametrize("fmt", ["csv", "jsonl"])
def test_round_trip_over_seeded_datasets(fmt):
    for seed in range(100):
        ds = random_dataset(seed)
        text = serialize_trajectories(ds, fmt)
        back = parse(text, fmt)
        assert len(back) == len(ds)
        for a, b in zip(ds, back):
            assert a.same_as(b)
        assert serialize_trajectories(back, fmt) == text


def test_generated_scene_round_trip():
    ds, env = generate_nominal(ScenarioSpec("four_way_intersection", 4, seed=2, duration=60.0))
    text = serialize_trajectories(ds)
    assert text.splitlines()[0].startswith("# units:")
    assert serialize_trajectories(parse(text)) == text
    assert serialize_map(parse_map(io.StringIO(serialize_map(env)))) == serialize_map(env)


MINIMAL_MAP = {
    "format_version": 1,
    "lanes": [{"id": "A", "centerline": [[0, 0], [100, 0]], "width": 3.5, "speed_limit": 13.9}],
}


def test_minimal_map_loads():
    env = parse_map(io.StringIO(json.dumps(MINIMAL_MAP)))
    assert [lane.id for lane in env.lanes] == ["A"]
    assert env.signs == () and env.loops == ()


def test_sign_on_unknown_lane():
    doc = dict(MINIMAL_MAP, signs=[{"id": "s", "kind": "priority", "position": [0, 0], "applies_to": ["B"]}])
    with pytest.raises(DanglingReference):
        map_from_dict(doc)


def test_degenerate_loop():
    doc = dict(MINIMAL_MAP, loops=[{"id": "g", "gate": [[1, 1], [1, 1]]}])
    with pytest.raises(SchemaError):
        map_from_dict(doc)


def test_map_schema_errors():
    with pytest.raises(SchemaError):
        map_from_dict({"format_version": 1, "lanes": [{"id": "A"}]})
    with pytest.raises(SchemaError):
        map_from_dict(dict(MINIMAL_MAP, format_version=2))
    with pytest.raises(SchemaError):
        parse_map(io.StringIO("{"))


def test_every_template_map_round_trips():
    for template in ("straight_2lane", "curve", "four_way_intersection"):
        env = build_map(ScenarioSpec(template))
        again = map_from_dict(json.loads(json.dumps(map_to_dict(env))))
        assert map_to_dict(again) == map_to_dict(env)


def test_detection_dict_round_trip():
    det = Detection("a", ("b",), 1.0, 2.5, "near_collision", 3.0, {"min_ttc": 0.5, "closing": math.nan})
    back = detection_from_dict(detection_to_dict(det))
    assert back.sort_key == det.sort_key and back.required_data is det.required_data
    assert back.evidence["closing"] is None


def report_for(case):
    run = run_all(case.dataset, case.env, reference_map=case.reference_map)
    labels = [label(d, Mode.dataset) for d in run.detections]
    return build_report(labels, situation_merge(labels), DetectorConfig(), "dataset")


def test_report_canonical_form_ignores_the_timestamp(monkeypatch):
    case = recovery_case("tailgate")
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
    first = report_for(case)
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "86400")
    second = report_for(case)
    assert first["generated_at"] != second["generated_at"]
    assert canonical_report(first) == canonical_report(second)
    doc = parse_report(io.StringIO(serialize_report(first)))
    assert doc["detections"][0]["label"]["stages"] == [RowStage.GoalRiskTolerance.value]
    assert DetectorConfig.from_dict(doc["config"]) == DetectorConfig()


def test_report_version_is_checked():
    with pytest.raises(SchemaError):
        parse_report(io.StringIO(json.dumps({"format_version": 2})))


# ---------------------------------------------------------------- svg


def test_map_only_plot():
    env = build_map(ScenarioSpec("four_way_intersection"))
    root = ElementTree.fromstring(svg_document(Dataset(()), env))
    classes = [el.get("class") for el in root.iter()]
    assert classes.count("lane") == len(env.lanes)
    assert "trajectory" not in classes
    ds, _ = generate_nominal(ScenarioSpec("four_way_intersection", 2, duration=60.0))
    classes = [el.get("class") for el in ElementTree.fromstring(svg_document(ds, env)).iter()]
    assert classes.count("trajectory") == 2


def test_u_turn_is_highlighted(tmp_path):
    case = recovery_case("u_turn")
    dets = [d for d in run_all(case.dataset, case.env).detections if d.kind == "u_turn"]
    path = render_svg(tmp_path / "u.svg", case.dataset, case.env, dets)
    text = path.read_text()
    assert text.count('class="detection"') == 1
    assert "u_turn" in text


def test_svg_is_byte_identical(tmp_path):
    case = recovery_case("cutting_corner")
    dets = run_all(case.dataset, case.env).detections
    a = render_svg(tmp_path / "a.svg", case.dataset, case.env, dets).read_bytes()
    b = render_svg(tmp_path / "b.svg", case.dataset, case.env, dets).read_bytes()
    assert a == b


def test_svg_errors(tmp_path):
    with pytest.raises(IoError):
        render_svg(tmp_path / "x.svg", Dataset(()), None)
    ds, env = generate_nominal(ScenarioSpec("straight_2lane", 1))
    with pytest.raises(IoError):
        render_svg(tmp_path / "missing" / "x.svg", ds, env)
