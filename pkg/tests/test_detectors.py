import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccminer.detectors import (
    DatasetTooSmall,
    Detection,
    DetectorConfig,
    DetectorError,
    MissingKinematics,
    MissingMap,
    NoConflictZones,
    detect_env_rules,
    detect_interaction,
    detect_kinematic,
    detect_priority,
    detect_recording_artifacts,
    diff_maps,
    mask_artifacts,
    prepare,
    run_all,
    score_density_anomaly,
    trajectory_features,
)
from ccminer.environment import (
    ConflictZone,
    EnvironmentMap,
    LaneSegment,
    TrafficSign,
    VirtualLoop,
    arc_points,
    polyline,
)
from ccminer.metrics import min_over_pairs
from ccminer.synthetic import InjectionSpec, ScenarioSpec, generate_nominal, inject
from ccminer.taxonomy import ColumnClass, RowStage
from ccminer.trajectory import Dataset, Trajectory

CFG = DetectorConfig()
DT = 0.1


def from_speed(track_id, speed, x0=0.0, y=0.0, t0=0.0, heading=0.0):
    """Straight-line motion along ``heading`` with the given speed profile."""
    speed = np.asarray(speed, float)
    s = x0 + np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * DT)])
    t = t0 + np.arange(len(speed)) * DT
    c, sn = math.cos(heading), math.sin(heading)
    return Trajectory.from_arrays(track_id, t, s * c - y * sn, s * sn + y * c, np.full(len(t), heading))


def kinds(dets):
    return sorted(d.kind for d in dets)


# ---------------------------------------------------------------- kinematic


def test_curve_overspeed_severity_matches_closed_form():
    t = np.arange(0, 3.0, DT)
    w = 20.0 / 20.0
    traj = Trajectory.from_arrays("c", t, 20 * np.cos(w * t), 20 * np.sin(w * t))
    dets = [d for d in detect_kinematic(prepare(traj, DT), CFG) if d.kind == "curve_overspeed"]
    assert len(dets) == 1
    assert dets[0].severity == pytest.approx(20.0 / 4.0, rel=0.02)
    assert dets[0].required_data is ColumnClass.EgoTrajectory
    assert dets[0].candidate_stages == {RowStage.DecisionMaking, RowStage.GoalRiskTolerance, RowStage.Knowledge}


def test_constant_speed_line_is_clean():
    assert detect_kinematic(prepare(from_speed("a", np.full(100, 10.0)), DT), CFG) == []


def test_gentle_braking_is_clean():
    speed = np.concatenate([np.full(20, 20.0), np.linspace(20, 0, 101), np.zeros(20)])
    assert detect_kinematic(prepare(from_speed("a", speed), DT), CFG) == []


def test_hard_braking_is_flagged():
    speed = np.concatenate([np.full(20, 20.0), np.linspace(20, 4, 21), np.full(20, 4.0)])
    found = detect_kinematic(prepare(from_speed("a", speed), DT), CFG)
    brake = [d for d in found if d.kind == "harsh_brake"]
    assert len(brake) == 1
    assert brake[0].evidence["peak"] == pytest.approx(8.0, rel=0.01)


def test_kinematic_needs_derived_columns():
    with pytest.raises(MissingKinematics):
        detect_kinematic(from_speed("a", np.full(10, 5.0)), CFG)


# ---------------------------------------------------------------- interaction


def pair_run(a, b, cfg=CFG):
    ds = Dataset((prepare(a, DT), prepare(b, DT)))
    return detect_interaction(ds, min_over_pairs(ds, None, cfg.horizon, cfg.collision_radius), cfg)


def test_tailgating_for_five_seconds():
    follower = from_speed("f", np.full(51, 20.0))
    leader = from_speed("l", np.full(51, 20.0), x0=10.0)
    (d,) = pair_run(follower, leader)
    assert (d.kind, d.ego_id, d.other_ids) == ("tailgating", "f", ("l",))
    assert d.candidate_stages == {RowStage.GoalRiskTolerance}
    assert d.severity == pytest.approx(2.0)


def test_short_tailgating_is_ignored():
    follower = from_speed("f", np.full(21, 20.0))
    leader = from_speed("l", np.full(21, 20.0), x0=10.0)
    assert pair_run(follower, leader) == []


def test_crossing_paths_raise_near_collision():
    # both reach the origin at t = 3 s; 1 s before that the ttc is 1 s
    a = from_speed("a", np.full(31, 10.0), x0=-30.0)
    b = from_speed("b", np.full(31, 5.0), x0=-15.0, heading=math.pi / 2)
    dets = pair_run(a, b)
    (near,) = [d for d in dets if d.kind == "near_collision"]
    assert near.evidence["min_ttc"] < 1.0
    assert near.ego_id == "a"  # larger closing speed
    assert near.required_data is ColumnClass.EgoOthers


def test_interaction_ego_is_the_faster_closer_regardless_of_order():
    a = from_speed("z", np.full(31, 10.0), x0=-30.0)
    b = from_speed("b", np.full(31, 5.0), x0=-15.0, heading=math.pi / 2)
    (near,) = [d for d in pair_run(a, b) if d.kind == "near_collision"]
    assert near.ego_id == "z"


# ---------------------------------------------------------------- environment rules


def junction_map(with_sign=True):
    west_in = LaneSegment("W_in", [(-100, -1.75), (-10, -1.75)], 3.5, 13.9, "W_out")
    west_out = LaneSegment("W_out", [(-10, 1.75), (-100, 1.75)], 3.5, 13.9, "W_in")
    loops = (
        VirtualLoop("W_entry", [(-20, -3.5), (-20, 0)], "west-entry", "W", "entry", "W_in"),
        VirtualLoop("W_exit", [(-20, 0), (-20, 3.5)], "west-exit", "W", "exit", "W_out"),
    )
    signs = (TrafficSign("nu", "no_u_turn", (-20, -4), frozenset({"W_in"})),) if with_sign else ()
    return EnvironmentMap((west_in, west_out), signs, loops)


def u_turn_path():
    pts = polyline([(-100, -1.75), (-12, -1.75)], arc_points((-12, 0), 1.75, -math.pi / 2, math.pi / 2, 0.2),
                   [(-12, 1.75), (-100, 1.75)])
    seg = np.hypot(*np.diff(pts, axis=0).T)
    s = np.concatenate([[0], np.cumsum(seg)])
    t = np.arange(0, s[-1] / 3.0, DT)
    return Trajectory.from_arrays("u", t, np.interp(t * 3.0, s, pts[:, 0]), np.interp(t * 3.0, s, pts[:, 1]))


def test_u_turn_through_both_loops():
    dets = detect_env_rules(prepare(u_turn_path(), DT), junction_map(), CFG)
    (u,) = [d for d in dets if d.kind == "u_turn"]
    assert u.required_data is ColumnClass.EgoEnvironment
    assert u.candidate_stages == {RowStage.Knowledge}
    assert "u_turn" not in kinds(detect_env_rules(prepare(u_turn_path(), DT), junction_map(False), CFG))


def test_through_traffic_crossing_one_loop():
    traj = from_speed("t", np.full(60, 3.0), x0=-40.0, y=-1.75)
    assert "u_turn" not in kinds(detect_env_rules(prepare(traj, DT), junction_map(), CFG))


def two_lane_road(curved):
    if curved:
        a = arc_points((0, 0), 50 + 1.75, -math.pi / 2, math.pi / 2, 0.5)
        b = arc_points((0, 0), 50 - 1.75, math.pi / 2, -math.pi / 2, 0.5)
    else:
        a = np.array([(0, 0), (300, 0)], float)
        b = np.array([(300, 3.5), (0, 3.5)], float)
    return EnvironmentMap((LaneSegment("A", a, 3.5, 25.0, "B"), LaneSegment("B", b, 3.5, 25.0, "A")))


def test_oncoming_lane_on_straight_is_not_corner_cutting():
    t = np.arange(0, 10, DT)
    y = np.interp(t, [0, 2, 3, 7, 8, 10], [0, 0, 3.5, 3.5, 0, 0])
    traj = Trajectory.from_arrays("o", t, 10 * t + 20, y)
    assert "cutting_corner" not in kinds(detect_env_rules(prepare(traj, DT), two_lane_road(False), CFG))


def test_cutting_through_the_inside_of_a_bend():
    # half circle at radius 50 + 1.75, pulled inside onto the oncoming lane mid-bend
    t = np.arange(0, 15, DT)
    ang = -math.pi / 2 + t / 15 * math.pi
    r = 51.75 - 3.5 * np.clip(np.sin(ang + math.pi / 2) * 1.6 - 0.3, 0, 1)
    traj = Trajectory.from_arrays("c", t, r * np.cos(ang), r * np.sin(ang))
    dets = detect_env_rules(prepare(traj, DT), two_lane_road(True), CFG)
    assert "cutting_corner" in kinds(dets)
    assert "wrong_way" not in kinds(dets)


def test_wrong_way_on_straight():
    traj = from_speed("w", np.full(60, 8.0), x0=-250.0, heading=math.pi)
    dets = detect_env_rules(prepare(traj, DT), two_lane_road(False), CFG)
    assert kinds(dets) == ["wrong_way"]


def test_speeding_needs_duration():
    road = two_lane_road(False)
    fast = from_speed("s", np.full(40, 30.0))
    brief = from_speed("b", np.concatenate([np.full(15, 30.0)]))
    assert kinds(detect_env_rules(prepare(fast, DT), road, CFG)) == ["speeding"]
    assert detect_env_rules(prepare(brief, DT), road, CFG) == []


def test_env_rules_need_a_map():
    with pytest.raises(MissingMap):
        detect_env_rules(prepare(from_speed("a", np.full(10, 5.0)), DT), None, CFG)


# ---------------------------------------------------------------- priority


def priority_map():
    main = LaneSegment("P", [(-100, 0), (100, 0)], 3.5, 15.0)
    minor = LaneSegment("M", [(0, -100), (0, 100)], 3.5, 15.0)
    zone = ConflictZone("z", [(-1.75, -1.75), (1.75, -1.75), (1.75, 1.75), (-1.75, 1.75)], ("P", "M"), "P")
    return EnvironmentMap((main, minor), (), (), (zone,))


def priority_scene(prio_ahead, brake=4.0, prio_first=False):
    # minor car reaches the zone edge (y = -1.75) at t = 5 s
    minor = from_speed("m", np.full(100, 8.0), x0=-41.75, heading=math.pi / 2)
    n = 100
    v = np.full(n, 10.0)
    k = 52  # reacts 0.2 s after the minor car enters, brakes for 1 s, then carries on
    v[k:k + 10] = 10.0 - brake * DT * np.arange(1, 11)
    v[k + 10:] = v[k + 9]
    start = -1.75 - 10.0 * (5.0 + prio_ahead) if not prio_first else -1.75 - 10.0 * 3.0
    prio = from_speed("p", v, x0=start)
    return Dataset((prepare(minor, DT), prepare(prio, DT)))


def run_priority(ds):
    env = priority_map()
    return detect_priority(ds, env, min_over_pairs(ds, None, CFG.horizon, CFG.collision_radius), CFG)


def test_minor_car_forcing_priority_car_to_brake():
    # hand-computed: priority car 3 s from the zone when the minor car enters
    (d,) = run_priority(priority_scene(3.0))
    assert (d.kind, d.ego_id, d.other_ids) == ("priority_violation", "m", ("p",))
    assert d.required_data is ColumnClass.EgoOthersEnvironment
    assert d.candidate_stages == {RowStage.Perception, RowStage.GoalRiskTolerance, RowStage.Knowledge}


def test_distant_priority_car_is_no_violation():
    assert run_priority(priority_scene(20.0)) == []


def test_priority_car_first_is_no_violation():
    assert run_priority(priority_scene(0.0, prio_first=True)) == []


def test_priority_needs_zones():
    ds = priority_scene(3.0)
    with pytest.raises(NoConflictZones):
        detect_priority(ds, two_lane_road(False), {}, CFG)
    with pytest.raises(MissingMap):
        detect_priority(ds, None, {}, CFG)


# ---------------------------------------------------------------- recording


def test_teleport():
    traj = from_speed("a", np.full(50, 10.0))
    x = traj.x.copy()
    x[25:] += 100.0
    jumped = Trajectory.from_arrays("a", traj.t, x, traj.y, traj.heading)
    dets = detect_recording_artifacts(jumped, CFG)
    assert "teleport" in kinds(dets)
    (tp,) = [d for d in dets if d.kind == "teleport"]
    assert tp.evidence["implied_speed"] == pytest.approx(1010.0, rel=1e-6)
    assert tp.candidate_stages == {RowStage.TrajectoryRecording}


def test_clean_constant_velocity_has_no_artifacts():
    assert detect_recording_artifacts(from_speed("a", np.full(80, 12.0)), CFG) == []


def test_dropout_at_gap():
    traj = from_speed("a", np.full(60, 10.0))
    keep = np.ones(60, bool)
    keep[30:39] = False  # one 1.0 s step
    dets = detect_recording_artifacts(traj.select(keep), CFG)
    (d,) = dets
    assert d.kind == "dropout"
    assert d.t_start == pytest.approx(2.9) and d.t_end == pytest.approx(3.9)


def test_noise_burst():
    traj = from_speed("a", np.full(80, 12.0))
    rng = np.random.default_rng(1)
    y = traj.y.copy()
    y[40:55] += rng.normal(0, 1.0, 15)
    noisy = Trajectory.from_arrays("a", traj.t, traj.x, y)
    assert kinds(detect_recording_artifacts(noisy, CFG)) == ["recording_noise"]


def test_recorded_speed_disagreement():
    traj = from_speed("a", np.full(60, 10.0)).with_columns(speed=np.full(60, 14.0))
    assert kinds(detect_recording_artifacts(traj, CFG)) == ["speed_mismatch"]


def test_artifacts_mask_overlapping_detections():
    art = Detection("a", (), 5.0, 6.0, "teleport", 2.0)
    brake = Detection("a", (), 6.5, 7.0, "harsh_brake", 2.0)
    far = Detection("a", (), 9.0, 9.5, "harsh_brake", 2.0)
    other = Detection("b", ("a",), 5.5, 6.0, "near_collision", 2.0)
    assert mask_artifacts([art, brake, far, other], pad=1.0) == [art, far]


# ---------------------------------------------------------------- density


def passes(n=12):
    out = []
    for i in range(n):
        speed = np.full(80, 10.0 + 0.3 * i)
        out.append(from_speed(f"p{i:02d}", speed, y=0.2 * i))
    return out


def u_turn_like():
    t = np.arange(80) * DT
    ang = np.linspace(-math.pi / 2, math.pi / 2, 80)
    return Trajectory.from_arrays("u", t, 8 * np.cos(ang), 8 * np.sin(ang) + 8)


def brute_density(target, members, k=5, samples=32):
    feats = [trajectory_features(m, samples) for m in members]

    def knn(f, skip):
        d = sorted(
            math.sqrt(sum((a - b) ** 2 for a, b in zip(f, g)))
            for j, g in enumerate(feats) if j not in skip
        )
        return sum(d[:k]) / k

    typical = float(np.median([knn(f, {i}) for i, f in enumerate(feats)]))
    own = trajectory_features(target, samples)
    skip = {i for i, m in enumerate(members) if m.id == target.id}
    return knn(own, skip) / typical


def test_u_turn_is_the_rarest_trajectory():
    members = passes() + [u_turn_like()]
    ds = Dataset(tuple(members))
    scores = {m.id: score_density_anomaly(m, ds, CFG) for m in members}
    assert max(scores, key=scores.get) == "u"
    for m in members:
        assert scores[m.id] == pytest.approx(brute_density(m, members), rel=1e-9)


def test_duplicate_scores_at_most_one():
    members = passes()
    ds = Dataset(tuple(members))
    twin = Trajectory.from_arrays("twin", members[5].t, members[5].x, members[5].y)
    assert score_density_anomaly(twin, ds, CFG) <= 1.0


def test_density_ignores_translation():
    members = passes()
    moved = [Trajectory.from_arrays(m.id, m.t, m.x + 500, m.y - 300) for m in members]
    a = score_density_anomaly(members[0], Dataset(tuple(members)), CFG)
    b = score_density_anomaly(moved[0], Dataset(tuple(moved)), CFG)
    assert a == pytest.approx(b, rel=1e-9)


def test_density_needs_enough_trajectories():
    with pytest.raises(DatasetTooSmall):
        score_density_anomaly(passes(1)[0], Dataset(tuple(passes(5))), CFG)


# ---------------------------------------------------------------- config and whole runs


def test_config_validation():
    with pytest.raises(DetectorError):
        DetectorConfig(a_brake=0.0)
    with pytest.raises(DetectorError):
        DetectorConfig.from_dict({"a_brakes": 3.0})
    assert DetectorConfig.from_dict(CFG.to_dict()) == CFG


def injected_scene():
    spec = ScenarioSpec("straight_2lane", n_vehicles=4, seed=2, duration=40.0)
    ds, env = generate_nominal(spec)
    ds, env, _ = inject(ds, env, [InjectionSpec("harsh_brake", 0), InjectionSpec("tailgate", 3)])
    return ds, env


@pytest.fixture(scope="module")
def scene():
    return injected_scene()


def multiset(dets):
    return sorted((d.ego_id, d.kind, round(d.t_start, 6), round(d.t_end, 6), d.other_ids) for d in dets)


def test_trajectory_order_does_not_matter(scene):
    ds, env = scene
    forward = run_all(ds, env).detections
    reverse = run_all(Dataset(tuple(reversed(ds.trajectories)), ds.metadata), env).detections
    assert multiset(forward) == multiset(reverse)
    assert forward == sorted(forward, key=lambda d: d.sort_key)


def test_ego_only_detections_need_nothing_else(scene):
    ds, env = scene
    full = [d for d in run_all(ds, env).detections if d.required_data is ColumnClass.EgoTrajectory]
    alone = []
    for traj in ds:
        alone += run_all(Dataset((traj,)), None).detections
    alone = [d for d in alone if d.required_data is ColumnClass.EgoTrajectory]
    assert multiset(full) == multiset(alone)


def test_unrelated_trajectories_do_not_change_columns(scene):
    ds, env = scene
    base = run_all(ds, env).detections
    far = from_speed("zz_far", np.full(400, 10.0), y=5000.0)
    more = run_all(Dataset(ds.trajectories + (far,)), env).detections
    assert [(d.ego_id, d.kind, d.required_data) for d in base] == [
        (d.ego_id, d.kind, d.required_data) for d in more
    ]


THRESHOLDS = {
    "harsh_brake": "a_brake",
    "curve_overspeed": "a_lat_max",
    "high_jerk": "j_max",
    "tailgating": "thw_crit",
    "near_collision": "ttc_crit",
}
RAISE_MEANS_MORE = {"thw_crit", "ttc_crit"}  # these flag values *below* the threshold


@given(st.sampled_from(sorted(THRESHOLDS)), st.floats(1.05, 3.0))
@settings(max_examples=12, deadline=None)
def test_stricter_thresholds_never_add_detections(kind, factor):
    ds, env = injected_scene()
    name = THRESHOLDS[kind]
    base = getattr(CFG, name)
    strict = base / factor if name in RAISE_MEANS_MORE else base * factor
    loose = run_all(ds, env, CFG).detections
    tight = run_all(ds, env, replace(CFG, **{name: strict})).detections
    assert sum(d.kind == kind for d in tight) <= sum(d.kind == kind for d in loose)


def test_missing_sign_from_map_difference():
    spec = ScenarioSpec("four_way_intersection", n_vehicles=4, seed=1, duration=60.0)
    ds, env = generate_nominal(spec)
    (d,) = diff_maps(env, env.without_sign("priority_E"), ds, CFG)
    assert d.kind == "missing_sign" and d.evidence["lanes"] == ["E_in"]
    assert d.ego_id == ds.trajectories[1].id  # the only one arriving from the east
    assert d.required_data is ColumnClass.EgoEnvironment
    assert d.candidate_stages == {RowStage.StaticEnvironmentInfo}


def test_missing_sign_on_unused_lane_is_silent():
    spec = ScenarioSpec("four_way_intersection", n_vehicles=4, seed=1, duration=60.0)
    ds, env = generate_nominal(spec)
    assert diff_maps(env, env.without_sign("priority_W"), ds, CFG) == []
