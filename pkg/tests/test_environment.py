import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccminer.environment import (
    ConflictZone,
    DanglingReference,
    EmptyMap,
    EnvironmentMap,
    LaneSegment,
    SchemaError,
    TrafficSign,
    UnknownLane,
    VirtualLoop,
    loop_crossings,
    map_match,
    rules_at,
    time_to_polygon,
)
from ccminer.trajectory import Trajectory


def path(points, times=None, track_id="p"):
    pts = np.asarray(points, float)
    t = np.arange(len(pts), dtype=float) if times is None else np.asarray(times, float)
    return Trajectory.from_arrays(track_id, t, pts[:, 0], pts[:, 1], np.zeros(len(pts)))


GATE = VirtualLoop("g", [(0, -1), (0, 1)], "west-entry")


def orient(a, b, p):
    return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])


def sgn(v):
    return (v > 0) - (v < 0)


def crossings_oracle(pts, times, a, b):
    """Per-segment orientation tests in exact integer arithmetic.

    A segment whose endpoints lie strictly on opposite sides of the gate
    line crosses when the gate endpoints are not strictly on one side of
    the segment line. A vertex exactly on the gate line is a crossing,
    owned by the segment that ends there, when the previous and next
    vertices lie on opposite sides and the vertex is within the gate.
    """
    out = []
    n = len(pts)
    for k in range(n - 1):
        p, q = pts[k], pts[k + 1]
        sp, sq = sgn(orient(a, b, p)), sgn(orient(a, b, q))
        if sp == 0:
            continue
        if sq == -sp:
            if sgn(orient(p, q, a)) * sgn(orient(p, q, b)) <= 0:
                frac = orient(a, b, p) / (orient(a, b, p) - orient(a, b, q))
                out.append((k, times[k] + frac * (times[k + 1] - times[k]), sq - sp))
        elif sq == 0 and k + 2 < n:
            sr = sgn(orient(a, b, pts[k + 2]))
            dot = (q[0] - a[0]) * (b[0] - a[0]) + (q[1] - a[1]) * (b[1] - a[1])
            length2 = (b[0] - a[0]) ** 2 + (b[1] - a[1]) ** 2
            if sr == -sp and 0 <= dot <= length2:
                out.append((k, times[k + 1], -sp))
    return [(k, t, "left_to_right" if d > 0 else "right_to_left") for k, t, d in out]


def random_case(rng):
    a = tuple(int(v) for v in rng.integers(-3, 4, 2))
    b = a
    while b == a:
        b = tuple(int(v) for v in rng.integers(-3, 4, 2))
    n = int(rng.integers(2, 12))
    pts = [tuple(int(v) for v in rng.integers(-4, 5, 2))]
    while len(pts) < n:
        p = tuple(int(v) for v in rng.integers(-4, 5, 2))
        if p != pts[-1]:
            pts.append(p)
    times = list(np.cumsum(rng.integers(1, 4, n)).astype(float))
    return a, b, pts, times


def test_crossing_oracle_agreement_on_random_cases():
    rng = np.random.default_rng(2024)
    touched = 0
    for _ in range(1000):
        a, b, pts, times = random_case(rng)
        traj = path(pts, times)
        got = loop_crossings(traj, VirtualLoop("g", [a, b]))
        want = crossings_oracle(pts, times, a, b)
        assert [(c.segment, c.direction) for c in got] == [(k, d) for k, _, d in want]
        for c, (_, t, _) in zip(got, want):
            assert c.t == pytest.approx(t, abs=1e-12)
        touched += any(orient(a, b, p) == 0 for p in pts)
    assert touched > 100  # vertex-on-gate cases were exercised


def test_simple_crossing_time_and_direction():
    (c,) = loop_crossings(path([(-1, 0), (1, 0)]), GATE)
    assert c.t == pytest.approx(0.5)
    assert c.direction == "right_to_left"


def test_no_crossing_on_one_side():
    assert loop_crossings(path([(1, 0), (2, 0), (3, 1)]), GATE) == []


def test_out_and_back_gives_opposite_directions():
    events = loop_crossings(path([(-1, 0), (1, 0), (-1, 0.5)]), GATE)
    assert len(events) == 2
    assert {e.direction for e in events} == {"left_to_right", "right_to_left"}


def test_vertex_on_gate_counts_once():
    events = loop_crossings(path([(-1, 0), (0, 0), (1, 0)]), GATE)
    assert [(e.t, e.segment) for e in events] == [(1.0, 0)]


def test_touch_without_side_change_is_not_a_crossing():
    assert loop_crossings(path([(-1, 0), (0, 0), (-1, 1)]), GATE) == []


def test_motion_along_gate_warns_and_does_not_count():
    notes = []
    events = loop_crossings(path([(-1, -2), (0, -0.5), (0, 0.5), (1, 2)]), GATE, notes)
    assert events == []
    assert notes


@given(st.lists(st.tuples(st.integers(-5, 5), st.integers(-5, 5)), min_size=2, max_size=10, unique=True))
@settings(max_examples=200, deadline=None)
def test_reversal_flips_directions(points):
    forward = path(points)
    backward = path(points[::-1])
    fwd = loop_crossings(forward, GATE)
    bwd = loop_crossings(backward, GATE)
    assert len(fwd) == len(bwd)
    flip = {"left_to_right": "right_to_left", "right_to_left": "left_to_right"}
    assert sorted(flip[c.direction] for c in fwd) == sorted(c.direction for c in bwd)


def test_loop_rejects_degenerate_gate():
    with pytest.raises(SchemaError):
        VirtualLoop("bad", [(1, 1), (1, 1)])


STRAIGHT = LaneSegment("A", [(0, 0), (100, 0)], 3.5, 13.9, "B")
BACK = LaneSegment("B", [(100, 3.5), (0, 3.5)], 3.5, 13.9, "A")
SOLO = LaneSegment("A", [(0, 0), (100, 0)], 3.5, 13.9)


def test_on_centerline_motion_matches_exactly():
    env = EnvironmentMap((STRAIGHT, BACK))
    res = map_match(path([(10, 0), (20, 0), (30, 0)]), env)
    assert res.lane_id == ["A", "A", "A"]
    assert np.allclose(res.lateral_offset, 0.0)
    assert np.allclose(res.heading_deviation, 0.0)
    assert np.allclose(res.station, [10, 20, 30])


def test_far_point_is_unmatched():
    env = EnvironmentMap((SOLO,))
    res = map_match(path([(10, 20), (20, 20)]), env)
    assert res.lane_id == [None, None]


def test_tie_goes_to_lower_lane_id():
    lanes = (LaneSegment("Z", [(0, 1), (100, 1)], 3.5, 10), LaneSegment("M", [(0, -1), (100, -1)], 3.5, 10))
    res = map_match(path([(5, 0), (6, 0)]), EnvironmentMap(lanes))
    assert res.lane_id == ["M", "M"]


def test_empty_map_cannot_match():
    with pytest.raises(EmptyMap):
        map_match(path([(0, 0), (1, 0)]), EnvironmentMap(()))


@given(st.floats(-2.5, 2.5).filter(lambda v: abs(v) > 1e-6), st.floats(5, 90))
def test_mirroring_flips_lateral_offset(offset, x):
    env = EnvironmentMap((SOLO,))
    left = map_match(path([(x, offset), (x + 1, offset)]), env)
    right = map_match(path([(x, -offset), (x + 1, -offset)]), env)
    assert left.lateral_offset == pytest.approx(-right.lateral_offset)


def test_heading_deviation_of_wrong_way_travel():
    env = EnvironmentMap((SOLO,))
    traj = Trajectory.from_arrays("w", [0, 1], [50, 40], [0, 0], [math.pi, math.pi])
    res = map_match(traj, env)
    assert np.allclose(np.abs(res.heading_deviation), math.pi)


def test_rules_fold_signs():
    signs = (
        TrafficSign("nu", "no_u_turn", (0, 0), frozenset({"A"})),
        TrafficSign("s1", "speed_limit", (0, 0), frozenset({"A"}), 12.0),
        TrafficSign("s2", "speed_limit", (0, 0), frozenset({"A"}), 8.0),
        TrafficSign("y", "yield", (0, 0), frozenset({"A"})),
    )
    env = EnvironmentMap((STRAIGHT, BACK), signs)
    rules = rules_at("A", env)
    assert rules.u_turn_allowed is False
    assert rules.speed_limit == 8.0
    assert rules.priority == "yield"
    assert rules_at("B", env) == (13.9, True, "unregulated", False)


def test_rules_for_unknown_lane():
    with pytest.raises(UnknownLane):
        rules_at("nope", EnvironmentMap((SOLO,)))


def test_dangling_references_are_rejected():
    with pytest.raises(DanglingReference):
        EnvironmentMap((STRAIGHT,), (TrafficSign("s", "priority", (0, 0), frozenset({"Q"})),))
    with pytest.raises(DanglingReference):
        EnvironmentMap((LaneSegment("A", [(0, 0), (1, 0)], 3.5, 10, "ghost"),))


def test_conflict_zone_validation():
    square = [(0, 0), (2, 0), (2, 2), (0, 2)]
    with pytest.raises(SchemaError):
        ConflictZone("z", square, ("A", "B"), "C")
    with pytest.raises(SchemaError):
        ConflictZone("z", [(0, 0), (2, 2), (2, 0), (0, 2)], ("A", "B"), "A")
    zone = ConflictZone("z", square, ("A", "B"), "A")
    assert zone.yielding_lane == "B"
    assert list(zone.contains(np.array([[1, 1], [3, 1]]))) == [True, False]


def test_time_to_polygon():
    square = np.array([(10, -1), (12, -1), (12, 1), (10, 1)], float)
    assert time_to_polygon((0, 0), (2, 0), square) == pytest.approx(5.0)
    assert time_to_polygon((0, 0), (-2, 0), square) == math.inf
    assert time_to_polygon((11, 0), (0, 0), square) == 0.0


def test_lane_curvature_of_arc():
    ang = np.linspace(0, math.pi / 2, 60)
    lane = LaneSegment("C", np.column_stack([50 * np.cos(ang), 50 * np.sin(ang)]), 3.5, 10)
    mid = lane.length / 2
    assert float(lane.curvature_at(np.array([mid]))[0]) == pytest.approx(0.02, rel=0.02)
