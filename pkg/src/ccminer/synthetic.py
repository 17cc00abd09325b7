"""Deterministic traffic scenes with scripted corner-case injections.

Nominal vehicles track lane centerlines with an IDM-style longitudinal
law whose desired speed is the lane limit, lowered ahead of curves to a
comfortable lateral acceleration. Injections rewrite one target's
station/offset profile kinematically and emit ground truth computed from
the scripted motion.

Ground-truth intervals span the period in which the scripted quantity
crosses the default detector threshold (for example the part of a
braking manoeuvre deeper than 6 m/s^2), so they are comparable with
detector output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .detectors import STAGE_CATALOG, Detection, DetectorConfig
from .environment import (
    ConflictZone,
    EnvironmentMap,
    LaneSegment,
    TrafficSign,
    VirtualLoop,
    arc_points,
    polyline,
    rules_at,
)
from .metrics import NoOverlap, encounter_profile
from .taxonomy import ColumnClass, Mode, filter_stages
from .trajectory import Dataset, Trajectory

A_MAX = 1.5
B_COMFORT = 2.0
TIME_HEADWAY = 1.5
MIN_GAP = 2.0
IDM_DELTA = 4.0
VEHICLE_LENGTH = 4.5
A_LAT_COMFORT = 1.5
B_PLAN = 1.0
JERK_LIMIT = 4.0
B_MAX = 4.0
LANE_WIDTH = 3.5
HALF = LANE_WIDTH / 2

TEMPLATES = ("straight_2lane", "curve", "four_way_intersection")
INJECTION_KINDS = (
    "harsh_brake",
    "curve_overspeed",
    "tailgate",
    "near_collision_cross",
    "wrong_way",
    "u_turn",
    "cutting_corner",
    "priority_violation",
    "recording_noise",
    "recording_dropout",
    "missing_sign",
)
DETECTOR_KIND = {
    "tailgate": "tailgating",
    "near_collision_cross": "near_collision",
    "recording_dropout": "dropout",
}
EXPECTED_COLUMN = {
    "harsh_brake": ColumnClass.EgoTrajectory,
    "curve_overspeed": ColumnClass.EgoTrajectory,
    "tailgate": ColumnClass.EgoOthers,
    "near_collision_cross": ColumnClass.EgoOthers,
    "wrong_way": ColumnClass.EgoEnvironment,
    "u_turn": ColumnClass.EgoEnvironment,
    "cutting_corner": ColumnClass.EgoEnvironment,
    "priority_violation": ColumnClass.EgoOthersEnvironment,
    "recording_noise": ColumnClass.EgoTrajectory,
    "recording_dropout": ColumnClass.EgoTrajectory,
    "missing_sign": ColumnClass.EgoEnvironment,
}


class SyntheticError(ValueError):
    pass


class InfeasibleSpec(SyntheticError):
    pass


class ConflictingInjections(SyntheticError):
    pass


class UnknownTarget(SyntheticError):
    pass


@dataclass(frozen=True)
class ScenarioSpec:
    """Scene description.

    ``routes`` optionally fixes each vehicle's route name (``L1``/``L2`` on
    the straight road, ``C1``/``C2`` on the curve, ``<from>_<to>`` arm
    pairs such as ``W_E`` at the intersection). ``speed_factors`` scales
    each vehicle's desired speed relative to the limit.
    """

    template: str = "straight_2lane"
    n_vehicles: int = 4
    seed: int = 0
    duration: float = 40.0
    dt: float = 0.1
    radius: float = 40.0
    speed_limit: float = 13.9
    opposing_traffic: bool = True
    routes: tuple | None = None
    speed_factors: tuple | None = None

    def __post_init__(self):
        if self.template not in TEMPLATES:
            raise SyntheticError(f"unknown template {self.template!r}")
        if self.n_vehicles < 1 or self.duration <= 0 or self.dt <= 0 or self.radius <= 2 * LANE_WIDTH:
            raise SyntheticError("counts, durations and radius must be positive")
        for name in ("routes", "speed_factors"):
            value = getattr(self, name)
            if value is not None:
                if len(value) != self.n_vehicles:
                    raise SyntheticError(f"{name} needs one entry per vehicle")
                object.__setattr__(self, name, tuple(value))


@dataclass(frozen=True)
class InjectionSpec:
    kind: str
    target: int = 0
    onset: float | None = None
    params: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in INJECTION_KINDS:
            raise SyntheticError(f"unknown injection kind {self.kind!r}")
        if self.onset is not None and self.onset < 0:
            raise SyntheticError("onset must be non-negative")


@dataclass(frozen=True)
class GroundTruthEvent:
    injection: str
    kind: str
    ego_id: str
    t_start: float
    t_end: float
    column: ColumnClass
    stages: frozenset


@dataclass(frozen=True)
class GroundTruth:
    events: tuple = ()

    def __iter__(self):
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)


def expected_stages(injection: str) -> frozenset:
    kind = DETECTOR_KIND.get(injection, injection)
    return filter_stages(kind, STAGE_CATALOG[kind], Mode.dataset)


# ---------------------------------------------------------------- paths


class RoutePath:
    """A drivable centerline assembled from lanes, with smooth headings
    for lateral offsets and a curve-aware desired speed profile."""

    def __init__(self, points, limits, lanes: Sequence[tuple[str, float, float]] = ()):
        self.points = np.asarray(points, float)
        seg = np.diff(self.points, axis=0)
        lengths = np.hypot(seg[:, 0], seg[:, 1])
        self.stations = np.concatenate([[0.0], np.cumsum(lengths)])
        self.length = float(self.stations[-1])
        seg_h = np.unwrap(np.arctan2(seg[:, 1], seg[:, 0]))
        vh = np.empty(len(self.points))
        vh[0], vh[-1] = seg_h[0], seg_h[-1]
        vh[1:-1] = 0.5 * (seg_h[:-1] + seg_h[1:])
        self.vertex_heading = vh
        kappa = np.zeros(len(self.points))
        if len(self.points) > 2:
            kappa[1:-1] = np.diff(seg_h) / (0.5 * (lengths[:-1] + lengths[1:]))
        self.kappa = kappa
        self.limits = np.asarray(limits, float)
        self.lanes = tuple(lanes)

    @classmethod
    def from_lanes(cls, env: EnvironmentMap, lane_ids: Sequence[str]) -> "RoutePath":
        pts, limits, spans = [], [], []
        s = 0.0
        for lane_id in lane_ids:
            lane = env.lane(lane_id)
            limit = rules_at(lane_id, env).speed_limit
            for p in lane.centerline:
                if pts and np.allclose(pts[-1], p, atol=1e-9):
                    continue
                pts.append(p)
                limits.append(limit)
            spans.append((lane_id, s, s + lane.length))
            s += lane.length
        return cls(pts, limits, spans)

    def curvature(self, s):
        return np.interp(s, self.stations, self.kappa)

    def pose(self, s, offset=0.0) -> tuple[np.ndarray, np.ndarray]:
        """Positions at stations ``s`` shifted ``offset`` to the left; linear beyond the ends."""
        s = np.asarray(s, float)
        x = np.interp(s, self.stations, self.points[:, 0])
        y = np.interp(s, self.stations, self.points[:, 1])
        h = np.interp(s, self.stations, self.vertex_heading)
        before, after = s < 0, s > self.length
        h0, h1 = self.vertex_heading[0], self.vertex_heading[-1]
        x = np.where(before, self.points[0, 0] + s * math.cos(h0), x)
        y = np.where(before, self.points[0, 1] + s * math.sin(h0), y)
        x = np.where(after, self.points[-1, 0] + (s - self.length) * math.cos(h1), x)
        y = np.where(after, self.points[-1, 1] + (s - self.length) * math.sin(h1), y)
        offset = np.asarray(offset, float)
        return x - offset * np.sin(h), y + offset * np.cos(h)

    def desired_speed(self, factor: float = 1.0) -> np.ndarray:
        """Per-vertex desired speed with anticipatory braking at B_PLAN."""
        with np.errstate(divide="ignore"):
            v_curve = np.sqrt(A_LAT_COMFORT / np.abs(self.kappa))
        v = np.minimum(self.limits * factor, v_curve)
        for i in range(len(v) - 2, -1, -1):
            ds = self.stations[i + 1] - self.stations[i]
            v[i] = min(v[i], math.sqrt(v[i + 1] ** 2 + 2 * B_PLAN * ds))
        return v

    def lane_span(self, lane_id: str) -> tuple[float, float] | None:
        for lid, a, b in self.lanes:
            if lid == lane_id:
                return a, b
        return None


# ---------------------------------------------------------------- maps


def straight_map(length: float = 400.0, speed_limit: float = 13.9) -> EnvironmentMap:
    lanes = (
        LaneSegment("L1", [(0.0, 0.0), (length, 0.0)], LANE_WIDTH, speed_limit, "L2"),
        LaneSegment("L2", [(length, LANE_WIDTH), (0.0, LANE_WIDTH)], LANE_WIDTH, speed_limit, "L1"),
    )
    return EnvironmentMap(lanes)


def curve_map(radius: float = 40.0, speed_limit: float = 13.9, straight: float = 100.0) -> EnvironmentMap:
    """Left-hand 90 degree bend between two straights; C1 outer, C2 oncoming inner."""
    ro, ri = radius + HALF, radius - HALF
    c1 = polyline(
        [(-straight, -HALF), (0.0, -HALF)],
        arc_points((0.0, radius), ro, -math.pi / 2, 0.0),
        [(ro, radius), (ro, radius + straight)],
    )
    c2 = polyline(
        [(ri, radius + straight), (ri, radius)],
        arc_points((0.0, radius), ri, 0.0, -math.pi / 2),
        [(0.0, HALF), (-straight, HALF)],
    )
    lanes = (
        LaneSegment("C1", c1, LANE_WIDTH, speed_limit, "C2"),
        LaneSegment("C2", c2, LANE_WIDTH, speed_limit, "C1"),
    )
    return EnvironmentMap(lanes)


ARMS = ("W", "S", "E", "N")
MAIN_ARMS = ("W", "E")
ARM_LENGTH = 150.0
BOX = 7.0
LOOP_DISTANCE = 20.0
MINOR_LIMIT = 11.1


def _rot(points, k: int) -> np.ndarray:
    c, s = [(1, 0), (0, 1), (-1, 0), (0, -1)][k % 4]
    pts = np.asarray(points, float)
    return np.column_stack([c * pts[:, 0] - s * pts[:, 1], s * pts[:, 0] + c * pts[:, 1]])


def _turn(arm: str, dest: str) -> str:
    d = (ARMS.index(dest) - ARMS.index(arm)) % 4
    return {1: "right", 2: "through", 3: "left"}.get(d, "u")


def _polyline_crossings(p: np.ndarray, q: np.ndarray) -> list[np.ndarray]:
    out = []
    for i in range(len(p) - 1):
        a, b = p[i], p[i + 1]
        for j in range(len(q) - 1):
            c, d = q[j], q[j + 1]
            r, s = b - a, d - c
            den = r[0] * s[1] - r[1] * s[0]
            if abs(den) < 1e-12:
                continue
            w = c - a
            t = (w[0] * s[1] - w[1] * s[0]) / den
            u = (w[0] * r[1] - w[1] * r[0]) / den
            if 1e-9 < t < 1 - 1e-9 and 1e-9 < u < 1 - 1e-9:
                out.append(a + t * r)
    return out


def four_way_map(main_limit: float = 13.9, minor_limit: float = MINOR_LIMIT) -> EnvironmentMap:
    """Four-arm junction: W-E main road with priority, N-S minor road with yield."""
    lanes, signs, loops = [], [], []
    far = BOX + ARM_LENGTH
    for k, arm in enumerate(ARMS):
        limit = main_limit if arm in MAIN_ARMS else minor_limit
        inbound = _rot([(-far, -HALF), (-BOX, -HALF)], k)
        outbound = _rot([(-BOX, HALF), (-far, HALF)], k)
        lanes.append(LaneSegment(f"{arm}_in", inbound, LANE_WIDTH, limit, f"{arm}_out"))
        lanes.append(LaneSegment(f"{arm}_out", outbound, LANE_WIDTH, limit, f"{arm}_in"))
        right = arc_points((-BOX, -BOX), BOX - HALF, math.pi / 2, 0.0)
        left = arc_points((-BOX, BOX), BOX + HALF, -math.pi / 2, 0.0)
        through = [(-BOX, -HALF), (BOX, -HALF)]
        for offset, pts in ((1, right), (2, through), (3, left)):
            dest = ARMS[(k + offset) % 4]
            lanes.append(LaneSegment(f"{arm}_{dest}", _rot(pts, k), LANE_WIDTH, limit))
        kind = "priority" if arm in MAIN_ARMS else "yield"
        pos = _rot([(-BOX - 1.0, -LANE_WIDTH - 0.5)], k)[0]
        signs.append(TrafficSign(f"{kind}_{arm}", kind, tuple(pos), frozenset({f"{arm}_in"})))
        entry = _rot([(-LOOP_DISTANCE, -LANE_WIDTH), (-LOOP_DISTANCE, 0.0)], k)
        exit_ = _rot([(-LOOP_DISTANCE, 0.0), (-LOOP_DISTANCE, LANE_WIDTH)], k)
        loops.append(VirtualLoop(f"{arm}_entry", entry, f"{arm} entry", arm, "entry", f"{arm}_in"))
        loops.append(VirtualLoop(f"{arm}_exit", exit_, f"{arm} exit", arm, "exit", f"{arm}_out"))
    signs.append(
        TrafficSign("no_u_turn_W", "no_u_turn", (-LOOP_DISTANCE, -LANE_WIDTH - 0.5), frozenset({"W_in"}))
    )
    connectors = [lane for lane in lanes if "_in" not in lane.id and "_out" not in lane.id]

    def rank(lane_id: str):
        arm, dest = lane_id.split("_")
        return (arm not in MAIN_ARMS, _turn(arm, dest) == "left", lane_id)

    zones = []
    for i, a in enumerate(connectors):
        for b in connectors[i + 1 :]:
            if a.id.split("_")[0] == b.id.split("_")[0]:
                continue
            for n, point in enumerate(_polyline_crossings(a.centerline, b.centerline)):
                square = point + HALF * np.array([(-1, -1), (1, -1), (1, 1), (-1, 1)], float)
                prio = min(a.id, b.id, key=rank)
                zones.append(ConflictZone(f"Z_{a.id}_{b.id}_{n}", square, (a.id, b.id), prio))
    return EnvironmentMap(tuple(lanes), tuple(signs), tuple(loops), tuple(zones))


def route_lanes(template: str, route: str) -> tuple[str, ...]:
    if template == "four_way_intersection":
        arm, dest = route.split("_")
        if _turn(arm, dest) == "u":
            raise SyntheticError(f"route {route} is not a junction movement")
        return (f"{arm}_in", route, f"{dest}_out")
    return (route,)


def build_map(spec: ScenarioSpec) -> EnvironmentMap:
    if spec.template == "straight_2lane":
        return straight_map(speed_limit=spec.speed_limit)
    if spec.template == "curve":
        return curve_map(spec.radius, spec.speed_limit)
    return four_way_map(spec.speed_limit)


# ---------------------------------------------------------------- simulation


def idm_accel(v, v_des, gap=None, dv=0.0) -> float:
    """IDM acceleration; ``gap`` is bumper-to-bumper, ``dv`` the approach rate."""
    free = 1.0 - (v / max(v_des, 1e-3)) ** IDM_DELTA
    if gap is None:
        return A_MAX * free
    s_star = MIN_GAP + max(0.0, v * TIME_HEADWAY + v * dv / (2.0 * math.sqrt(A_MAX * B_COMFORT)))
    return A_MAX * (free - (s_star / max(gap, 0.1)) ** 2)


def simulate_lane(path: RoutePath, s0, v0, factors, n_steps: int, dt: float) -> np.ndarray:
    """Stations of a platoon on one path; index 0 leads. Returns (vehicles, steps+1)."""
    n = len(s0)
    s = np.zeros((n, n_steps + 1))
    v = np.zeros((n, n_steps + 1))
    a = np.zeros(n)
    s[:, 0], v[:, 0] = s0, v0
    vdes = [path.desired_speed(f) for f in factors]
    cap = max(path.limits)
    for k in range(n_steps):
        for i in range(n):
            sk, vk = s[i, k], v[i, k]
            target = float(np.interp(sk, path.stations, vdes[i], left=cap * factors[i], right=cap * factors[i]))
            if i == 0:
                cmd = idm_accel(vk, target)
            else:
                gap = s[i - 1, k] - sk - VEHICLE_LENGTH
                cmd = idm_accel(vk, target, gap, vk - v[i - 1, k])
            cmd = min(max(cmd, a[i] - JERK_LIMIT * dt, -B_MAX), a[i] + JERK_LIMIT * dt, A_MAX)
            a[i] = cmd
            v[i, k + 1] = max(0.0, vk + cmd * dt)
            s[i, k + 1] = sk + v[i, k + 1] * dt
    return s


def _grid_times(n_steps: int, dt: float) -> np.ndarray:
    return np.round(np.arange(n_steps + 1) * dt, 9)


def _render(vid: str, path: RoutePath, t: np.ndarray, s: np.ndarray, offset=0.0,
            duration: float | None = None, min_samples: int = 10) -> Trajectory | None:
    """Trajectory of the samples where the vehicle is on the path (and inside the window)."""
    offset = np.broadcast_to(np.asarray(offset, float), s.shape)
    keep = (s >= 0.0) & (s <= path.length)
    if duration is not None:
        keep &= t <= duration + 1e-9
    idx = np.flatnonzero(keep)
    if idx.size == 0:
        return None
    # the first contiguous visit only
    stop = np.flatnonzero(np.diff(idx) > 1)
    if stop.size:
        idx = idx[: stop[0] + 1]
    if idx.size < min_samples:
        return None
    x, y = path.pose(s[idx], offset[idx])
    return Trajectory.from_arrays(vid, t[idx], x, y)


def _vid(i: int) -> str:
    return f"v{i:02d}"


def _default_routes(spec: ScenarioSpec, rng) -> list[str]:
    if spec.routes is not None:
        return list(spec.routes)
    if spec.template == "four_way_intersection":
        names = [f"{a}_{d}" for a in ARMS for d in ARMS if a != d]
        return [str(rng.choice(names)) for _ in range(spec.n_vehicles)]
    fwd, back = ("L1", "L2") if spec.template == "straight_2lane" else ("C1", "C2")
    if not spec.opposing_traffic:
        return [fwd] * spec.n_vehicles
    return [fwd if i % 2 == 0 else back for i in range(spec.n_vehicles)]


@dataclass
class Scene:
    """Everything needed to rewrite vehicles: paths, sampled stations and the map."""

    spec: ScenarioSpec
    env: EnvironmentMap
    routes: dict
    paths: dict
    t: np.ndarray
    stations: dict
    factors: dict

    def trajectories(self) -> list[Trajectory]:
        out = []
        for vid in sorted(self.stations):
            traj = _render(vid, self.paths[vid], self.t, self.stations[vid], duration=self.spec.duration)
            if traj is not None:
                out.append(traj)
        return out

    def dataset(self) -> Dataset:
        meta = {
            "template": self.spec.template,
            "seed": self.spec.seed,
            "dt": self.spec.dt,
            "duration": self.spec.duration,
            "routes": {vid: self.routes[vid] for vid in sorted(self.routes)},
        }
        return Dataset(tuple(self.trajectories()), meta, self.env)


def _pair_safe(a: Trajectory, b: Trajectory) -> bool:
    try:
        prof = encounter_profile(a, b)
        back = encounter_profile(b, a)
    except NoOverlap:
        return True
    if prof.min_distance < 3.0:
        return False
    if np.any(np.nan_to_num(prof.ttc, nan=np.inf) < 3.0):
        return False
    for p in (prof, back):
        if np.any(np.nan_to_num(p.thw, nan=np.inf) < 1.6):
            return False
    return True


def _shift_stations(t: np.ndarray, s: np.ndarray, shift: float) -> np.ndarray:
    """Stations of the same motion delayed by ``shift`` seconds (may be fractional)."""
    v_start = (s[1] - s[0]) / (t[1] - t[0])
    v_end = (s[-1] - s[-2]) / (t[-1] - t[-2])
    tq = t - shift
    out = np.interp(tq, t, s)
    out = np.where(tq < t[0], s[0] + (tq - t[0]) * v_start, out)
    return np.where(tq > t[-1], s[-1] + (tq - t[-1]) * v_end, out)


def generate_scene(spec: ScenarioSpec) -> Scene:
    rng = np.random.default_rng(spec.seed)
    env = build_map(spec)
    routes = _default_routes(spec, rng)
    if spec.speed_factors is not None:
        factors = list(spec.speed_factors)
    else:
        factors = list(rng.uniform(0.9, 1.0, spec.n_vehicles))
    paths = {}
    for i, route in enumerate(routes):
        try:
            paths[_vid(i)] = RoutePath.from_lanes(env, route_lanes(spec.template, route))
        except Exception as exc:
            raise SyntheticError(f"route {route!r} not available on {spec.template}") from exc
    route_of = {_vid(i): r for i, r in enumerate(routes)}
    factor_of = {_vid(i): float(f) for i, f in enumerate(factors)}
    n_steps = int(round(spec.duration / spec.dt))
    t = _grid_times(n_steps, spec.dt)
    stations: dict[str, np.ndarray] = {}
    if spec.template == "four_way_intersection":
        _schedule_junction(spec, rng, paths, factor_of, t, stations)
    else:
        placed: list[Trajectory] = []
        for route in sorted(set(routes)):
            members = [vid for vid in sorted(route_of) if route_of[vid] == route]
            path = paths[members[0]]
            if len(members) * (MIN_GAP + VEHICLE_LENGTH) > path.length:
                raise InfeasibleSpec(f"{len(members)} vehicles do not fit on route {route}")
            spacings = [rng.uniform(2.0, 10.0) for _ in members]
            first = rng.uniform(0.05, 0.3) * path.length
            # later platoons slide back until every encounter with earlier ones stays clear
            for lead in first - 10.0 * np.arange(60):
                s = _platoon(path, members, factor_of, lead, spacings, n_steps, spec.dt)
                trajs = [_render(vid, path, t, s[j], duration=spec.duration) for j, vid in enumerate(members)]
                trajs = [tr for tr in trajs if tr is not None]
                if all(_pair_safe(a, b) for a in trajs for b in placed):
                    break
            else:
                raise InfeasibleSpec(f"no conflict-free placement for route {route}")
            placed.extend(trajs)
            for j, vid in enumerate(members):
                stations[vid] = s[j]
    return Scene(spec, env, route_of, paths, t, stations, factor_of)


def _platoon(path, members, factor_of, lead, spacings, n_steps, dt) -> np.ndarray:
    s0, v0 = [], []
    for j, vid in enumerate(members):
        speed = factor_of[vid] * float(path.limits[0])
        if j == 0:
            pos = lead
        else:
            pos = s0[-1] - (MIN_GAP + VEHICLE_LENGTH + TIME_HEADWAY * speed * 1.2 + spacings[j])
            speed = min(speed, v0[-1])
        if pos >= 0:
            speed = min(speed, float(np.interp(pos, path.stations, path.desired_speed(factor_of[vid]))))
        s0.append(pos)
        v0.append(speed)
    return simulate_lane(path, s0, v0, [factor_of[v] for v in members], n_steps, dt)


def _schedule_junction(spec, rng, paths, factor_of, t, stations) -> None:
    """Stagger entries so that no two vehicles come near each other."""
    dt = spec.dt
    accepted: list[Trajectory] = []
    entry = rng.uniform(0.0, 2.0)
    for vid in sorted(paths):
        path = paths[vid]
        speed = factor_of[vid] * float(path.limits[0])
        horizon = int(math.ceil((path.length / 1.0 + 60.0) / dt))
        base = simulate_lane(path, [0.0], [speed], [factor_of[vid]], horizon, dt)[0]
        local_t = _grid_times(horizon, dt)
        while True:
            k0 = int(round(entry / dt))
            if k0 * dt > spec.duration:
                raise InfeasibleSpec(f"cannot schedule {vid} inside {spec.duration} s")
            s = np.interp(t - k0 * dt, local_t, base, left=-1.0, right=base[-1] + 1e3)
            s = np.where(t < k0 * dt, -1.0 - (k0 * dt - t) * speed, s)
            cand = _render(vid, path, t, s, min_samples=2)
            if cand is None or all(_pair_safe(cand, other) for other in accepted):
                break
            entry += 0.5
        stations[vid] = s
        if cand is not None:
            accepted.append(cand)
        entry += rng.uniform(1.0, 3.0)


def generate_nominal(spec: ScenarioSpec) -> tuple[Dataset, EnvironmentMap]:
    """Nominal traffic for ``spec``; identical specs give identical output."""
    scene = generate_scene(spec)
    return scene.dataset(), scene.env


# ---------------------------------------------------------------- injections


def _cosine_ramp(tau, length: float) -> np.ndarray:
    """0 before, 1 after, half-cosine blend over ``length``."""
    x = np.clip(np.asarray(tau, float) / length, 0.0, 1.0)
    return 0.5 * (1.0 - np.cos(math.pi * x))


def _smoothstep(tau, length: float) -> np.ndarray:
    """Quintic 0-to-1 blend with zero velocity and acceleration at both ends."""
    x = np.clip(np.asarray(tau, float) / length, 0.0, 1.0)
    return x**3 * (10.0 - 15.0 * x + 6.0 * x**2)


def _extend(t_grid: np.ndarray, t: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Stations on the full grid, extrapolated at the end speeds outside the samples."""
    if len(t) < 2:
        return np.full(len(t_grid), np.nan)
    v0 = (s[1] - s[0]) / (t[1] - t[0])
    v1 = (s[-1] - s[-2]) / (t[-1] - t[-2])
    out = np.interp(t_grid, t, s)
    out = np.where(t_grid < t[0], s[0] + (t_grid - t[0]) * v0, out)
    return np.where(t_grid > t[-1], s[-1] + (t_grid - t[-1]) * v1, out)


def _integrate(t: np.ndarray, rate: np.ndarray, start: float) -> np.ndarray:
    out = np.empty(len(t))
    out[0] = start
    out[1:] = start + np.cumsum(0.5 * (rate[1:] + rate[:-1]) * np.diff(t))
    return out


def _interval(t: np.ndarray, mask: np.ndarray) -> tuple[float, float]:
    """First contiguous run of ``mask`` as a time interval."""
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise SyntheticError("injection produced no event inside the recording window")
    stop = np.flatnonzero(np.diff(idx) > 1)
    if stop.size:
        idx = idx[: stop[0] + 1]
    return float(t[idx[0]]), float(t[idx[-1]])


@dataclass
class _Work:
    template: str
    seed: int
    dt: float
    duration: float
    t: np.ndarray
    env: EnvironmentMap
    routes: dict
    paths: dict
    stations: dict
    offsets: dict
    classes: dict
    post: list = field(default_factory=list)

    def visible(self, vid: str) -> np.ndarray:
        s = self.stations[vid]
        return (s >= 0.0) & (s <= self.paths[vid].length) & (self.t <= self.duration + 1e-9)

    def window(self, vid: str) -> tuple[int, int]:
        idx = np.flatnonzero(self.visible(vid))
        if idx.size < 2:
            raise UnknownTarget(f"{vid} is not visible in the recording")
        return int(idx[0]), int(idx[-1])

    def index(self, time: float) -> int:
        return int(np.clip(round(time / self.dt), 0, len(self.t) - 1))

    def speed(self, vid: str) -> np.ndarray:
        return np.gradient(self.stations[vid], self.t)

    def positions(self, vid: str) -> np.ndarray:
        x, y = self.paths[vid].pose(self.stations[vid], self.offsets[vid])
        return np.column_stack([x, y])


def _work_from_dataset(dataset: Dataset, env: EnvironmentMap) -> _Work:
    meta = dataset.metadata
    try:
        template, dt, duration, routes = meta["template"], meta["dt"], meta["duration"], meta["routes"]
    except KeyError as exc:
        raise SyntheticError("dataset lacks generator metadata") from exc
    t = _grid_times(int(round(duration / dt)), dt)
    paths, stations, offsets, classes = {}, {}, {}, {}
    for traj in dataset:
        path = RoutePath.from_lanes(env, route_lanes(template, routes[traj.id]))
        centre = LaneSegment("path", path.points)
        _, _, st, _ = centre.project(traj.positions)
        paths[traj.id] = path
        stations[traj.id] = _extend(t, traj.t, st)
        offsets[traj.id] = np.zeros(len(t))
        classes[traj.id] = traj.road_user_class
    return _Work(template, int(meta.get("seed", 0)), dt, duration, t, env, dict(routes), paths,
                 stations, offsets, classes)


def _event(injection: str, ego: str, t0: float, t1: float) -> GroundTruthEvent:
    kind = DETECTOR_KIND.get(injection, injection)
    return GroundTruthEvent(injection, kind, ego, t0, t1, EXPECTED_COLUMN[injection], expected_stages(injection))


def _onset(work: _Work, vid: str, inj: InjectionSpec, fraction: float) -> int:
    a, b = work.window(vid)
    if inj.onset is not None:
        if inj.onset > work.duration:
            raise SyntheticError("onset lies beyond the scenario duration")
        return work.index(inj.onset)
    return a + int(fraction * (b - a))


def _harsh_brake(work: _Work, vid: str, inj: InjectionSpec, cfg: DetectorConfig):
    decel = inj.params.get("decel", 8.0)
    v_end = inj.params.get("v_end", 3.0)
    ramp = inj.params.get("ramp", 1.0)
    k0 = _onset(work, vid, inj, 0.35)
    v = work.speed(vid)
    hold = (v[k0] - v_end) / decel - ramp
    if hold < 0:
        raise SyntheticError("target too slow for the requested braking")
    tau = work.t - work.t[k0]
    acc = -decel * (_cosine_ramp(tau, ramp) - _cosine_ramp(tau - ramp - hold, ramp))
    acc[:k0] = 0.0
    v_new = _integrate(work.t[k0:], acc[k0:], v[k0])
    s = work.stations[vid].copy()
    s[k0:] = _integrate(work.t[k0:], v_new, s[k0])
    work.stations[vid] = s
    mask = (acc < -cfg.a_brake) & work.visible(vid)
    return [_event(inj.kind, vid, *_interval(work.t, mask))]


def _arc_stations(path: RoutePath) -> tuple[float, float]:
    curved = np.abs(path.kappa) > 0.01
    if not np.any(curved):
        raise SyntheticError("target route has no curve")
    idx = np.flatnonzero(curved)
    return float(path.stations[idx[0]]), float(path.stations[idx[-1]])


def _curve_overspeed(work: _Work, vid: str, inj: InjectionSpec, cfg: DetectorConfig):
    path = work.paths[vid]
    a0, _ = _arc_stations(path)
    s = work.stations[vid]
    if inj.onset is not None:
        k0 = _onset(work, vid, inj, 0.0)
    else:
        k0 = max(work.window(vid)[0], int(np.searchsorted(s, a0 - 80.0)))
    v = work.speed(vid)
    v_hold = inj.params.get("speed", float(np.interp(a0, path.stations, path.limits)))
    ramp = inj.params.get("ramp", 2.0)
    tau = work.t[k0:] - work.t[k0]
    v_new = v[k0] + (v_hold - v[k0]) * _cosine_ramp(tau, ramp)
    s = s.copy()
    s[k0:] = _integrate(work.t[k0:], v_new, s[k0])
    work.stations[vid] = s
    speed = np.gradient(s, work.t)
    mask = (speed**2 * np.abs(path.curvature(s)) > cfg.a_lat_max) & work.visible(vid)
    return [_event(inj.kind, vid, *_interval(work.t, mask))]


def _leader_of(work: _Work, vid: str, k: int) -> str:
    s = work.stations[vid][k]
    ahead = [
        (work.stations[o][k] - s, o)
        for o in work.stations
        if o != vid and work.routes[o] == work.routes[vid] and work.stations[o][k] > s
    ]
    if not ahead:
        raise UnknownTarget(f"{vid} has no leader to follow")
    return min(ahead)[1]


def _tailgate(work: _Work, vid: str, inj: InjectionSpec, cfg: DetectorConfig):
    thw = inj.params.get("thw", 0.6)
    closing = inj.params.get("closing_speed", 3.0)
    a, _ = work.window(vid)
    leader = _leader_of(work, vid, a)
    if inj.onset is not None:
        k0 = _onset(work, vid, inj, 0.0)
    else:
        k0 = max(a, work.window(leader)[0]) + int(round(0.5 / work.dt))
    s_l, s_f = work.stations[leader], work.stations[vid].copy()
    v_l = work.speed(leader)
    g0 = s_l[k0] - s_f[k0]
    # peak closing speed of the quintic blend is 1.875 * gap change / duration
    ramp = max(6.0, 1.875 * (g0 - thw * v_l[k0]) / closing)
    w = _smoothstep(work.t[k0:] - work.t[k0], ramp)
    s_f[k0:] = s_l[k0:] - (g0 + (thw * v_l[k0:] - g0) * w)
    work.stations[vid] = s_f
    v_f = np.gradient(s_f, work.t)
    both = work.visible(vid) & work.visible(leader)
    with np.errstate(divide="ignore", invalid="ignore"):
        headway = (s_l - s_f) / v_f
    mask = both & (headway < cfg.thw_crit)
    return [_event(inj.kind, vid, *_interval(work.t, mask))]


def _crossing_partner(work: _Work, vid: str, inj: InjectionSpec) -> tuple[str, np.ndarray]:
    mine = work.paths[vid].points
    candidates = [inj.params["other"]] if "other" in inj.params else sorted(work.paths)
    for other in candidates:
        if other == vid:
            continue
        hits = _polyline_crossings(mine, work.paths[other].points)
        if hits:
            return other, hits[0]
    raise UnknownTarget(f"no vehicle crosses the path of {vid}")


def _station_of(path: RoutePath, point) -> float:
    _, _, st, _ = LaneSegment("path", path.points).project(np.asarray(point)[None, :])
    return float(st[0])


def _time_at(work: _Work, vid: str, station: float) -> float:
    return float(np.interp(station, work.stations[vid], work.t))


def _near_collision_cross(work: _Work, vid: str, inj: InjectionSpec, cfg: DetectorConfig):
    delta = inj.params.get("delta", 0.15)
    other, point = _crossing_partner(work, vid, inj)
    t_other = _time_at(work, other, _station_of(work.paths[other], point))
    t_mine = _time_at(work, vid, _station_of(work.paths[vid], point))
    work.stations[vid] = _shift_stations(work.t, work.stations[vid], t_other + delta - t_mine)
    # closest approach on a fine grid around the crossing
    fine = np.linspace(t_other - 2.0, t_other + 2.0, 4001)
    pa = np.column_stack(work.paths[vid].pose(np.interp(fine, work.t, work.stations[vid])))
    pb = np.column_stack(work.paths[other].pose(np.interp(fine, work.t, work.stations[other])))
    t_close = float(fine[np.argmin(np.hypot(*(pa - pb).T))])
    return [_event(inj.kind, vid, t_close - cfg.ttc_crit, t_close)]


def _zone_between(work: _Work, vid: str, other: str) -> ConflictZone:
    mine = {lane for lane, _, _ in work.paths[vid].lanes}
    theirs = {lane for lane, _, _ in work.paths[other].lanes}
    for zone in work.env.conflict_zones:
        a, b = zone.lane_pair
        if (a in mine and b in theirs) or (b in mine and a in theirs):
            return zone
    raise UnknownTarget(f"no conflict zone between {vid} and {other}")


def _priority_violation(work: _Work, vid: str, inj: InjectionSpec, cfg: DetectorConfig):
    lead = inj.params.get("lead", 2.5)
    decel = inj.params.get("decel", 4.0)
    ramp, hold = 1.0, inj.params.get("hold", 1.0)
    other, _ = _crossing_partner(work, vid, inj)
    zone = _zone_between(work, vid, other)
    if zone.priority_lane not in {l for l, _, _ in work.paths[other].lanes}:
        raise UnknownTarget(f"{other} does not hold priority over {vid}")
    fine = np.linspace(0.0, work.duration, int(round(work.duration / 0.01)) + 1)

    def entry(v):
        pts = np.column_stack(work.paths[v].pose(np.interp(fine, work.t, work.stations[v])))
        inside = zone.contains(pts)
        if not np.any(inside):
            raise SyntheticError(f"{v} never reaches the conflict zone")
        return float(fine[np.argmax(inside)])

    shift = entry(other) - lead - entry(vid)
    work.stations[vid] = _shift_stations(work.t, work.stations[vid], shift)
    inside = zone.contains(work.positions(vid)) & work.visible(vid)
    t0, t1 = _interval(work.t, inside)
    k0 = work.index(t0)
    tau = work.t - work.t[k0]
    acc = -decel * (_cosine_ramp(tau, ramp) - _cosine_ramp(tau - ramp - hold, ramp))
    acc[:k0] = 0.0
    v = work.speed(other)
    v_new = _integrate(work.t[k0:], acc[k0:], v[k0])
    if np.any(v_new < 0.5):
        raise SyntheticError("priority user would stop; lower the deceleration")
    s = work.stations[other].copy()
    s[k0:] = _integrate(work.t[k0:], v_new, s[k0])
    work.stations[other] = s
    return [_event(inj.kind, vid, t0, t1)]


def _wrong_way(work: _Work, vid: str, inj: InjectionSpec, cfg: DetectorConfig):
    shift = inj.params.get("shift", LANE_WIDTH)
    ramp = inj.params.get("ramp", 4.0)
    hold = inj.params.get("hold", 5.0)
    k0 = _onset(work, vid, inj, 0.1)
    tau = work.t - work.t[k0]
    off = shift * (_cosine_ramp(tau, ramp) - _cosine_ramp(tau - ramp - hold, ramp))
    work.offsets[vid] = off
    mask = (off > HALF) & work.visible(vid)
    return [_event(inj.kind, vid, *_interval(work.t, mask))]


def _cutting_corner(work: _Work, vid: str, inj: InjectionSpec, cfg: DetectorConfig):
    shift = inj.params.get("shift", LANE_WIDTH)
    ramp = inj.params.get("ramp", 35.0)
    path = work.paths[vid]
    a0, a1 = _arc_stations(path)
    ramp = min(ramp, 0.5 * (a1 - a0) + 5.0)
    s = work.stations[vid]
    off = shift * (_cosine_ramp(s - (a0 - 5.0), ramp) - _cosine_ramp(s - (a1 + 5.0 - ramp), ramp))
    work.offsets[vid] = off
    mask = (off > HALF) & work.visible(vid)
    return [_event(inj.kind, vid, *_interval(work.t, mask))]


def _u_turn_path(work: _Work, vid: str, radius: float) -> RoutePath:
    inbound = work.paths[vid].lanes[0][0]
    arm = inbound.split("_")[0]
    if work.template != "four_way_intersection" or not inbound.endswith("_in"):
        raise UnknownTarget(f"{vid} does not approach the junction")
    if rules_at(inbound, work.env).u_turn_allowed:
        # a legal u-turn is not a corner case, so there is nothing to detect
        raise UnknownTarget(f"{vid} approaches on {inbound}, where u-turns are allowed")
    k = ARMS.index(arm)
    far = BOX + ARM_LENGTH
    xc = -(LOOP_DISTANCE - 8.0)
    pts = polyline(
        _rot([(-far, -HALF), (xc, -HALF)], k),
        _rot(arc_points((xc, 0.0), radius, -math.pi / 2, math.pi / 2, max_step=0.2), k),
        _rot([(xc, HALF), (-far, HALF)], k),
    )
    limit = rules_at(inbound, work.env).speed_limit
    return RoutePath(pts, np.full(len(pts), limit), [(inbound, 0.0, far + xc)])


def _u_turn(work: _Work, vid: str, inj: InjectionSpec, cfg: DetectorConfig):
    radius = inj.params.get("radius", HALF)
    path = _u_turn_path(work, vid, radius)
    s = work.stations[vid]
    k0 = int(np.argmax(s >= 0.0))
    v = work.speed(vid)
    n = len(work.t) - 1 - k0
    new = simulate_lane(path, [s[k0]], [v[k0]], [float(v[k0] / path.limits[0])], n, work.dt)[0]
    s = s.copy()
    s[k0:] = new
    work.stations[vid] = s
    work.paths[vid] = path
    work.routes[vid] = f"{path.lanes[0][0].split('_')[0]}_u_turn"
    far = BOX + ARM_LENGTH
    loop_in = far - LOOP_DISTANCE
    loop_out = far - (LOOP_DISTANCE - 8.0) + math.pi * radius + 8.0
    if s[work.window(vid)[1]] < loop_out:
        raise SyntheticError("u-turn does not complete inside the recording window")
    return [_event(inj.kind, vid, _time_at(work, vid, loop_in), _time_at(work, vid, loop_out))]


def _recording_noise(work: _Work, vid: str, inj: InjectionSpec, cfg: DetectorConfig):
    sigma = inj.params.get("sigma", 1.0)
    length = inj.params.get("duration", 3.0)
    k0 = _onset(work, vid, inj, 0.4)
    t0, t1 = float(work.t[k0]), float(work.t[k0]) + length
    rng = np.random.default_rng([work.seed, 7, int(vid[1:]) if vid[1:].isdigit() else 0])

    def add_noise(traj: Trajectory) -> Trajectory:
        m = (traj.t >= t0 - 1e-9) & (traj.t <= t1 + 1e-9)
        noise = rng.normal(0.0, sigma, (int(m.sum()), 2))
        x, y = traj.x.copy(), traj.y.copy()
        x[m] += noise[:, 0]
        y[m] += noise[:, 1]
        return Trajectory.from_arrays(traj.id, traj.t, x, y, road_user_class=traj.road_user_class)

    work.post.append((vid, add_noise))
    mask = (work.t >= t0 - 1e-9) & (work.t <= t1 + 1e-9) & work.visible(vid)
    return [_event(inj.kind, vid, *_interval(work.t, mask))]


def _recording_dropout(work: _Work, vid: str, inj: InjectionSpec, cfg: DetectorConfig):
    length = inj.params.get("duration", 1.0)
    k0 = _onset(work, vid, inj, 0.4)
    t0, t1 = float(work.t[k0]), float(work.t[k0]) + length
    _, b = work.window(vid)
    if t1 >= work.t[b]:
        raise SyntheticError("dropout runs past the end of the recording")

    def drop(traj: Trajectory) -> Trajectory:
        keep = ~((traj.t > t0 + 1e-9) & (traj.t < t1 - 1e-9))
        return traj.select(keep)

    work.post.append((vid, drop))
    return [_event(inj.kind, vid, t0, t1)]


def _missing_sign(work: _Work, vid: str | None, inj: InjectionSpec, cfg: DetectorConfig):
    sign_id = inj.params.get("sign")
    if sign_id is None:
        sign_id = next((s.id for s in work.env.signs if s.kind == "priority"), None)
    try:
        sign = next(s for s in work.env.signs if s.id == sign_id)
    except StopIteration:
        raise UnknownTarget(f"no sign {sign_id!r} in the map") from None
    work.env = work.env.without_sign(sign.id)
    first = None
    for other in sorted(work.stations):
        for lane in sorted(sign.applies_to):
            span = work.paths[other].lane_span(lane)
            if span is None:
                continue
            s = work.stations[other]
            on = (s >= span[0]) & (s <= span[1]) & work.visible(other)
            if not np.any(on):
                continue
            t0, t1 = _interval(work.t, on)
            if first is None or (t0, other) < (first[0], first[2]):
                first = (t0, t1, other)
    if first is None:
        raise UnknownTarget(f"no vehicle uses the lanes of sign {sign.id}")
    return [_event(inj.kind, first[2], first[0], first[1])]


_INJECTORS = {
    "harsh_brake": _harsh_brake,
    "curve_overspeed": _curve_overspeed,
    "tailgate": _tailgate,
    "near_collision_cross": _near_collision_cross,
    "wrong_way": _wrong_way,
    "u_turn": _u_turn,
    "cutting_corner": _cutting_corner,
    "priority_violation": _priority_violation,
    "recording_noise": _recording_noise,
    "recording_dropout": _recording_dropout,
    "missing_sign": _missing_sign,
}


def inject(
    dataset: Dataset,
    env: EnvironmentMap,
    injections: Sequence[InjectionSpec],
    cfg: DetectorConfig = DetectorConfig(),
) -> tuple[Dataset, EnvironmentMap, GroundTruth]:
    """Rewrite targets of a generated dataset and return the expected detections.

    The returned map differs from ``env`` only for ``missing_sign``.

    Raises:
        UnknownTarget: target index out of range or unsuitable for the kind.
        ConflictingInjections: two injections rewrite the same vehicle.
    """
    work = _work_from_dataset(dataset, env)
    ids = [traj.id for traj in dataset]
    targets = set()
    for inj in injections:
        if inj.kind == "missing_sign":
            continue
        if not 0 <= inj.target < len(ids):
            raise UnknownTarget(f"target index {inj.target} out of range")
        if inj.target in targets:
            raise ConflictingInjections(f"vehicle {ids[inj.target]} is targeted twice")
        targets.add(inj.target)
    events: list[GroundTruthEvent] = []
    ordered = sorted(injections, key=lambda inj: inj.kind == "missing_sign")
    for inj in ordered:
        vid = None if inj.kind == "missing_sign" else ids[inj.target]
        events.extend(_INJECTORS[inj.kind](work, vid, inj, cfg))
    trajs = []
    for vid in sorted(work.stations):
        traj = _render(vid, work.paths[vid], work.t, work.stations[vid], work.offsets[vid], work.duration)
        if traj is None:
            continue
        for target, fn in work.post:
            if target == vid:
                traj = fn(traj)
        trajs.append(traj)
    meta = dict(dataset.metadata)
    meta["routes"] = {vid: work.routes[vid] for vid in sorted(work.routes)}
    meta["injections"] = [
        {"kind": inj.kind, "target": inj.target, "onset": inj.onset, "params": dict(inj.params)}
        for inj in injections
    ]
    return Dataset(tuple(trajs), meta, work.env), work.env, GroundTruth(tuple(events))


# ---------------------------------------------------------------- recovery suite

_RECOVERY = {
    "harsh_brake": (dict(template="straight_2lane", routes=("L1", "L1", "L2")), 1, {}),
    "curve_overspeed": (dict(template="curve", routes=("C1", "C1")), 0, {}),
    "tailgate": (
        dict(template="straight_2lane", routes=("L1", "L1", "L2"), speed_factors=(0.75, 0.75, 0.95)),
        1,
        {},
    ),
    "near_collision_cross": (dict(template="four_way_intersection", routes=("W_E", "S_N"), duration=60.0), 1, {}),
    "wrong_way": (dict(template="straight_2lane", routes=("L1", "L1")), 0, {}),
    "u_turn": (dict(template="four_way_intersection", routes=("W_E", "N_S", "S_N"), duration=80.0), 0, {}),
    "cutting_corner": (dict(template="curve", routes=("C1", "C1")), 0, {}),
    "priority_violation": (dict(template="four_way_intersection", routes=("W_E", "S_N"), duration=60.0), 1, {}),
    "recording_noise": (dict(template="straight_2lane", routes=("L1", "L2", "L1")), 0, {}),
    "recording_dropout": (dict(template="straight_2lane", routes=("L1", "L2", "L1")), 0, {}),
    "missing_sign": (
        dict(template="four_way_intersection", routes=("W_E", "S_N", "E_W"), duration=60.0),
        0,
        {"sign": "priority_W"},
    ),
}


@dataclass(frozen=True)
class RecoveryCase:
    kind: str
    seed: int
    dataset: Dataset
    env: EnvironmentMap
    truth: GroundTruth
    reference_map: EnvironmentMap | None


def recovery_case(kind: str, seed: int = 0) -> RecoveryCase:
    """A small scene with exactly one injected event of ``kind``."""
    fields_, target, params = _RECOVERY[kind]
    spec = ScenarioSpec(n_vehicles=len(fields_["routes"]), seed=seed, **fields_)
    dataset, env = generate_nominal(spec)
    injected, observed, truth = inject(dataset, env, [InjectionSpec(kind, target, None, params)])
    reference = env if kind == "missing_sign" else None
    return RecoveryCase(kind, seed, injected, observed, truth, reference)


def interval_iou(a: tuple[float, float], b: tuple[float, float], pad: float = 0.0) -> float:
    a0, a1 = a[0] - pad, a[1] + pad
    b0, b1 = b[0] - pad, b[1] + pad
    inter = max(0.0, min(a1, b1) - max(a0, b0))
    union = max(a1, b1) - min(a0, b0)
    return inter / union if union > 0 else 0.0


@dataclass(frozen=True)
class MatchReport:
    matched: tuple
    false_positives: tuple
    missed: tuple

    @property
    def precision(self) -> float:
        n = len(self.matched) + len(self.false_positives)
        return len(self.matched) / n if n else 1.0

    @property
    def recall(self) -> float:
        n = len(self.matched) + len(self.missed)
        return len(self.matched) / n if n else 1.0


def match_detections(detections: Sequence[Detection], truth: GroundTruth, dt: float = 0.1,
                     min_iou: float = 0.5) -> MatchReport:
    """Greedy one-to-one matching on (kind, ego) with interval IoU >= ``min_iou``.

    Intervals are padded by half a sample so that single-sample events
    have non-zero length.
    """
    free = list(detections)
    matched, missed = [], []
    for ev in truth:
        best, best_iou = None, min_iou
        for det in free:
            if det.kind != ev.kind or det.ego_id != ev.ego_id:
                continue
            iou = interval_iou((det.t_start, det.t_end), (ev.t_start, ev.t_end), dt / 2)
            if iou >= best_iou:
                best, best_iou = det, iou
        if best is None:
            missed.append(ev)
        else:
            free.remove(best)
            matched.append((ev, best, best_iou))
    return MatchReport(tuple(matched), tuple(free), tuple(missed))


def occlusion_scene(seed: int = 0) -> tuple[Dataset, EnvironmentMap, GroundTruth]:
    """Minor-road car pulls out behind a parked truck into a priority car.

    The stage set is fixed to DecisionMaking; it is asserted, not derived,
    because no visibility model is built.
    """
    spec = ScenarioSpec("four_way_intersection", 2, seed, 60.0, routes=("W_E", "S_N"))
    dataset, env = generate_nominal(spec)
    injected, env, truth = inject(dataset, env, [InjectionSpec("near_collision_cross", 1)])
    truck_t = np.round(np.arange(0, int(round(spec.duration / spec.dt)) + 1) * spec.dt, 9)
    truck = Trajectory.from_arrays(
        "truck", truck_t, np.full(len(truck_t), -6.0), np.full(len(truck_t), -5.5),
        np.zeros(len(truck_t)), road_user_class="truck",
    )
    meta = dict(injected.metadata)
    meta["routes"] = dict(meta["routes"], truck="parked")
    data = Dataset(tuple(injected.trajectories) + (truck,), meta, env)
    ev = truth.events[0]
    from .taxonomy import RowStage

    fiat = replace(ev, stages=frozenset({RowStage.DecisionMaking}))
    return data, env, GroundTruth((fiat,))


BENCHMARK_ROUTES = ("W_E", "W_N", "S_N", "E_S")
# (kind, index of the target inside BENCHMARK_ROUTES); only kinds that change
# the motion itself, a comfortable U-turn is kinematically ordinary
BENCHMARK_ANOMALIES = (
    ("harsh_brake", 0),
    ("curve_overspeed", 1),
    ("recording_noise", 2),
    ("cutting_corner", 3),
)


def _complete_passes(dataset: Dataset, duration: float) -> list[Trajectory]:
    return [traj for traj in dataset if traj.t[0] > 0.0 and traj.t[-1] < duration - 1.0]


def anomaly_benchmark(n_each: int = 50, seed: int = 0) -> tuple[list[Trajectory], list[Trajectory]]:
    """Complete junction passes: ``n_each`` nominal and ``n_each`` injected ones.

    Ids are ``nom_<i>`` and ``anom_<i>`` so both sets can share a dataset.
    """
    duration = 150.0
    nominal: list[Trajectory] = []
    k = 0
    while len(nominal) < n_each:
        spec = ScenarioSpec("four_way_intersection", len(BENCHMARK_ROUTES), seed * 1000 + k, duration,
                            routes=BENCHMARK_ROUTES)
        dataset, _ = generate_nominal(spec)
        for traj in _complete_passes(dataset, duration):
            if len(nominal) < n_each:
                nominal.append(_relabel(traj, f"nom_{len(nominal)}"))
        k += 1
    anomalous: list[Trajectory] = []
    k = 0
    while len(anomalous) < n_each:
        kind, target = BENCHMARK_ANOMALIES[k % len(BENCHMARK_ANOMALIES)]
        spec = ScenarioSpec("four_way_intersection", len(BENCHMARK_ROUTES), seed * 1000 + 500 + k, duration,
                            routes=BENCHMARK_ROUTES)
        dataset, env = generate_nominal(spec)
        injected, _, truth = inject(dataset, env, [InjectionSpec(kind, target)])
        anomalous.append(_relabel(injected[truth.events[0].ego_id], f"anom_{len(anomalous)}"))
        k += 1
    return nominal, anomalous


def _relabel(traj: Trajectory, new_id: str) -> Trajectory:
    return Trajectory.from_arrays(new_id, traj.t, traj.x, traj.y, traj.heading,
                                  road_user_class=traj.road_user_class)
