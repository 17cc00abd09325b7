"""Corner-case detectors, grouped by the data each one needs.

Severity units per kind:

==================  ===================================================
kind                severity
==================  ===================================================
harsh_brake         peak |accel_lon| / a_brake
harsh_acceleration  peak accel_lon / a_brake
curve_overspeed     peak |accel_lat| / a_lat_max
high_jerk           peak |jerk| / j_max
near_collision      ttc_crit / min ttc
tailgating          thw_crit / min thw
wrong_way           run duration / wrong_way_duration
speeding            peak speed / speed limit
u_turn              1.0
cutting_corner      peak incursion depth / lane width
priority_violation  ttce_gate / priority user's time to zone
dropout             gap / median step
teleport            implied speed / v_phys
recording_noise     peak normalized innovation / noise_nis
speed_mismatch      peak relative speed disagreement / 0.1
missing_sign        1.0
==================  ===================================================
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from . import model
from .environment import EnvironmentMap, loop_crossings, map_match, rules_at, time_to_polygon
from .metrics import EncounterMetrics, min_over_pairs
from .taxonomy import ColumnClass, RowStage, column_from_evidence
from .trajectory import (
    Dataset,
    Trajectory,
    TooShort,
    derive_kinematics,
    recorded_speed_mismatch,
    resample_uniform,
    wrap_angle,
)

S = RowStage

STAGE_CATALOG: dict[str, frozenset] = {
    "harsh_brake": frozenset({S.Perception, S.Execution, S.Body}),
    "harsh_acceleration": frozenset({S.GoalRiskTolerance}),
    "curve_overspeed": frozenset({S.DecisionMaking, S.GoalRiskTolerance, S.Knowledge}),
    "high_jerk": frozenset({S.Execution, S.Body}),
    "near_collision": frozenset({S.Perception, S.DecisionMaking, S.Execution}),
    "tailgating": frozenset({S.GoalRiskTolerance}),
    "wrong_way": frozenset({S.Perception}),
    "speeding": frozenset({S.GoalRiskTolerance}),
    "u_turn": frozenset({S.Knowledge}),
    "cutting_corner": frozenset({S.GoalRiskTolerance}),
    "priority_violation": frozenset({S.Perception, S.GoalRiskTolerance, S.Knowledge}),
    "dropout": frozenset({S.TrajectoryRecording}),
    "teleport": frozenset({S.TrajectoryRecording}),
    "recording_noise": frozenset({S.TrajectoryRecording}),
    "speed_mismatch": frozenset({S.TrajectoryRecording}),
    "missing_sign": frozenset({S.StaticEnvironmentInfo}),
}

RECORDING_KINDS = frozenset({"dropout", "teleport", "recording_noise", "speed_mismatch"})


class DetectorError(ValueError):
    pass


class MissingKinematics(DetectorError):
    pass


class MissingMap(DetectorError):
    pass


class NoConflictZones(DetectorError):
    pass


class DatasetTooSmall(DetectorError):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    a_brake: float = 6.0
    a_lat_max: float = 4.0
    j_max: float = 15.0
    ttc_crit: float = 1.5
    thw_crit: float = 1.0
    t_sustain: float = 3.0
    wrong_way_angle: float = math.radians(120.0)
    wrong_way_duration: float = 2.0
    speeding_factor: float = 1.1
    speeding_duration: float = 2.0
    corner_curvature: float = 0.02
    corner_duration: float = 1.0
    ttce_gate: float = 4.0
    a_yield: float = 2.0
    response_window: float = 6.0
    gap_factor: float = 3.0
    v_phys: float = 80.0
    noise_nis: float = 25.0
    noise_merge_gap: float = 1.0
    noise_model_kind: str = "constant_acceleration"
    noise_process_std: float = 20.0
    noise_meas_std: float = 0.1
    artifact_pad: float = 1.0
    score_model_kind: str = "constant_velocity"
    score_process_std: float = 0.5
    score_meas_std: float = 0.1
    density_k: int = 5
    density_samples: int = 32
    collision_radius: float = 2.0
    horizon: float = 50.0
    map_tolerance: float = 2.0
    zone_heading_tol: float = math.radians(45.0)
    dt: float | None = None

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, (int, float)) and not isinstance(value, bool) and value <= 0:
                raise DetectorError(f"{f.name} must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "DetectorConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise DetectorError(f"unknown config keys: {sorted(unknown)}")
        return cls(**dict(data))


@dataclass(frozen=True)
class Detection:
    ego_id: str
    other_ids: tuple
    t_start: float
    t_end: float
    kind: str
    severity: float
    evidence: Mapping = field(default_factory=dict)
    uses_map: bool = False
    required_data: ColumnClass | None = None
    candidate_stages: frozenset = frozenset()

    def __post_init__(self):
        if self.t_start > self.t_end:
            raise DetectorError(f"{self.kind}: interval reversed")
        if self.severity < 0:
            raise DetectorError(f"{self.kind}: negative severity")
        object.__setattr__(self, "other_ids", tuple(sorted(self.other_ids)))
        if self.required_data is None:
            object.__setattr__(
                self, "required_data", column_from_evidence(bool(self.other_ids), self.uses_map)
            )
        if not self.candidate_stages:
            object.__setattr__(self, "candidate_stages", STAGE_CATALOG[self.kind])

    @property
    def sort_key(self):
        return (self.ego_id, self.t_start, self.kind, self.t_end, self.other_ids)

    def overlaps(self, t0: float, t1: float) -> bool:
        return self.t_start <= t1 and t0 <= self.t_end


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Inclusive (start, end) index pairs of True runs."""
    if not np.any(mask):
        return []
    padded = np.concatenate([[False], mask, [False]]).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return [(int(a), int(b) - 1) for a, b in zip(edges[0::2], edges[1::2])]


def _sustained(t: np.ndarray, run: tuple[int, int], duration: float) -> bool:
    return t[run[1]] - t[run[0]] >= duration - 1e-9


def prepare(traj: Trajectory, dt: float, origin: float | None = 0.0) -> Trajectory:
    """Resample onto the shared grid and derive kinematics."""
    return derive_kinematics(resample_uniform(traj, dt, origin=origin))


def dataset_step(dataset: Dataset) -> float:
    steps = np.concatenate([np.diff(traj.t) for traj in dataset])
    return float(np.median(steps))


def detect_kinematic(traj: Trajectory, cfg: DetectorConfig = DetectorConfig()) -> list[Detection]:
    """Harsh longitudinal/lateral acceleration and jerk from the ego trajectory alone."""
    if not traj.has_kinematics or traj.jerk is None:
        raise MissingKinematics(f"trajectory {traj.id} has no derived kinematics")
    checks = (
        ("harsh_brake", -traj.accel_lon, cfg.a_brake),
        ("harsh_acceleration", traj.accel_lon, cfg.a_brake),
        ("curve_overspeed", np.abs(traj.accel_lat), cfg.a_lat_max),
        ("high_jerk", np.abs(traj.jerk), cfg.j_max),
    )
    out = []
    for kind, value, limit in checks:
        for i, j in _runs(value > limit):
            peak = float(np.max(value[i : j + 1]))
            out.append(
                Detection(
                    traj.id, (), float(traj.t[i]), float(traj.t[j]), kind, peak / limit,
                    {"peak": peak, "threshold": limit},
                )
            )
    return out


def _closing(prof: EncounterMetrics, k: int) -> tuple[float, float]:
    p = prof.rel_position[k]
    norm = float(np.hypot(*p)) or 1.0
    u = p / norm
    return abs(float(u @ prof.vel_a[k])), abs(float(u @ prof.vel_b[k]))


def detect_interaction(
    dataset: Dataset, metrics: Mapping[tuple, EncounterMetrics], cfg: DetectorConfig = DetectorConfig()
) -> list[Detection]:
    """Near collisions (low TTC) and sustained tailgating (low headway)."""
    out = []
    for (a_id, b_id), prof in sorted(metrics.items()):
        if a_id < b_id:
            low = np.nan_to_num(prof.ttc, nan=np.inf) < cfg.ttc_crit
            for i, j in _runs(low):
                seg = prof.ttc[i : j + 1]
                k = i + int(np.nanargmin(seg))
                ca, cb = _closing(prof, k)
                ego, other = (a_id, b_id) if ca >= cb else (b_id, a_id)
                min_ttc = float(prof.ttc[k])
                out.append(
                    Detection(
                        ego, (other,), float(prof.t[i]), float(prof.t[j]), "near_collision",
                        cfg.ttc_crit / max(min_ttc, 1e-6),
                        {"min_ttc": min_ttc, "closing_a": ca, "closing_b": cb},
                    )
                )
        low = np.nan_to_num(prof.thw, nan=np.inf) < cfg.thw_crit
        for run in _runs(low):
            if not _sustained(prof.t, run, cfg.t_sustain):
                continue
            i, j = run
            min_thw = float(np.min(prof.thw[i : j + 1]))
            out.append(
                Detection(
                    a_id, (b_id,), float(prof.t[i]), float(prof.t[j]), "tailgating",
                    cfg.thw_crit / max(min_thw, 1e-6),
                    {"min_thw": min_thw, "duration": float(prof.t[j] - prof.t[i])},
                )
            )
    return out


def detect_env_rules(
    traj: Trajectory, env: EnvironmentMap | None, cfg: DetectorConfig = DetectorConfig()
) -> list[Detection]:
    """Wrong-way driving, speeding, forbidden U-turns and corner cutting."""
    if env is None or not env.lanes:
        raise MissingMap("environment rules need a map")
    if traj.speed is None:
        raise MissingKinematics(f"trajectory {traj.id} has no derived kinematics")
    match = map_match(traj, env, cfg.map_tolerance)
    t = traj.t
    n = len(t)
    dt = float(np.median(np.diff(t)))
    out: list[Detection] = []

    # oncoming-lane incursions relative to the lane last driven in its direction
    home = None
    incursion = np.zeros(n, dtype=bool)
    depth = np.zeros(n)
    for k in range(n):
        lane = match.lane_id[k]
        if lane is None:
            continue
        if abs(match.heading_deviation[k]) < math.pi / 2:
            home = lane
        if home is None or lane == home:
            continue
        home_lane = env.lane(home)
        this_lane = env.lane(lane)
        if home_lane.oncoming_lane_id == lane or this_lane.oncoming_lane_id == home:
            incursion[k] = True
            _, off, _, _ = home_lane.project(traj.positions[k : k + 1])
            depth[k] = abs(off[0]) / home_lane.width
    corner_runs = []
    for i, j in _runs(incursion):
        curved = np.abs(match.lane_curvature[i : j + 1]) > cfg.corner_curvature
        if curved.sum() * dt >= cfg.corner_duration - 1e-9:
            corner_runs.append((i, j))
            out.append(
                Detection(
                    traj.id, (), float(t[i]), float(t[j]), "cutting_corner",
                    float(np.max(depth[i : j + 1])),
                    {"lane": match.lane_id[i], "curved_time": float(curved.sum() * dt)},
                    uses_map=True,
                )
            )

    matched = np.array([lane is not None for lane in match.lane_id])
    dev = np.nan_to_num(np.abs(match.heading_deviation), nan=0.0)
    wrong = matched & (dev > cfg.wrong_way_angle)
    for run in _runs(wrong):
        if not _sustained(t, run, cfg.wrong_way_duration):
            continue
        i, j = run
        if any(i <= cj and ci <= j for ci, cj in corner_runs):
            continue
        out.append(
            Detection(
                traj.id, (), float(t[i]), float(t[j]), "wrong_way",
                float((t[j] - t[i]) / cfg.wrong_way_duration),
                {"lane": match.lane_id[i], "max_deviation": float(np.max(dev[i : j + 1]))},
                uses_map=True,
            )
        )

    limits = np.full(n, np.inf)
    rule_cache: dict[str, float] = {}
    for k, lane in enumerate(match.lane_id):
        if lane is not None:
            if lane not in rule_cache:
                rule_cache[lane] = rules_at(lane, env).speed_limit
            limits[k] = rule_cache[lane]
    ratio = traj.speed / limits
    for run in _runs(ratio > cfg.speeding_factor):
        if not _sustained(t, run, cfg.speeding_duration):
            continue
        i, j = run
        out.append(
            Detection(
                traj.id, (), float(t[i]), float(t[j]), "speeding",
                float(np.max(ratio[i : j + 1])),
                {"limit": float(np.min(limits[i : j + 1])), "peak_speed": float(np.max(traj.speed[i : j + 1]))},
                uses_map=True,
            )
        )

    for entry, exit_ in env.loop_pairs():
        if entry.lane_id is None or rules_at(entry.lane_id, env).u_turn_allowed:
            continue
        entries = loop_crossings(traj, entry)
        exits = loop_crossings(traj, exit_)
        if not entries or not exits:
            continue
        t_in = entries[0].t
        later = [c.t for c in exits if c.t > t_in]
        if not later:
            continue
        out.append(
            Detection(
                traj.id, (), float(t_in), float(later[0]), "u_turn", 1.0,
                {"entry_loop": entry.id, "exit_loop": exit_.id, "approach": entry.approach},
                uses_map=True,
            )
        )
    return out


def _zone_lane(traj: Trajectory, k: int, zone, env: EnvironmentMap, cfg: DetectorConfig):
    best, best_dev = None, cfg.zone_heading_tol
    for lane_id in sorted(zone.lane_pair):
        lane = env.lane(lane_id)
        dist, _, _, tangent = lane.project(traj.positions[k : k + 1])
        if dist[0] > lane.width / 2 + cfg.map_tolerance:
            continue
        dev = abs(wrap_angle(traj.heading[k] - tangent[0]))
        if dev < best_dev:
            best, best_dev = lane_id, dev
    return best


def detect_priority(
    dataset: Dataset,
    env: EnvironmentMap | None,
    metrics: Mapping[tuple, EncounterMetrics],
    cfg: DetectorConfig = DetectorConfig(),
) -> list[Detection]:
    """Yielding users entering a conflict zone ahead of an approaching priority user
    who then has to brake or comes within the critical TTC."""
    if env is None:
        raise MissingMap("priority rules need a map")
    if not env.conflict_zones:
        raise NoConflictZones("map has no conflict zones")
    out = []
    for zone in env.conflict_zones:
        entries: dict[str, list] = {zone.lane_pair[0]: [], zone.lane_pair[1]: []}
        for traj in dataset:
            inside = zone.contains(traj.positions)
            for i, j in _runs(inside):
                lane = _zone_lane(traj, i, zone, env, cfg)
                if lane is not None:
                    entries[lane].append((traj, i, j))
        for minor, i, j in entries[zone.yielding_lane]:
            t_m = float(minor.t[i])
            if i == 0:
                continue
            for prio, pi, _ in entries[zone.priority_lane]:
                if prio.id == minor.id or prio.t[pi] <= t_m:
                    continue
                k = np.flatnonzero(np.abs(prio.t - t_m) < 1e-6)
                if k.size == 0:
                    continue
                k = int(k[0])
                ttz = time_to_polygon(prio.positions[k], prio.velocity[k], zone.polygon)
                if ttz > cfg.ttce_gate:
                    continue
                window = (prio.t >= t_m) & (prio.t <= t_m + cfg.response_window)
                min_acc = float(np.min(prio.accel_lon[window]))
                prof = metrics.get((minor.id, prio.id))
                min_ttc = math.inf
                if prof is not None:
                    w = (prof.t >= t_m) & (prof.t <= t_m + cfg.response_window)
                    vals = prof.ttc[w]
                    if np.any(np.isfinite(vals)):
                        min_ttc = float(np.nanmin(vals))
                if min_acc < -cfg.a_yield or min_ttc < cfg.ttc_crit:
                    out.append(
                        Detection(
                            minor.id, (prio.id,), t_m, float(minor.t[j]), "priority_violation",
                            cfg.ttce_gate / max(ttz, 1e-3),
                            {"zone": zone.id, "priority_time_to_zone": ttz,
                             "priority_min_accel": min_acc,
                             "min_ttc": None if math.isinf(min_ttc) else min_ttc},
                            uses_map=True,
                        )
                    )
    return out


def noise_model(cfg: DetectorConfig, dt: float) -> tuple[model.DynamicsModel, model.MeasurementModel]:
    return (
        model.DynamicsModel(cfg.noise_model_kind, cfg.noise_process_std, dt),
        model.MeasurementModel(cfg.noise_meas_std),
    )


def detect_recording_artifacts(traj: Trajectory, cfg: DetectorConfig = DetectorConfig()) -> list[Detection]:
    """Dropouts, teleports, noise bursts and recorded-speed disagreement."""
    t = traj.t
    steps = np.diff(t)
    med = float(np.median(steps))
    out = []
    for k in np.flatnonzero(steps > cfg.gap_factor * med):
        out.append(
            Detection(traj.id, (), float(t[k]), float(t[k + 1]), "dropout", float(steps[k] / med),
                      {"gap": float(steps[k]), "median_step": med})
        )
    jumps = np.hypot(np.diff(traj.x), np.diff(traj.y)) / steps
    teleports = []
    for k in np.flatnonzero(jumps > cfg.v_phys):
        teleports.append((float(t[k]), float(t[k + 1])))
        out.append(
            Detection(traj.id, (), float(t[k]), float(t[k + 1]), "teleport", float(jumps[k] / cfg.v_phys),
                      {"implied_speed": float(jumps[k])})
        )
    dyn, meas = noise_model(cfg, med)
    per_step, _ = model.anomaly_score(dyn, meas, traj)
    update_t = t[1:]
    flagged = np.flatnonzero(per_step > cfg.noise_nis)
    bursts: list[list[int]] = []
    for k in flagged:
        if bursts and update_t[k] - update_t[bursts[-1][-1]] <= cfg.noise_merge_gap + 1e-9:
            bursts[-1].append(k)
        else:
            bursts.append([k])
    for burst in bursts:
        t0, t1 = float(update_t[burst[0]]), float(update_t[burst[-1]])
        if any(a - cfg.artifact_pad <= t1 and t0 <= b + cfg.artifact_pad for a, b in teleports):
            continue
        peak = float(np.max(per_step[burst]))
        out.append(
            Detection(traj.id, (), t0, t1, "recording_noise", peak / cfg.noise_nis,
                      {"peak_nis": peak, "flagged_steps": len(burst)})
        )
    if traj.speed is not None:
        mismatch = recorded_speed_mismatch(traj)
        for i, j in _runs(mismatch):
            out.append(
                Detection(traj.id, (), float(t[i]), float(t[j]), "speed_mismatch", 1.0,
                          {"steps": j - i + 1})
            )
    return out


def innovation_score(traj: Trajectory, cfg: DetectorConfig = DetectorConfig()) -> float:
    """Top-5% mean normalized innovation under the scoring motion model."""
    dt = cfg.dt or float(np.median(np.diff(traj.t)))
    dyn = model.DynamicsModel(cfg.score_model_kind, cfg.score_process_std, dt)
    meas = model.MeasurementModel(cfg.score_meas_std)
    return model.anomaly_score(dyn, meas, traj)[1]


def score_trajectories(dataset: Dataset, cfg: DetectorConfig = DetectorConfig()) -> dict[str, dict]:
    """Per-trajectory innovation score and, when the dataset is large enough, density score."""
    out = {}
    for traj in dataset:
        entry = {"innovation": innovation_score(traj, cfg), "density": None}
        if len(dataset) >= cfg.density_k + 1:
            entry["density"] = score_density_anomaly(traj, dataset, cfg)
        out[traj.id] = entry
    return out


def trajectory_features(traj: Trajectory, samples: int = 32) -> np.ndarray:
    """Start-pose-normalized positions and speed profile at ``samples`` instants."""
    grid = np.linspace(traj.t[0], traj.t[-1], samples)
    x = np.interp(grid, traj.t, traj.x) - traj.x[0]
    y = np.interp(grid, traj.t, traj.y) - traj.y[0]
    if traj.speed is not None:
        speed = np.interp(grid, traj.t, traj.speed)
    else:
        steps = np.diff(traj.t)
        v = np.hypot(np.diff(traj.x), np.diff(traj.y)) / steps
        mid = 0.5 * (traj.t[1:] + traj.t[:-1])
        speed = np.interp(grid, mid, v)
    h0 = float(traj.heading[0])
    c, s = math.cos(-h0), math.sin(-h0)
    return np.concatenate([c * x - s * y, s * x + c * y, speed])


def _knn_mean(dist: np.ndarray, k: int) -> np.ndarray:
    part = np.partition(dist, k - 1, axis=1)[:, :k]
    return part.mean(axis=1)


def score_density_anomaly(traj: Trajectory, dataset: Dataset, cfg: DetectorConfig = DetectorConfig()) -> float:
    """Mean distance to the k nearest dataset trajectories relative to the
    dataset's median of the same quantity; above 1 means rarer than typical.

    Dataset members sharing the scored trajectory's id are not counted as
    its neighbours.
    """
    k = cfg.density_k
    members = list(dataset)
    if len(members) < k + 1:
        raise DatasetTooSmall(f"need at least {k + 1} trajectories, got {len(members)}")
    feats = np.array([trajectory_features(t, cfg.density_samples) for t in members])
    pair = cdist(feats, feats)
    np.fill_diagonal(pair, np.inf)
    typical = float(np.median(_knn_mean(pair, k)))
    own = trajectory_features(traj, cfg.density_samples)[None, :]
    dist = cdist(own, feats)
    dist[0, [i for i, t in enumerate(members) if t.id == traj.id]] = np.inf
    score = float(_knn_mean(dist, k)[0])
    return score / max(typical, 1e-9)


def diff_maps(reference: EnvironmentMap, observed: EnvironmentMap, dataset: Dataset,
              cfg: DetectorConfig = DetectorConfig()) -> list[Detection]:
    """Signs present in the reference map but missing from the dataset's map.

    Each missing sign is attributed to the first trajectory observed on
    one of the lanes it applies to.
    """
    present = {s.id for s in observed.signs}
    out = []
    for sign in reference.signs:
        if sign.id in present:
            continue
        first = None
        for traj in dataset:
            match = map_match(traj, reference, cfg.map_tolerance)
            on = np.array([lane in sign.applies_to for lane in match.lane_id])
            runs = _runs(on)
            if not runs:
                continue
            i, j = runs[0]
            cand = (float(traj.t[i]), traj.id, float(traj.t[j]))
            if first is None or cand < first:
                first = cand
        if first is None:
            continue
        t0, ego, t1 = first
        out.append(
            Detection(ego, (), t0, t1, "missing_sign", 1.0,
                      {"sign": sign.id, "sign_kind": sign.kind, "lanes": sorted(sign.applies_to)},
                      uses_map=True)
        )
    return out


def max_workers() -> int:
    raw = os.environ.get("CC_MINER_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return min(8, os.cpu_count() or 1)


def mask_artifacts(detections: Sequence[Detection], pad: float) -> list[Detection]:
    """Drop non-recording detections overlapping a recording artifact of any participant."""
    artifacts: dict[str, list[tuple[float, float]]] = {}
    for det in detections:
        if det.kind in RECORDING_KINDS:
            artifacts.setdefault(det.ego_id, []).append((det.t_start - pad, det.t_end + pad))
    kept = []
    for det in detections:
        if det.kind not in RECORDING_KINDS:
            users = (det.ego_id,) + det.other_ids
            if any(det.overlaps(a, b) for u in users for a, b in artifacts.get(u, ())):
                continue
        kept.append(det)
    return kept


@dataclass
class DetectionRun:
    detections: list
    prepared: Dataset
    metrics: dict
    dt: float


def run_all(
    dataset: Dataset,
    env: EnvironmentMap | None = None,
    cfg: DetectorConfig = DetectorConfig(),
    reference_map: EnvironmentMap | None = None,
) -> DetectionRun:
    """Run every applicable detector and return detections in canonical order."""
    dt = cfg.dt or dataset_step(dataset)
    workers = max_workers()

    def prep(traj):
        try:
            return prepare(traj, dt)
        except TooShort:
            return None

    with ThreadPoolExecutor(max_workers=workers) as pool:
        prepared = [p for p in pool.map(prep, dataset.trajectories) if p is not None]
        prepared_ds = Dataset(tuple(prepared), dict(dataset.metadata), env)
        per_traj: list[Detection] = []
        for dets in pool.map(lambda tr: detect_recording_artifacts(tr, cfg), dataset.trajectories):
            per_traj.extend(dets)
        for dets in pool.map(lambda tr: detect_kinematic(tr, cfg), prepared):
            per_traj.extend(dets)
        if env is not None and env.lanes:
            for dets in pool.map(lambda tr: detect_env_rules(tr, env, cfg), prepared):
                per_traj.extend(dets)
    metrics = min_over_pairs(prepared_ds, None, cfg.horizon, cfg.collision_radius)
    per_traj.extend(detect_interaction(prepared_ds, metrics, cfg))
    if env is not None and env.conflict_zones:
        per_traj.extend(detect_priority(prepared_ds, env, metrics, cfg))
    if reference_map is not None and env is not None:
        per_traj.extend(diff_maps(reference_map, env, prepared_ds, cfg))
    detections = sorted(mask_artifacts(per_traj, cfg.artifact_pad), key=lambda d: d.sort_key)
    return DetectionRun(detections, prepared_ds, metrics, dt)
