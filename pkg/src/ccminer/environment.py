"""Static road environment and geometric queries against trajectories.

Lanes are directed centerline polylines carrying their own rules; signs,
virtual loops and conflict zones reference lanes by id. All objects are
immutable once the map is built.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .trajectory import Trajectory, wrap_angle

SIGN_KINDS = ("priority", "yield", "stop", "no_u_turn", "one_way", "speed_limit")
PRIORITY_ORDER = ("unregulated", "priority", "yield", "stop")
DEFAULT_CORRIDOR_TOLERANCE = 2.0
TIE_TOL = 1e-9


class MapError(ValueError):
    pass


class SchemaError(MapError):
    pass


class DanglingReference(MapError):
    def __init__(self, ref_id: str, where: str = ""):
        super().__init__(f"unknown id {ref_id!r}" + (f" referenced by {where}" if where else ""))
        self.ref_id = ref_id


class EmptyMap(MapError):
    pass


class UnknownLane(MapError):
    def __init__(self, lane_id: str):
        super().__init__(f"unknown lane {lane_id!r}")
        self.lane_id = lane_id


def _points(value, minimum: int, what: str) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < minimum:
        raise SchemaError(f"{what} needs at least {minimum} planar points")
    if not np.all(np.isfinite(arr)):
        raise SchemaError(f"{what} has non-finite coordinates")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LaneSegment:
    id: str
    centerline: np.ndarray
    width: float = 3.5
    speed_limit: float = 13.9
    oncoming_lane_id: str | None = None

    def __post_init__(self):
        pts = _points(self.centerline, 2, f"lane {self.id}")
        seg = np.diff(pts, axis=0)
        lengths = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(lengths == 0.0):
            raise SchemaError(f"lane {self.id} has repeated consecutive points")
        if not self.width > 0 or not self.speed_limit > 0:
            raise SchemaError(f"lane {self.id} needs positive width and speed limit")
        object.__setattr__(self, "centerline", pts)
        object.__setattr__(self, "_lengths", lengths)
        stations = np.concatenate([[0.0], np.cumsum(lengths)])
        object.__setattr__(self, "_stations", stations)
        tangent = np.arctan2(seg[:, 1], seg[:, 0])
        object.__setattr__(self, "_tangent", tangent)
        # turning angle per vertex divided by the mean adjacent segment length
        vertex_kappa = np.zeros(len(pts))
        if len(pts) > 2:
            turn = wrap_angle(np.diff(tangent))
            mean_len = 0.5 * (lengths[:-1] + lengths[1:])
            vertex_kappa[1:-1] = turn / mean_len
        object.__setattr__(self, "_vertex_kappa", vertex_kappa)

    @property
    def length(self) -> float:
        return float(self._stations[-1])

    @property
    def stations(self) -> np.ndarray:
        return self._stations

    def point_at(self, station: float) -> np.ndarray:
        s = np.clip(station, 0.0, self.length)
        return np.array(
            [np.interp(s, self._stations, self.centerline[:, 0]),
             np.interp(s, self._stations, self.centerline[:, 1])]
        )

    def curvature_at(self, station) -> np.ndarray:
        return np.interp(station, self._stations, self._vertex_kappa)

    def project(self, points: np.ndarray):
        """Nearest centerline point for each row of ``points``.

        Returns (distance, signed lateral offset, station, tangent heading);
        the offset is positive to the left of the travel direction.
        """
        pts = np.atleast_2d(points)
        a = self.centerline[:-1]
        d = np.diff(self.centerline, axis=0)
        len2 = self._lengths**2
        rel = pts[:, None, :] - a[None, :, :]
        u = np.clip(np.einsum("nsk,sk->ns", rel, d) / len2, 0.0, 1.0)
        foot = a[None, :, :] + u[..., None] * d[None, :, :]
        diff = pts[:, None, :] - foot
        dist2 = np.einsum("nsk,nsk->ns", diff, diff)
        best = np.argmin(dist2, axis=1)
        rows = np.arange(len(pts))
        dist = np.sqrt(dist2[rows, best])
        dsel = d[best]
        cross = dsel[:, 0] * diff[rows, best, 1] - dsel[:, 1] * diff[rows, best, 0]
        offset = np.where(cross >= 0.0, dist, -dist)
        station = self._stations[best] + u[rows, best] * self._lengths[best]
        return dist, offset, station, self._tangent[best]


@dataclass(frozen=True)
class TrafficSign:
    id: str
    kind: str
    position: tuple
    applies_to: frozenset
    value: float | None = None

    def __post_init__(self):
        if self.kind not in SIGN_KINDS:
            raise SchemaError(f"sign {self.id}: unknown kind {self.kind!r}")
        if not self.applies_to:
            raise SchemaError(f"sign {self.id} applies to no lane")
        if self.kind == "speed_limit" and not (self.value and self.value > 0):
            raise SchemaError(f"speed limit sign {self.id} needs a positive value")
        object.__setattr__(self, "applies_to", frozenset(self.applies_to))
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))


@dataclass(frozen=True, eq=False)
class VirtualLoop:
    """A gate segment. ``approach``/``role`` group entry and exit loops of one arm."""

    id: str
    gate: np.ndarray
    label: str = ""
    approach: str | None = None
    role: str | None = None
    lane_id: str | None = None

    def __post_init__(self):
        pts = _points(self.gate, 2, f"loop {self.id}")
        if pts.shape[0] != 2:
            raise SchemaError(f"loop {self.id} gate must have exactly two points")
        if np.array_equal(pts[0], pts[1]):
            raise SchemaError(f"loop {self.id} gate endpoints coincide")
        if self.role not in (None, "entry", "exit"):
            raise SchemaError(f"loop {self.id}: role must be entry or exit")
        object.__setattr__(self, "gate", pts)


@dataclass(frozen=True, eq=False)
class ConflictZone:
    id: str
    polygon: np.ndarray
    lane_pair: tuple
    priority_lane: str

    def __post_init__(self):
        pts = _points(self.polygon, 3, f"conflict zone {self.id}")
        if not _is_simple(pts):
            raise SchemaError(f"conflict zone {self.id} polygon is not simple")
        if len(self.lane_pair) != 2 or self.priority_lane not in self.lane_pair:
            raise SchemaError(f"conflict zone {self.id}: priority lane must be one of the pair")
        object.__setattr__(self, "polygon", pts)
        object.__setattr__(self, "lane_pair", tuple(self.lane_pair))

    @property
    def yielding_lane(self) -> str:
        a, b = self.lane_pair
        return b if a == self.priority_lane else a

    def contains(self, points: np.ndarray) -> np.ndarray:
        return points_in_polygon(np.atleast_2d(points), self.polygon)


def _segments_cross(p1, p2, q1, q2) -> bool:
    d1 = _orient(q1, q2, p1)
    d2 = _orient(q1, q2, p2)
    d3 = _orient(p1, p2, q1)
    d4 = _orient(p1, p2, q2)
    return d1 * d2 < 0 and d3 * d4 < 0


def _is_simple(poly: np.ndarray) -> bool:
    n = len(poly)
    if n < 3:
        return False
    area = 0.5 * np.sum(poly[:, 0] * np.roll(poly[:, 1], -1) - np.roll(poly[:, 0], -1) * poly[:, 1])
    if abs(area) == 0.0:
        return False
    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_cross(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]):
                return False
    return True


def points_in_polygon(points: np.ndarray, polygon: np.ndarray) -> np.ndarray:
    """Even-odd rule; points on the boundary may fall either way."""
    x, y = points[:, 0][:, None], points[:, 1][:, None]
    xa, ya = polygon[:, 0][None, :], polygon[:, 1][None, :]
    xb, yb = np.roll(polygon[:, 0], -1)[None, :], np.roll(polygon[:, 1], -1)[None, :]
    straddle = (ya > y) != (yb > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = xa + (y - ya) * (xb - xa) / (yb - ya)
    hits = straddle & (x < x_cross)
    return np.mod(hits.sum(axis=1), 2) == 1


@dataclass(frozen=True, eq=False)
class EnvironmentMap:
    lanes: tuple = ()
    signs: tuple = ()
    loops: tuple = ()
    conflict_zones: tuple = ()

    def __post_init__(self):
        for name in ("lanes", "signs", "loops", "conflict_zones"):
            items = tuple(getattr(self, name))
            ids = [item.id for item in items]
            if len(set(ids)) != len(ids):
                raise SchemaError(f"duplicate ids among {name}")
            object.__setattr__(self, name, items)
        lane_ids = {lane.id for lane in self.lanes}
        for lane in self.lanes:
            if lane.oncoming_lane_id is not None and lane.oncoming_lane_id not in lane_ids:
                raise DanglingReference(lane.oncoming_lane_id, f"lane {lane.id}")
        for sign in self.signs:
            for ref in sorted(sign.applies_to):
                if ref not in lane_ids:
                    raise DanglingReference(ref, f"sign {sign.id}")
        for loop in self.loops:
            if loop.lane_id is not None and loop.lane_id not in lane_ids:
                raise DanglingReference(loop.lane_id, f"loop {loop.id}")
        for zone in self.conflict_zones:
            for ref in zone.lane_pair:
                if ref not in lane_ids:
                    raise DanglingReference(ref, f"conflict zone {zone.id}")

    def lane(self, lane_id: str) -> LaneSegment:
        for lane in self.lanes:
            if lane.id == lane_id:
                return lane
        raise UnknownLane(lane_id)

    def loop(self, loop_id: str) -> VirtualLoop:
        for loop in self.loops:
            if loop.id == loop_id:
                return loop
        raise KeyError(loop_id)

    def loop_pairs(self) -> list[tuple[VirtualLoop, VirtualLoop]]:
        """(entry, exit) loops sharing an approach, sorted by approach name."""
        by_approach: dict[str, dict[str, VirtualLoop]] = {}
        for loop in self.loops:
            if loop.approach and loop.role:
                by_approach.setdefault(loop.approach, {})[loop.role] = loop
        return [
            (roles["entry"], roles["exit"])
            for approach, roles in sorted(by_approach.items())
            if "entry" in roles and "exit" in roles
        ]

    def without_sign(self, sign_id: str) -> "EnvironmentMap":
        signs = tuple(s for s in self.signs if s.id != sign_id)
        if len(signs) == len(self.signs):
            raise KeyError(sign_id)
        return EnvironmentMap(self.lanes, signs, self.loops, self.conflict_zones)


class Crossing(NamedTuple):
    t: float
    direction: str
    segment: int


def _orient(a, b, p) -> float:
    return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])


def _gate_param(a, b, p) -> float:
    d = b - a
    return float(((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / (d[0] ** 2 + d[1] ** 2))


def loop_crossings(traj: Trajectory, loop: VirtualLoop, warnings: list | None = None) -> list[Crossing]:
    """Crossings of the trajectory polyline over the loop's gate segment.

    A pass through the gate line is counted when the trajectory changes
    side. A vertex lying exactly on the gate counts once and is
    attributed to the segment ending there; touching without changing
    side is not a crossing. Motion running along the gate line is not a
    crossing and is reported through ``warnings`` when a list is given.
    Direction follows the sign of cross(gate, motion): positive is
    ``left_to_right``, negative ``right_to_left``.
    """
    a, b = loop.gate
    gate = b - a
    pts = traj.positions
    side = np.array([_orient(a, b, p) for p in pts])
    sign = np.sign(side)
    events: list[Crossing] = []
    n = len(pts)
    i = 0
    while i < n - 1:
        if sign[i] == 0:
            i += 1
            continue
        j = i + 1
        while j < n and sign[j] == 0:
            j += 1
        if j == n:
            break
        if sign[j] != sign[i]:
            zeros = j - i - 1
            if zeros == 0:
                p, q = pts[i], pts[i + 1]
                frac = side[i] / (side[i] - side[j])
                hit = p + frac * (q - p)
                u = _gate_param(a, b, hit)
                t_cross = traj.t[i] + frac * (traj.t[j] - traj.t[i])
                seg = i
                motion = q - p
            elif zeros == 1:
                hit = pts[i + 1]
                u = _gate_param(a, b, hit)
                t_cross = traj.t[i + 1]
                seg = i
                motion = pts[i + 1] - pts[i]
            else:
                u = None
                if warnings is not None:
                    lo, hi = sorted(_gate_param(a, b, pts[k]) for k in (i + 1, j - 1))
                    if hi >= 0.0 and lo <= 1.0:
                        warnings.append(f"trajectory {traj.id} runs along loop {loop.id} at t={traj.t[i + 1]:.3f}")
            if u is not None and 0.0 <= u <= 1.0:
                cross = gate[0] * motion[1] - gate[1] * motion[0]
                direction = "left_to_right" if cross > 0 else "right_to_left"
                events.append(Crossing(float(t_cross), direction, int(seg)))
        i = j
    return events


class MatchResult(NamedTuple):
    lane_id: list
    lateral_offset: np.ndarray
    heading_deviation: np.ndarray
    station: np.ndarray
    lane_curvature: np.ndarray


def map_match(traj: Trajectory, env: EnvironmentMap, tolerance: float = DEFAULT_CORRIDOR_TOLERANCE) -> MatchResult:
    """Per-state nearest lane among those whose corridor contains the point.

    The corridor is half the lane width plus ``tolerance``. Ties within
    1e-9 m go to the lexicographically lower lane id. Unmatched states get
    ``None`` and NaN for the numeric fields.
    """
    if not env.lanes:
        raise EmptyMap("map has no lanes")
    pts = traj.positions
    n = len(pts)
    best_dist = np.full(n, np.inf)
    lane_ids: list = [None] * n
    offset = np.full(n, np.nan)
    deviation = np.full(n, np.nan)
    station = np.full(n, np.nan)
    kappa = np.full(n, np.nan)
    for lane in sorted(env.lanes, key=lambda l: l.id):
        dist, off, sta, tangent = lane.project(pts)
        ok = dist <= lane.width / 2.0 + tolerance
        better = ok & (dist < best_dist - TIE_TOL)
        for k in np.flatnonzero(better):
            lane_ids[k] = lane.id
        best_dist = np.where(better, dist, best_dist)
        offset = np.where(better, off, offset)
        deviation = np.where(better, wrap_angle(traj.heading - tangent), deviation)
        station = np.where(better, sta, station)
        kappa = np.where(better, lane.curvature_at(sta), kappa)
    return MatchResult(lane_ids, offset, deviation, station, kappa)


class LaneRules(NamedTuple):
    speed_limit: float
    u_turn_allowed: bool
    priority: str
    one_way: bool


def rules_at(lane_id: str, env: EnvironmentMap) -> LaneRules:
    """Fold the signs applying to a lane onto its defaults.

    The lowest posted speed limit wins; among priority signs the most
    restrictive (stop > yield > priority) wins.
    """
    lane = env.lane(lane_id)
    speed_limit = lane.speed_limit
    posted = [s.value for s in env.signs if lane_id in s.applies_to and s.kind == "speed_limit"]
    if posted:
        speed_limit = float(min(posted))
    kinds = {s.kind for s in env.signs if lane_id in s.applies_to}
    priority = "unregulated"
    for candidate in PRIORITY_ORDER:
        if candidate in kinds:
            priority = candidate
    return LaneRules(speed_limit, "no_u_turn" not in kinds, priority, "one_way" in kinds)


def time_to_polygon(position, velocity, polygon: np.ndarray) -> float:
    """Time until a constant-velocity point first touches the polygon (inf if never)."""
    p = np.asarray(position, float)
    v = np.asarray(velocity, float)
    if points_in_polygon(p[None, :], polygon)[0]:
        return 0.0
    best = math.inf
    n = len(polygon)
    for i in range(n):
        a, b = polygon[i], polygon[(i + 1) % n]
        e = b - a
        denom = v[0] * e[1] - v[1] * e[0]
        if abs(denom) < 1e-12:
            continue
        w = a - p
        t = (w[0] * e[1] - w[1] * e[0]) / denom
        u = (w[0] * v[1] - w[1] * v[0]) / denom
        if t >= 0.0 and 0.0 <= u <= 1.0:
            best = min(best, t)
    return best


def arc_points(center, radius: float, start_angle: float, end_angle: float, max_step: float = 0.5) -> np.ndarray:
    """Points on a circular arc, inclusive of both ends."""
    sweep = end_angle - start_angle
    n = max(2, int(math.ceil(abs(sweep) * radius / max_step)) + 1)
    ang = np.linspace(start_angle, end_angle, n)
    return np.column_stack([center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)])


def polyline(*parts: Sequence) -> np.ndarray:
    """Concatenate point runs, dropping repeated junction points."""
    out = []
    for part in parts:
        for p in np.asarray(part, float):
            if out and np.allclose(out[-1], p, atol=1e-9):
                continue
            out.append(p)
    return np.array(out)
