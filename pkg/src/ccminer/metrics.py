"""Pairwise surrogate safety measures under constant-velocity extrapolation.

All "none" values are stored as NaN so profiles stay plain float arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .environment import EnvironmentMap, map_match
from .trajectory import Dataset, Trajectory, derive_kinematics

DEFAULT_COLLISION_RADIUS = 2.0
DEFAULT_HORIZON = 50.0
# map-free headway: leader must sit in the follower's lane-width corridor
HEADWAY_HALF_WIDTH = 1.75
HEADWAY_MAX_HEADING_DIFF = math.radians(30.0)
_TIME_KEY = 1e6


class NoOverlap(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EncounterMetrics:
    """Per-common-timestep measures of user ``a_id`` against ``b_id``.

    ``thw`` is the headway of ``a`` following ``b``.
    """

    a_id: str
    b_id: str
    t: np.ndarray
    distance: np.ndarray
    ttc: np.ndarray
    dce: np.ndarray
    ttce: np.ndarray
    thw: np.ndarray
    rel_position: np.ndarray
    vel_a: np.ndarray
    vel_b: np.ndarray

    @property
    def min_distance(self) -> float:
        return float(np.min(self.distance))

    @property
    def min_ttc(self) -> float:
        return float(np.nanmin(self.ttc)) if np.any(np.isfinite(self.ttc)) else math.nan

    @property
    def dce_overall(self) -> float:
        return float(np.min(self.dce))

    @property
    def ttce_overall(self) -> float:
        return float(self.ttce[int(np.argmin(self.dce))])

    @property
    def min_thw(self) -> float:
        return float(np.nanmin(self.thw)) if np.any(np.isfinite(self.thw)) else math.nan


def closest_encounter(p: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Time and distance of closest approach for relative position/velocity rows."""
    p = np.atleast_2d(p)
    v = np.atleast_2d(v)
    vv = np.einsum("ij,ij->i", v, v)
    pv = np.einsum("ij,ij->i", p, v)
    with np.errstate(divide="ignore", invalid="ignore"):
        ttce = np.where(vv > 1e-12, np.maximum(0.0, -pv / vv), 0.0)
    closest = p + ttce[:, None] * v
    return ttce, np.hypot(closest[:, 0], closest[:, 1])


def _kin(traj: Trajectory) -> Trajectory:
    return traj if traj.speed is not None else derive_kinematics(traj)


def common_steps(a: Trajectory, b: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    ka = np.round(a.t * _TIME_KEY).astype(np.int64)
    kb = np.round(b.t * _TIME_KEY).astype(np.int64)
    _, ia, ib = np.intersect1d(ka, kb, assume_unique=True, return_indices=True)
    return ia, ib


def encounter_profile(
    a: Trajectory,
    b: Trajectory,
    collision_radius: float = DEFAULT_COLLISION_RADIUS,
    env: EnvironmentMap | None = None,
) -> EncounterMetrics:
    """Distance, TTC, DCE, TTCE and headway at every shared timestep.

    Headway uses lane stations when ``env`` is given (both users matched
    to the same lane, ``b`` ahead); otherwise ``b`` counts as ahead when
    it lies in a lane-wide corridor along ``a``'s heading and travels in
    roughly the same direction.

    Raises:
        NoOverlap: fewer than two shared timesteps.
    """
    a, b = _kin(a), _kin(b)
    ia, ib = common_steps(a, b)
    if len(ia) < 2:
        raise NoOverlap(f"{a.id} and {b.id} share fewer than two timesteps")
    pa, pb = a.positions[ia], b.positions[ib]
    va, vb = a.velocity[ia], b.velocity[ib]
    p = pb - pa
    v = vb - va
    distance = np.hypot(p[:, 0], p[:, 1])
    ttce, dce = closest_encounter(p, v)
    ttc = np.where((dce <= collision_radius) & (ttce > 0.0), ttce, np.nan)
    speed_a = a.speed[ia]
    thw = np.full(len(ia), np.nan)
    if env is not None:
        ma = map_match(a, env)
        mb = map_match(b, env)
        for k, (i, j) in enumerate(zip(ia, ib)):
            lane = ma.lane_id[i]
            if lane is None or lane != mb.lane_id[j]:
                continue
            gap = mb.station[j] - ma.station[i]
            if gap > 0.0 and speed_a[k] > 0.1:
                thw[k] = gap / speed_a[k]
    else:
        ha = a.heading[ia]
        hb = b.heading[ib]
        c, s = np.cos(ha), np.sin(ha)
        lon = p[:, 0] * c + p[:, 1] * s
        lat = -p[:, 0] * s + p[:, 1] * c
        dh = np.abs(np.angle(np.exp(1j * (hb - ha))))
        ok = (lon > 0.0) & (np.abs(lat) <= HEADWAY_HALF_WIDTH) & (dh <= HEADWAY_MAX_HEADING_DIFF) & (speed_a > 0.1)
        thw[ok] = lon[ok] / speed_a[ok]
    t = a.t[ia]
    return EncounterMetrics(a.id, b.id, t, distance, ttc, dce, ttce, thw, p, va, vb)


def _bbox(traj: Trajectory, t0: float, t1: float):
    mask = (traj.t >= t0 - 1e-9) & (traj.t <= t1 + 1e-9)
    x, y = traj.x[mask], traj.y[mask]
    return x.min(), x.max(), y.min(), y.max()


def _bbox_gap(b1, b2) -> float:
    dx = max(0.0, b1[0] - b2[1], b2[0] - b1[1])
    dy = max(0.0, b1[2] - b2[3], b2[2] - b1[3])
    return math.hypot(dx, dy)


def min_over_pairs(
    dataset: Dataset,
    env: EnvironmentMap | None = None,
    horizon: float = DEFAULT_HORIZON,
    collision_radius: float = DEFAULT_COLLISION_RADIUS,
    prune: bool = True,
) -> dict[tuple[str, str], EncounterMetrics]:
    """Encounter profiles for every ordered pair that comes within ``horizon``.

    Pairs are enumerated in lexicographic id order; with ``prune`` a pair
    is skipped when the bounding boxes over the shared time span are
    already farther apart than the horizon.
    """
    trajs = {traj.id: _kin(traj) for traj in dataset}
    ids = sorted(trajs)
    out: dict[tuple[str, str], EncounterMetrics] = {}
    for a_id in ids:
        for b_id in ids:
            if a_id == b_id:
                continue
            a, b = trajs[a_id], trajs[b_id]
            t0 = max(a.t[0], b.t[0])
            t1 = min(a.t[-1], b.t[-1])
            if t1 <= t0:
                continue
            if prune and _bbox_gap(_bbox(a, t0, t1), _bbox(b, t0, t1)) >= horizon:
                continue
            try:
                prof = encounter_profile(a, b, collision_radius, env)
            except NoOverlap:
                continue
            if prof.min_distance < horizon:
                out[(a_id, b_id)] = prof
    return out
