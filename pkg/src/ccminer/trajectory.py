"""Planar trajectory representation, validation, resampling and kinematics.

A :class:`Trajectory` stores its states column-wise as read-only numpy
arrays. Optional kinematic columns (speed, accelerations, curvature, jerk)
are ``None`` until :func:`derive_kinematics` fills them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Mapping

import numpy as np

ROAD_USER_CLASSES = ("car", "truck", "bus", "motorcycle", "bicycle", "pedestrian")

# below this speed the heading is carried forward instead of taken from velocity
HEADING_SPEED_EPS = 0.1
_UNIFORM_RTOL = 1e-6


class TrajectoryError(ValueError):
    """Base class for malformed trajectory input."""


class NonMonotoneTime(TrajectoryError):
    def __init__(self, index: int):
        super().__init__(f"timestamps not strictly increasing at index {index}")
        self.index = index


class NonFiniteValue(TrajectoryError):
    def __init__(self, index: int, field_name: str):
        super().__init__(f"non-finite {field_name} at index {index}")
        self.index = index
        self.field = field_name


class TooShort(TrajectoryError):
    def __init__(self, n: int):
        super().__init__(f"trajectory needs at least 2 states, got {n}")
        self.n = n


class InvalidStep(TrajectoryError):
    def __init__(self, dt: float):
        super().__init__(f"resampling step must be positive, got {dt}")
        self.dt = dt


class NonUniformSampling(TrajectoryError):
    pass


class DuplicateId(TrajectoryError):
    def __init__(self, track_id: str):
        super().__init__(f"duplicate trajectory id {track_id!r}")
        self.track_id = track_id


def wrap_angle(a):
    """Wrap angle(s) to the half-open interval (-pi, pi]."""
    wrapped = np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2.0 * np.pi)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class State:
    """One sample of a trajectory (SI units, planar pose)."""

    t: float
    x: float
    y: float
    heading: float
    speed: float | None = None
    accel_lon: float | None = None
    accel_lat: float | None = None
    curvature: float | None = None


_OPTIONAL = ("speed", "accel_lon", "accel_lat", "curvature", "jerk")


def _frozen(a) -> np.ndarray | None:
    if a is None:
        return None
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Timestamped planar states of a single road user.

    Construct through :meth:`from_arrays` or :meth:`from_states`, both of
    which run :func:`validate`.
    """

    id: str
    road_user_class: str
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray
    speed: np.ndarray | None = None
    accel_lon: np.ndarray | None = None
    accel_lat: np.ndarray | None = None
    curvature: np.ndarray | None = None
    jerk: np.ndarray | None = None

    @classmethod
    def from_arrays(
        cls,
        track_id: str,
        t,
        x,
        y,
        heading=None,
        *,
        road_user_class: str = "car",
        **optional,
    ) -> "Trajectory":
        t = np.asarray(t, dtype=float)
        if heading is None:
            # report ordering problems before they turn into NaN headings
            bad = np.flatnonzero(np.diff(t) <= 0.0)
            if bad.size:
                raise NonMonotoneTime(int(bad[0]) + 1)
            heading = _heading_from_positions(t, np.asarray(x, float), np.asarray(y, float))
        unknown = set(optional) - set(_OPTIONAL)
        if unknown:
            raise TypeError(f"unknown trajectory fields: {sorted(unknown)}")
        raw = cls(
            id=str(track_id),
            road_user_class=road_user_class,
            t=_frozen(t),
            x=_frozen(x),
            y=_frozen(y),
            heading=_frozen(heading),
            **{k: _frozen(v) for k, v in optional.items()},
        )
        return validate(raw)

    @classmethod
    def from_states(
        cls, track_id: str, states: Iterable[State], road_user_class: str = "car"
    ) -> "Trajectory":
        states = list(states)
        cols = {name: [getattr(s, name) for s in states] for name in ("t", "x", "y", "heading")}
        opt = {}
        for name in ("speed", "accel_lon", "accel_lat", "curvature"):
            vals = [getattr(s, name) for s in states]
            if any(v is not None for v in vals):
                opt[name] = [np.nan if v is None else v for v in vals]
        return cls.from_arrays(
            track_id, cols["t"], cols["x"], cols["y"], cols["heading"],
            road_user_class=road_user_class, **opt,
        )

    def __len__(self) -> int:
        return len(self.t)

    @property
    def states(self) -> tuple[State, ...]:
        return tuple(self)

    def __iter__(self) -> Iterator[State]:
        for i in range(len(self.t)):
            yield State(
                t=float(self.t[i]),
                x=float(self.x[i]),
                y=float(self.y[i]),
                heading=float(self.heading[i]),
                speed=None if self.speed is None else float(self.speed[i]),
                accel_lon=None if self.accel_lon is None else float(self.accel_lon[i]),
                accel_lat=None if self.accel_lat is None else float(self.accel_lat[i]),
                curvature=None if self.curvature is None else float(self.curvature[i]),
            )

    @property
    def positions(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])

    @property
    def has_kinematics(self) -> bool:
        return self.speed is not None and self.accel_lon is not None and self.accel_lat is not None

    @property
    def velocity(self) -> np.ndarray:
        """(N, 2) velocity vectors from speed and heading."""
        if self.speed is None:
            raise NonUniformSampling("trajectory has no speed column; derive kinematics first")
        return np.column_stack(
            [self.speed * np.cos(self.heading), self.speed * np.sin(self.heading)]
        )

    @property
    def span(self) -> tuple[float, float]:
        return float(self.t[0]), float(self.t[-1])

    def with_columns(self, **columns) -> "Trajectory":
        return replace(self, **{k: _frozen(v) for k, v in columns.items()})

    def slice_time(self, t_start: float, t_end: float) -> "Trajectory | None":
        """States with t in [t_start, t_end]; None if fewer than two remain."""
        mask = (self.t >= t_start - 1e-9) & (self.t <= t_end + 1e-9)
        if mask.sum() < 2:
            return None
        return self.select(mask)

    def select(self, mask) -> "Trajectory":
        cols = {}
        for name in ("t", "x", "y", "heading") + _OPTIONAL:
            col = getattr(self, name)
            cols[name] = None if col is None else col[mask]
        return validate(replace(self, **{k: _frozen(v) for k, v in cols.items()}))

    def same_as(self, other: "Trajectory", atol: float = 0.0) -> bool:
        if self.id != other.id or self.road_user_class != other.road_user_class:
            return False
        for name in ("t", "x", "y", "heading") + _OPTIONAL:
            a, b = getattr(self, name), getattr(other, name)
            if (a is None) != (b is None):
                return False
            if a is None:
                continue
            if a.shape != b.shape or not np.allclose(a, b, rtol=0.0, atol=atol, equal_nan=True):
                return False
        return True


@dataclass(frozen=True)
class Dataset:
    """A collection of trajectories with unique ids."""

    trajectories: tuple[Trajectory, ...]
    metadata: Mapping[str, object] = field(default_factory=dict)
    env_map: object | None = None

    def __post_init__(self):
        seen = set()
        for traj in self.trajectories:
            if traj.id in seen:
                raise DuplicateId(traj.id)
            seen.add(traj.id)
        object.__setattr__(self, "trajectories", tuple(self.trajectories))

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def __getitem__(self, track_id: str) -> Trajectory:
        for traj in self.trajectories:
            if traj.id == track_id:
                return traj
        raise KeyError(track_id)

    @property
    def ids(self) -> list[str]:
        return [traj.id for traj in self.trajectories]

    def replace_trajectories(self, trajectories: Iterable[Trajectory]) -> "Dataset":
        return Dataset(tuple(trajectories), dict(self.metadata), self.env_map)


def validate(traj: Trajectory) -> Trajectory:
    """Check the trajectory invariants and normalize headings."""
    n = len(traj.t)
    if n < 2:
        raise TooShort(n)
    for name in ("t", "x", "y", "heading"):
        col = getattr(traj, name)
        if col is None or len(col) != n:
            raise TrajectoryError(f"column {name} has wrong length")
        bad = np.flatnonzero(~np.isfinite(col))
        if bad.size:
            raise NonFiniteValue(int(bad[0]), name)
    for name in _OPTIONAL:
        col = getattr(traj, name)
        if col is not None and len(col) != n:
            raise TrajectoryError(f"column {name} has wrong length")
    if traj.road_user_class not in ROAD_USER_CLASSES:
        raise TrajectoryError(f"unknown road user class {traj.road_user_class!r}")
    steps = np.diff(traj.t)
    bad = np.flatnonzero(steps <= 0.0)
    if bad.size:
        raise NonMonotoneTime(int(bad[0]) + 1)
    heading = wrap_angle(traj.heading)
    if np.array_equal(heading, traj.heading):
        return traj
    return replace(traj, heading=_frozen(heading))


def _heading_from_positions(t, x, y) -> np.ndarray:
    if len(t) < 2:
        return np.zeros(len(t))
    vx = np.gradient(x, t)
    vy = np.gradient(y, t)
    return _carry_heading(vx, vy, 0.0)


def _carry_heading(vx, vy, initial: float) -> np.ndarray:
    speed = np.hypot(vx, vy)
    heading = np.empty(len(vx))
    moving = np.flatnonzero(speed > HEADING_SPEED_EPS)
    last = initial if moving.size == 0 or moving[0] != 0 else math.atan2(vy[0], vx[0])
    for i in range(len(vx)):
        if speed[i] > HEADING_SPEED_EPS:
            last = math.atan2(vy[i], vx[i])
        heading[i] = last
    return heading


def _grid(t0: float, t_end: float, dt: float, origin: float | None) -> np.ndarray:
    if origin is not None:
        k0 = math.ceil((t0 - origin) / dt - 1e-9)
        start = origin + k0 * dt
    else:
        k0 = 0
        start = t0
    n = int(math.floor((t_end - start) / dt + 1e-9)) + 1
    if origin is not None:
        return origin + (k0 + np.arange(max(n, 0))) * dt
    return t0 + np.arange(max(n, 0)) * dt


def resample_uniform(traj: Trajectory, dt: float, origin: float | None = None) -> Trajectory:
    """Linearly interpolate the trajectory onto a uniform time grid.

    The grid starts at the first timestamp, or at the first multiple of
    ``dt`` past ``origin`` when an origin is given, so that several
    trajectories can share one grid. Heading is interpolated along the
    shortest arc. Derived columns are dropped.

    Raises:
        InvalidStep: if ``dt`` is not positive.
        TooShort: if fewer than two grid points fall inside the time span.
    """
    if not dt > 0.0 or not math.isfinite(dt):
        raise InvalidStep(dt)
    grid = _grid(float(traj.t[0]), float(traj.t[-1]), dt, origin)
    if len(grid) < 2:
        raise TooShort(len(grid))
    x = np.interp(grid, traj.t, traj.x)
    y = np.interp(grid, traj.t, traj.y)
    heading = wrap_angle(np.interp(grid, traj.t, np.unwrap(traj.heading)))
    return Trajectory.from_arrays(traj.id, grid, x, y, heading, road_user_class=traj.road_user_class)


def sampling_step(traj: Trajectory) -> float:
    """The uniform step of ``traj``; raises NonUniformSampling otherwise."""
    steps = np.diff(traj.t)
    dt = float(np.median(steps))
    if np.max(np.abs(steps - dt)) > _UNIFORM_RTOL * max(dt, 1.0):
        raise NonUniformSampling(f"trajectory {traj.id} is not uniformly sampled")
    return dt


def moving_average(traj: Trajectory, window: int) -> Trajectory:
    """Centered moving average of positions; ``window`` <= 1 is a no-op."""
    if window <= 1:
        return traj
    kernel = np.ones(window) / window
    pad = window // 2

    def smooth(a):
        padded = np.pad(a, (pad, window - 1 - pad), mode="edge")
        return np.convolve(padded, kernel, mode="valid")

    return Trajectory.from_arrays(
        traj.id, traj.t, smooth(traj.x), smooth(traj.y), traj.heading,
        road_user_class=traj.road_user_class,
    )


def derive_kinematics(traj: Trajectory, prefer_recorded: bool = True) -> Trajectory:
    """Fill speed, heading, accelerations, curvature and longitudinal jerk.

    Central differences in the interior, one-sided differences at the two
    endpoints. Heading follows the velocity direction while the speed is
    above ``HEADING_SPEED_EPS`` and is carried forward otherwise, seeded
    with the first stored heading. Accelerations are split along and
    across the heading (lateral positive to the left).

    A recorded speed column, when present and ``prefer_recorded`` is set,
    is kept as the speed; everything else is re-derived from positions.
    """
    dt = sampling_step(traj)
    edge = 1
    vx = np.gradient(traj.x, dt, edge_order=edge)
    vy = np.gradient(traj.y, dt, edge_order=edge)
    ax = np.gradient(vx, dt, edge_order=edge)
    ay = np.gradient(vy, dt, edge_order=edge)
    speed = np.hypot(vx, vy)
    heading = _carry_heading(vx, vy, float(traj.heading[0]))
    c, s = np.cos(heading), np.sin(heading)
    accel_lon = ax * c + ay * s
    accel_lat = -ax * s + ay * c
    moving = speed > HEADING_SPEED_EPS
    curvature = np.zeros_like(speed)
    curvature[moving] = (vx[moving] * ay[moving] - vy[moving] * ax[moving]) / speed[moving] ** 3
    jerk = np.gradient(accel_lon, dt, edge_order=edge)
    recorded = traj.speed
    if prefer_recorded and recorded is not None and np.all(np.isfinite(recorded)):
        speed = recorded
    return replace(
        traj,
        heading=_frozen(wrap_angle(heading)),
        speed=_frozen(speed),
        accel_lon=_frozen(accel_lon),
        accel_lat=_frozen(accel_lat),
        curvature=_frozen(curvature),
        jerk=_frozen(jerk),
    )


def recorded_speed_mismatch(traj: Trajectory, rel_tol: float = 0.1) -> np.ndarray:
    """Boolean mask where a recorded speed disagrees with the derived one by more than ``rel_tol``."""
    if traj.speed is None:
        return np.zeros(len(traj), dtype=bool)
    derived = derive_kinematics(traj, prefer_recorded=False).speed
    scale = np.maximum(derived, 1.0)
    return np.abs(traj.speed - derived) > rel_tol * scale
