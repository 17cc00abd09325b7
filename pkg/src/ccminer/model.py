"""Linear-Gaussian trajectory model: simulation, filtering and likelihood scoring.

The latent state is a planar position with its derivatives; measurements
observe the position only. Dynamics are Markov approximations of the
general history-dependent model (constant velocity, constant acceleration,
coordinated turn with a known turn rate).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .trajectory import HEADING_SPEED_EPS, State, Trajectory, TooShort

KINDS = ("constant_velocity", "constant_acceleration", "coordinated_turn")
MEAS_DIM = 2


class ModelError(ValueError):
    pass


class BadLength(ModelError):
    pass


class SingularCovariance(ModelError):
    pass


def _pair(value) -> tuple[float, float]:
    if np.ndim(value) == 0:
        return float(value), float(value)
    a, b = value
    return float(a), float(b)


@dataclass(frozen=True)
class DynamicsModel:
    """Discrete-time linear-Gaussian motion model.

    ``process_noise`` is the per-axis spectral density of the driving
    white noise: acceleration (m/s^2) for the velocity models, jerk
    (m/s^3) for constant acceleration. ``turn_rate`` is the known yaw
    rate used by the coordinated-turn model.
    """

    kind: str = "constant_velocity"
    process_noise: tuple = (0.5, 0.5)
    dt: float = 0.1
    turn_rate: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelError(f"unknown dynamics kind {self.kind!r}")
        q = _pair(self.process_noise)
        object.__setattr__(self, "process_noise", q)
        if not all(v > 0 for v in q):
            raise ModelError("process noise must be positive")
        if not self.dt > 0:
            raise ModelError("dt must be positive")

    @property
    def order(self) -> int:
        return 3 if self.kind == "constant_acceleration" else 2

    @property
    def state_dim(self) -> int:
        return 2 * self.order

    def transition(self, dt: float | None = None) -> np.ndarray:
        dt = self.dt if dt is None else dt
        if self.kind == "coordinated_turn" and abs(self.turn_rate) > 1e-12:
            w = self.turn_rate
            s, c = math.sin(w * dt), math.cos(w * dt)
            # state layout [x, y, vx, vy]
            return np.array(
                [
                    [1, 0, s / w, -(1 - c) / w],
                    [0, 1, (1 - c) / w, s / w],
                    [0, 0, c, -s],
                    [0, 0, s, c],
                ]
            )
        block = _axis_transition(self.order, dt)
        return _interleave(block, block)

    def noise(self, dt: float | None = None) -> np.ndarray:
        dt = self.dt if dt is None else dt
        qx, qy = self.process_noise
        base = _axis_noise(self.order, dt)
        return _interleave(qx**2 * base, qy**2 * base)

    def measurement_matrix(self) -> np.ndarray:
        h = np.zeros((MEAS_DIM, self.state_dim))
        h[0, 0] = h[1, 1] = 1.0
        return h


def _axis_transition(order: int, dt: float) -> np.ndarray:
    if order == 2:
        return np.array([[1.0, dt], [0.0, 1.0]])
    return np.array([[1.0, dt, 0.5 * dt * dt], [0.0, 1.0, dt], [0.0, 0.0, 1.0]])


def _axis_noise(order: int, dt: float) -> np.ndarray:
    # continuous white noise on the highest derivative, integrated over dt
    if order == 2:
        return np.array([[dt**3 / 3, dt**2 / 2], [dt**2 / 2, dt]])
    return np.array(
        [
            [dt**5 / 20, dt**4 / 8, dt**3 / 6],
            [dt**4 / 8, dt**3 / 3, dt**2 / 2],
            [dt**3 / 6, dt**2 / 2, dt],
        ]
    )


def _interleave(ax: np.ndarray, ay: np.ndarray) -> np.ndarray:
    """Combine per-axis blocks into the [x, y, vx, vy, (ax, ay)] layout."""
    k = ax.shape[0]
    out = np.zeros((2 * k, 2 * k))
    out[0::2, 0::2] = ax
    out[1::2, 1::2] = ay
    return out


@dataclass(frozen=True)
class MeasurementModel:
    position_noise_std: float = 0.1
    dropout_prob: float = 0.0

    def __post_init__(self):
        if not self.position_noise_std > 0:
            raise ModelError("position_noise_std must be positive")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ModelError("dropout_prob must lie in [0, 1)")

    def covariance(self) -> np.ndarray:
        return self.position_noise_std**2 * np.eye(MEAS_DIM)


@dataclass(frozen=True)
class ControlInput:
    accel_command: float = 0.0
    yaw_rate_command: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.accel_command) and math.isfinite(self.yaw_rate_command)):
            raise ModelError("control input must be finite")


@dataclass(frozen=True)
class DynamicsContext:
    friction_scale: float = 1.0
    speed_cap: float = math.inf

    def __post_init__(self):
        if not 0.0 < self.friction_scale <= 1.0:
            raise ModelError("friction_scale must lie in (0, 1]")
        if not self.speed_cap > 0:
            raise ModelError("speed_cap must be positive")


@dataclass(frozen=True)
class MeasurementContext:
    occlusion_intervals: tuple = field(default_factory=tuple)

    def __post_init__(self):
        intervals = tuple((float(a), float(b)) for a, b in self.occlusion_intervals)
        for a, b in intervals:
            if a > b:
                raise ModelError(f"occlusion interval [{a}, {b}] is reversed")
        object.__setattr__(self, "occlusion_intervals", intervals)

    def occluded(self, t: float, tol: float = 1e-9) -> bool:
        return any(a - tol <= t <= b + tol for a, b in self.occlusion_intervals)


def simulate(
    dyn: DynamicsModel,
    meas: MeasurementModel,
    ctx_d: DynamicsContext,
    ctx_m: MeasurementContext,
    init: State,
    controls: Sequence[ControlInput],
    n: int,
    seed: int,
    track_id: str = "sim",
) -> tuple[Trajectory, Trajectory]:
    """Sample a latent trajectory and its noisy, possibly occluded observation."""
    if n < 2:
        raise BadLength(f"need at least 2 steps, got {n}")
    controls = list(controls)
    if controls and len(controls) != n - 1:
        raise BadLength(f"expected {n - 1} controls, got {len(controls)}")
    if not controls:
        controls = [ControlInput()] * (n - 1)
    rng = np.random.default_rng(seed)
    speed0 = init.speed or 0.0
    state = np.zeros(dyn.state_dim)
    state[0], state[1] = init.x, init.y
    state[2], state[3] = speed0 * math.cos(init.heading), speed0 * math.sin(init.heading)
    chol = np.linalg.cholesky(dyn.noise())
    heading = init.heading
    latent = np.zeros((n, dyn.state_dim))
    headings = np.zeros(n)
    latent[0], headings[0] = state, heading
    for k in range(n - 1):
        u = controls[k]
        dyn_k = dyn
        if dyn.kind == "coordinated_turn":
            dyn_k = DynamicsModel(dyn.kind, dyn.process_noise, dyn.dt, u.yaw_rate_command or dyn.turn_rate)
        state = dyn_k.transition() @ state + chol @ rng.standard_normal(dyn.state_dim)
        accel = u.accel_command * ctx_d.friction_scale
        if accel:
            c, s = math.cos(heading), math.sin(heading)
            state[0] += 0.5 * accel * dyn.dt**2 * c
            state[1] += 0.5 * accel * dyn.dt**2 * s
            state[2] += accel * dyn.dt * c
            state[3] += accel * dyn.dt * s
        v = math.hypot(state[2], state[3])
        if v > ctx_d.speed_cap:
            state[2:4] *= ctx_d.speed_cap / v
            v = ctx_d.speed_cap
        if v > HEADING_SPEED_EPS:
            heading = math.atan2(state[3], state[2])
        latent[k + 1], headings[k + 1] = state, heading
    t = init.t + np.arange(n) * dyn.dt
    speeds = np.hypot(latent[:, 2], latent[:, 3])
    latent_traj = Trajectory.from_arrays(
        track_id, t, latent[:, 0], latent[:, 1], headings, speed=speeds
    )
    noise = rng.standard_normal((n, 2)) * meas.position_noise_std
    drop_draw = rng.random(n)
    keep = np.array(
        [not (drop_draw[k] < meas.dropout_prob or ctx_m.occluded(t[k])) for k in range(n)]
    )
    if keep.sum() < 2:
        raise TooShort(int(keep.sum()))
    observed = Trajectory.from_arrays(
        track_id,
        t[keep],
        latent[keep, 0] + noise[keep, 0],
        latent[keep, 1] + noise[keep, 1],
        headings[keep],
    )
    return latent_traj, observed


@dataclass(frozen=True)
class Innovation:
    t: float
    residual: np.ndarray
    covariance: np.ndarray

    @property
    def nis(self) -> float:
        """Normalized innovation squared (Mahalanobis distance squared)."""
        return float(self.residual @ np.linalg.solve(self.covariance, self.residual))


@dataclass(frozen=True)
class FilterResult:
    estimates: Trajectory
    innovations: tuple
    means: np.ndarray
    covariances: np.ndarray
    updated: np.ndarray


def initial_belief(dyn: DynamicsModel, meas: MeasurementModel, z0, init_velocity_std: float,
                   init_accel_std: float) -> tuple[np.ndarray, np.ndarray]:
    mean = np.zeros(dyn.state_dim)
    mean[0:2] = z0
    diag = [meas.position_noise_std**2] * 2 + [init_velocity_std**2] * 2
    if dyn.order == 3:
        diag += [init_accel_std**2] * 2
    return mean, np.diag(diag)


def _schedule(t: np.ndarray, dt: float) -> list[tuple[float, int]]:
    """Per observation gap: (step length, number of steps)."""
    out = []
    for gap in np.diff(t):
        m = int(round(gap / dt))
        if m >= 1 and abs(gap - m * dt) <= 1e-6 * max(dt, 1.0):
            out.append((dt, m))
        else:
            out.append((float(gap), 1))
    return out


def filter(
    dyn: DynamicsModel,
    meas: MeasurementModel,
    observed: Trajectory,
    init_velocity_std: float = 30.0,
    init_accel_std: float = 10.0,
) -> FilterResult:
    """Kalman predict/update recursion over the observed positions.

    The belief starts at the first observation with a broad velocity
    prior. Gaps that are whole multiples of ``dyn.dt`` are bridged by
    prediction-only steps, which appear in the estimates but emit no
    innovation.

    Raises:
        SingularCovariance: if an innovation covariance cannot be inverted.
    """
    h = dyn.measurement_matrix()
    r = meas.covariance()
    z = observed.positions
    mean, cov = initial_belief(dyn, meas, z[0], init_velocity_std, init_accel_std)
    times = [float(observed.t[0])]
    means = [mean.copy()]
    covs = [cov.copy()]
    updated = [True]
    innovations = []
    eye = np.eye(dyn.state_dim)
    for k, (step, count) in enumerate(_schedule(observed.t, dyn.dt)):
        f = dyn.transition(step)
        q = dyn.noise(step)
        for j in range(count):
            mean = f @ mean
            cov = f @ cov @ f.T + q
            if j < count - 1:
                times.append(times[-1] + step)
                means.append(mean.copy())
                covs.append(cov.copy())
                updated.append(False)
        resid = z[k + 1] - h @ mean
        s = h @ cov @ h.T + r
        try:
            gain = np.linalg.solve(s, h @ cov).T
        except np.linalg.LinAlgError as exc:
            raise SingularCovariance(str(exc)) from exc
        if not np.all(np.isfinite(gain)):
            raise SingularCovariance("non-finite Kalman gain")
        mean = mean + gain @ resid
        ikh = eye - gain @ h
        cov = ikh @ cov @ ikh.T + gain @ r @ gain.T
        innovations.append(Innovation(float(observed.t[k + 1]), resid, s))
        times.append(float(observed.t[k + 1]))
        means.append(mean.copy())
        covs.append(cov.copy())
        updated.append(True)
    means_arr = np.array(means)
    vx, vy = means_arr[:, 2], means_arr[:, 3]
    speed = np.hypot(vx, vy)
    heading = np.where(speed > HEADING_SPEED_EPS, np.arctan2(vy, vx), float(observed.heading[0]))
    estimates = Trajectory.from_arrays(
        observed.id, times, means_arr[:, 0], means_arr[:, 1], heading,
        road_user_class=observed.road_user_class, speed=speed,
    )
    return FilterResult(estimates, tuple(innovations), means_arr, np.array(covs), np.array(updated))


def log_likelihood(dyn: DynamicsModel, meas: MeasurementModel, observed: Trajectory, **kw) -> float:
    """Prediction-error decomposition of the observation log-density (nats)."""
    total = 0.0
    for inn in filter(dyn, meas, observed, **kw).innovations:
        sign, logdet = np.linalg.slogdet(2.0 * np.pi * inn.covariance)
        if sign <= 0:
            raise SingularCovariance("innovation covariance not positive definite")
        total += -0.5 * (inn.nis + logdet)
    return total


def top_k_mean(values: np.ndarray, fraction: float = 0.05) -> float:
    if len(values) == 0:
        return 0.0
    k = max(1, math.ceil(fraction * len(values)))
    return float(np.mean(np.sort(values)[-k:]))


def anomaly_score(
    dyn: DynamicsModel, meas: MeasurementModel, observed: Trajectory, **kw
) -> tuple[np.ndarray, float]:
    """Per-update normalized innovation squared and its top-5% mean.

    Each step is divided by the measurement dimension so that a
    consistent model gives values around 1.
    """
    res = filter(dyn, meas, observed, **kw)
    per_step = np.array([inn.nis / MEAS_DIM for inn in res.innovations])
    return per_step, top_k_mean(per_step)
