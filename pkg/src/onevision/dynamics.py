"""System and observation dynamics: contracts, concrete vehicle models,
LTI models, disturbance/noise sampling, and disturbance measurement.

Model error is expressed through constructor parameters: the agents'
model of a vehicle may carry a scaled acceleration gain (1D) or a scaled
wheelbase (2D) while the true plant keeps the nominal values.

All step functions are pure: equal arguments give bit-identical results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from onevision import _kernels as K
from onevision.core import Trajectory
from onevision.optim import autodiff as ad

SPECTRAL_RADIUS_TOL = 1e-9


def normalize_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    return theta - 2.0 * math.pi * math.ceil((theta - math.pi) / (2.0 * math.pi))


# ---------------------------------------------------------------------------
# typed vehicle states (API boundary; simulation arrays stay winding-free)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CarState1D:
    """1D vehicle: position (m) and velocity (m/s)."""

    p: float
    v: float

    def to_array(self) -> np.ndarray:
        return np.array([self.p, self.v])

    @classmethod
    def from_array(cls, a) -> "CarState1D":
        return cls(float(a[0]), float(a[1]))


@dataclass(frozen=True)
class CarState2D:
    """2D car: position (m), heading (rad, wrapped to (-pi, pi]), speed (m/s),
    steering angle (rad, clamped to the physical limit)."""

    px: float
    py: float
    theta: float
    v: float
    psi: float
    psi_max: float = 0.6

    def __post_init__(self):
        object.__setattr__(self, "theta", normalize_angle(self.theta))
        object.__setattr__(self, "psi", float(np.clip(self.psi, -self.psi_max, self.psi_max)))

    def to_array(self) -> np.ndarray:
        return np.array([self.px, self.py, self.theta, self.v, self.psi])

    @classmethod
    def from_array(cls, a, psi_max: float = 0.6) -> "CarState2D":
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]), float(a[4]), psi_max)


# ---------------------------------------------------------------------------
# dynamics models
# ---------------------------------------------------------------------------


class DoubleIntegrator1D:
    """p' = p + v dt, v' = v + gain * sat(a) dt.

    `gain` is the modeled-to-true acceleration ratio knob: the true plant
    uses gain = 1, a mismatched model uses gain != 1.
    """

    nx = 2
    nu = 1

    def __init__(self, dt: float = 0.01, accel_gain: float = 1.0, a_max: float = 3.0):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.dt = float(dt)
        self.accel_gain = float(accel_gain)
        self.a_max = float(a_max)

    def step(self, x, u, t=0):
        out = np.empty(2)
        K.di_step(
            np.asarray(x, dtype=np.float64),
            np.asarray(u, dtype=np.float64),
            self.dt,
            self.accel_gain,
            self.a_max,
            out,
        )
        return out

    def plan_step(self, x, u, t=0, width: float = 0.01):
        """Smooth-saturation variant used inside differentiated rollouts."""
        a = self.accel_gain * ad.smooth_clamp(u[0], -self.a_max, self.a_max, width)
        return ad.stack([x[0] + self.dt * x[1], x[1] + self.dt * a])


class KinematicBicycle:
    """Forward-Euler kinematic bicycle with saturated controls.

    State (px, py, theta, v, psi); control (accel, steer rate). theta is
    NOT wrapped here (winding-free integration); use `car2d_step` on
    CarState2D for the wrapped, typed variant.
    """

    nx = 5
    nu = 2

    def __init__(
        self,
        dt: float = 0.01,
        wheelbase: float = 0.3,
        psi_max: float = 0.6,
        a_max: float = 3.0,
        steer_rate_max: float = 3.0,
    ):
        if dt <= 0 or wheelbase <= 0:
            raise ValueError("dt and wheelbase must be positive")
        self.dt = float(dt)
        self.wheelbase = float(wheelbase)
        self.psi_max = float(psi_max)
        self.a_max = float(a_max)
        self.steer_rate_max = float(steer_rate_max)

    def step(self, x, u, t=0):
        out = np.empty(5)
        K.bicycle_step(
            np.asarray(x, dtype=np.float64),
            np.asarray(u, dtype=np.float64),
            self.dt,
            self.wheelbase,
            self.psi_max,
            self.a_max,
            self.steer_rate_max,
            out,
        )
        return out

    def plan_step(self, x, u, t=0, width: float = 0.01):
        a = ad.smooth_clamp(u[0], -self.a_max, self.a_max, width)
        s = ad.smooth_clamp(u[1], -self.steer_rate_max, self.steer_rate_max, width)
        th, v, psi = x[2], x[3], x[4]
        psi_new = ad.smooth_clamp(psi + self.dt * s, -self.psi_max, self.psi_max, width)
        return ad.stack(
            [
                x[0] + self.dt * v * ad.cos(th),
                x[1] + self.dt * v * ad.sin(th),
                th + self.dt * v * ad.tan(psi) / self.wheelbase,
                v + self.dt * a,
                psi_new,
            ]
        )


class LtiDynamics:
    """x' = A x + B u + w(t). The open loop must not be exponentially
    unstable: spectral radius of A is checked at construction."""

    def __init__(self, A, B, w: Optional[Callable[[int], np.ndarray]] = None):
        self.A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        self.B = np.atleast_2d(np.asarray(B, dtype=np.float64))
        if self.A.shape[0] != self.A.shape[1] or self.B.shape[0] != self.A.shape[0]:
            raise ValueError("A must be square and share its row count with B")
        rho = float(np.max(np.abs(np.linalg.eigvals(self.A))))
        if rho > 1.0 + SPECTRAL_RADIUS_TOL:
            raise ValueError(f"spectral radius of A is {rho:.12f} > 1")
        self.w = w
        self.nx = self.A.shape[0]
        self.nu = self.B.shape[1]

    def drift(self, t: int) -> np.ndarray:
        if self.w is None:
            return np.zeros(self.nx)
        return np.asarray(self.w(t), dtype=np.float64)

    def step(self, x, u, t=0):
        out = np.empty(self.nx)
        K.lti_step(
            np.asarray(x, dtype=np.float64),
            np.asarray(u, dtype=np.float64),
            self.A,
            self.B,
            self.drift(t),
            out,
        )
        return out

    def plan_step(self, x, u, t=0, width: float = 0.01):
        drift = self.drift(t)
        rows = []
        for r in range(self.nx):
            acc = drift[r]
            for c in range(self.nx):
                acc = acc + self.A[r, c] * x[c]
            for c in range(self.nu):
                acc = acc + self.B[r, c] * u[c]
            rows.append(acc)
        return ad.stack(rows)


# ---------------------------------------------------------------------------
# observation models
# ---------------------------------------------------------------------------


class ConstantHoldObservation:
    """z' = z: external quantities are modeled as constant; real changes
    arrive as measured observation disturbances."""

    def __init__(self, nz: int):
        self.nz = int(nz)

    def step(self, z, t=0):
        return np.array(z, dtype=np.float64)


class LtiObservation:
    """z' = C z + mu(t) with spectral radius of C at most 1."""

    def __init__(self, C, mu: Optional[Callable[[int], np.ndarray]] = None):
        self.C = np.atleast_2d(np.asarray(C, dtype=np.float64))
        rho = float(np.max(np.abs(np.linalg.eigvals(self.C))))
        if rho > 1.0 + SPECTRAL_RADIUS_TOL:
            raise ValueError(f"spectral radius of C is {rho:.12f} > 1")
        self.mu = mu
        self.nz = self.C.shape[0]

    def drift(self, t: int) -> np.ndarray:
        if self.mu is None:
            return np.zeros(self.nz)
        return np.asarray(self.mu(t), dtype=np.float64)

    def step(self, z, t=0):
        return self.C @ np.asarray(z, dtype=np.float64) + self.drift(t)


# ---------------------------------------------------------------------------
# disturbances
# ---------------------------------------------------------------------------


@dataclass
class DisturbanceRealization:
    """Pre-sampled additive state/observation disturbances for a full run.

    Sampled once per (task, seed) and then shared verbatim between the
    actual rollout and the ideal-trajectory oracle, which makes the delta
    sequences state-independent by construction. dx has shape (T, N*nx),
    dz has shape (T, N*nz); dx(t)/dz(t) act on the step from t to t+1.
    """

    dx: np.ndarray
    dz: np.ndarray
    seed: int

    def __post_init__(self):
        self.dx = np.asarray(self.dx, dtype=np.float64)
        self.dz = np.asarray(self.dz, dtype=np.float64)

    @property
    def n_ticks(self) -> int:
        return self.dx.shape[0]

    def dx_trajectory(self, agent: int, nx: int) -> Trajectory:
        return Trajectory.from_array(0, self.dx[:, agent * nx : (agent + 1) * nx])

    def dz_trajectory(self, agent: int, nz: int) -> Trajectory:
        return Trajectory.from_array(0, self.dz[:, agent * nz : (agent + 1) * nz])

    def checksum(self) -> float:
        return float(self.dx.sum() + self.dz.sum())


def sample_noise(
    strength: float,
    n_ticks: int,
    dim: int,
    rng: np.random.Generator,
    rate_hz: int = 100,
) -> np.ndarray:
    """I.i.d. zero-mean Gaussian per-tick noise, std = strength per tick at
    100 Hz (scaled so that noise power per second is rate-invariant)."""
    if strength < 0:
        raise ValueError("noise strength must be non-negative")
    if strength == 0.0:
        return np.zeros((n_ticks, dim))
    std = strength * math.sqrt(100.0 / rate_hz)
    return std * rng.standard_normal((n_ticks, dim))


def step_true(model, dx: Trajectory, x, u, t: int) -> np.ndarray:
    """One tick of the true plant: the model step plus the realized
    disturbance at t. t outside the realization range is a harness bug."""
    return model.step(x, u, t) + dx.at(t)


def measure_disturbance(x_next, x, u, t: int, model) -> np.ndarray:
    """delta_x(t) = x(t+1) - model(x(t), u(t), t), measured one tick late."""
    return np.asarray(x_next, dtype=np.float64) - model.step(x, u, t)


def measure_observation_disturbance(z_next, z, t: int, model) -> np.ndarray:
    """delta_z(t) = z(t+1) - h_model(z(t), t)."""
    return np.asarray(z_next, dtype=np.float64) - model.step(z, t)


def car2d_step(state: CarState2D, u, wheelbase: float, dt: float) -> CarState2D:
    """Typed kinematic-bicycle step: forward Euler, heading renormalized,
    steering clamped to the physical limit."""
    if dt <= 0 or wheelbase <= 0:
        raise ValueError("dt and wheelbase must be positive")
    model = KinematicBicycle(dt=dt, wheelbase=wheelbase, psi_max=state.psi_max)
    nxt = model.step(state.to_array(), np.asarray(u, dtype=np.float64))
    return CarState2D.from_array(nxt, psi_max=state.psi_max)
