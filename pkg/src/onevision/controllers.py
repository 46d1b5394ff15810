"""Centralized controller specifications for the benchmark tasks.

A centralized controller is a pure function u = act(x, z, t) over the
concatenated fleet state and observation. It is evaluated on predicted
inputs just as readily as on measured ones, which is what the distributed
frameworks rely on. Every law hard-clamps its outputs to the declared
actuation bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from onevision import _kernels as K

# ---------------------------------------------------------------------------
# formation geometry
# ---------------------------------------------------------------------------

TRIANGLE = "triangle"
LINE = "line"
CIRCLE = "circle"

_BUILTIN_OFFSETS = {
    TRIANGLE: [(-1.0, 1.0, 0.0), (-1.0, -1.0, 0.0), (-2.0, 0.0, 0.0)],
    LINE: [(-1.0, 0.0, 0.0), (-2.0, 0.0, 0.0), (-3.0, 0.0, 0.0)],
    # three followers at 120 degree spacing on a 1.5 m radius
    CIRCLE: [
        (1.5 * math.cos(a), 1.5 * math.sin(a), 0.0)
        for a in (math.pi / 2, math.pi / 2 + 2 * math.pi / 3, math.pi / 2 + 4 * math.pi / 3)
    ],
}


@dataclass
class FormationSpec:
    """Ordered set of formations; each is one (dx, dy, heading) slot offset
    per follower in the leader frame. The active formation index travels in
    the leader's observation vector."""

    names: list
    offsets: np.ndarray  # (n_formations, n_followers, 3)

    @classmethod
    def from_names(cls, names) -> "FormationSpec":
        names = list(names)
        unknown = [n for n in names if n not in _BUILTIN_OFFSETS]
        if unknown:
            raise ValueError(f"unknown formation id(s) {unknown}; declared: {sorted(_BUILTIN_OFFSETS)}")
        offsets = np.array([_BUILTIN_OFFSETS[n] for n in names], dtype=np.float64)
        if not np.all(np.isfinite(offsets)):
            raise ValueError("formation offsets must be finite")
        return cls(names=names, offsets=offsets)

    @property
    def n_followers(self) -> int:
        return self.offsets.shape[1]

    def index_of(self, name: str) -> int:
        return self.names.index(name)

    def slot_positions(self, leader_pose, formation_index: int) -> np.ndarray:
        """World positions of every follower slot for a leader (px, py, theta)."""
        px, py, th = float(leader_pose[0]), float(leader_pose[1]), float(leader_pose[2])
        c, s = math.cos(th), math.sin(th)
        idx = int(np.clip(formation_index, 0, self.offsets.shape[0] - 1))
        out = np.empty((self.n_followers, 2))
        for j in range(self.n_followers):
            ox, oy = self.offsets[idx, j, 0], self.offsets[idx, j, 1]
            out[j, 0] = px + c * ox - s * oy
            out[j, 1] = py + s * ox + c * oy
        return out


# ---------------------------------------------------------------------------
# controllers
# ---------------------------------------------------------------------------


class CentralController:
    """Base contract: deterministic u = act(x, z, t) with clamped output."""

    n_agents: int
    nx: int
    nz: int
    nu: int

    def act(self, x: np.ndarray, z: np.ndarray, t: int) -> np.ndarray:
        raise NotImplementedError

    @property
    def u_bounds(self) -> np.ndarray:
        """(nu,) per-component absolute actuation bound for one agent."""
        raise NotImplementedError


class LeaderFollowerPid(CentralController):
    """1D leader/follower: the leader tracks the target speed carried in its
    observation, the follower regulates speed difference and gap.

    The default gains settle the closed loop within the shortest delay
    window (leader deadbeat per 50 ms control step, follower critically
    damped at 10 rad/s), which is what keeps the delay-compensated
    frameworks' performance flat across communication delays."""

    n_agents = 2
    nx = 2
    nz = 1
    nu = 1

    def __init__(self, kp: float = 20.0, kd: float = 100.0, d_ref: float = 1.5, a_max: float = 3.0):
        self.kp, self.kd, self.d_ref, self.a_max = kp, kd, d_ref, a_max
        self.params = np.zeros(10)
        self.params[K.PID1D_KP] = kp
        self.params[K.PID1D_KD] = kd
        self.params[K.PID1D_DREF] = d_ref
        self.params[K.PID1D_AMAX] = a_max

    def act(self, x, z, t=0):
        u = np.empty(2)
        K.pid_leader_follower_u(
            np.asarray(x, dtype=np.float64), np.asarray(z, dtype=np.float64), self.params, u
        )
        return u

    @property
    def u_bounds(self):
        return np.array([self.a_max])


class LeaderObstacleBangBang(CentralController):
    """1D leader/follower with bang-bang speed control; the leader brakes
    when the sensed obstacle is within its braking envelope."""

    n_agents = 2
    nx = 2
    nz = 1
    nu = 1

    UNSEEN = 1.0e6  # sentinel observation while the obstacle is out of range

    def __init__(
        self,
        v_ref: float = 2.0,
        d_ref: float = 1.5,
        a_max: float = 3.0,
        sensor_range: float = 20.0,
        brake_margin: float = 2.0,
        deadband: float = 0.05,
        gap_gain: float = 0.8,
        gap_tol: float = 0.05,
    ):
        self.a_max = a_max
        self.params = np.zeros(10)
        self.params[K.PID1D_DREF] = d_ref
        self.params[K.PID1D_AMAX] = a_max
        self.params[4] = v_ref
        self.params[K.BANG_RANGE] = sensor_range
        self.params[K.BANG_MARGIN] = brake_margin
        self.params[K.BANG_DEAD] = deadband
        self.params[K.BANG_GAPGAIN] = gap_gain
        self.params[K.BANG_GAPTOL] = gap_tol

    def act(self, x, z, t=0):
        u = np.empty(2)
        K.bang_leader_follower_u(
            np.asarray(x, dtype=np.float64), np.asarray(z, dtype=np.float64), self.params, u
        )
        return u

    @property
    def u_bounds(self):
        return np.array([self.a_max])


class FormationController(CentralController):
    """2D fleet: leader follows the external (v_des, psi_des) command in its
    observation; each follower steers a reference point ahead of its axle
    toward its formation slot (feedback-linearized tracking) and adds a
    rotational repulsive term for every fleet member closer than d_avoid."""

    nx = 5
    nz = 3
    nu = 2

    def __init__(
        self,
        spec: FormationSpec,
        wheelbase: float = 0.3,
        d_rp: float = 0.2,
        k_r: float = 2.0,
        k_v: float = 2.0,
        k_psi: float = 4.0,
        k_rep: float = 1.5,
        d_avoid: float = 1.0,
        a_max: float = 3.0,
        steer_rate_max: float = 3.0,
        psi_max: float = 0.6,
        v_floor: float = 0.2,
    ):
        self.spec = spec
        self.n_agents = spec.n_followers + 1
        self.a_max = a_max
        self.steer_rate_max = steer_rate_max
        self.params = np.zeros(11)
        self.params[K.FORM_L] = wheelbase
        self.params[K.FORM_DRP] = d_rp
        self.params[K.FORM_KR] = k_r
        self.params[K.FORM_KV] = k_v
        self.params[K.FORM_KPSI] = k_psi
        self.params[K.FORM_KREP] = k_rep
        self.params[K.FORM_DAVOID] = d_avoid
        self.params[K.FORM_AMAX] = a_max
        self.params[K.FORM_SDOTMAX] = steer_rate_max
        self.params[K.FORM_PSIMAX] = psi_max
        self.params[K.FORM_VFLOOR] = v_floor

    def act(self, x, z, t=0):
        u = np.empty(2 * self.n_agents)
        K.formation_u(
            np.asarray(x, dtype=np.float64),
            np.asarray(z, dtype=np.float64),
            self.spec.offsets,
            self.params,
            u,
        )
        return u

    @property
    def u_bounds(self):
        return np.array([self.a_max, self.steer_rate_max])


class LinearController(CentralController):
    """u = -Kx x + Kz z + v(t); the LTI specification used by the
    stability-verification suite."""

    def __init__(
        self,
        Kx: np.ndarray,
        Kz: np.ndarray,
        v: Optional[Callable[[int], np.ndarray]] = None,
        n_agents: int = 1,
    ):
        self.Kx = np.atleast_2d(np.asarray(Kx, dtype=np.float64))
        self.Kz = np.atleast_2d(np.asarray(Kz, dtype=np.float64))
        self.v = v
        self.n_agents = n_agents
        if self.Kx.shape[0] != self.Kz.shape[0]:
            raise ValueError("Kx and Kz row counts disagree")
        self.nx = self.Kx.shape[1] // n_agents
        self.nz = self.Kz.shape[1] // n_agents
        self.nu = self.Kx.shape[0] // n_agents

    def v_term(self, t: int) -> np.ndarray:
        if self.v is None:
            return np.zeros(self.Kx.shape[0])
        return np.asarray(self.v(t), dtype=np.float64)

    def act(self, x, z, t=0):
        u = np.empty(self.Kx.shape[0])
        K.lti_u(
            np.asarray(x, dtype=np.float64),
            np.asarray(z, dtype=np.float64),
            self.Kx,
            self.Kz,
            self.v_term(t),
            u,
        )
        return u

    @property
    def u_bounds(self):
        return np.full(self.nu, np.inf)
