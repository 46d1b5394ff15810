"""Benchmark task definitions: models, centralized laws, leader command
scripts, initial conditions, and kernel dispatch.

A Task owns everything the simulator and the distributed frameworks need:
per-agent true/model dynamics (model error enters as scaled acceleration
gain r1 or scaled wheelbase r2), the observation model, the centralized
controller, scripted observation changes (encoded as disturbance deltas),
and the closed-loop/planning kernels for its model family.
"""

from __future__ import annotations

import math
from typing import Callable, Optional

import numpy as np

from onevision import _kernels as K
from onevision.controllers import (
    CIRCLE,
    LINE,
    TRIANGLE,
    CentralController,
    FormationController,
    FormationSpec,
    LeaderFollowerPid,
    LeaderObstacleBangBang,
    LinearController,
)
from onevision.core import concat_blocks
from onevision.dynamics import (
    ConstantHoldObservation,
    DoubleIntegrator1D,
    KinematicBicycle,
    LtiDynamics,
    LtiObservation,
)

DT = 0.01

# task 2 geometry: the obstacle enters the leader's 20 m sensor range around
# tick 1500 under the nominal cruise profile; the reveal tick is scripted so
# the observation-disturbance sequence is state-independent.
OBSTACLE_POSITION = 35.0
OBSTACLE_REVEAL_TICK = 1500


class Task:
    """A complete simulation scenario. `family` selects the compiled kernels:
    one of "pid1d", "bang1d", "formation", "lti"."""

    def __init__(
        self,
        name: str,
        family: str,
        controller: CentralController,
        x0: np.ndarray,
        z0: np.ndarray,
        dist_mask: np.ndarray,
        metric_kind: Optional[str] = None,
        metric_args: Optional[dict] = None,
        dz_script: Optional[Callable[[int], np.ndarray]] = None,
        dz_noise_components: Optional[np.ndarray] = None,
        true_dynamics=None,
        model_dynamics=None,
        observation=None,
        lti_vterm: Optional[Callable[[int], np.ndarray]] = None,
    ):
        self.name = name
        self.family = family
        self.controller = controller
        self.n_agents = controller.n_agents
        self.nx = controller.nx
        self.nz = controller.nz
        self.nu = controller.nu
        self.dt = DT
        self.x0 = np.asarray(x0, dtype=np.float64)
        self.z0 = np.asarray(z0, dtype=np.float64)
        self.dist_mask = np.asarray(dist_mask, dtype=np.float64)
        self.metric_kind = metric_kind
        self.metric_args = metric_args or {}
        # per-component regret weight profile (position-dominant for the
        # vehicle tasks; config scalars multiply these diagonals)
        self.qx_weights = np.ones(self.nx)
        self.qu_weights = np.ones(self.nu)
        self._dz_script = dz_script
        self.dz_noise_components = dz_noise_components
        self.true_dynamics = true_dynamics
        self.model_dynamics = model_dynamics
        self.observation = observation or ConstantHoldObservation(self.nz)
        self._lti_vterm = lti_vterm
        if self.x0.shape[0] != self.n_agents * self.nx:
            raise ValueError("x0 has the wrong fleet dimension")
        if self.z0.shape[0] != self.n_agents * self.nz:
            raise ValueError("z0 has the wrong fleet dimension")

    # -- initial actuation: the centralized law on the initial condition ----

    def u_seed(self) -> np.ndarray:
        return self.controller.act(self.x0, self.z0, 0)

    # -- scripted observation deltas ----------------------------------------

    def dz_script(self, n_ticks: int) -> np.ndarray:
        if self._dz_script is None:
            return np.zeros((n_ticks, self.n_agents * self.nz))
        out = self._dz_script(n_ticks)
        if out.shape != (n_ticks, self.n_agents * self.nz):
            raise ValueError("dz script returned the wrong shape")
        return out

    # -- per-agent single steps ---------------------------------------------

    def dynamics(self, agent: int, model: bool):
        bank = self.model_dynamics if model else self.true_dynamics
        return bank[agent]

    def step(self, agent: int, x, u, t: int, model: bool) -> np.ndarray:
        return self.dynamics(agent, model).step(x, u, t)

    def obs_step(self, agent: int, z, t: int) -> np.ndarray:
        return self.observation.step(z, t)

    # -- closed-loop rollouts (oracle / anchor advance / forward prediction) --

    def roll(self, x0, z0, u_hold, t0: int, n: int, interval: int, dx, dz, model: bool):
        """Roll the centralized closed loop over [t0, t0+n], injecting the
        given per-tick deltas; returns (x, z, u) arrays of n+1 rows."""
        NX = self.n_agents * self.nx
        NZ = self.n_agents * self.nz
        NU = self.n_agents * self.nu
        out_x = np.empty((n + 1, NX))
        out_z = np.empty((n + 1, NZ))
        out_u = np.empty((n + 1, NU))
        x0 = np.asarray(x0, dtype=np.float64)
        z0 = np.asarray(z0, dtype=np.float64)
        u_hold = np.asarray(u_hold, dtype=np.float64)
        dx = np.asarray(dx, dtype=np.float64)
        dz = np.asarray(dz, dtype=np.float64)
        if self.family == "pid1d":
            dyn = self.dynamics(0, model)
            K.roll_pid1d(
                x0, z0, u_hold, t0, n, interval, dx, dz,
                self.dt, dyn.accel_gain, dyn.a_max, self.controller.params,
                out_x, out_z, out_u,
            )
        elif self.family == "bang1d":
            dyn = self.dynamics(0, model)
            K.roll_bang1d(
                x0, z0, u_hold, t0, n, interval, dx, dz,
                self.dt, dyn.accel_gain, dyn.a_max, self.controller.params,
                out_x, out_z, out_u,
            )
        elif self.family == "formation":
            dyn = self.dynamics(0, model)
            K.roll_formation(
                x0, z0, u_hold, t0, n, interval, dx, dz,
                self.dt, dyn.wheelbase, self.controller.spec.offsets, self.controller.params,
                out_x, out_z, out_u,
            )
        elif self.family == "lti":
            A = np.stack([self.dynamics(a, model).A for a in range(self.n_agents)])
            B = np.stack([self.dynamics(a, model).B for a in range(self.n_agents)])
            wdrift = np.zeros((max(n, 1), NX))
            mudrift = np.zeros((max(n, 1), NZ))
            for k in range(n):
                for a in range(self.n_agents):
                    wdrift[k, a * self.nx : (a + 1) * self.nx] = self.dynamics(a, model).drift(t0 + k)
                    mudrift[k, a * self.nz : (a + 1) * self.nz] = self.observation.drift(t0 + k)
            C = np.stack([np.asarray(self.observation.C) for _ in range(self.n_agents)])
            vterm = np.zeros((n + 1, NU))
            for k in range(n + 1):
                vterm[k] = self.controller.v_term(t0 + k)
            K.roll_lti(
                x0, z0, u_hold, t0, n, interval, dx, dz,
                A, B, wdrift, C, mudrift,
                self.controller.Kx, self.controller.Kz, vterm,
                out_x, out_z, out_u,
            )
        else:
            raise ValueError(f"no roll kernel for family {self.family!r}")
        return out_x, out_z, out_u

    # -- planning loss/gradient ----------------------------------------------

    def plan_loss_grad(
        self, agent: int, x0, u_frozen, u_blocks, interval: int, tx, tu, qx, qu, t0: int,
        width: float = 0.01,
    ):
        x0 = np.asarray(x0, dtype=np.float64)
        u_frozen = np.asarray(u_frozen, dtype=np.float64).reshape(-1, self.nu)
        u_blocks = np.asarray(u_blocks, dtype=np.float64).reshape(-1, self.nu)
        tx = np.asarray(tx, dtype=np.float64)
        tu = np.asarray(tu, dtype=np.float64)
        qx = np.asarray(qx, dtype=np.float64)
        qu = np.asarray(qu, dtype=np.float64)
        dyn = self.dynamics(agent, model=True)
        if self.family in ("pid1d", "bang1d"):
            return K.plan_di(
                x0, u_frozen, u_blocks, interval, tx, tu, qx, qu,
                self.dt, dyn.accel_gain, dyn.a_max, width,
            )
        if self.family == "formation":
            return K.plan_bicycle(
                x0, u_frozen, u_blocks, interval, tx, tu, qx, qu,
                self.dt, dyn.wheelbase, dyn.psi_max, dyn.a_max, dyn.steer_rate_max, width,
            )
        if self.family == "lti":
            L = u_frozen.shape[0] + u_blocks.shape[0] * interval
            warr = np.zeros((max(L - 1, 1), self.nx))
            for k in range(L - 1):
                warr[k] = dyn.drift(t0 + k)
            return K.plan_lti(x0, u_frozen, u_blocks, interval, tx, tu, qx, qu, dyn.A, dyn.B, warr)
        raise ValueError(f"no planning kernel for family {self.family!r}")


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def _leader_linear(r1: float = 1.0, r2: float = 1.0) -> Task:
    ctrl = LeaderFollowerPid()
    true_dyn = [DoubleIntegrator1D(DT, accel_gain=1.0) for _ in range(2)]
    model_dyn = [DoubleIntegrator1D(DT, accel_gain=r1) for _ in range(2)]
    x0 = np.array([0.0, 0.0, -ctrl.d_ref, 0.0])
    z0 = np.array([2.0, 0.0])
    mask = np.array([0.0, 1.0, 0.0, 1.0])  # disturbance on velocities only
    task = Task(
        "leader-linear", "pid1d", ctrl, x0, z0, mask,
        metric_kind="distance", metric_args={"d_ref": ctrl.d_ref, "leader": 0, "follower": 1},
        true_dynamics=true_dyn, model_dynamics=model_dyn,
    )
    task.qx_weights = np.array([1.0, 1e-3])
    task.qu_weights = np.array([1e-3])
    return task


def _leader_obstacle(r1: float = 1.0, r2: float = 1.0) -> Task:
    ctrl = LeaderObstacleBangBang()
    true_dyn = [DoubleIntegrator1D(DT, accel_gain=1.0) for _ in range(2)]
    model_dyn = [DoubleIntegrator1D(DT, accel_gain=r1) for _ in range(2)]
    d_ref = ctrl.params[K.PID1D_DREF]
    x0 = np.array([0.0, 0.0, -d_ref, 0.0])
    sentinel = LeaderObstacleBangBang.UNSEEN
    z0 = np.array([sentinel, sentinel])
    mask = np.array([0.0, 1.0, 0.0, 1.0])

    def script(n_ticks: int) -> np.ndarray:
        dz = np.zeros((n_ticks, 2))
        if OBSTACLE_REVEAL_TICK < n_ticks:
            dz[OBSTACLE_REVEAL_TICK, 0] = OBSTACLE_POSITION - sentinel
        return dz

    task = Task(
        "leader-obstacle", "bang1d", ctrl, x0, z0, mask,
        metric_kind="distance", metric_args={"d_ref": d_ref, "leader": 0, "follower": 1},
        dz_script=script, true_dynamics=true_dyn, model_dynamics=model_dyn,
    )
    task.qx_weights = np.array([1.0, 1e-3])
    task.qu_weights = np.array([1e-3])
    return task


def _formation_task(name: str, formations, script, r2: float = 1.0) -> Task:
    spec = FormationSpec.from_names(formations)
    ctrl = FormationController(spec)
    n = ctrl.n_agents
    true_dyn = [KinematicBicycle(DT, wheelbase=0.3) for _ in range(n)]
    model_dyn = [KinematicBicycle(DT, wheelbase=0.3 * r2) for _ in range(n)]
    slots = spec.slot_positions((0.0, 0.0, 0.0), 0)
    blocks = [np.array([0.0, 0.0, 0.0, 0.0, 0.0])]
    for j in range(spec.n_followers):
        blocks.append(np.array([slots[j, 0], slots[j, 1], 0.0, 0.0, 0.0]))
    x0 = concat_blocks(blocks)
    z0 = np.zeros(n * 3)
    v0, psi0 = _leader_command_profile(np.zeros(1))
    z0[0] = float(v0[0])  # leader command profile at the start of the run
    z0[1] = float(psi0[0])
    mask = np.tile(np.array([0.0, 0.0, 0.0, 1.0, 1.0]), n)  # velocity + steering angle
    task = Task(
        name, "formation", ctrl, x0, z0, mask,
        metric_kind="deviation", metric_args={"spec": spec, "leader": 0},
        dz_script=script, true_dynamics=true_dyn, model_dynamics=model_dyn,
    )
    task.qx_weights = np.array([1.0, 1.0, 0.1, 0.01, 0.01])
    task.qu_weights = np.array([0.02, 0.02])
    return task


# leader command profile shared by the 2D tasks: a smoothly varying slalom
# with speed modulation, the way a tele-operated leader drives. Encoded as
# per-tick observation deltas so command changes surface as measured
# observation disturbances.
def _leader_command_profile(t: np.ndarray):
    v_des = 1.5 + 0.25 * np.sin(2 * np.pi * t / 7.3 + 0.9)
    psi_des = 0.06 * np.sin(2 * np.pi * t / 5.1)
    return v_des, psi_des


def _leader_command_script(n_ticks: int) -> np.ndarray:
    dz = np.zeros((n_ticks, 12))
    tt = np.arange(n_ticks + 1) * DT
    v_des, psi_des = _leader_command_profile(tt)
    dz[:, 0] = np.diff(v_des)
    dz[:, 1] = np.diff(psi_des)
    return dz


def _formation_driving(r1: float = 1.0, r2: float = 1.0) -> Task:
    return _formation_task("formation-driving", [CIRCLE], _leader_command_script, r2)


def _formation_switching(r1: float = 1.0, r2: float = 1.0) -> Task:
    def script(n_ticks: int) -> np.ndarray:
        dz = _leader_command_script(n_ticks)
        if 1000 < n_ticks:
            dz[1000, 2] = 1.0  # triangle -> line
        return dz

    return _formation_task("formation-switching", [TRIANGLE, LINE], script, r2)


TASK_BUILDERS = {
    "leader-linear": _leader_linear,
    "leader-obstacle": _leader_obstacle,
    "formation-driving": _formation_driving,
    "formation-switching": _formation_switching,
}


def build_task(name: str, r1: float = 1.0, r2: float = 1.0) -> Task:
    if name not in TASK_BUILDERS:
        raise KeyError(
            f"unknown task {name!r}; registered tasks: {', '.join(sorted(TASK_BUILDERS))}"
        )
    return TASK_BUILDERS[name](r1=r1, r2=r2)


def build_lti_task(
    name: str,
    A_blocks,
    B_blocks,
    Kx: np.ndarray,
    Kz: np.ndarray,
    x0: np.ndarray,
    z0: np.ndarray,
    C: Optional[np.ndarray] = None,
    v: Optional[Callable[[int], np.ndarray]] = None,
    w: Optional[Callable[[int], np.ndarray]] = None,
    mu: Optional[Callable[[int], np.ndarray]] = None,
) -> Task:
    """Assemble an LTI verification scenario: per-agent dynamics blocks, a
    linear centralized law, and optional drift/affine terms."""
    n_agents = len(A_blocks)
    dyn = [LtiDynamics(A_blocks[a], B_blocks[a], w=w) for a in range(n_agents)]
    nz = (np.atleast_2d(C).shape[0] if C is not None else dyn[0].nx)
    obs = LtiObservation(C if C is not None else np.eye(nz), mu=mu)
    ctrl = LinearController(Kx, Kz, v=v, n_agents=n_agents)
    mask = np.ones(n_agents * dyn[0].nx)
    return Task(
        name, "lti", ctrl, x0, z0, mask,
        true_dynamics=dyn, model_dynamics=dyn, observation=obs,
        dz_noise_components=np.ones(n_agents * nz),
    )
