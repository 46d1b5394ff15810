"""Distributed controller frameworks.

Every framework implements the same per-agent contract: at each tick the
agent ingests its delayed local sample and any delivered peer messages and
emits one broadcast message; on replanning ticks (every control interval)
it commits the actuation that will take effect one actuation delay later.

OneVision composes three steps at each replan:

1. forward prediction - reconstruct and extrapolate the ideal fleet
   trajectory from delay-limited information, anchored at the newest tick
   whose disturbance measurements from every agent have arrived (the
   anchor is advanced through the closed loop with full measured deltas,
   so it tracks the ideal trajectory exactly when sensing is noiseless);
2. self state estimation - dead-reckon the agent's own state forward
   through its observation + actuation delay using committed actuations;
3. local planning - minimize the predicted deviation from the ideal
   trajectory over a receding horizon, warm-started from the previous
   plan and never returning anything worse than copying the predicted
   ideal actuation.

The baselines share the message bus and the replan cadence: Naive feeds
the freshest (stale) fleet snapshot straight into the centralized law,
Local additionally dead-reckons its own state/observation through its
delays, ConstU additionally rolls other agents forward holding their last
known actuation constant.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from onevision.core import DelaySpec, Trajectory, available_history
from onevision.optim.lbfgs import LbfgsOptions, LbfgsResult, lbfgs_minimize
from onevision.tasks import Task

# sigmoid width of the saturation-derivative surrogate inside differentiated
# rollouts (values use the hard clamp; only gradients are smoothed)
PLAN_CLAMP_WIDTH = 0.01


@dataclass(frozen=True)
class RegretWeights:
    """Per-agent quadratic weights of the regret loss: Qx positive
    semi-definite, Qu positive definite, both symmetric."""

    Qx: np.ndarray
    Qu: np.ndarray

    def __post_init__(self):
        Qx = np.atleast_2d(np.asarray(self.Qx, dtype=np.float64))
        Qu = np.atleast_2d(np.asarray(self.Qu, dtype=np.float64))
        object.__setattr__(self, "Qx", Qx)
        object.__setattr__(self, "Qu", Qu)
        for name, M in (("Qx", Qx), ("Qu", Qu)):
            if np.max(np.abs(M - M.T)) > 1e-12:
                raise ValueError(f"{name} must be symmetric")
        ex = np.linalg.eigvalsh(Qx)
        eu = np.linalg.eigvalsh(Qu)
        if ex.min() < -1e-12:
            raise ValueError("Qx must be positive semi-definite")
        if eu.min() <= 0:
            raise ValueError("Qu must be positive definite")

    @classmethod
    def from_scalars(cls, nx: int, nu: int, qx: float = 1.0, qu: float = 0.1) -> "RegretWeights":
        return cls(qx * np.eye(nx), qu * np.eye(nu))

    def qx_diag(self) -> np.ndarray:
        if np.max(np.abs(self.Qx - np.diag(np.diag(self.Qx)))) > 0:
            raise NotImplementedError("planning kernels require diagonal Qx")
        return np.diag(self.Qx).copy()

    def qu_diag(self) -> np.ndarray:
        if np.max(np.abs(self.Qu - np.diag(np.diag(self.Qu)))) > 0:
            raise NotImplementedError("planning kernels require diagonal Qu")
        return np.diag(self.Qu).copy()


# ---------------------------------------------------------------------------
# broadcast message encoding
# ---------------------------------------------------------------------------
#
# A message is five segments in fixed order (x, z, dx, dz, u), each with a
# 16-byte header (agent id: u32, start tick: i64, count: u32) followed by
# count * dim packed little-endian 64-bit floats. Empty segments carry
# count = 0. One message per agent per tick keeps the payload size bounded.

SEGMENT_ORDER = ("x", "z", "dx", "dz", "u")
_HEADER = struct.Struct("<IqI")


def encode_message(agent: int, segments: Dict[str, Tuple[int, np.ndarray]]) -> bytes:
    parts = []
    for kind in SEGMENT_ORDER:
        start, data = segments.get(kind, (0, None))
        if data is None or data.size == 0:
            parts.append(_HEADER.pack(agent, 0, 0))
            continue
        data = np.ascontiguousarray(np.atleast_2d(np.asarray(data, dtype="<f8")))
        parts.append(_HEADER.pack(agent, start, data.shape[0]))
        parts.append(data.tobytes())
    return b"".join(parts)


def decode_message(blob: bytes, dims: Dict[str, int]) -> Tuple[int, Dict[str, Tuple[int, np.ndarray]]]:
    segments: Dict[str, Tuple[int, np.ndarray]] = {}
    agent = -1
    off = 0
    for kind in SEGMENT_ORDER:
        agent, start, count = _HEADER.unpack_from(blob, off)
        off += _HEADER.size
        dim = dims[kind]
        if count:
            flat = np.frombuffer(blob, dtype="<f8", count=count * dim, offset=off)
            off += count * dim * 8
            segments[kind] = (start, flat.reshape(count, dim).astype(np.float64))
    if off != len(blob):
        raise ValueError("trailing bytes in message")
    return agent, segments


# ---------------------------------------------------------------------------
# prediction container and diagnostics
# ---------------------------------------------------------------------------


@dataclass
class IdealPrediction:
    """One agent's reconstruction/extrapolation of the ideal fleet
    trajectory. Arrays cover ticks [start, start + len); `anchor_tick` is
    the tick whose value was carried over (through full-delta closed-loop
    advancement) from the previous prediction, and `anchor_x` its fleet
    state."""

    agent: int
    start: int
    x: np.ndarray
    z: np.ndarray
    u: np.ndarray
    anchor_tick: int
    anchor_x: np.ndarray

    def row(self, tick: int) -> int:
        i = tick - self.start
        if not (0 <= i < self.x.shape[0]):
            raise IndexError(f"tick {tick} outside prediction span")
        return i


@dataclass
class PlanDebug:
    tau: int
    agent: int
    anchor_tick: int
    anchor_x: np.ndarray
    estimate: np.ndarray
    pred_x_at_apply: np.ndarray
    pred_u_at_apply: np.ndarray
    u_first: np.ndarray
    loss: float
    copy_loss: float
    iterations: int
    converged: bool
    flag: str


# ---------------------------------------------------------------------------
# agent base: shared history bookkeeping and messaging
# ---------------------------------------------------------------------------


class AgentBrain:
    """Shared per-agent state: delayed local sensing, measured disturbance
    bookkeeping, peer trajectory splicing, and actuation commitment."""

    name = "base"

    def __init__(
        self,
        agent: int,
        task: Task,
        delays: DelaySpec,
        horizon: int = 20,
        weights: Optional[RegretWeights] = None,
        lbfgs_opts: Optional[LbfgsOptions] = None,
        trace: Optional[list] = None,
    ):
        self.agent = agent
        self.task = task
        self.delays = delays
        self.interval = delays.control_interval
        self.horizon = horizon
        self.weights = weights or RegretWeights.from_scalars(task.nx, task.nu)
        self.lbfgs_opts = lbfgs_opts or LbfgsOptions()
        self.trace = trace
        self.n = task.n_agents
        self.nx, self.nz, self.nu = task.nx, task.nz, task.nu
        self._dims = {"x": task.nx, "z": task.nz, "dx": task.nx, "dz": task.nz, "u": task.nu}

        L = delays.history_depth()
        x0, z0 = task.x0, task.z0
        useed = task.u_seed()
        self.u_bounds = task.controller.u_bounds

        def blk(vec, j, d):
            return vec[j * d : (j + 1) * d]

        self.x_hist = [Trajectory.constant(-L, L, blk(x0, j, self.nx)) for j in range(self.n)]
        self.z_hist = [Trajectory.constant(-L, L, blk(z0, j, self.nz)) for j in range(self.n)]
        self.dx_hist = [Trajectory.constant(-L, L, np.zeros(self.nx)) for j in range(self.n)]
        self.dz_hist = [Trajectory.constant(-L, L, np.zeros(self.nz)) for j in range(self.n)]
        # own committed actuation: the world applies the seed until the first
        # planned actuation can take effect
        self.own_u = Trajectory.constant(-L, L + delays.act, blk(useed, agent, self.nu))
        self.u_hist = [
            self.own_u if j == agent else Trajectory.constant(-L, L, blk(useed, j, self.nu))
            for j in range(self.n)
        ]
        # per-lattice-block actuation values already decided (ZOH blocks)
        self.block_values: Dict[int, np.ndarray] = {}
        k = 0
        while k * self.interval < delays.act + self.interval:
            self.block_values[k * self.interval] = blk(useed, agent, self.nu).copy()
            k += 1
        # prediction anchor: the initialization constant at a pre-run tick
        self.anchor_tick = -(delays.obs + delays.comm + 1)
        self.anchor_x = x0.copy()
        self.anchor_z = z0.copy()
        self.anchor_u = useed.copy()
        self.prev_blocks: Optional[np.ndarray] = None
        self.prev_ff = 0
        self.diagnostics: List[str] = []

    # -- per-tick bookkeeping -------------------------------------------------

    def observe(self, t: int, x_sample: np.ndarray, z_sample: np.ndarray, inbox: List[bytes]) -> bytes:
        """Ingest the delayed local sample and delivered peer messages; emit
        this tick's broadcast."""
        for blob in inbox:
            sender, segments = decode_message(blob, self._dims)
            assert sender != self.agent, "bus must not deliver an agent its own message"
            self._splice(sender, segments)

        mt = t - self.delays.obs
        segments: Dict[str, Tuple[int, np.ndarray]] = {}
        if mt >= 0:
            i = self.agent
            assert self.x_hist[i].end == mt, "own sample stream must be contiguous"
            self.x_hist[i].append(x_sample)
            self.z_hist[i].append(z_sample)
            segments["x"] = (mt, np.asarray(x_sample, dtype=np.float64).reshape(1, -1))
            segments["z"] = (mt, np.asarray(z_sample, dtype=np.float64).reshape(1, -1))
            if mt - 1 >= 0:
                dyn = self.task.dynamics(i, model=True)
                dx = self.x_hist[i].at(mt) - dyn.step(
                    self.x_hist[i].at(mt - 1), self.own_u.at(mt - 1), mt - 1
                )
                dz = self.z_hist[i].at(mt) - self.task.obs_step(i, self.z_hist[i].at(mt - 1), mt - 1)
                self.dx_hist[i].append(dx)
                self.dz_hist[i].append(dz)
                segments["dx"] = (mt - 1, dx.reshape(1, -1))
                segments["dz"] = (mt - 1, dz.reshape(1, -1))
        if t >= 0:
            segments["u"] = (t, np.asarray(self.own_u.at(t), dtype=np.float64).reshape(1, -1))
        return encode_message(self.agent, segments)

    def _splice(self, sender: int, segments: Dict[str, Tuple[int, np.ndarray]]) -> None:
        banks = {
            "x": self.x_hist,
            "z": self.z_hist,
            "dx": self.dx_hist,
            "dz": self.dz_hist,
            "u": self.u_hist,
        }
        for kind, (start, rows) in segments.items():
            traj = banks[kind][sender]
            assert traj.end == start, (
                f"non-contiguous {kind} segment from agent {sender}: "
                f"have through {traj.end}, got start {start}"
            )
            for r in range(rows.shape[0]):
                traj.append(rows[r])

    # -- replan plumbing shared by all frameworks ------------------------------

    def replan(self, tau: int) -> Tuple[int, np.ndarray]:
        raise NotImplementedError

    def _commit(self, tau: int, per_tick: np.ndarray) -> Tuple[int, np.ndarray]:
        """Record interval ticks of actuation starting at tau + act delay.
        Applied controls are hard-clamped to the declared bounds."""
        first = tau + self.delays.act
        per_tick = np.clip(per_tick, -self.u_bounds, self.u_bounds)
        assert self.own_u.end == first, "commitments must be contiguous"
        for k in range(self.interval):
            self.own_u.append(per_tick[k])
        return first, per_tick

    def self_estimate(self, tau: int) -> np.ndarray:
        """Dead-reckon own state from the newest sample to tau + act delay
        using the committed actuation history (model only, no deltas)."""
        cuts = available_history(self.agent, tau, self.delays, self.n)
        t0 = tau - self.delays.obs
        assert t0 <= cuts.own_x
        x = np.array(self.x_hist[self.agent].at(t0))
        for s in range(t0, tau + self.delays.act):
            assert s <= cuts.own_u
            if s >= 0:
                x = self.task.step(self.agent, x, self.own_u.at(s), s, model=True)
        return x

    def _stale_fleet(self, tau: int) -> Tuple[np.ndarray, np.ndarray]:
        """Freshest-permitted fleet snapshot: own data at tau - obs, peer
        data at tau - obs - comm."""
        cuts = available_history(self.agent, tau, self.delays, self.n)
        x = np.empty(self.n * self.nx)
        z = np.empty(self.n * self.nz)
        for j in range(self.n):
            tj = cuts.own_x if j == self.agent else cuts.other_x
            x[j * self.nx : (j + 1) * self.nx] = self.x_hist[j].at(tj)
            z[j * self.nz : (j + 1) * self.nz] = self.z_hist[j].at(tj)
        return x, z

    def _zoh_tile(self, u_own: np.ndarray) -> np.ndarray:
        return np.tile(np.asarray(u_own, dtype=np.float64), (self.interval, 1))


# ---------------------------------------------------------------------------
# OneVision
# ---------------------------------------------------------------------------


class OneVisionBrain(AgentBrain):
    name = "onevision"

    # -- step 1: forward prediction -------------------------------------------

    def forward_predict(self, tau: int) -> IdealPrediction:
        """Reconstruct/extrapolate the ideal fleet trajectory over
        [anchor, first_free + H * interval)."""
        d = self.delays
        cuts = available_history(self.agent, tau, d, self.n)
        tau_init = tau - d.obs - d.comm - 1

        # advance the anchor through the closed loop with full measured deltas
        target = tau_init
        if target > self.anchor_tick:
            t0 = max(self.anchor_tick, 0)
            nadv = target - t0
            if nadv > 0:
                dx = np.zeros((nadv, self.n * self.nx))
                dz = np.zeros((nadv, self.n * self.nz))
                for j in range(self.n):
                    last = cuts.own_x - 1 if j == self.agent else cuts.other_x - 1
                    assert target - 1 <= last, "anchor advance needs delivered deltas"
                    dx[:, j * self.nx : (j + 1) * self.nx] = (
                        self.dx_hist[j].window(t0, target).array()
                    )
                    dz[:, j * self.nz : (j + 1) * self.nz] = (
                        self.dz_hist[j].window(t0, target).array()
                    )
                ax, az, au = self.task.roll(
                    self.anchor_x, self.anchor_z, self.anchor_u, t0, nadv, self.interval,
                    dx, dz, model=True,
                )
                self.anchor_x = ax[nadv].copy()
                self.anchor_z = az[nadv].copy()
                self.anchor_u = au[nadv].copy()
            self.anchor_tick = target

        # roll the prediction span, injecting deltas where available:
        # own through tau - obs - 1, peers only at the anchor tick
        ff = -((-(tau + d.act)) // self.interval) * self.interval
        pred_end = ff + self.horizon * self.interval
        t_start = max(tau_init, 0)
        n = pred_end - 1 - t_start
        dx = np.zeros((n, self.n * self.nx))
        dz = np.zeros((n, self.n * self.nz))
        i = self.agent
        own_last = cuts.own_x - 1  # newest measurable own delta
        hi = min(own_last + 1, t_start + n)
        if hi > t_start:
            dx[: hi - t_start, i * self.nx : (i + 1) * self.nx] = (
                self.dx_hist[i].window(t_start, hi).array()
            )
            dz[: hi - t_start, i * self.nz : (i + 1) * self.nz] = (
                self.dz_hist[i].window(t_start, hi).array()
            )
        if tau_init >= 0:
            for j in range(self.n):
                if j == i:
                    continue
                dx[0, j * self.nx : (j + 1) * self.nx] = self.dx_hist[j].at(tau_init)
                dz[0, j * self.nz : (j + 1) * self.nz] = self.dz_hist[j].at(tau_init)
        px, pz, pu = self.task.roll(
            self.anchor_x, self.anchor_z, self.anchor_u, t_start, n, self.interval, dx, dz,
            model=True,
        )
        return IdealPrediction(
            agent=i, start=t_start, x=px, z=pz, u=pu,
            anchor_tick=tau_init, anchor_x=self.anchor_x.copy(),
        )

    # -- step 3: local planning ------------------------------------------------

    def local_plan(
        self, estimate: np.ndarray, prediction: IdealPrediction, tau: int
    ) -> Tuple[np.ndarray, LbfgsResult, float]:
        """Minimize predicted regret over the window [tau + act, ff + H*interval);
        returns the H ZOH block values (one per lattice block from ff on).

        The result never scores worse than the warm start or than copying
        the predicted ideal actuation.
        """
        d = self.delays
        i = self.agent
        H = self.horizon
        interval = self.interval
        apply_tick = tau + d.act
        ff = -((-apply_tick) // interval) * interval
        n_frozen = ff - apply_tick

        r0 = prediction.row(apply_tick)
        win = slice(r0, r0 + n_frozen + H * interval)
        tx = prediction.x[win, i * self.nx : (i + 1) * self.nx]
        tu = prediction.u[win, i * self.nu : (i + 1) * self.nu]
        qx = self.weights.qx_diag()
        qu = self.weights.qu_diag()

        u_frozen = np.empty((n_frozen, self.nu))
        for k in range(n_frozen):
            u_frozen[k] = self.block_values[(apply_tick + k) // interval * interval]

        def objective(flat):
            return self.task.plan_loss_grad(
                i, estimate, u_frozen, flat.reshape(H, self.nu), interval, tx, tu, qx, qu,
                t0=apply_tick, width=PLAN_CLAMP_WIDTH,
            )

        # candidate 1: copy the predicted ideal actuation on each block
        copy_blocks = np.empty((H, self.nu))
        for h in range(H):
            copy_blocks[h] = tu[n_frozen + h * interval]
        # candidate 2: previous plan shifted by the replan stride
        if self.prev_blocks is not None:
            shift = max((ff - self.prev_ff) // interval, 0)
            warm = np.vstack([self.prev_blocks[shift:], np.tile(self.prev_blocks[-1], (min(shift, H), 1))])[:H]
        else:
            warm = copy_blocks.copy()

        result = lbfgs_minimize(objective, warm.ravel(), self.lbfgs_opts)
        copy_loss = float(objective(copy_blocks.ravel())[0])
        warm_loss = float(objective(warm.ravel())[0])
        best_blocks, best_loss = result.x.reshape(H, self.nu), result.loss
        if warm_loss < best_loss:
            best_blocks, best_loss = warm, warm_loss
        if copy_loss <= best_loss:
            best_blocks, best_loss = copy_blocks, copy_loss
        if result.status == "non-finite":
            self.diagnostics.append(f"tau={tau}: planner aborted non-finite; kept fallback")
        result.loss = best_loss
        return best_blocks, result, copy_loss

    # -- composition -----------------------------------------------------------

    def replan(self, tau: int) -> Tuple[int, np.ndarray]:
        prediction = self.forward_predict(tau)
        estimate = self.self_estimate(tau)
        blocks, result, copy_loss = self.local_plan(estimate, prediction, tau)

        interval = self.interval
        apply_tick = tau + self.delays.act
        ff = -((-apply_tick) // interval) * interval
        for h in range(self.horizon):
            self.block_values[ff + h * interval] = np.clip(
                blocks[h], -self.u_bounds, self.u_bounds
            )
        self.prev_blocks = blocks
        self.prev_ff = ff

        per_tick = np.empty((interval, self.nu))
        for k in range(interval):
            per_tick[k] = self.block_values[(apply_tick + k) // interval * interval]
        first, per_tick = self._commit(tau, per_tick)

        if self.trace is not None:
            r = prediction.row(apply_tick)
            i = self.agent
            self.trace.append(
                PlanDebug(
                    tau=tau, agent=i,
                    anchor_tick=prediction.anchor_tick, anchor_x=prediction.anchor_x,
                    estimate=estimate.copy(),
                    pred_x_at_apply=prediction.x[r, i * self.nx : (i + 1) * self.nx].copy(),
                    pred_u_at_apply=prediction.u[r, i * self.nu : (i + 1) * self.nu].copy(),
                    u_first=per_tick[0].copy(),
                    loss=result.loss, copy_loss=copy_loss,
                    iterations=result.iterations, converged=result.converged,
                    flag=result.status,
                )
            )
        return first, per_tick


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------


class NaiveBrain(AgentBrain):
    """No delay compensation: the freshest available data is treated as the
    current fleet state."""

    name = "naive"

    def replan(self, tau: int) -> Tuple[int, np.ndarray]:
        x, z = self._stale_fleet(tau)
        u = self.task.controller.act(x, z, tau)
        return self._commit(tau, self._zoh_tile(u[self.agent * self.nu : (self.agent + 1) * self.nu]))


class LocalBrain(AgentBrain):
    """Compensation limited to local information: own state and observation
    are dead-reckoned through the sensing delay (the actuation delay is not
    compensated), peers stay stale."""

    name = "local"

    def _own_compensated(self, tau: int) -> Tuple[np.ndarray, np.ndarray]:
        cuts = available_history(self.agent, tau, self.delays, self.n)
        t0 = tau - self.delays.obs
        x_own = np.array(self.x_hist[self.agent].at(t0))
        z_own = np.array(self.z_hist[self.agent].at(t0))
        for s in range(t0, tau):
            assert s <= cuts.own_u
            if s >= 0:
                x_own = self.task.step(self.agent, x_own, self.own_u.at(s), s, model=True)
                z_own = self.task.obs_step(self.agent, z_own, s)
        return x_own, z_own

    def replan(self, tau: int) -> Tuple[int, np.ndarray]:
        x, z = self._stale_fleet(tau)
        i = self.agent
        x_own, z_own = self._own_compensated(tau)
        x[i * self.nx : (i + 1) * self.nx] = x_own
        z[i * self.nz : (i + 1) * self.nz] = z_own
        u = self.task.controller.act(x, z, tau)
        return self._commit(tau, self._zoh_tile(u[i * self.nu : (i + 1) * self.nu]))


class ConstUBrain(LocalBrain):
    """Local compensation plus a global heuristic: peers are rolled forward
    to the present with their last known actuation held constant."""

    name = "constu"

    def replan(self, tau: int) -> Tuple[int, np.ndarray]:
        cuts = available_history(self.agent, tau, self.delays, self.n)
        i = self.agent
        x = np.empty(self.n * self.nx)
        z = np.empty(self.n * self.nz)
        x_own, z_own = self._own_compensated(tau)
        x[i * self.nx : (i + 1) * self.nx] = x_own
        z[i * self.nz : (i + 1) * self.nz] = z_own
        for j in range(self.n):
            if j == i:
                continue
            xj = np.array(self.x_hist[j].at(cuts.other_x))
            zj = np.array(self.z_hist[j].at(cuts.other_z))
            uj = np.array(self.u_hist[j].at(cuts.other_u))
            for s in range(cuts.other_x, tau):
                if s >= 0:
                    xj = self.task.step(j, xj, uj, s, model=True)
                    zj = self.task.obs_step(j, zj, s)
            x[j * self.nx : (j + 1) * self.nx] = xj
            z[j * self.nz : (j + 1) * self.nz] = zj
        u = self.task.controller.act(x, z, tau)
        return self._commit(tau, self._zoh_tile(u[i * self.nu : (i + 1) * self.nu]))


FRAMEWORKS = {
    "onevision": OneVisionBrain,
    "naive": NaiveBrain,
    "local": LocalBrain,
    "constu": ConstUBrain,
}


def make_brain(framework: str, agent: int, task: Task, delays: DelaySpec, **kw) -> AgentBrain:
    if framework not in FRAMEWORKS:
        raise KeyError(
            f"unknown framework {framework!r}; registered: {', '.join(sorted(FRAMEWORKS))}"
        )
    return FRAMEWORKS[framework](agent, task, delays, **kw)
