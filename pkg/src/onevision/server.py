"""Live formation-task server: runs the simulation wall-clock paced and
feeds the leader's external observation from client steering commands.

The session core is a deterministic tick-stepper, independent of network
and pacing, so a recorded command log replays to a bit-identical fleet
trajectory. The wire protocol is newline-delimited JSON over a websocket:

server -> client, one frame per control period:
  {"t": <tick>, "cars": [{"id": i, "x": .., "y": .., "theta": .., "v": ..}],
   "refs": [{"id": i, "x": .., "y": ..}], "formation": "<id>",
   "metrics": {"avg_deviation": ..}}

client -> server:
  {"type": "steer", "accel": a, "steer_rate": r}
  {"type": "formation", "id": "line" | "triangle"}

Unknown fields are ignored; the first connected client controls the
leader. On disconnect the held command decays to zero over half a second.
"""

from __future__ import annotations

import asyncio
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from onevision.core import DelaySpec
from onevision.dynamics import sample_noise
from onevision.frameworks import make_brain
from onevision.sim import DelayedChannel, RunConfig
from onevision.tasks import Task, build_task

log = logging.getLogger("onevision.server")

DECAY_PERIODS = 10  # command decays to zero over this many control periods
V_DES_MAX = 3.0
PSI_DES_MAX = 0.6
CHUNK = 1000  # lazy realization sampling granularity (ticks)


@dataclass
class CommandState:
    accel: float = 0.0
    steer_rate: float = 0.0
    formation: int = 0


@dataclass
class AppliedCommand:
    tick: int
    accel: float
    steer_rate: float
    formation: int


class TeleopSession:
    """Deterministic command-driven simulation of the formation task.

    The leader's observation (v_des, psi_des, formation id) integrates the
    held steering command at every control period; everything else matches
    the batch simulator. Frames are emitted at the control rate.
    """

    def __init__(self, config: RunConfig, task: Optional[Task] = None):
        self.config = config
        self.task = task or build_task(config.task, r1=config.r1, r2=config.r2)
        if self.task.family != "formation":
            raise ValueError("the live server only drives formation tasks")
        # live sessions start idle: the leader command comes from clients
        self.task.z0 = self.task.z0.copy()
        self.task.z0[0] = 0.0
        self.d = config.delays
        self.N = self.task.n_agents
        self.nx, self.nz, self.nu = self.task.nx, self.task.nz, self.task.nu
        self.brains = [
            make_brain(
                config.framework, i, self.task, self.d,
                horizon=config.horizon, lbfgs_opts=config.lbfgs_options(),
            )
            for i in range(self.N)
        ]
        self.bus = DelayedChannel(self.d.comm)
        self.t = 0
        self.x = self.task.x0.copy()
        self.z = self.task.z0.copy()
        self.x_hist: List[np.ndarray] = []
        self.z_hist: List[np.ndarray] = []
        NU = self.N * self.nu
        self.u_world: Dict[int, np.ndarray] = {}
        seed_u = self.task.u_seed()
        for k in range(self.d.act):
            self.u_world[k] = seed_u
        self.command = CommandState(formation=0)
        self._active_cmd = CommandState(formation=0)
        self.connected = False
        self._decay_step: Tuple[float, float] = (0.0, 0.0)
        self.command_log: List[AppliedCommand] = []
        self.replay_from: Optional[List[AppliedCommand]] = None
        # lazy pre-sampled noise streams (both enter the physical state)
        ss = np.random.SeedSequence(config.seed)
        self._k_dist, _, self._k_sensor = ss.spawn(3)
        self._rng_dist = np.random.Generator(np.random.PCG64(self._k_dist))
        self._rng_sensor = np.random.Generator(np.random.PCG64(self._k_sensor))
        self._dx = np.zeros((0, self.N * self.nx))
        # trailing-window deviation metric
        self._window = int(2.0 / self.task.dt)
        self._dev2: List[float] = []

    # -- command handling ----------------------------------------------------

    def apply_command(self, msg: dict) -> None:
        """Latch a client command (latest wins); applied at control ticks."""
        kind = msg.get("type")
        if kind == "steer":
            self.command.accel = float(msg.get("accel", 0.0))
            self.command.steer_rate = float(msg.get("steer_rate", 0.0))
            self._decay_step = (0.0, 0.0)
        elif kind == "formation":
            name = msg.get("id")
            spec = self.task.controller.spec
            if name in spec.names:
                self.command.formation = spec.index_of(name)
            else:
                log.warning("unknown formation id %r ignored", name)
        else:
            log.warning("unknown command type %r ignored", kind)

    def client_disconnected(self) -> None:
        self.connected = False
        self._decay_step = (
            self.command.accel / DECAY_PERIODS,
            self.command.steer_rate / DECAY_PERIODS,
        )

    def _decay_command(self) -> None:
        da, dr = self._decay_step
        if da or dr:
            self.command.accel = _toward_zero(self.command.accel, da)
            self.command.steer_rate = _toward_zero(self.command.steer_rate, dr)

    # -- noise streams -------------------------------------------------------

    def _ensure_noise(self, t: int) -> None:
        while self._dx.shape[0] <= t:
            dist = sample_noise(
                self.config.disturbance_noise, CHUNK, self.N * self.nx, self._rng_dist
            ) * self.task.dist_mask
            sens = sample_noise(self.config.sensor_noise, CHUNK, self.N * self.nx, self._rng_sensor)
            self._dx = np.vstack([self._dx, dist + sens])

    # -- main loop -----------------------------------------------------------

    def step(self) -> Optional[dict]:
        """Advance one tick; returns a frame dict on control-period ticks."""
        t = self.t
        self._ensure_noise(t)
        self.x_hist.append(self.x.copy())
        self.z_hist.append(self.z.copy())

        frame = None
        interval = self.d.control_interval
        if t % interval == 0:
            # snapshot the held command; it governs this control period and
            # is what a replay re-applies, so mid-period arrivals only take
            # effect at the next lattice tick
            if self.replay_from is not None:
                idx = t // interval
                if idx < len(self.replay_from):
                    rec = self.replay_from[idx]
                    self.command.accel = rec.accel
                    self.command.steer_rate = rec.steer_rate
                    self.command.formation = rec.formation
            elif not self.connected:
                self._decay_command()
            self._active_cmd = CommandState(
                self.command.accel, self.command.steer_rate, self.command.formation
            )
            self.command_log.append(
                AppliedCommand(t, self.command.accel, self.command.steer_rate, self.command.formation)
            )

        inboxes = [[] for _ in range(self.N)]
        for sender, payload in self.bus.pop_due(t):
            for i in range(self.N):
                if i != sender:
                    inboxes[i].append(payload)
        mt = t - self.d.obs
        for i in range(self.N):
            if mt >= 0:
                xs = self.x_hist[mt][i * self.nx : (i + 1) * self.nx]
                zs = self.z_hist[mt][i * self.nz : (i + 1) * self.nz]
            else:
                xs = self.task.x0[i * self.nx : (i + 1) * self.nx]
                zs = self.task.z0[i * self.nz : (i + 1) * self.nz]
            self.bus.send(t, i, self.brains[i].observe(t, xs, zs, inboxes[i]))

        if t % interval == 0:
            for i in range(self.N):
                first, per_tick = self.brains[i].replan(t)
                for k in range(interval):
                    block = self.u_world.setdefault(first + k, np.zeros(self.N * self.nu))
                    block[i * self.nu : (i + 1) * self.nu] = per_tick[k]
            frame = self._frame(t)

        # world step
        u_t = self.u_world.pop(t)
        x_next = np.empty_like(self.x)
        for i in range(self.N):
            x_next[i * self.nx : (i + 1) * self.nx] = (
                self.task.step(
                    i,
                    self.x[i * self.nx : (i + 1) * self.nx],
                    u_t[i * self.nu : (i + 1) * self.nu],
                    t,
                    model=False,
                )
                + self._dx[t, i * self.nx : (i + 1) * self.nx]
            )
        z_next = self.z.copy()
        if (t + 1) % interval == 0:
            # the snapshot command integrates into the leader observation at
            # the next control tick; changes surface to the agents as
            # measured observation disturbances
            dt_ctrl = interval * self.task.dt
            z_next[0] = float(
                np.clip(self.z[0] + self._active_cmd.accel * dt_ctrl, 0.0, V_DES_MAX)
            )
            z_next[1] = float(
                np.clip(self.z[1] + self._active_cmd.steer_rate * dt_ctrl, -PSI_DES_MAX, PSI_DES_MAX)
            )
            z_next[2] = float(self._active_cmd.formation)
        self.x = x_next
        self.z = z_next

        # deviation bookkeeping (trailing window)
        spec = self.task.controller.spec
        fid = int(round(self.z_hist[-1][2]))
        slots = spec.slot_positions(self.x_hist[-1][0:3], fid)
        dev2 = 0.0
        for j in range(spec.n_followers):
            b = (j + 1) * self.nx
            dev2 += (self.x_hist[-1][b] - slots[j, 0]) ** 2 + (
                self.x_hist[-1][b + 1] - slots[j, 1]
            ) ** 2
        self._dev2.append(dev2 / spec.n_followers)

        self.t += 1
        return frame

    def windowed_deviation(self) -> float:
        if not self._dev2:
            return 0.0
        tail = self._dev2[-self._window :]
        return float(math.sqrt(sum(tail) / len(tail)))

    def _frame(self, t: int) -> dict:
        spec = self.task.controller.spec
        fid = int(round(self.z[2]))
        fid = max(0, min(fid, len(spec.names) - 1))
        slots = spec.slot_positions(self.x[0:3], fid)
        cars = []
        for i in range(self.N):
            b = i * self.nx
            cars.append(
                {
                    "id": i,
                    "x": float(self.x[b]),
                    "y": float(self.x[b + 1]),
                    "theta": float(self.x[b + 2]),
                    "v": float(self.x[b + 3]),
                }
            )
        refs = [
            {"id": j + 1, "x": float(slots[j, 0]), "y": float(slots[j, 1])}
            for j in range(spec.n_followers)
        ]
        return {
            "t": t,
            "cars": cars,
            "refs": refs,
            "formation": spec.names[fid],
            "metrics": {"avg_deviation": self.windowed_deviation()},
        }

    def run_ticks(self, n: int) -> List[dict]:
        """Step n ticks without pacing; returns the emitted frames."""
        frames = []
        for _ in range(n):
            f = self.step()
            if f is not None:
                frames.append(f)
        return frames

    def fleet_trajectory(self) -> np.ndarray:
        return np.array(self.x_hist)


def _toward_zero(value: float, step: float) -> float:
    if value > 0:
        return max(0.0, value - abs(step))
    return min(0.0, value + abs(step))


def replay_session(config: RunConfig, commands: List[AppliedCommand], n_ticks: int) -> TeleopSession:
    """Re-run a session from a recorded command log (pacing excluded); the
    fleet trajectory reproduces the original bit-exactly."""
    session = TeleopSession(config)
    session.replay_from = list(commands)
    session.run_ticks(n_ticks)
    return session


# ---------------------------------------------------------------------------
# websocket server
# ---------------------------------------------------------------------------


async def serve_live(
    port: int,
    config: RunConfig,
    speed: float = 1.0,
    ready: Optional[asyncio.Event] = None,
    stop: Optional[asyncio.Event] = None,
) -> None:
    """Run the session wall-clock paced at the base rate (scaled by
    `speed`), broadcasting frames and accepting commands from the first
    connected client."""
    from websockets.asyncio.server import serve

    session = TeleopSession(config)
    clients: set = set()
    controller_id: Optional[int] = None
    stop = stop or asyncio.Event()

    async def handler(ws):
        nonlocal controller_id
        clients.add(ws)
        takes_input = controller_id is None
        if takes_input:
            controller_id = id(ws)
            session.connected = True
        try:
            async for raw in ws:
                if not takes_input:
                    continue  # first client wins; others are spectators
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError:
                    log.warning("malformed client message ignored")
                    continue
                session.apply_command(msg)
        finally:
            clients.discard(ws)
            if takes_input:
                controller_id = None
                session.client_disconnected()

    async def loop():
        dt = session.task.dt / speed
        t_next = asyncio.get_event_loop().time()
        while not stop.is_set():
            frame = session.step()
            if frame is not None and clients:
                payload = json.dumps(frame) + "\n"
                await asyncio.gather(
                    *(c.send(payload) for c in list(clients)), return_exceptions=True
                )
            t_next += dt
            delay = t_next - asyncio.get_event_loop().time()
            if delay > 0:
                await asyncio.sleep(delay)
            else:
                await asyncio.sleep(0)  # fell behind: yield, no sleep

    async with serve(handler, "127.0.0.1", port):
        if ready is not None:
            ready.set()
        await loop()
