"""The discrete-event world: true dynamics with pre-sampled disturbances,
delayed sensing and messaging, the ideal-trajectory oracle, metrics, run
logging, and parameter sweeps.

Determinism: a (config, seed) pair maps to a bit-identical RunLog. All
randomness is pre-sampled from seeded generators before either trajectory
is rolled, and the world loop is single-threaded.
"""

from __future__ import annotations

import dataclasses
import io
import struct
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from onevision.core import DelaySpec, seconds_to_ticks
from onevision.dynamics import DisturbanceRealization, sample_noise
from onevision.frameworks import FRAMEWORKS, PlanDebug, RegretWeights, make_brain
from onevision.optim.lbfgs import LbfgsOptions
from onevision.tasks import TASK_BUILDERS, Task, build_task

TICK_RATE = 100
DEFAULT_NOISE = 0.005


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines a simulation run."""

    task: str = "leader-linear"
    framework: str = "onevision"
    delays: DelaySpec = field(default_factory=lambda: DelaySpec(obs=3, act=4, comm=5, control_interval=5))
    sensor_noise: float = DEFAULT_NOISE
    disturbance_noise: float = DEFAULT_NOISE
    r1: float = 1.0
    r2: float = 1.0
    horizon: int = 20
    duration_s: float = 20.0
    seed: int = 0
    qx: float = 1.0
    qu: float = 0.1
    lbfgs_max_iters: int = 100
    lbfgs_g_tol: float = 1e-8
    lbfgs_memory: int = 10
    initial_offset: Optional[tuple] = None
    trace_plans: bool = False

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ValueError("duration must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")

    @property
    def n_ticks(self) -> int:
        return seconds_to_ticks(self.duration_s)

    def lbfgs_options(self) -> LbfgsOptions:
        return LbfgsOptions(
            memory=self.lbfgs_memory, g_tol=self.lbfgs_g_tol, max_iters=self.lbfgs_max_iters
        )


class DelayedChannel:
    """Broadcast bus with a constant delay: every payload is delivered at
    exactly send_tick + delay, FIFO within a tick."""

    def __init__(self, delay: int):
        if delay < 1:
            raise ValueError("channel delay must be >= 1 tick")
        self.delay = delay
        self._queue: deque = deque()
        self.delivered = 0

    def send(self, t: int, sender: int, payload: bytes) -> None:
        self._queue.append((t + self.delay, t, sender, payload))

    def pop_due(self, t: int) -> List[Tuple[int, bytes]]:
        out = []
        while self._queue and self._queue[0][0] <= t:
            deliver_at, sent_at, sender, payload = self._queue.popleft()
            assert deliver_at == t, "late pop: the sim must drain the bus every tick"
            assert deliver_at - sent_at == self.delay, "channel delay invariant violated"
            out.append((sender, payload))
            self.delivered += 1
        return out


@dataclass
class RunLog:
    """Full record of one run: actual and ideal trajectories (sharing one
    disturbance realization), per-tick regret, and summary metrics."""

    config: RunConfig
    n_ticks: int
    x: np.ndarray
    z: np.ndarray
    u: np.ndarray
    ideal_x: np.ndarray
    ideal_z: np.ndarray
    ideal_u: np.ndarray
    realization: DisturbanceRealization
    regret: np.ndarray
    metrics: Dict[str, float]
    dims: Tuple[int, int, int, int]  # (n_agents, nx, nz, nu)
    diagnostics: List[str] = field(default_factory=list)
    trace: Optional[List[PlanDebug]] = None

    MAGIC = b"OVLOG1"

    def to_bytes(self) -> bytes:
        n_agents, nx, nz, nu = self.dims
        buf = io.BytesIO()
        buf.write(self.MAGIC)
        buf.write(struct.pack("<IIIIIQQ", 1, n_agents, nx, nz, nu, self.n_ticks, self.config.seed))
        for arr in (
            self.x, self.z, self.u,
            self.ideal_x, self.ideal_z, self.ideal_u,
            self.realization.dx, self.realization.dz, self.regret,
        ):
            a = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
            buf.write(struct.pack("<II", a.shape[0], a.size // max(a.shape[0], 1)))
            buf.write(a.tobytes())
        names = sorted(self.metrics)
        buf.write(struct.pack("<I", len(names)))
        for name in names:
            raw = name.encode("utf-8")
            buf.write(struct.pack("<H", len(raw)))
            buf.write(raw)
            buf.write(struct.pack("<d", float(self.metrics[name])))
        return buf.getvalue()

    @classmethod
    def arrays_from_bytes(cls, blob: bytes):
        """Decode the packed layout back into (header, arrays, metrics)."""
        if blob[:6] != cls.MAGIC:
            raise ValueError("not an OVLOG1 blob")
        off = 6
        version, n_agents, nx, nz, nu, n_ticks, seed = struct.unpack_from("<IIIIIQQ", blob, off)
        off += struct.calcsize("<IIIIIQQ")
        arrays = []
        for _ in range(9):
            rows, cols = struct.unpack_from("<II", blob, off)
            off += 8
            a = np.frombuffer(blob, dtype="<f8", count=rows * cols, offset=off).reshape(rows, cols)
            off += rows * cols * 8
            arrays.append(a.astype(np.float64))
        (n_metrics,) = struct.unpack_from("<I", blob, off)
        off += 4
        metrics = {}
        for _ in range(n_metrics):
            (ln,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off : off + ln].decode("utf-8")
            off += ln
            (val,) = struct.unpack_from("<d", blob, off)
            off += 8
            metrics[name] = val
        header = dict(version=version, n_agents=n_agents, nx=nx, nz=nz, nu=nu,
                      n_ticks=n_ticks, seed=seed)
        return header, arrays, metrics


# ---------------------------------------------------------------------------
# realization sampling
# ---------------------------------------------------------------------------


def sample_realization(
    task: Task, n_ticks: int, disturbance_noise: float, sensor_noise: float, seed: int
) -> DisturbanceRealization:
    """Pre-sample the disturbance realization for a run.

    Two independent Gaussian streams enter the physical state: the external
    disturbance on the task's designated components (velocity and steering
    angle for the vehicle tasks) and the sensing-stage noise on every state
    component. Both are part of the realization shared with the ideal
    trajectory; reported state samples are exact, which is what the
    disturbance-measurement equations assume. Scripted observation deltas
    (plus Gaussian observation disturbance where the task declares it)
    complete the realization.
    """
    ss = np.random.SeedSequence(seed)
    k_dist, k_obs, k_sensor = ss.spawn(3)
    rng = np.random.Generator(np.random.PCG64(k_dist))
    dx = sample_noise(disturbance_noise, n_ticks, task.n_agents * task.nx, rng) * task.dist_mask
    rng_s = np.random.Generator(np.random.PCG64(k_sensor))
    dx = dx + sample_noise(sensor_noise, n_ticks, task.n_agents * task.nx, rng_s)
    dz = task.dz_script(n_ticks)
    if task.dz_noise_components is not None:
        rng_z = np.random.Generator(np.random.PCG64(k_obs))
        dz = dz + (
            sample_noise(disturbance_noise, n_ticks, task.n_agents * task.nz, rng_z)
            * task.dz_noise_components
        )
    return DisturbanceRealization(dx=dx, dz=dz, seed=seed)


# ---------------------------------------------------------------------------
# ideal-trajectory oracle
# ---------------------------------------------------------------------------


def ideal_oracle(task: Task, realization: DisturbanceRealization, n_ticks: int, interval: int):
    """Ground truth the regret is measured against: the zero-delay
    centralized closed loop under the true dynamics and the same
    disturbance realization. Returns (x*, z*, u*) with n_ticks rows."""
    n = n_ticks - 1
    x, z, u = task.roll(
        task.x0, task.z0, task.u_seed(), 0, n, interval,
        realization.dx[:n], realization.dz[:n], model=False,
    )
    return x, z, u


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def per_tick_regret(x, u, ideal_x, ideal_u, n_agents: int, weights: RegretWeights) -> np.ndarray:
    T = x.shape[0]
    nx = x.shape[1] // n_agents
    nu = u.shape[1] // n_agents
    ex = (x - ideal_x).reshape(T, n_agents, nx)
    eu = (u - ideal_u).reshape(T, n_agents, nu)
    rx = np.einsum("tni,ij,tnj->t", ex, weights.Qx, ex)
    ru = np.einsum("tni,ij,tnj->t", eu, weights.Qu, eu)
    return rx + ru


def compute_metrics(log_x, log_u, ideal_x, ideal_u, task: Task, weights: RegretWeights, log_z=None):
    """Task metrics: average regret and its log10, plus the task-specific
    average distance (1D tasks: time-averaged L2 distance between leader
    and follower) or average deviation (2D tasks: RMS distance of each
    follower from its formation slot)."""
    regret = per_tick_regret(log_x, log_u, ideal_x, ideal_u, task.n_agents, weights)
    avg_regret = float(regret.mean())
    metrics = {
        "avg_regret": avg_regret,
        "log_loss": float(np.log10(max(avg_regret, 1e-300))),
        "avg_distance": float("nan"),
        "avg_deviation": float("nan"),
    }
    if task.metric_kind == "distance":
        lead = task.metric_args["leader"]
        fol = task.metric_args["follower"]
        d_ref = task.metric_args["d_ref"]
        # RMS of the inter-vehicle spacing error: a framework that tailgates
        # (shrinking the raw distance below the commanded spacing) scores
        # worse, not better
        gap = log_x[:, lead * task.nx] - log_x[:, fol * task.nx] - d_ref
        metrics["avg_distance"] = float(np.sqrt(np.mean(gap**2)))
    elif task.metric_kind == "deviation":
        metrics["avg_deviation"] = float(average_deviation(log_x, log_z, task))
    return regret, metrics


def average_deviation(log_x, log_z, task: Task) -> float:
    """RMS distance of each follower from its slot in the active formation,
    computed from the actual leader pose and the formation id carried in
    the leader's observation."""
    spec = task.metric_args["spec"]
    T = log_x.shape[0]
    n_follow = spec.n_followers
    fid = np.clip(np.rint(log_z[:, 2]).astype(np.int64), 0, spec.offsets.shape[0] - 1)
    px, py, th = log_x[:, 0], log_x[:, 1], log_x[:, 2]
    c, s = np.cos(th), np.sin(th)
    off = spec.offsets[fid]  # (T, n_follow, 3)
    total = 0.0
    for j in range(n_follow):
        sx = px + c * off[:, j, 0] - s * off[:, j, 1]
        sy = py + s * off[:, j, 0] + c * off[:, j, 1]
        b = (j + 1) * task.nx
        total += float(np.sum((log_x[:, b] - sx) ** 2 + (log_x[:, b + 1] - sy) ** 2))
    return float(np.sqrt(total / (T * n_follow)))


# ---------------------------------------------------------------------------
# the world loop
# ---------------------------------------------------------------------------


def run_simulation(
    config: RunConfig,
    task: Optional[Task] = None,
    realization: Optional[DisturbanceRealization] = None,
    ideal: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]] = None,
    weights: Optional[RegretWeights] = None,
) -> RunLog:
    """Advance the world at the base rate under the configured framework.

    Controllers replan every control interval; actuations take effect one
    actuation delay late; measurements are one observation delay stale;
    messages arrive one communication delay late. The ideal trajectory is
    integrated by the omniscient harness under the same realization.
    """
    if task is None:
        task = build_task(config.task, r1=config.r1, r2=config.r2)
    d = config.delays
    T = config.n_ticks
    N, nx, nz, nu = task.n_agents, task.nx, task.nz, task.nu
    NX, NZ, NU = N * nx, N * nz, N * nu

    if realization is None:
        realization = sample_realization(
            task, T, config.disturbance_noise, config.sensor_noise, config.seed
        )
    if realization.dx.shape != (T, NX) or realization.dz.shape != (T, NZ):
        raise ValueError("realization does not cover the run span")
    if ideal is None:
        ideal = ideal_oracle(task, realization, T, d.control_interval)
    ideal_x, ideal_z, ideal_u = ideal

    # the reported regret uses the block-identity Eq.-5 weights; the local
    # planners track with per-task component profiles (algorithm tuning)
    if weights is None:
        metric_weights = RegretWeights.from_scalars(nx, nu, config.qx, config.qu)
        planner_weights = RegretWeights(
            np.diag(config.qx * task.qx_weights), np.diag(config.qu * task.qu_weights)
        )
    else:
        metric_weights = planner_weights = weights
    trace: Optional[List[PlanDebug]] = [] if config.trace_plans else None
    brains = [
        make_brain(
            config.framework, i, task, d,
            horizon=config.horizon, weights=planner_weights,
            lbfgs_opts=config.lbfgs_options(), trace=trace,
        )
        for i in range(N)
    ]
    bus = DelayedChannel(d.comm)
    u_seed = task.u_seed()

    x = task.x0.copy()
    if config.initial_offset is not None:
        x = x + np.asarray(config.initial_offset, dtype=np.float64)
    z = task.z0.copy()

    x_log = np.empty((T, NX))
    z_log = np.empty((T, NZ))
    u_world = np.full((T + d.act + d.control_interval, NU), np.nan)
    u_world[: d.act] = u_seed

    for t in range(T):
        x_log[t] = x
        z_log[t] = z

        inboxes = [[] for _ in range(N)]
        for sender, payload in bus.pop_due(t):
            for i in range(N):
                if i != sender:
                    inboxes[i].append(payload)

        mt = t - d.obs
        for i in range(N):
            if mt >= 0:
                xs = x_log[mt, i * nx : (i + 1) * nx]
                zs = z_log[mt, i * nz : (i + 1) * nz]
            else:
                xs = task.x0[i * nx : (i + 1) * nx]
                zs = task.z0[i * nz : (i + 1) * nz]
            bus.send(t, i, brains[i].observe(t, xs, zs, inboxes[i]))

        if t % d.control_interval == 0:
            for i in range(N):
                first, per_tick = brains[i].replan(t)
                assert first == t + d.act
                u_world[first : first + d.control_interval, i * nu : (i + 1) * nu] = per_tick

        assert not np.any(np.isnan(u_world[t])), f"actuation gap at tick {t}"
        if t < T - 1:
            x_next = np.empty(NX)
            z_next = np.empty(NZ)
            for i in range(N):
                x_next[i * nx : (i + 1) * nx] = task.step(
                    i, x[i * nx : (i + 1) * nx], u_world[t, i * nu : (i + 1) * nu], t, model=False
                ) + realization.dx[t, i * nx : (i + 1) * nx]
                z_next[i * nz : (i + 1) * nz] = (
                    task.obs_step(i, z[i * nz : (i + 1) * nz], t)
                    + realization.dz[t, i * nz : (i + 1) * nz]
                )
            x = x_next
            z = z_next

    u_log = u_world[:T].copy()
    regret, metrics = compute_metrics(
        x_log, u_log, ideal_x, ideal_u, task, metric_weights, log_z=z_log
    )
    diagnostics = [m for b in brains for m in b.diagnostics]
    return RunLog(
        config=config, n_ticks=T,
        x=x_log, z=z_log, u=u_log,
        ideal_x=ideal_x, ideal_z=ideal_z, ideal_u=ideal_u,
        realization=realization, regret=regret, metrics=metrics,
        dims=(N, nx, nz, nu), diagnostics=diagnostics, trace=trace,
    )


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

SWEEP_AXES = ("noise", "delay", "model_error", "horizon", "disturbance")
CSV_HEADER = "task,framework,axis,value,seed,avg_regret,log_loss,avg_distance,avg_deviation,failed"


def apply_axis(base: RunConfig, axis: str, value: float) -> RunConfig:
    """Derive the run config for one sweep cell, validating the axis range."""
    if axis == "noise":
        if not (0.0 <= value <= 10.0):
            raise ValueError("sensor-noise multiplier must be within [0, 10]")
        return dataclasses.replace(base, sensor_noise=DEFAULT_NOISE * value)
    if axis == "disturbance":
        if not (0.0 <= value <= 10.0):
            raise ValueError("disturbance multiplier must be within [0, 10]")
        return dataclasses.replace(base, disturbance_noise=DEFAULT_NOISE * value)
    if axis == "delay":
        if not (10.0 <= value <= 500.0):
            raise ValueError("communication delay must be within [10, 500] ms")
        d = base.delays
        comm = seconds_to_ticks(value / 1000.0)
        return dataclasses.replace(base, delays=DelaySpec(d.obs, d.act, comm, d.control_interval))
    if axis == "model_error":
        if not (0.0 <= value <= 100.0):
            raise ValueError("model error must be within [0, 100] percent")
        r = 1.0 + value / 100.0
        return dataclasses.replace(base, r1=r, r2=r)
    if axis == "horizon":
        h = int(value)
        if not (1 <= h <= 30):
            raise ValueError("horizon must be within [1, 30]")
        return dataclasses.replace(base, horizon=h)
    raise ValueError(f"unknown sweep axis {axis!r}; one of {SWEEP_AXES}")


def run_sweep(
    base: RunConfig,
    axis: str,
    values,
    seeds,
    frameworks=None,
) -> List[dict]:
    """One row per (value, framework, seed) plus mean/std aggregate rows.

    The ideal trajectory depends only on (task, duration, disturbance,
    seed), so it is computed once per such key and shared across
    frameworks and delay/noise/horizon values. Individual run failures are
    recorded as flagged rows, never raised.
    """
    frameworks = list(frameworks or FRAMEWORKS)
    if isinstance(seeds, int):
        seeds = list(range(seeds))
    rows: List[dict] = []
    oracle_cache: Dict[tuple, tuple] = {}
    for value in values:
        for fw in frameworks:
            samples: Dict[str, list] = {"avg_regret": [], "log_loss": [], "avg_distance": [], "avg_deviation": []}
            for seed in seeds:
                cfg = dataclasses.replace(
                    apply_axis(base, axis, value), framework=fw, seed=int(seed)
                )
                row = {
                    "task": cfg.task, "framework": fw, "axis": axis,
                    "value": float(value), "seed": int(seed), "failed": 0,
                }
                try:
                    task = build_task(cfg.task, r1=cfg.r1, r2=cfg.r2)
                    key = (cfg.task, cfg.n_ticks, cfg.disturbance_noise, cfg.sensor_noise, cfg.seed)
                    if key not in oracle_cache:
                        realization = sample_realization(
                            task, cfg.n_ticks, cfg.disturbance_noise, cfg.sensor_noise, cfg.seed
                        )
                        oracle_cache[key] = (
                            realization,
                            ideal_oracle(task, realization, cfg.n_ticks, cfg.delays.control_interval),
                        )
                    realization, ideal = oracle_cache[key]
                    log = run_simulation(cfg, task=task, realization=realization, ideal=ideal)
                    row.update({k: log.metrics[k] for k in samples})
                    for k in samples:
                        samples[k].append(log.metrics[k])
                except Exception as exc:  # recorded, not fatal
                    row.update({k: float("nan") for k in samples})
                    row["failed"] = 1
                    row["error"] = f"{type(exc).__name__}: {exc}"
                rows.append(row)
            for stat, fn in (("mean", np.mean), ("std", np.std)):
                agg = {
                    "task": base.task, "framework": fw, "axis": axis,
                    "value": float(value), "seed": stat, "failed": 0,
                }
                for k, vals in samples.items():
                    finite = [v for v in vals if np.isfinite(v)]
                    agg[k] = float(fn(finite)) if finite else float("nan")
                rows.append(agg)
    return rows


def format_float(v: float) -> str:
    return f"{float(v):.9g}"


def sweep_rows_to_csv(rows: List[dict]) -> str:
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(
            ",".join(
                [
                    str(r["task"]), str(r["framework"]), str(r["axis"]),
                    format_float(r["value"]), str(r["seed"]),
                    format_float(r.get("avg_regret", float("nan"))),
                    format_float(r.get("log_loss", float("nan"))),
                    format_float(r.get("avg_distance", float("nan"))),
                    format_float(r.get("avg_deviation", float("nan"))),
                    str(int(r.get("failed", 0))),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def metrics_csv(metrics: Dict[str, float]) -> str:
    """Single-run metrics file: the five declared columns."""
    header = "avg_regret,log_loss,avg_distance,avg_deviation,failed"
    line = ",".join(
        [
            format_float(metrics.get("avg_regret", float("nan"))),
            format_float(metrics.get("log_loss", float("nan"))),
            format_float(metrics.get("avg_distance", float("nan"))),
            format_float(metrics.get("avg_deviation", float("nan"))),
            "0",
        ]
    )
    return header + "\n" + line + "\n"


def export_trajectories_csv(log: RunLog) -> str:
    """Optional plain-text export of the logged trajectories."""
    N, nx, nz, nu = log.dims
    cols = ["tick"]
    for prefix, dim in (("x", N * nx), ("u", N * nu), ("ideal_x", N * nx), ("ideal_u", N * nu)):
        cols.extend(f"{prefix}{k}" for k in range(dim))
    cols.append("regret")
    lines = [",".join(cols)]
    for t in range(log.n_ticks):
        vals = [str(t)]
        for arr in (log.x, log.u, log.ideal_x, log.ideal_u):
            vals.extend(format_float(v) for v in arr[t])
        vals.append(format_float(log.regret[t]))
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"
