"""Time and delay bookkeeping, trajectory containers, and the
information-availability rule shared by every other module.

Time is discrete. One tick is one step of the base rate (100 Hz by
default), and all delays, horizons, and control intervals are integer
tick counts. A simulation run proper starts at tick 0; initialization
seeds constant histories on negative ticks so that every availability
cutoff resolves even at tick 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Base tick rate. 20 Hz control on top of this grid is expressed as
# control_interval = 5 ticks.
TICK_RATE_HZ = 100

Tick = int


class InsufficientHistoryError(Exception):
    """A trajectory was read below its recorded range."""


def seconds_to_ticks(seconds: float, rate_hz: int = TICK_RATE_HZ) -> Tick:
    """Convert a duration in seconds to an exact tick count.

    Raises ValueError when the duration is not an integral number of
    ticks at the given rate: silent rounding here would corrupt the
    delay-exactness guarantees downstream, so it is rejected.
    """
    ticks = seconds * rate_hz
    rounded = round(ticks)
    if abs(ticks - rounded) > 1e-9:
        raise ValueError(
            f"{seconds} s is not an integral number of ticks at {rate_hz} Hz "
            f"({ticks} ticks)"
        )
    return int(rounded)


@dataclass(frozen=True)
class DelaySpec:
    """Tick-quantized observation, actuation, and communication delays,
    plus the replanning interval.

    All delays are at least one tick: a zero delay is not representable
    in the discrete formulation (the minimum-latency limit is one tick).
    """

    obs: Tick
    act: Tick
    comm: Tick
    control_interval: Tick = 5

    def __post_init__(self):
        for name in ("obs", "act", "comm", "control_interval"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool):
                raise ValueError(f"DelaySpec.{name} must be an integer tick count, got {v!r}")
            if v < 1:
                raise ValueError(f"DelaySpec.{name} must be >= 1 tick, got {v}")

    @classmethod
    def from_ms(
        cls,
        obs_ms: float,
        act_ms: float,
        comm_ms: float,
        control_interval_ms: float = 50.0,
        rate_hz: int = TICK_RATE_HZ,
    ) -> "DelaySpec":
        """Build from millisecond delays, rejecting non-integral tick counts."""
        return cls(
            obs=seconds_to_ticks(obs_ms / 1000.0, rate_hz),
            act=seconds_to_ticks(act_ms / 1000.0, rate_hz),
            comm=seconds_to_ticks(comm_ms / 1000.0, rate_hz),
            control_interval=seconds_to_ticks(control_interval_ms / 1000.0, rate_hz),
        )

    @property
    def total(self) -> Tick:
        return self.obs + self.act + self.comm

    def history_depth(self) -> Tick:
        """Ticks of pre-run history required so tick-0 cutoffs resolve."""
        return self.obs + self.comm + 1


class Trajectory:
    """A contiguous, time-indexed sequence of fixed-dimension vectors.

    The value at tick t exists iff start <= t < start + len. Appends
    extend the range; recorded values are immutable afterwards (reads
    return non-writeable views). Writers are single-owner; sharing a
    trajectory across readers is safe.
    """

    __slots__ = ("start", "_buf", "_len", "dim")

    def __init__(self, start: Tick, dim: int, capacity: int = 16):
        self.start = int(start)
        self.dim = int(dim)
        self._buf = np.empty((max(capacity, 1), dim), dtype=np.float64)
        self._len = 0

    @classmethod
    def from_array(cls, start: Tick, values: np.ndarray) -> "Trajectory":
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("trajectory values must be a (len, dim) array")
        t = cls(start, values.shape[1], capacity=max(values.shape[0], 1))
        t._buf[: values.shape[0]] = values
        t._len = values.shape[0]
        return t

    @classmethod
    def constant(cls, start: Tick, length: int, value: np.ndarray) -> "Trajectory":
        value = np.asarray(value, dtype=np.float64).ravel()
        return cls.from_array(start, np.tile(value, (length, 1)))

    def __len__(self) -> int:
        return self._len

    @property
    def end(self) -> Tick:
        """One past the last recorded tick."""
        return self.start + self._len

    def append(self, value: np.ndarray) -> None:
        if self._len == self._buf.shape[0]:
            grown = np.empty((2 * self._buf.shape[0], self.dim), dtype=np.float64)
            grown[: self._len] = self._buf[: self._len]
            self._buf = grown
        row = np.asarray(value, dtype=np.float64).ravel()
        if row.shape[0] != self.dim:
            raise ValueError(f"expected dim {self.dim}, got {row.shape[0]}")
        self._buf[self._len] = row
        self._len += 1

    def at(self, t: Tick) -> np.ndarray:
        """Value at tick t (read-only view)."""
        i = t - self.start
        if i < 0 or i >= self._len:
            raise InsufficientHistoryError(
                f"tick {t} outside recorded range [{self.start}, {self.end})"
            )
        v = self._buf[i]
        v.flags.writeable = False
        return v

    def window(self, t_from: Tick, t_to: Tick) -> "Trajectory":
        """Sub-trajectory over [t_from, t_to); values copied bit-for-bit."""
        if t_to < t_from:
            raise ValueError(f"bad slice bounds [{t_from}, {t_to})")
        if t_from < self.start or t_to > self.end:
            raise InsufficientHistoryError(
                f"slice [{t_from}, {t_to}) outside recorded range [{self.start}, {self.end})"
            )
        a = t_from - self.start
        b = t_to - self.start
        return Trajectory.from_array(t_from, self._buf[a:b].copy())

    def array(self) -> np.ndarray:
        """All recorded values as a read-only (len, dim) array."""
        v = self._buf[: self._len]
        v.flags.writeable = False
        return v

    def __repr__(self) -> str:
        return f"Trajectory(start={self.start}, end={self.end}, dim={self.dim})"


@dataclass
class FleetSnapshot:
    """Concatenated fleet state / observation / actuation at one instant.

    Agent i's block occupies indices [i*d, (i+1)*d) of the respective
    vector, where d is the per-agent dimension. The same layout is used
    everywhere in the package.
    """

    x: np.ndarray
    z: np.ndarray
    u: np.ndarray
    n_agents: int

    def __post_init__(self):
        for name in ("x", "z", "u"):
            v = np.asarray(getattr(self, name), dtype=np.float64).ravel()
            if v.shape[0] % self.n_agents != 0:
                raise ValueError(
                    f"{name} length {v.shape[0]} not divisible by {self.n_agents} agents"
                )
            object.__setattr__(self, name, v)

    @property
    def nx(self) -> int:
        return self.x.shape[0] // self.n_agents

    @property
    def nz(self) -> int:
        return self.z.shape[0] // self.n_agents

    @property
    def nu(self) -> int:
        return self.u.shape[0] // self.n_agents


def agent_block(fleet_vec: np.ndarray, agent: int, dim: int) -> np.ndarray:
    """Extract agent `agent`'s block from a concatenated fleet vector."""
    fleet_vec = np.asarray(fleet_vec)
    n = fleet_vec.shape[0]
    if n % dim != 0:
        raise ValueError(f"fleet vector length {n} not divisible by block dim {dim}")
    if not (0 <= agent < n // dim):
        raise IndexError(f"agent {agent} out of range for {n // dim} blocks")
    return fleet_vec[agent * dim : (agent + 1) * dim]


def concat_blocks(blocks) -> np.ndarray:
    """Inverse of per-agent extraction: stack agent blocks into a fleet vector."""
    blocks = [np.asarray(b, dtype=np.float64).ravel() for b in blocks]
    dims = {b.shape[0] for b in blocks}
    if len(dims) != 1:
        raise ValueError(f"blocks have mismatched dimensions {sorted(dims)}")
    return np.concatenate(blocks)


@dataclass(frozen=True)
class AvailableHistory:
    """Inclusive last-available ticks for each history kind at a given `now`.

    Own state/observation lag behind by the observation delay; other
    agents' additionally by the communication delay. An agent's own
    actuation is known through now + act - 1 because those commands are
    self-issued, already committed even though not yet applied.
    """

    own_x: Tick
    other_x: Tick
    own_z: Tick
    other_z: Tick
    own_u: Tick
    other_u: Tick


def available_history(agent: int, now: Tick, delays: DelaySpec, n_agents: int) -> AvailableHistory:
    """Information-availability cutoffs for `agent` at tick `now`.

    The cutoffs are symmetric across peers: for any two distinct agents
    the other-agent cutoffs are equal.
    """
    if not (0 <= agent < n_agents):
        raise IndexError(f"agent {agent} out of range for fleet of {n_agents}")
    return AvailableHistory(
        own_x=now - delays.obs,
        other_x=now - delays.obs - delays.comm,
        own_z=now - delays.obs,
        other_z=now - delays.obs - delays.comm,
        own_u=now + delays.act - 1,
        other_u=now - delays.comm,
    )
