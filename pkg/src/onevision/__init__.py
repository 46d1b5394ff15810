"""Distributed multi-agent control from a centralized specification:
delay-compensating per-agent controllers that regret-minimize against a
locally predicted ideal fleet trajectory, plus the benchmark harness and
an LTI stability-verification suite."""

from onevision.core import (
    DelaySpec,
    FleetSnapshot,
    InsufficientHistoryError,
    Trajectory,
    available_history,
    seconds_to_ticks,
)
from onevision.dynamics import (
    CarState1D,
    CarState2D,
    DisturbanceRealization,
    DoubleIntegrator1D,
    KinematicBicycle,
    LtiDynamics,
    car2d_step,
    measure_disturbance,
    sample_noise,
    step_true,
)
from onevision.frameworks import FRAMEWORKS, IdealPrediction, RegretWeights
from onevision.sim import RunConfig, RunLog, ideal_oracle, run_simulation, run_sweep
from onevision.tasks import TASK_BUILDERS, build_task

__version__ = "0.1.0"

__all__ = [
    "DelaySpec",
    "FleetSnapshot",
    "InsufficientHistoryError",
    "Trajectory",
    "available_history",
    "seconds_to_ticks",
    "CarState1D",
    "CarState2D",
    "DisturbanceRealization",
    "DoubleIntegrator1D",
    "KinematicBicycle",
    "LtiDynamics",
    "car2d_step",
    "measure_disturbance",
    "sample_noise",
    "step_true",
    "FRAMEWORKS",
    "IdealPrediction",
    "RegretWeights",
    "RunConfig",
    "RunLog",
    "ideal_oracle",
    "run_simulation",
    "run_sweep",
    "TASK_BUILDERS",
    "build_task",
    "__version__",
]
