import numpy as np
import pytest
from hypothesis import given, strategies as st

from onevision.core import (
    DelaySpec,
    FleetSnapshot,
    InsufficientHistoryError,
    Trajectory,
    agent_block,
    available_history,
    concat_blocks,
    seconds_to_ticks,
)


class TestDelaySpec:
    def test_all_delays_must_be_positive(self):
        with pytest.raises(ValueError):
            DelaySpec(obs=3, act=4, comm=0)
        with pytest.raises(ValueError):
            DelaySpec(obs=0, act=4, comm=5)
        with pytest.raises(ValueError):
            DelaySpec(obs=3, act=4, comm=5, control_interval=0)

    def test_non_integral_ticks_rejected(self):
        with pytest.raises(ValueError):
            seconds_to_ticks(0.033)  # 3.3 ticks at 100 Hz
        with pytest.raises(ValueError):
            DelaySpec.from_ms(obs_ms=30, act_ms=40, comm_ms=33)

    def test_from_ms_defaults(self):
        d = DelaySpec.from_ms(obs_ms=30, act_ms=40, comm_ms=50)
        assert (d.obs, d.act, d.comm, d.control_interval) == (3, 4, 5, 5)

    def test_non_integer_type_rejected(self):
        with pytest.raises(ValueError):
            DelaySpec(obs=3.5, act=4, comm=5)


class TestAvailability:
    def test_direct_substitution(self):
        d = DelaySpec(obs=3, act=4, comm=5)
        cuts = available_history(0, 10, d, n_agents=2)
        assert cuts.own_x == 7
        assert cuts.other_x == 2

    def test_own_actuation_known_ahead(self):
        d = DelaySpec(obs=3, act=4, comm=5)
        cuts = available_history(1, 20, d, n_agents=2)
        assert cuts.own_u == 23  # committed through now + act - 1
        assert cuts.other_u == 15

    def test_tick_zero_resolves_in_seeded_history(self):
        d = DelaySpec(obs=3, act=4, comm=5)
        cuts = available_history(0, 0, d, n_agents=2)
        depth = d.history_depth()
        seeded = Trajectory.constant(-depth, depth, np.zeros(2))
        # every cutoff points inside the seeded range
        for t in (cuts.own_x, cuts.other_x, cuts.own_z, cuts.other_z, cuts.other_u):
            assert seeded.start <= t < seeded.end
            seeded.at(t)

    def test_agent_out_of_range(self):
        d = DelaySpec(obs=1, act=1, comm=1)
        with pytest.raises(IndexError):
            available_history(3, 5, d, n_agents=2)

    @given(now=st.integers(min_value=0, max_value=10_000))
    def test_cutoffs_increase_with_slope_one(self, now):
        d = DelaySpec(obs=2, act=3, comm=4)
        a = available_history(0, now, d, 2)
        b = available_history(0, now + 1, d, 2)
        for field in ("own_x", "other_x", "own_z", "other_z", "own_u", "other_u"):
            assert getattr(b, field) - getattr(a, field) == 1

    def test_other_agent_cutoffs_symmetric(self):
        d = DelaySpec(obs=2, act=3, comm=4)
        c1 = available_history(0, 50, d, 3)
        c2 = available_history(2, 50, d, 3)
        assert c1.other_x == c2.other_x
        assert c1.other_u == c2.other_u


class TestTrajectory:
    def test_round_trip_exact(self, rng):
        values = rng.standard_normal((20, 3))
        traj = Trajectory.from_array(5, values)
        for k in range(20):
            assert np.array_equal(traj.at(5 + k), values[k])

    def test_append_and_range(self):
        t = Trajectory(0, 2)
        t.append([1.0, 2.0])
        t.append([3.0, 4.0])
        assert len(t) == 2 and t.end == 2
        assert np.array_equal(t.at(1), [3.0, 4.0])

    def test_out_of_range_read(self):
        t = Trajectory.constant(0, 5, np.zeros(1))
        with pytest.raises(InsufficientHistoryError):
            t.at(-1)
        with pytest.raises(InsufficientHistoryError):
            t.at(5)

    def test_slice_whole_is_identity(self, rng):
        values = rng.standard_normal((10, 2))
        traj = Trajectory.from_array(3, values)
        w = traj.window(3, 13)
        assert w.start == 3 and len(w) == 10
        assert np.array_equal(w.array(), values)

    def test_slice_empty(self):
        traj = Trajectory.constant(0, 4, np.zeros(2))
        w = traj.window(2, 2)
        assert len(w) == 0

    def test_slice_composition(self, rng):
        traj = Trajectory.from_array(0, rng.standard_normal((30, 2)))
        once = traj.window(5, 25).window(10, 20)
        direct = traj.window(10, 20)
        assert once.start == direct.start
        assert np.array_equal(once.array(), direct.array())

    def test_slice_out_of_range(self):
        traj = Trajectory.constant(0, 4, np.zeros(2))
        with pytest.raises(InsufficientHistoryError):
            traj.window(0, 5)

    def test_reads_are_immutable(self):
        traj = Trajectory.constant(0, 4, np.zeros(2))
        view = traj.at(0)
        with pytest.raises(ValueError):
            view[0] = 1.0


class TestScatterGather:
    def test_single_agent_identity(self, rng):
        v = rng.standard_normal(4)
        assert np.array_equal(agent_block(v, 0, 4), v)

    def test_block_layout(self):
        v = np.arange(6.0)
        assert np.array_equal(agent_block(v, 1, 2), [2.0, 3.0])

    def test_round_trip_exact(self, rng):
        fleet = rng.standard_normal(12)
        blocks = [agent_block(fleet, i, 4) for i in range(3)]
        assert np.array_equal(concat_blocks(blocks), fleet)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            agent_block(np.zeros(7), 0, 2)
        with pytest.raises(ValueError):
            concat_blocks([np.zeros(2), np.zeros(3)])

    def test_snapshot_validation(self):
        with pytest.raises(ValueError):
            FleetSnapshot(x=np.zeros(5), z=np.zeros(2), u=np.zeros(2), n_agents=2)
        snap = FleetSnapshot(x=np.zeros(4), z=np.zeros(2), u=np.zeros(2), n_agents=2)
        assert snap.nx == 2 and snap.nz == 1 and snap.nu == 1
