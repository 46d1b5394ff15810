import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from onevision.controllers import (
    CIRCLE,
    FormationController,
    FormationSpec,
    LeaderFollowerPid,
    LeaderObstacleBangBang,
    LinearController,
    TRIANGLE,
)
from onevision.core import concat_blocks
from onevision.sim import RunConfig, ideal_oracle, run_simulation, sample_realization
from onevision.tasks import OBSTACLE_POSITION, build_task


class TestLeaderFollowerPid:
    def setup_method(self):
        self.c = LeaderFollowerPid()

    def test_equilibrium_zero_output(self):
        v_ref = 2.0
        x = np.array([0.0, v_ref, -self.c.d_ref, v_ref])
        u = self.c.act(x, np.array([v_ref, 0.0]), 0)
        assert np.allclose(u, 0.0, atol=1e-12)

    def test_gap_error_linear_law(self):
        # follower 1 m behind its slot at equal speeds: a2 = kd * 1
        v = 1.0
        x = np.array([0.0, v, -(self.c.d_ref + 1.0), v])
        u = self.c.act(x, np.array([v, 0.0]), 0)
        assert u[1] == pytest.approx(min(self.c.kd * 1.0, self.c.a_max))

    def test_closed_loop_converges_to_target_speed(self):
        # oracle: simulate the zero-delay centralized loop from rest
        cfg = RunConfig(
            task="leader-linear", framework="naive",
            sensor_noise=0.0, disturbance_noise=0.0, duration_s=10.0, seed=0,
        )
        task = build_task("leader-linear")
        realization = sample_realization(task, cfg.n_ticks, 0.0, 0.0, 0)
        x, z, u = ideal_oracle(task, realization, cfg.n_ticks, 5)
        v_ref = task.z0[0]
        assert abs(x[-1, 1] - v_ref) / v_ref < 0.01
        assert abs(x[-1, 3] - v_ref) / v_ref < 0.01

    @given(st.lists(st.floats(-1e6, 1e6), min_size=4, max_size=4), st.floats(-10, 10))
    @settings(max_examples=50, deadline=None)
    def test_output_always_clamped(self, xs, vref):
        u = self.c.act(np.array(xs), np.array([vref, 0.0]), 0)
        assert np.all(np.abs(u) <= self.c.a_max + 1e-12)

    def test_pure_replay(self, rng):
        xs = rng.standard_normal((50, 4))
        zs = rng.standard_normal((50, 2))
        first = [self.c.act(xs[k], zs[k], k) for k in range(50)]
        second = [self.c.act(xs[k], zs[k], k) for k in range(50)]
        assert all(np.array_equal(a, b) for a, b in zip(first, second))


class TestBangBang:
    def setup_method(self):
        self.c = LeaderObstacleBangBang()

    def test_accelerates_when_obstacle_unseen(self):
        x = np.array([0.0, 0.5, -1.5, 0.5])
        z = np.array([self.c.UNSEEN, self.c.UNSEEN])
        u = self.c.act(x, z, 0)
        assert u[0] == self.c.a_max

    def test_brakes_when_obstacle_close(self):
        x = np.array([0.0, 2.0, -1.5, 2.0])
        z = np.array([2.0, self.c.UNSEEN])  # obstacle 2 m ahead
        u = self.c.act(x, z, 0)
        assert u[0] == -self.c.a_max

    def test_deadband_zero(self):
        x = np.array([0.0, 2.0, -1.5, 2.0])
        z = np.array([self.c.UNSEEN, self.c.UNSEEN])
        u = self.c.act(x, z, 0)
        assert u[0] == 0.0

    def test_leader_stops_before_obstacle(self):
        # oracle: simulate the centralized loop with the scripted reveal
        cfg = RunConfig(
            task="leader-obstacle", framework="naive",
            sensor_noise=0.0, disturbance_noise=0.0, duration_s=20.0, seed=0,
        )
        task = build_task("leader-obstacle")
        realization = sample_realization(task, cfg.n_ticks, 0.0, 0.0, 0)
        x, z, u = ideal_oracle(task, realization, cfg.n_ticks, 5)
        d_stop = 1.0
        assert x[-1, 1] == pytest.approx(0.0, abs=0.05)  # stopped
        assert x[-1, 0] <= OBSTACLE_POSITION - d_stop


class TestFormation:
    def make(self):
        spec = FormationSpec.from_names([TRIANGLE])
        return FormationController(spec), spec

    def in_slot_fleet(self, ctrl, spec, v=1.5, theta=0.0, origin=(0.0, 0.0)):
        leader = np.array([origin[0], origin[1], theta, v, 0.0])
        slots = spec.slot_positions((origin[0], origin[1], theta), 0)
        blocks = [leader]
        for j in range(spec.n_followers):
            blocks.append(np.array([slots[j, 0], slots[j, 1], theta, v, 0.0]))
        return concat_blocks(blocks)

    def test_equilibrium_zero_controls(self):
        ctrl, spec = self.make()
        x = self.in_slot_fleet(ctrl, spec)
        z = np.zeros(12)
        z[0] = 1.5  # leader commanded at cruise speed, straight
        u = ctrl.act(x, z, 0)
        assert np.allclose(u, 0.0, atol=1e-9)

    def test_displaced_follower_steers_back(self):
        ctrl, spec = self.make()
        x = self.in_slot_fleet(ctrl, spec)
        # displace follower 1 laterally left by 0.5 m (separations stay > d_avoid)
        x[5 + 1] += 0.5
        z = np.zeros(12)
        z[0] = 1.5
        u = ctrl.act(x, z, 0)
        # steering-rate command points back toward the slot (rightward = negative)
        assert u[3] < 0.0

    def test_symmetric_pair_repulsion(self):
        # derived from the repulsion formula: equal magnitude, opposite rotation
        ctrl, spec = self.make()
        x = self.in_slot_fleet(ctrl, spec)
        # move followers 1 and 2 symmetrically about their midpoint, 0.6 m apart
        s = spec.slot_positions((0, 0, 0), 0)
        mid = 0.5 * (s[0] + s[1])
        x[5 + 0], x[5 + 1] = mid[0], mid[1] + 0.3
        x[10 + 0], x[10 + 1] = mid[0], mid[1] - 0.3
        d = 0.6
        k_rep, d_avoid = 1.5, 1.0
        w = k_rep * (d_avoid - d)
        sep = np.array([0.0, 0.6])  # follower1 - follower2
        push1 = w * np.array([-sep[1], sep[0]]) / d
        push2 = w * np.array([sep[1], -sep[0]]) / d
        assert np.allclose(push1, -push2)
        assert np.linalg.norm(push1) == pytest.approx(np.linalg.norm(push2))

    def test_leader_frame_equivariance(self, rng):
        # rigidly rotating + translating the fleet leaves the scalar controls unchanged
        ctrl, spec = self.make()
        x = self.in_slot_fleet(ctrl, spec)
        x = x + 0.05 * rng.standard_normal(x.shape)  # break symmetry a bit
        z = np.zeros(12)
        z[0], z[1] = 1.2, 0.1
        u_base = ctrl.act(x, z, 0)

        ang, shift = 1.1, np.array([4.0, -2.0])
        c, s = math.cos(ang), math.sin(ang)
        R = np.array([[c, -s], [s, c]])
        x_rot = x.copy()
        for a in range(4):
            b = 5 * a
            x_rot[b : b + 2] = R @ x[b : b + 2] + shift
            x_rot[b + 2] = x[b + 2] + ang
        u_rot = ctrl.act(x_rot, z, 0)
        assert np.allclose(u_rot, u_base, atol=1e-9)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_outputs_clamped(self, seed_val):
        ctrl, spec = self.make()
        r = np.random.default_rng(seed_val)
        x = 10.0 * r.standard_normal(20)
        z = 5.0 * r.standard_normal(12)
        u = ctrl.act(x, z, 0)
        bounds = np.tile(ctrl.u_bounds, 4)
        assert np.all(np.abs(u) <= bounds + 1e-12)

    def test_unknown_formation_rejected(self):
        with pytest.raises(ValueError):
            FormationSpec.from_names(["triangle", "hexagon"])

    def test_circle_geometry(self):
        spec = FormationSpec.from_names([CIRCLE])
        s = spec.slot_positions((0, 0, 0), 0)
        radii = np.linalg.norm(s, axis=1)
        assert np.allclose(radii, 1.5, atol=1e-12)
        angles = sorted(math.atan2(p[1], p[0]) % (2 * math.pi) for p in s)
        gaps = np.diff(angles + [angles[0] + 2 * math.pi])
        assert np.allclose(gaps, 2 * math.pi / 3, atol=1e-12)


class TestLinearController:
    def test_matches_formula(self, rng):
        Kx = rng.standard_normal((2, 4))
        Kz = rng.standard_normal((2, 2))
        v = lambda t: np.array([0.1 * t, -0.2])
        c = LinearController(Kx, Kz, v=v, n_agents=1)
        x, z = rng.standard_normal(4), rng.standard_normal(2)
        assert np.allclose(c.act(x, z, 3), -Kx @ x + Kz @ z + v(3), atol=1e-12)
