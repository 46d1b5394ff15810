import math

import numpy as np
import pytest

from onevision.core import Trajectory
from onevision.dynamics import (
    CarState2D,
    DoubleIntegrator1D,
    KinematicBicycle,
    LtiDynamics,
    car2d_step,
    measure_disturbance,
    measure_observation_disturbance,
    ConstantHoldObservation,
    normalize_angle,
    sample_noise,
    step_true,
)


class TestDoubleIntegrator:
    def test_euler_step(self):
        m = DoubleIntegrator1D(dt=0.01)
        out = m.step(np.array([0.0, 1.0]), np.array([0.0]))
        assert out[0] == pytest.approx(0.01, abs=1e-15)
        assert out[1] == 1.0

    def test_acceleration_saturates(self):
        m = DoubleIntegrator1D(dt=0.01, a_max=3.0)
        out = m.step(np.array([0.0, 0.0]), np.array([100.0]))
        assert out[1] == pytest.approx(0.03)

    def test_pure_function(self, rng):
        m = DoubleIntegrator1D()
        x, u = rng.standard_normal(2), rng.standard_normal(1)
        a = m.step(x, u)
        b = m.step(x, u)
        assert np.array_equal(a, b)


class TestStepTrue:
    def test_zero_disturbance_equals_model(self):
        m = DoubleIntegrator1D(dt=0.01)
        dx = Trajectory.constant(0, 10, np.zeros(2))
        x, u = np.array([0.0, 1.0]), np.array([0.0])
        assert np.array_equal(step_true(m, dx, x, u, 3), m.step(x, u, 3))

    def test_additive_disturbance(self):
        m = DoubleIntegrator1D(dt=0.01)
        dx = Trajectory.constant(0, 10, np.array([0.1, 0.0]))
        out = step_true(m, dx, np.array([0.0, 1.0]), np.array([0.0]), 0)
        assert out[0] == pytest.approx(0.11, abs=1e-15)

    def test_outside_realization_range(self):
        m = DoubleIntegrator1D()
        dx = Trajectory.constant(0, 5, np.zeros(2))
        with pytest.raises(Exception):
            step_true(m, dx, np.zeros(2), np.zeros(1), 7)


class TestMeasureDisturbance:
    def test_recovers_injected_delta(self, rng):
        m = DoubleIntegrator1D(dt=0.01)
        x, u = rng.standard_normal(2), rng.standard_normal(1)
        delta = np.array([0.002, -0.004])
        x_next = m.step(x, u, 0) + delta
        rec = measure_disturbance(x_next, x, u, 0, m)
        assert np.max(np.abs(rec - delta)) < 1e-12

    def test_exact_model_zero_delta(self, rng):
        m = DoubleIntegrator1D()
        x, u = rng.standard_normal(2), rng.standard_normal(1)
        rec = measure_disturbance(m.step(x, u, 0), x, u, 0, m)
        assert np.array_equal(rec, np.zeros(2))

    def test_scaled_acceleration_mismatch(self):
        # oracle: compute both steps explicitly and subtract
        truth = DoubleIntegrator1D(dt=0.01, accel_gain=1.0)
        model = DoubleIntegrator1D(dt=0.01, accel_gain=1.4)
        x, u = np.array([1.0, 2.0]), np.array([1.5])
        x_next = truth.step(x, u, 0)
        expected = truth.step(x, u, 0) - model.step(x, u, 0)
        rec = measure_disturbance(x_next, x, u, 0, model)
        assert np.allclose(rec, expected, atol=1e-15)
        assert rec[1] == pytest.approx((1.0 - 1.4) * 1.5 * 0.01, abs=1e-15)

    def test_observation_variant(self):
        obs = ConstantHoldObservation(2)
        z = np.array([1.0, 2.0])
        dz = measure_observation_disturbance(z + np.array([0.5, 0.0]), z, 0, obs)
        assert np.allclose(dz, [0.5, 0.0])

    def test_full_run_recovery(self, rng):
        # measure o step_true recovers the realization over a long run
        m = DoubleIntegrator1D(dt=0.01)
        deltas = 0.01 * rng.standard_normal((500, 2))
        dx = Trajectory.from_array(0, deltas)
        x = np.array([0.0, 1.0])
        worst = 0.0
        for t in range(500):
            u = np.array([math.sin(0.05 * t)])
            x_next = step_true(m, dx, x, u, t)
            rec = measure_disturbance(x_next, x, u, t, m)
            worst = max(worst, float(np.max(np.abs(rec - deltas[t]))))
            x = x_next
        assert worst < 1e-10


class TestBicycle:
    def test_straight_line(self):
        s = CarState2D(0, 0, 0, 1.0, 0)
        out = car2d_step(s, np.zeros(2), wheelbase=0.3, dt=0.01)
        assert out.px == pytest.approx(0.01, abs=1e-15)
        assert (out.py, out.theta, out.v, out.psi) == (0, 0, 1.0, 0)

    def test_yaw_rate_from_steering(self):
        # theta_dot = v tan(psi) / L evaluated numerically
        psi = math.pi / 4
        s = CarState2D(0, 0, 0, 1.0, psi, psi_max=1.0)
        out = car2d_step(s, np.zeros(2), wheelbase=0.3, dt=0.01)
        rate = out.theta / 0.01
        assert rate == pytest.approx(math.tan(psi) / 0.3, rel=1e-12)
        assert rate == pytest.approx(3.3333, rel=1e-3)

    def test_circle_convergence(self):
        # Euler path converges to the analytic circle of radius L / tan(psi)
        L, psi, v = 0.3, 0.3, 1.0
        radius = L / math.tan(psi)

        def max_radius_error(dt):
            m = KinematicBicycle(dt=dt, wheelbase=L, psi_max=1.0)
            x = np.array([0.0, 0.0, 0.0, v, psi])
            center = np.array([0.0, radius])
            worst = 0.0
            for t in range(int(2.0 / dt)):
                x = m.step(x, np.zeros(2), t)
                r = math.hypot(x[0] - center[0], x[1] - center[1])
                worst = max(worst, abs(r - radius))
            return worst

        e1 = max_radius_error(0.01)
        e2 = max_radius_error(0.005)
        assert e1 < 0.05 * radius
        assert e2 < 0.6 * e1  # first-order convergence

    def test_speed_preserved_without_accel(self, rng):
        m = KinematicBicycle()
        x = np.array([0.0, 0.0, 0.5, 1.3, 0.2])
        out = m.step(x, np.array([0.0, 1.0]))
        assert out[3] == 1.3

    def test_steering_clamped(self):
        s = CarState2D(0, 0, 0, 1.0, 0.5, psi_max=0.6)
        out = car2d_step(s, np.array([0.0, 100.0]), wheelbase=0.3, dt=0.1)
        assert out.psi == pytest.approx(0.6)

    def test_heading_normalized_at_api(self):
        assert CarState2D(0, 0, 4.0, 0, 0).theta == pytest.approx(4.0 - 2 * math.pi)
        assert normalize_angle(math.pi) == pytest.approx(math.pi)
        assert normalize_angle(-math.pi) == pytest.approx(math.pi)


class TestLti:
    def test_spectral_radius_checked(self):
        with pytest.raises(ValueError):
            LtiDynamics(A=[[1.1]], B=[[1.0]])
        LtiDynamics(A=[[1.0]], B=[[1.0]])  # marginally stable allowed

    def test_affine_part_cancels(self, rng):
        A = np.array([[0.9, 0.1], [0.0, 0.8]])
        B = np.array([[0.0], [1.0]])
        m = LtiDynamics(A, B, w=lambda t: np.array([0.3, -0.2]))
        x1, x2 = rng.standard_normal(2), rng.standard_normal(2)
        u1, u2 = rng.standard_normal(1), rng.standard_normal(1)
        lhs = m.step(x1, u1, 5) - m.step(x2, u2, 5)
        rhs = A @ (x1 - x2) + B @ (u1 - u2)
        assert np.allclose(lhs, rhs, atol=1e-12)


class TestSampleNoise:
    def test_zero_strength(self, rng):
        assert not sample_noise(0.0, 100, 3, rng).any()

    def test_negative_strength_rejected(self, rng):
        with pytest.raises(ValueError):
            sample_noise(-1.0, 10, 1, rng)

    def test_empirical_std(self):
        rng = np.random.default_rng(7)
        samples = sample_noise(0.005, 100_000, 1, rng)
        assert abs(samples.std() - 0.005) / 0.005 < 0.02

    def test_deterministic_given_seed(self):
        a = sample_noise(0.01, 50, 2, np.random.default_rng(3))
        b = sample_noise(0.01, 50, 2, np.random.default_rng(3))
        assert np.array_equal(a, b)
