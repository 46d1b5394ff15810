import math

import numpy as np
import pytest
import scipy.linalg

from onevision.optim import (
    Dual,
    forward_grad,
    lbfgs_minimize,
    seed,
    smooth_clamp,
    solve_dare,
    value_and_grad,
)
from onevision.optim.lbfgs import LbfgsOptions
from onevision.optim.riccati import dare_residual
from onevision.optim import autodiff as ad


class TestLbfgs:
    def test_scalar_quadratic(self):
        res = lbfgs_minimize(lambda x: ((x[0] - 3.0) ** 2, np.array([2 * (x[0] - 3.0)])), np.zeros(1))
        assert abs(res.x[0] - 3.0) < 1e-8
        assert res.converged

    def test_rosenbrock(self):
        def f(v):
            x, y = v
            loss = (1 - x) ** 2 + 100 * (y - x * x) ** 2
            g = np.array([-2 * (1 - x) - 400 * x * (y - x * x), 200 * (y - x * x)])
            return loss, g

        res = lbfgs_minimize(f, np.array([-1.2, 1.0]), LbfgsOptions(max_iters=500))
        assert np.max(np.abs(res.x - 1.0)) < 1e-6

    def test_spd_quadratic_matches_linear_solve(self, rng):
        # oracle: direct solve of Qx = b
        M = rng.standard_normal((12, 12))
        Q = M @ M.T + 12 * np.eye(12)
        b = rng.standard_normal(12)
        x_star = np.linalg.solve(Q, b)

        def f(x):
            return 0.5 * x @ Q @ x - b @ x, Q @ x - b

        res = lbfgs_minimize(f, np.zeros(12), LbfgsOptions(max_iters=300))
        assert np.max(np.abs(res.x - x_star)) < 1e-7

    def test_loss_never_worse_than_start(self, rng):
        Q = np.diag(rng.uniform(0.1, 10.0, size=6))

        def f(x):
            return x @ Q @ x, 2 * Q @ x

        x0 = rng.standard_normal(6)
        res = lbfgs_minimize(f, x0)
        assert res.loss <= f(x0)[0]

    def test_nan_aborts_with_diagnostic(self):
        def f(x):
            return float("nan"), np.zeros(1)

        res = lbfgs_minimize(f, np.zeros(1))
        assert res.status == "non-finite"
        assert not res.converged

    def test_deterministic(self, rng):
        Q = np.diag(rng.uniform(0.5, 2.0, size=4))

        def f(x):
            return x @ Q @ x - x.sum(), 2 * Q @ x - 1.0

        x0 = rng.standard_normal(4)
        a = lbfgs_minimize(f, x0)
        b = lbfgs_minimize(f, x0)
        assert np.array_equal(a.x, b.x) and a.loss == b.loss


class TestForwardMode:
    def test_sin_derivative_at_zero(self):
        g = forward_grad(lambda x: ad.sin(x[0]), np.zeros(1))
        assert g[0] == pytest.approx(1.0, abs=1e-15)

    def test_product_and_chain(self):
        def f(x):
            return ad.exp(x[0] * x[1]) + ad.tanh(x[0])

        x = np.array([0.3, -0.7])
        val, g = value_and_grad(f, x)
        h = 1e-7
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            fd = (f(seed(x + e)).val - f(seed(x - e)).val) / (2 * h)
            assert g[i] == pytest.approx(fd, rel=1e-6)

    def test_division_and_power(self):
        def f(x):
            return (x[0] ** 3) / (1.0 + x[1] * x[1])

        x = np.array([1.2, 0.5])
        _, g = value_and_grad(f, x)
        assert g[0] == pytest.approx(3 * 1.2**2 / 1.25, rel=1e-12)

    def test_smooth_clamp_interior_and_saturated(self):
        # interior: identity with unit slope; saturated: flat
        x = np.array([0.0])
        _, g = value_and_grad(lambda v: smooth_clamp(v[0], -1.0, 1.0, 0.01), x)
        assert g[0] == pytest.approx(1.0, abs=1e-8)
        val, g = value_and_grad(lambda v: smooth_clamp(v[0], -1.0, 1.0, 0.01), np.array([5.0]))
        assert val == pytest.approx(1.0, abs=1e-12)
        assert abs(g[0]) < 1e-8

    def test_rollout_gradient_vs_central_differences(self, rng):
        # H=5 LTI rollout loss against its quadratic-target objective
        A = np.array([[1.0, 0.01], [0.0, 1.0]])
        B = np.array([[0.0], [0.01]])
        target = rng.standard_normal((5, 2))

        def rollout(u):
            x = Dual(np.array([0.3, -0.2]), np.zeros((2, u.ndirs)))
            loss = None
            for k in range(5):
                uk = u[k]
                err0 = x[0] - target[k, 0]
                err1 = x[1] - target[k, 1]
                term = err0 * err0 + err1 * err1 + 0.1 * uk * uk
                loss = term if loss is None else loss + term
                x = ad.stack([x[0] + 0.01 * x[1], x[1] + 0.01 * uk])
            return loss

        u0 = rng.standard_normal(5)
        val, g = value_and_grad(rollout, u0)
        h = 1e-5
        for i in range(5):
            e = np.zeros(5)
            e[i] = h
            fd = (rollout(seed(u0 + e)).val - rollout(seed(u0 - e)).val) / (2 * h)
            assert abs(g[i] - fd) / max(abs(fd), 1e-10) < 1e-6


class TestDare:
    def test_scalar_golden_ratio(self):
        # root of P^2 - P - 1 = 0 and K = 2 / (1 + sqrt(5))
        sol = solve_dare([[1.0]], [[1.0]], [[1.0]], [[1.0]])
        assert sol.P[0, 0] == pytest.approx((1 + math.sqrt(5)) / 2, abs=1e-9)
        assert sol.K[0, 0] == pytest.approx(2 / (1 + math.sqrt(5)), abs=1e-9)

    def test_dead_dynamics(self):
        Qx = np.diag([2.0, 3.0])
        sol = solve_dare(np.zeros((2, 2)), np.eye(2), Qx, np.eye(2))
        assert np.allclose(sol.P, Qx, atol=1e-12)
        assert np.allclose(sol.K, 0.0, atol=1e-12)

    def test_random_stabilizable_system(self, rng):
        A = rng.standard_normal((4, 4))
        A *= 0.95 / np.max(np.abs(np.linalg.eigvals(A)))
        B = rng.standard_normal((4, 2))
        Qx = np.eye(4)
        Qu = np.eye(2)
        sol = solve_dare(A, B, Qx, Qu)
        assert dare_residual(sol.P, A, B, Qx, Qu) < 1e-9
        assert sol.closed_loop_radius(A, B) < 1.0
        # oracle: scipy's Riccati solver
        P_ref = scipy.linalg.solve_discrete_are(A, B, Qx, Qu)
        assert np.max(np.abs(sol.P - P_ref)) < 1e-6

    def test_doubling_matches_iteration(self, rng):
        A = np.array([[1.0, 0.01], [0.0, 1.0]])
        B = np.array([[0.0], [0.01]])
        a = solve_dare(A, B, np.eye(2), [[0.1]], method="iteration")
        b = solve_dare(A, B, np.eye(2), [[0.1]], method="doubling")
        assert np.max(np.abs(a.P - b.P)) < 1e-7

    def test_weight_validation(self):
        with pytest.raises(ValueError):
            solve_dare([[1.0]], [[1.0]], [[-1.0]], [[1.0]])
        with pytest.raises(ValueError):
            solve_dare([[1.0]], [[1.0]], [[1.0]], [[0.0]])

    def test_p_symmetric(self, rng):
        A = 0.9 * np.eye(3) + 0.05 * rng.standard_normal((3, 3))
        B = rng.standard_normal((3, 3))
        sol = solve_dare(A, B, np.eye(3), np.eye(3))
        assert np.max(np.abs(sol.P - sol.P.T)) < 1e-10
