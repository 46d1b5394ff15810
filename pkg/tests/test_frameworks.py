import math

import numpy as np
import pytest

from onevision.core import DelaySpec
from onevision.frameworks import (
    FRAMEWORKS,
    OneVisionBrain,
    RegretWeights,
    decode_message,
    encode_message,
    make_brain,
)
from onevision.optim.riccati import solve_dare
from onevision.sim import (
    RunConfig,
    ideal_oracle,
    per_tick_regret,
    run_simulation,
    sample_realization,
)
from onevision.tasks import Task, build_lti_task, build_task


def scalar_lti_task(v=None):
    """Single-agent scalar integrator with identity feedback."""
    return build_lti_task(
        "scalar", [np.array([[1.0]])], [np.array([[1.0]])],
        Kx=np.array([[0.7]]), Kz=np.array([[0.0]]),
        x0=np.zeros(1), z0=np.zeros(1), C=np.eye(1), v=v,
    )


def planner_weights(task, cfg):
    """The weights run_simulation hands the local planners."""
    return RegretWeights(
        np.diag(cfg.qx * task.qx_weights), np.diag(cfg.qu * task.qu_weights)
    )


def mirror_brains(task, cfg, log, n_ticks, on_replan=None):
    """Drive fresh brains through a logged run exactly like the simulator:
    identical samples, the real encoded messages, the real delay queue."""
    from collections import deque

    n = task.n_agents
    nx, nz = task.nx, task.nz
    brains = [
        make_brain(
            cfg.framework, i, task, cfg.delays,
            horizon=cfg.horizon, weights=planner_weights(task, cfg),
            lbfgs_opts=cfg.lbfgs_options(),
        )
        for i in range(n)
    ]
    queue = deque()
    for t in range(n_ticks):
        inboxes = [[] for _ in range(n)]
        while queue and queue[0][0] == t:
            _, sender, payload = queue.popleft()
            for i in range(n):
                if i != sender:
                    inboxes[i].append(payload)
        for i in range(n):
            mt = t - cfg.delays.obs
            xs = log.x[mt, i * nx : (i + 1) * nx] if mt >= 0 else task.x0[i * nx : (i + 1) * nx]
            zs = log.z[mt, i * nz : (i + 1) * nz] if mt >= 0 else task.z0[i * nz : (i + 1) * nz]
            queue.append((t + cfg.delays.comm, i, brains[i].observe(t, xs, zs, inboxes[i])))
        if t % cfg.delays.control_interval == 0:
            for i in range(n):
                first, per = brains[i].replan(t)
                if on_replan is not None:
                    on_replan(t, i, first, per)
    return brains


def equilibrium_pid_task():
    """leader-linear variant starting at the cruising equilibrium."""
    task = build_task("leader-linear")
    v_ref = task.z0[0]
    d_ref = task.controller.d_ref
    task.x0 = np.array([0.0, v_ref, -d_ref, v_ref])
    return task


class TestMessages:
    def test_round_trip(self, rng):
        dims = {"x": 2, "z": 1, "dx": 2, "dz": 1, "u": 1}
        segments = {
            "x": (7, rng.standard_normal((1, 2))),
            "dx": (6, rng.standard_normal((2, 2))),
            "u": (9, rng.standard_normal((1, 1))),
        }
        blob = encode_message(3, segments)
        agent, decoded = decode_message(blob, dims)
        assert agent == 3
        assert set(decoded) == {"x", "dx", "u"}
        for kind, (start, data) in segments.items():
            d_start, d_data = decoded[kind]
            assert d_start == start
            assert np.array_equal(d_data, data)

    def test_empty_message(self):
        dims = {"x": 2, "z": 1, "dx": 2, "dz": 1, "u": 1}
        agent, decoded = decode_message(encode_message(0, {}), dims)
        assert agent == 0 and decoded == {}

    def test_size_bounded_per_tick(self):
        dims = {"x": 5, "z": 3, "dx": 5, "dz": 3, "u": 2}
        segments = {
            "x": (0, np.zeros((1, 5))), "z": (0, np.zeros((1, 3))),
            "dx": (0, np.zeros((1, 5))), "dz": (0, np.zeros((1, 3))),
            "u": (0, np.zeros((1, 2))),
        }
        blob = encode_message(0, segments)
        header = 16
        assert len(blob) == 5 * header + 8 * (5 + 3 + 5 + 3 + 2)

    def test_trailing_garbage_rejected(self):
        dims = {"x": 1, "z": 1, "dx": 1, "dz": 1, "u": 1}
        blob = encode_message(0, {}) + b"xx"
        with pytest.raises(ValueError):
            decode_message(blob, dims)


class TestRegretWeights:
    def test_validation(self):
        with pytest.raises(ValueError):
            RegretWeights(np.array([[1.0, 0.5], [0.0, 1.0]]), np.eye(1))  # asymmetric
        with pytest.raises(ValueError):
            RegretWeights(-np.eye(2), np.eye(1))
        with pytest.raises(ValueError):
            RegretWeights(np.eye(2), np.zeros((1, 1)))  # Qu must be PD

    def test_psd_qx_allowed(self):
        RegretWeights(np.diag([1.0, 0.0]), 0.1 * np.eye(1))

    def test_regret_of_ideal_vs_itself_is_zero(self, rng):
        w = RegretWeights.from_scalars(2, 1)
        x = rng.standard_normal((10, 4))
        u = rng.standard_normal((10, 2))
        r = per_tick_regret(x, u, x, u, 2, w)
        assert np.array_equal(r, np.zeros(10))


class TestForwardPrediction:
    def run_with_trace(self, task, cfg):
        return run_simulation(cfg, task=task)

    def test_zero_disturbance_prediction_matches_oracle(self):
        task = build_task("leader-linear")
        cfg = RunConfig(
            task="leader-linear", framework="onevision",
            sensor_noise=0.0, disturbance_noise=0.0, duration_s=2.0, seed=0,
        )
        realization = sample_realization(task, cfg.n_ticks, 0.0, 0.0, 0)
        ix, iz, iu = ideal_oracle(task, realization, cfg.n_ticks, 5)
        log = run_simulation(cfg, task=task)
        # a mirrored agent reproduces every commitment bit-for-bit, and its
        # prediction coincides with the ideal trajectory on the whole span
        mismatches = []

        def check(t, i, first, per):
            if not np.array_equal(per, log.u[first : first + 5, i : i + 1]):
                mismatches.append((t, i))

        brains = mirror_brains(task, cfg, log, 101, on_replan=check)
        assert not mismatches
        pred = brains[0].forward_predict(100)
        n_cmp = min(pred.x.shape[0], cfg.n_ticks - pred.start)
        err = np.max(np.abs(pred.x[:n_cmp] - ix[pred.start : pred.start + n_cmp]))
        assert err < 1e-9

    def test_lemma1_anchor_exact_under_disturbance(self):
        task = build_task("leader-linear")
        cfg = RunConfig(
            task="leader-linear", framework="onevision",
            sensor_noise=0.0, disturbance_noise=0.02, duration_s=3.0, seed=5,
            trace_plans=True,
        )
        log = run_simulation(cfg, task=task)
        worst = 0.0
        for dbg in log.trace:
            ref = log.ideal_x[dbg.anchor_tick] if dbg.anchor_tick >= 0 else task.x0
            worst = max(worst, float(np.max(np.abs(dbg.anchor_x - ref))))
        assert worst < 1e-10

    def test_corrupted_initialization_breaks_anchor(self):
        # negative control: agents initialized with the wrong fleet state
        task = build_task("leader-linear")
        task.x0 = task.x0.copy()
        cfg = RunConfig(
            task="leader-linear", framework="onevision",
            sensor_noise=0.0, disturbance_noise=0.0, duration_s=1.0, seed=0,
            trace_plans=True, initial_offset=(0.5, 0.0, 0.0, 0.0),
        )
        # initial_offset shifts the true world away from the agents' assumed
        # initial condition; the ideal tracks the true start only if agents
        # were told about it. Here we corrupt the agents' view instead by
        # comparing anchors against a differently-started oracle.
        log = run_simulation(cfg, task=task)
        worst = 0.0
        for dbg in log.trace:
            if dbg.anchor_tick >= 0:
                worst = max(worst, float(np.max(np.abs(dbg.anchor_x - log.x[dbg.anchor_tick]))))
        # anchors track the ideal (started at x0), not the offset world
        assert worst > 1e-3

    def test_step_disturbance_known_to_predictor(self):
        # single-agent LTI: prediction equals the true closed loop through
        # the newest tick whose disturbance the predictor has measured
        task = scalar_lti_task()
        T = 200
        cfg = RunConfig(
            task="scalar", framework="onevision", delays=DelaySpec(2, 2, 2, 2),
            sensor_noise=0.0, disturbance_noise=0.0, duration_s=T / 100, seed=0,
            horizon=5,
        )
        realization = sample_realization(task, T, 0.0, 0.0, 0)
        realization.dx[50:, 0] = 0.05  # constant step from tick 50 on
        ix, iz, iu = ideal_oracle(task, realization, T, 2)
        log = run_simulation(cfg, task=task, realization=realization)

        brain = make_brain(
            "onevision", 0, task, cfg.delays, horizon=5,
            weights=planner_weights(task, cfg), lbfgs_opts=cfg.lbfgs_options(),
        )
        for t in range(121):
            mt = t - 2
            xs = log.x[mt, 0:1] if mt >= 0 else task.x0[0:1]
            zs = log.z[mt, 0:1] if mt >= 0 else task.z0[0:1]
            brain.observe(t, xs, zs, [])
            if t % 2 == 0 and t < 120:
                brain.replan(t)
        pred = brain.forward_predict(120)
        known_through = 120 - 2 - 1  # own deltas measured through tau - obs - 1
        for t in range(pred.start, known_through + 2):
            assert abs(pred.x[t - pred.start, 0] - ix[t, 0]) < 1e-10
        # beyond the knowledge boundary the step is missing: divergence
        tail = pred.start + pred.x.shape[0] - 1
        assert abs(pred.x[tail - pred.start, 0] - ix[tail, 0]) > 1e-4


class TestSelfEstimation:
    def test_exact_when_model_exact(self):
        task = build_task("leader-linear")
        cfg = RunConfig(
            task="leader-linear", framework="onevision",
            sensor_noise=0.0, disturbance_noise=0.0, duration_s=2.0, seed=0,
            trace_plans=True,
        )
        log = run_simulation(cfg, task=task)
        apply_tick = None
        for dbg in log.trace:
            t = dbg.tau + cfg.delays.act
            if t < log.n_ticks:
                err = np.max(np.abs(dbg.estimate - log.x[t, dbg.agent * 2 : dbg.agent * 2 + 2]))
                assert err < 1e-12

    def test_constant_disturbance_linear_growth(self):
        # closed form: e(tau + act) = sum_{j<W} A^j w for W = obs + act ticks
        task = build_task("leader-linear")
        d = DelaySpec(obs=3, act=4, comm=5, control_interval=5)
        cfg = RunConfig(
            task="leader-linear", framework="onevision", delays=d,
            sensor_noise=0.0, disturbance_noise=0.0, duration_s=2.0, seed=0,
            trace_plans=True,
        )
        T = cfg.n_ticks
        realization = sample_realization(task, T, 0.0, 0.0, 0)
        w = np.array([0.0, 0.002])  # constant velocity disturbance per tick
        realization.dx[:, 0:2] = w
        realization.dx[:, 2:4] = w
        log = run_simulation(cfg, task=task, realization=realization)
        A = np.array([[1.0, 0.01], [0.0, 1.0]])
        W = d.obs + d.act
        expected = sum(np.linalg.matrix_power(A, j) @ w for j in range(W))
        for dbg in log.trace:
            t = dbg.tau + d.act
            if 50 <= t < log.n_ticks:
                err = log.x[t, dbg.agent * 2 : dbg.agent * 2 + 2] - dbg.estimate
                assert np.max(np.abs(err - expected)) < 1e-9
                break

    def test_zero_span_rejected_at_construction(self):
        with pytest.raises(ValueError):
            DelaySpec(obs=0, act=0, comm=1)


class TestLocalPlanning:
    def test_zero_deviation_returns_predicted_actuation(self):
        task = build_task("leader-linear")
        cfg = RunConfig(
            task="leader-linear", framework="onevision",
            sensor_noise=0.0, disturbance_noise=0.0, duration_s=1.0, seed=0,
            trace_plans=True,
        )
        log = run_simulation(cfg, task=task)
        for dbg in log.trace:
            if np.max(np.abs(dbg.estimate - dbg.pred_x_at_apply)) < 1e-12:
                assert np.max(np.abs(dbg.u_first - dbg.pred_u_at_apply)) < 1e-9

    def test_scalar_dare_feedback(self):
        # deviation 1 with unit weights: first correction is -K with
        # K = 2/(1+sqrt(5)), against the Riccati oracle
        task = scalar_lti_task()
        d = DelaySpec(obs=1, act=1, comm=1, control_interval=1)
        w = RegretWeights(np.eye(1), np.eye(1))
        brain = OneVisionBrain(0, task, d, horizon=80, weights=w)
        from onevision.optim.lbfgs import LbfgsOptions

        brain.lbfgs_opts = LbfgsOptions(max_iters=500, g_tol=1e-12)
        # drive a clean zero-disturbance run so predictions are exact zeros
        for t in range(12):
            mt = t - 1
            xs = np.zeros(1)
            zs = np.zeros(1)
            brain.observe(t, xs, zs, [])
            if t < 11:
                brain.replan(t)
        pred = brain.forward_predict(11)
        estimate = pred.x[pred.row(12), 0:1] + 1.0  # unit deviation
        blocks, result, copy_loss = brain.local_plan(estimate, pred, 11)
        K = 2 / (1 + math.sqrt(5))
        assert blocks[0, 0] == pytest.approx(-K, abs=1e-4)
        sol = solve_dare([[1.0]], [[1.0]], [[1.0]], [[1.0]])
        assert blocks[0, 0] == pytest.approx(-sol.K[0, 0], abs=1e-4)

    def test_optimizer_dominance(self):
        # the chosen plan never scores worse than copying the prediction
        cfg = RunConfig(
            task="formation-switching", framework="onevision",
            duration_s=3.0, seed=3, trace_plans=True,
        )
        log = run_simulation(cfg)
        assert log.trace, "no plans recorded"
        for dbg in log.trace:
            assert dbg.loss <= dbg.copy_loss + 1e-12


class TestFrameworkBehavior:
    def test_onevision_zero_delay_limit(self):
        # all delays at the one-tick minimum, zero noise: the fleet matches
        # the centralized closed loop to within one-tick staleness
        task = build_task("leader-linear")
        d = DelaySpec(obs=1, act=1, comm=1, control_interval=1)
        cfg = RunConfig(
            task="leader-linear", framework="onevision", delays=d,
            sensor_noise=0.0, disturbance_noise=0.0, duration_s=3.0, seed=0,
        )
        log = run_simulation(cfg, task=task)
        assert np.max(np.abs(log.x - log.ideal_x)) < 1e-6

    def test_onevision_lti_default_delays_zero_noise(self):
        # zero-disturbance corollary of the stability theorem
        task = scalar_lti_task(v=lambda t: np.array([0.3 * math.sin(0.04 * t)]))
        cfg = RunConfig(
            task="scalar", framework="onevision",
            sensor_noise=0.0, disturbance_noise=0.0, duration_s=5.0, seed=0,
        )
        log = run_simulation(cfg, task=task)
        assert float(np.mean(log.regret[5:])) < 1e-6

    def test_baselines_coincide_at_equilibrium_minimum_delay(self):
        task = equilibrium_pid_task()
        d = DelaySpec(obs=1, act=1, comm=1, control_interval=1)
        for fw in ("naive", "local", "constu"):
            cfg = RunConfig(
                task="leader-linear", framework=fw, delays=d,
                sensor_noise=0.0, disturbance_noise=0.0, duration_s=2.0, seed=0,
            )
            log = run_simulation(cfg, task=task)
            assert np.max(log.regret) < 1e-9, fw

    def test_constu_exact_when_peer_actuation_constant(self):
        # at the cruising equilibrium every actuation is constant (zero), so
        # ConstU's peer extrapolation is exact and it matches the ideal
        task = equilibrium_pid_task()
        cfg = RunConfig(
            task="leader-linear", framework="constu",
            sensor_noise=0.0, disturbance_noise=0.0, duration_s=2.0, seed=0,
        )
        log = run_simulation(cfg, task=task)
        assert np.max(log.regret) < 1e-12

    def test_prediction_consensus_across_agents(self):
        # deterministic reconstruction: both agents' anchors agree with the
        # ideal trajectory, hence with each other, under any disturbances
        cfg = RunConfig(
            task="leader-linear", framework="onevision",
            sensor_noise=0.0, disturbance_noise=0.05, duration_s=2.0, seed=9,
            trace_plans=True,
        )
        log = run_simulation(cfg)
        by_tau = {}
        for dbg in log.trace:
            by_tau.setdefault(dbg.tau, {})[dbg.agent] = dbg.anchor_x
        for tau, anchors in by_tau.items():
            if len(anchors) == 2:
                assert np.max(np.abs(anchors[0] - anchors[1])) < 1e-10

    def test_unknown_framework_rejected(self):
        task = build_task("leader-linear")
        with pytest.raises(KeyError):
            make_brain("magic", 0, task, DelaySpec(1, 1, 1))

    def test_baseline_ordering_small(self):
        # 3-seed smoke version of the table trend; the full 10-seed check
        # lives in the acceptance suite
        means = {}
        for fw in FRAMEWORKS:
            vals = []
            for seed in range(3):
                cfg = RunConfig(task="leader-linear", framework=fw, duration_s=10.0, seed=seed)
                vals.append(run_simulation(cfg).metrics["avg_regret"])
            means[fw] = float(np.mean(vals))
        assert means["onevision"] < min(means["naive"], means["local"], means["constu"])
        assert means["constu"] <= means["local"]
