"""Limited-memory BFGS with a strong-Wolfe line search.

The minimizer is stateless and deterministic: identical (objective, x0,
options) always produce identical output. Non-finite objective values
abort the solve with a diagnostic so callers can fall back to their
warm start.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LbfgsOptions:
    memory: int = 10
    g_tol: float = 1e-8
    x_tol: float = 1e-14
    max_iters: int = 100
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    max_line_search: int = 25


@dataclass
class LbfgsResult:
    x: np.ndarray
    loss: float
    grad_norm: float
    iterations: int
    evaluations: int
    converged: bool
    status: str


def lbfgs_minimize(fun, x0: np.ndarray, opts: LbfgsOptions | None = None) -> LbfgsResult:
    """Minimize fun(x) -> (loss, grad) starting from x0.

    Terminates on gradient norm < g_tol, step size < x_tol, the iteration
    cap, or a failed line search; the best iterate seen is returned in
    every case. NaN/Inf at x0 aborts immediately with status "non-finite".
    """
    opts = opts or LbfgsOptions()
    x = np.array(x0, dtype=np.float64).ravel().copy()
    n_evals = [0]

    def evaluate(xk):
        n_evals[0] += 1
        f, g = fun(xk)
        return float(f), np.asarray(g, dtype=np.float64).ravel()

    f, g = evaluate(x)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        return LbfgsResult(x, f, float(np.linalg.norm(g)), 0, n_evals[0], False, "non-finite")

    s_hist: deque = deque(maxlen=opts.memory)
    y_hist: deque = deque(maxlen=opts.memory)
    rho_hist: deque = deque(maxlen=opts.memory)
    best_x, best_f = x.copy(), f
    status = "max-iters"
    converged = False
    it = 0

    for it in range(1, opts.max_iters + 1):
        gnorm = np.linalg.norm(g)
        if gnorm < opts.g_tol:
            status, converged = "g-tol", True
            break

        d = _two_loop_direction(g, s_hist, y_hist, rho_hist)
        dg = float(d @ g)
        if dg >= 0.0:  # curvature breakdown: fall back to steepest descent
            d = -g
            dg = -float(gnorm**2)

        step, f_new, g_new, ok = _wolfe_line_search(evaluate, x, f, g, d, dg, opts)
        if not ok:
            status = "line-search-failed"
            break
        if not np.isfinite(f_new) or not np.all(np.isfinite(g_new)):
            status = "non-finite"
            break

        x_new = x + step * d
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-16 * float(np.linalg.norm(s)) * float(np.linalg.norm(y) + 1e-300):
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / sy)

        step_inf = float(np.max(np.abs(s))) if s.size else 0.0
        x, f, g = x_new, f_new, g_new
        if f < best_f:
            best_f, best_x = f, x.copy()
        if step_inf < opts.x_tol:
            status, converged = "x-tol", True
            break
    else:
        it = opts.max_iters

    if f < best_f:
        best_f, best_x = f, x.copy()
    if status == "g-tol" or np.linalg.norm(g) < opts.g_tol:
        converged = True
    return LbfgsResult(best_x, best_f, float(np.linalg.norm(g)), it, n_evals[0], converged, status)


def _two_loop_direction(g, s_hist, y_hist, rho_hist):
    q = g.copy()
    alphas = []
    for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if y_hist:
        y_last, s_last = y_hist[-1], s_hist[-1]
        gamma = (s_last @ y_last) / (y_last @ y_last)
        q *= gamma
    for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def _wolfe_line_search(evaluate, x, f0, g0, d, dg0, opts: LbfgsOptions):
    """Strong-Wolfe bracketing line search (sufficient decrease + curvature)."""
    c1, c2 = opts.wolfe_c1, opts.wolfe_c2
    alpha_prev, f_prev = 0.0, f0
    alpha = 1.0
    f_a, g_a = f0, g0

    for i in range(opts.max_line_search):
        f_a, g_a = evaluate(x + alpha * d)
        if not np.isfinite(f_a):
            alpha *= 0.5
            continue
        if f_a > f0 + c1 * alpha * dg0 or (i > 0 and f_a >= f_prev):
            return _zoom(evaluate, x, f0, dg0, d, alpha_prev, alpha, f_prev, opts)
        dg_a = float(g_a @ d)
        if abs(dg_a) <= -c2 * dg0:
            return alpha, f_a, g_a, True
        if dg_a >= 0.0:
            return _zoom(evaluate, x, f0, dg0, d, alpha, alpha_prev, f_a, opts)
        alpha_prev, f_prev = alpha, f_a
        alpha *= 2.0

    # accept any simple-decrease point rather than failing outright
    if f_a < f0:
        return alpha, f_a, g_a, True
    return 0.0, f0, g0, False


def _zoom(evaluate, x, f0, dg0, d, lo, hi, f_lo, opts: LbfgsOptions):
    c1, c2 = opts.wolfe_c1, opts.wolfe_c2
    f_a, g_a = f0, None
    alpha = lo
    for _ in range(opts.max_line_search):
        alpha = 0.5 * (lo + hi)
        f_a, g_a = evaluate(x + alpha * d)
        if not np.isfinite(f_a) or f_a > f0 + c1 * alpha * dg0 or f_a >= f_lo:
            hi = alpha
            continue
        dg_a = float(g_a @ d)
        if abs(dg_a) <= -c2 * dg0:
            return alpha, f_a, g_a, True
        if dg_a * (hi - lo) >= 0.0:
            hi = lo
        lo, f_lo = alpha, f_a
        if abs(hi - lo) < 1e-16:
            break
    if g_a is not None and np.isfinite(f_a) and f_a < f0:
        return alpha, f_a, g_a, True
    return 0.0, f0, None, False
