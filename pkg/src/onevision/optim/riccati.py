"""Discrete-time algebraic Riccati equation solver and LQR gain.

Solved by fixed-point (value) iteration by default, which is simple and
directly checkable against the Bellman recursion; a structured-doubling
fast path is available for stiff cases. Accepted solutions are certified:
P symmetric positive definite and the closed loop A - B K strictly stable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DareSolution:
    P: np.ndarray
    K: np.ndarray
    iterations: int
    residual: float

    def closed_loop_radius(self, A: np.ndarray, B: np.ndarray) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(A - B @ self.K))))


def dare_residual(P, A, B, Qx, Qu) -> float:
    """Max-norm of P - (Qx + A'PA - A'PB (Qu + B'PB)^-1 B'PA)."""
    BtP = B.T @ P
    M = np.linalg.solve(Qu + BtP @ B, BtP @ A)
    next_P = Qx + A.T @ P @ A - A.T @ P @ B @ M
    return float(np.max(np.abs(P - next_P)))


def solve_dare(
    A: np.ndarray,
    B: np.ndarray,
    Qx: np.ndarray,
    Qu: np.ndarray,
    tol: float = 1e-10,
    max_iters: int = 100_000,
    method: str = "iteration",
) -> DareSolution:
    """Solve the DARE for (A, B, Qx, Qu) and return cost-to-go P and gain K.

    Requires (A, B) stabilizable and Qu positive definite; non-convergence
    within max_iters raises, which in practice signals a non-stabilizable
    input.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    Qx = np.atleast_2d(np.asarray(Qx, dtype=np.float64))
    Qu = np.atleast_2d(np.asarray(Qu, dtype=np.float64))
    n = A.shape[0]
    if B.shape[0] != n:
        raise ValueError("A and B row dimensions disagree")
    _check_weights(Qx, Qu)

    if method == "doubling":
        P, iters = _doubling(A, B, Qx, Qu, tol, max_iters)
    elif method == "iteration":
        P, iters = _value_iteration(A, B, Qx, Qu, tol, max_iters)
    else:
        raise ValueError(f"unknown DARE method {method!r}")

    P = 0.5 * (P + P.T)
    K = np.linalg.solve(Qu + B.T @ P @ B, B.T @ P @ A)
    sol = DareSolution(P=P, K=K, iterations=iters, residual=dare_residual(P, A, B, Qx, Qu))
    asym = float(np.max(np.abs(P - P.T)))
    if asym > 1e-10:
        raise RuntimeError(f"DARE produced an asymmetric P (|P-P'| = {asym:g})")
    rho = sol.closed_loop_radius(A, B)
    if rho >= 1.0:
        raise RuntimeError(f"DARE gain does not stabilize the closed loop (rho = {rho:g})")
    return sol


def _value_iteration(A, B, Qx, Qu, tol, max_iters):
    P = Qx.copy()
    for it in range(1, max_iters + 1):
        BtP = B.T @ P
        M = np.linalg.solve(Qu + BtP @ B, BtP @ A)
        P_next = Qx + A.T @ P @ (A - B @ M)
        P_next = 0.5 * (P_next + P_next.T)
        delta = float(np.max(np.abs(P_next - P)))
        P = P_next
        if delta < tol:
            return P, it
    raise RuntimeError(
        f"DARE value iteration did not converge in {max_iters} iterations; "
        "is (A, B) stabilizable?"
    )


def _doubling(A, B, Qx, Qu, tol, max_iters):
    # structured doubling: squares the closed-loop map each step
    G = B @ np.linalg.solve(Qu, B.T)
    Ak, Gk, Hk = A.copy(), G, Qx.copy()
    I = np.eye(A.shape[0])
    for it in range(1, 200):
        W = I + Gk @ Hk
        W_inv_A = np.linalg.solve(W, Ak)
        W_inv_G = np.linalg.solve(W, Gk)
        H_next = Hk + Ak.T @ Hk @ W_inv_A
        G_next = Gk + Ak @ W_inv_G @ Ak.T
        A_next = Ak @ W_inv_A
        delta = float(np.max(np.abs(H_next - Hk)))
        Ak, Gk, Hk = A_next, G_next, 0.5 * (H_next + H_next.T)
        if delta < tol:
            return Hk, it
    raise RuntimeError("DARE doubling iteration did not converge")


def _check_weights(Qx, Qu):
    for name, M, kind in (("Qx", Qx, "psd"), ("Qu", Qu, "pd")):
        if np.max(np.abs(M - M.T)) > 1e-12:
            raise ValueError(f"{name} must be symmetric")
        eigs = np.linalg.eigvalsh(M)
        if kind == "psd" and eigs.min() < -1e-12:
            raise ValueError(f"{name} must be positive semi-definite (min eig {eigs.min():g})")
        if kind == "pd" and eigs.min() <= 1e-15:
            raise ValueError(f"{name} must be positive definite (min eig {eigs.min():g})")
