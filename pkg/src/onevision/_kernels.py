"""Compiled inner loops: single dynamics steps, centralized control laws,
closed-loop rollouts, and planning loss/gradient kernels.

Everything here is written in a numba-compatible subset of Python and is
jitted when numba is importable (set ONEVISION_NO_JIT=1 to force the pure
Python path; semantics are identical, only speed differs).

Two conventions matter for reproducibility:

* The ideal-trajectory oracle, the prediction anchor advance, and the
  forward-prediction rollout all go through the same `roll_*` kernels,
  so a zero-disturbance prediction is bit-identical to the oracle.
* Controllers are evaluated on the shared replanning lattice
  (t % interval == 0) and held between lattice ticks; rollouts starting
  mid-block therefore carry the held actuation in explicitly.

Headings are NOT renormalized inside rollouts: the simulation state keeps
the winding-free angle so that differences between trajectories stay
meaningful; wrapping to (-pi, pi] happens only at the typed API boundary.

Planner kernels propagate derivatives in dual-number forward mode (one
tangent column per decision component) and use softplus-rounded clamps of
width `width` so saturation keeps a usable gradient; applied controls are
hard-clamped outside these kernels.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    if os.environ.get("ONEVISION_NO_JIT"):
        raise ImportError("jit disabled by ONEVISION_NO_JIT")
    from numba import njit

    USING_JIT = True
except ImportError:  # pragma: no cover - exercised via ONEVISION_NO_JIT runs

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def deco(f):
            return f

        return deco

    USING_JIT = False


# ---------------------------------------------------------------------------
# scalar helpers
# ---------------------------------------------------------------------------


@njit(cache=True)
def hclamp(x, lo, hi):
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


@njit(cache=True)
def _softplus(s):
    # log(1 + e^s), stable for both signs
    if s > 0.0:
        return s + math.log1p(math.exp(-s))
    return math.log1p(math.exp(s))


@njit(cache=True)
def _sigmoid(s):
    if s > 0.0:
        return 1.0 / (1.0 + math.exp(-s))
    e = math.exp(s)
    return e / (1.0 + e)


@njit(cache=True)
def sclamp_vd(x, lo, hi, width):
    """Saturation for differentiated rollouts: the value is the hard clamp
    (identical to what the plant applies), the derivative is the smooth
    sigmoid surrogate of the given width so gradients stay informative."""
    y = hclamp(x, lo, hi)
    d = _sigmoid((x - lo) / width) * _sigmoid((hi - x) / width)
    return y, d


# ---------------------------------------------------------------------------
# dynamics single steps (hard-clamped; used by the world and by rollouts)
# ---------------------------------------------------------------------------


@njit(cache=True)
def di_step(x, u, dt, gain, a_max, out):
    """1D double integrator (p, v) with saturated acceleration command."""
    a = gain * hclamp(u[0], -a_max, a_max)
    out[0] = x[0] + dt * x[1]
    out[1] = x[1] + dt * a


@njit(cache=True)
def bicycle_step(x, u, dt, wheelbase, psi_max, a_max, sdot_max, out):
    """Kinematic bicycle (px, py, theta, v, psi), controls (accel, steer rate)."""
    a = hclamp(u[0], -a_max, a_max)
    sdot = hclamp(u[1], -sdot_max, sdot_max)
    theta = x[2]
    v = x[3]
    psi = x[4]
    out[0] = x[0] + dt * v * math.cos(theta)
    out[1] = x[1] + dt * v * math.sin(theta)
    out[2] = theta + dt * v * math.tan(psi) / wheelbase
    out[3] = v + dt * a
    out[4] = hclamp(psi + dt * sdot, -psi_max, psi_max)


@njit(cache=True)
def lti_step(x, u, A, B, w, out):
    nx = A.shape[0]
    nu = B.shape[1]
    for r in range(nx):
        acc = w[r]
        for c in range(nx):
            acc += A[r, c] * x[c]
        for c in range(nu):
            acc += B[r, c] * u[c]
        out[r] = acc


# ---------------------------------------------------------------------------
# centralized control laws (fleet in, fleet actuation out)
# ---------------------------------------------------------------------------

# params layout for the 1D leader/follower laws:
# [kp, kd, d_ref, a_max, v_ref_fallback, sensor_range, brake_margin, deadband,
#  gap_gain, gap_tol]
PID1D_KP = 0
PID1D_KD = 1
PID1D_DREF = 2
PID1D_AMAX = 3
BANG_RANGE = 5
BANG_MARGIN = 6
BANG_DEAD = 7
BANG_GAPGAIN = 8
BANG_GAPTOL = 9


@njit(cache=True)
def pid_leader_follower_u(x, z, params, out_u):
    """Task-1 law: leader tracks z-supplied target speed, follower tracks the gap."""
    kp = params[PID1D_KP]
    kd = params[PID1D_KD]
    d_ref = params[PID1D_DREF]
    a_max = params[PID1D_AMAX]
    v_ref = z[0]
    out_u[0] = hclamp(kp * (v_ref - x[1]), -a_max, a_max)
    a2 = kp * (x[1] - x[3]) + kd * (x[0] - x[2] - d_ref)
    out_u[1] = hclamp(a2, -a_max, a_max)


@njit(cache=True)
def bang_leader_follower_u(x, z, params, out_u):
    """Task-2 law: bang-bang speed control; leader brakes near the obstacle.

    z[0] carries the obstacle position once sensed (a large sentinel while
    unseen); z[1] slot carries the follower's (unused) observation.
    """
    d_ref = params[PID1D_DREF]
    a_max = params[PID1D_AMAX]
    v_ref = params[4]
    sensor_range = params[BANG_RANGE]
    brake_margin = params[BANG_MARGIN]
    dead = params[BANG_DEAD]
    p1 = x[0]
    v1 = x[1]
    obstacle = z[0]
    dist = obstacle - p1
    d_brake = v1 * v1 / (2.0 * a_max) + brake_margin
    if dist <= sensor_range and dist <= d_brake:
        # hold position once stopped; braking only acts on forward motion
        out_u[0] = -a_max if v1 > dead else 0.0
    elif v1 < v_ref - dead:
        out_u[0] = a_max
    elif v1 > v_ref + dead:
        out_u[0] = -a_max
    else:
        out_u[0] = 0.0
    # follower: bang-bang on the combined gap error + closing speed
    gap_err = (p1 - x[2]) - d_ref
    s = gap_err + params[BANG_GAPGAIN] * (v1 - x[3])
    tol = params[BANG_GAPTOL]
    if s > tol:
        out_u[1] = a_max
    elif s < -tol:
        out_u[1] = -a_max
    else:
        out_u[1] = 0.0


# params layout for the 2D formation law:
FORM_L = 0  # wheelbase used by the control law
FORM_DRP = 1  # reference-point offset ahead of the axle
FORM_KR = 2  # reference tracking gain
FORM_KV = 3  # speed loop gain
FORM_KPSI = 4  # steering loop gain
FORM_KREP = 5  # rotational repulsion gain
FORM_DAVOID = 6  # repulsion activation distance
FORM_AMAX = 7
FORM_SDOTMAX = 8
FORM_PSIMAX = 9
FORM_VFLOOR = 10  # inversion guard for the steering map


@njit(cache=True)
def formation_u(x, z, formations, params, out_u):
    """Tasks 3/4 law: leader follows external (v, psi) command; followers do
    reference-point tracking toward their formation slot plus rotational
    repulsion against close fleet members.

    x: (N*5,), z: (N*3,) with leader z = (v_des, psi_des, formation_id),
    formations: (n_formations, N-1, 3) slot (dx, dy, heading) in the leader frame.
    """
    n = x.shape[0] // 5
    L = params[FORM_L]
    d_rp = params[FORM_DRP]
    k_r = params[FORM_KR]
    k_v = params[FORM_KV]
    k_psi = params[FORM_KPSI]
    k_rep = params[FORM_KREP]
    d_avoid = params[FORM_DAVOID]
    a_max = params[FORM_AMAX]
    sdot_max = params[FORM_SDOTMAX]
    psi_max = params[FORM_PSIMAX]
    v_floor = params[FORM_VFLOOR]

    # leader
    v0 = x[3]
    psi0 = x[4]
    v_des = z[0]
    psi_des = hclamp(z[1], -psi_max, psi_max)
    out_u[0] = hclamp(k_v * (v_des - v0), -a_max, a_max)
    out_u[1] = hclamp(k_psi * (psi_des - psi0), -sdot_max, sdot_max)

    fid = int(round(z[2]))
    if fid < 0:
        fid = 0
    if fid > formations.shape[0] - 1:
        fid = formations.shape[0] - 1

    lx = x[0]
    ly = x[1]
    lth = x[2]
    cl = math.cos(lth)
    sl = math.sin(lth)
    omega_l = v0 * math.tan(psi0) / L

    for j in range(1, n):
        b = 5 * j
        px = x[b + 0]
        py = x[b + 1]
        th = x[b + 2]
        v = x[b + 3]
        psi = x[b + 4]

        ox = formations[fid, j - 1, 0]
        oy = formations[fid, j - 1, 1]
        sh = lth + formations[fid, j - 1, 2]
        # slot pose in world frame
        slot_x = lx + cl * ox - sl * oy
        slot_y = ly + sl * ox + cl * oy
        r_slot_x = slot_x + d_rp * math.cos(sh)
        r_slot_y = slot_y + d_rp * math.sin(sh)
        # slot reference-point velocity: leader translation + rotation
        rel_x = r_slot_x - lx
        rel_y = r_slot_y - ly
        ff_x = v0 * cl - omega_l * rel_y
        ff_y = v0 * sl + omega_l * rel_x

        c = math.cos(th)
        s = math.sin(th)
        r_x = px + d_rp * c
        r_y = py + d_rp * s
        cmd_x = ff_x + k_r * (r_slot_x - r_x)
        cmd_y = ff_y + k_r * (r_slot_y - r_y)

        # rotational repulsion from every close fleet member
        for k in range(n):
            if k == j:
                continue
            dx = px - x[5 * k + 0]
            dy = py - x[5 * k + 1]
            d = math.sqrt(dx * dx + dy * dy)
            if d < d_avoid and d > 1e-9:
                w = k_rep * (d_avoid - d)
                cmd_x += w * (-dy / d)
                cmd_y += w * (dx / d)

        # invert r-dot = M(theta) (v, theta_dot)' ; det M = d_rp
        v_cmd = c * cmd_x + s * cmd_y
        thdot_cmd = (-s * cmd_x + c * cmd_y) / d_rp

        out_u[2 * j] = hclamp(k_v * (v_cmd - v), -a_max, a_max)
        vv = v if v > v_floor else v_floor
        psi_cmd = hclamp(math.atan(thdot_cmd * L / vv), -psi_max, psi_max)
        out_u[2 * j + 1] = hclamp(k_psi * (psi_cmd - psi), -sdot_max, sdot_max)


@njit(cache=True)
def lti_u(x, z, Kx, Kz, v_term, out_u):
    nu = Kx.shape[0]
    nx = Kx.shape[1]
    nz = Kz.shape[1]
    for r in range(nu):
        acc = v_term[r]
        for c in range(nx):
            acc -= Kx[r, c] * x[c]
        for c in range(nz):
            acc += Kz[r, c] * z[c]
        out_u[r] = acc


# ---------------------------------------------------------------------------
# closed-loop rollouts (shared by oracle / anchor advance / forward prediction)
# ---------------------------------------------------------------------------
#
# All roll kernels share the calling convention:
#   x0 (NX,), z0 (NZ,), u_hold (NU,)  - state at t0 and the actuation held
#                                       from the previous lattice tick
#   t0, n, interval                   - roll [t0, t0 + n], refresh u when
#                                       t % interval == 0
#   dx (n, NX), dz (n, NZ)            - additive state/observation deltas
#   out_x (n+1, NX), out_z, out_u     - recorded trajectories
#
# dynamics params are family-specific. Observations follow the constant-hold
# model (z' = z + dz) for the vehicle tasks and the linear model for LTI.


@njit(cache=True)
def roll_pid1d(x0, z0, u_hold, t0, n, interval, dx, dz, dt, gain, a_max, cparams, out_x, out_z, out_u):
    nx2 = x0.shape[0]
    x = x0.copy()
    z = z0.copy()
    u = u_hold.copy()
    xn = np.empty(2)
    for k in range(n + 1):
        t = t0 + k
        if t % interval == 0:
            pid_leader_follower_u(x, z, cparams, u)
        for c in range(nx2):
            out_x[k, c] = x[c]
        for c in range(z.shape[0]):
            out_z[k, c] = z[c]
        for c in range(u.shape[0]):
            out_u[k, c] = u[c]
        if k < n:
            for a in range(2):
                di_step(x[2 * a : 2 * a + 2], u[a : a + 1], dt, gain, a_max, xn)
                x[2 * a] = xn[0] + dx[k, 2 * a]
                x[2 * a + 1] = xn[1] + dx[k, 2 * a + 1]
            for c in range(z.shape[0]):
                z[c] = z[c] + dz[k, c]


@njit(cache=True)
def roll_bang1d(x0, z0, u_hold, t0, n, interval, dx, dz, dt, gain, a_max, cparams, out_x, out_z, out_u):
    x = x0.copy()
    z = z0.copy()
    u = u_hold.copy()
    xn = np.empty(2)
    for k in range(n + 1):
        t = t0 + k
        if t % interval == 0:
            bang_leader_follower_u(x, z, cparams, u)
        for c in range(x.shape[0]):
            out_x[k, c] = x[c]
        for c in range(z.shape[0]):
            out_z[k, c] = z[c]
        for c in range(u.shape[0]):
            out_u[k, c] = u[c]
        if k < n:
            for a in range(2):
                di_step(x[2 * a : 2 * a + 2], u[a : a + 1], dt, gain, a_max, xn)
                x[2 * a] = xn[0] + dx[k, 2 * a]
                x[2 * a + 1] = xn[1] + dx[k, 2 * a + 1]
            for c in range(z.shape[0]):
                z[c] = z[c] + dz[k, c]


@njit(cache=True)
def roll_formation(
    x0, z0, u_hold, t0, n, interval, dx, dz, dt, wheelbase, formations, cparams, out_x, out_z, out_u
):
    nagents = x0.shape[0] // 5
    psi_max = cparams[FORM_PSIMAX]
    a_max = cparams[FORM_AMAX]
    sdot_max = cparams[FORM_SDOTMAX]
    x = x0.copy()
    z = z0.copy()
    u = u_hold.copy()
    xn = np.empty(5)
    for k in range(n + 1):
        t = t0 + k
        if t % interval == 0:
            formation_u(x, z, formations, cparams, u)
        for c in range(x.shape[0]):
            out_x[k, c] = x[c]
        for c in range(z.shape[0]):
            out_z[k, c] = z[c]
        for c in range(u.shape[0]):
            out_u[k, c] = u[c]
        if k < n:
            for a in range(nagents):
                bicycle_step(
                    x[5 * a : 5 * a + 5],
                    u[2 * a : 2 * a + 2],
                    dt,
                    wheelbase,
                    psi_max,
                    a_max,
                    sdot_max,
                    xn,
                )
                for c in range(5):
                    x[5 * a + c] = xn[c] + dx[k, 5 * a + c]
            for c in range(z.shape[0]):
                z[c] = z[c] + dz[k, c]


@njit(cache=True)
def roll_lti(
    x0, z0, u_hold, t0, n, interval, dx, dz, A, B, wdrift, C, mudrift, Kx, Kz, vterm, out_x, out_z, out_u
):
    """Generic LTI fleet roll. A: (N, nx, nx), B: (N, nx, nu), C: (N, nz, nz);
    wdrift (n, N*nx), mudrift (n, N*nz) are model drift terms; vterm (n+1, N*nu)
    is the controller's time-varying affine term indexed by k."""
    nagents = A.shape[0]
    nx = A.shape[1]
    nu = B.shape[2]
    nz = C.shape[1]
    x = x0.copy()
    z = z0.copy()
    u = u_hold.copy()
    xn = np.empty(nx)
    zn = np.empty(nz)
    for k in range(n + 1):
        t = t0 + k
        if t % interval == 0:
            lti_u(x, z, Kx, Kz, vterm[k], u)
        for c in range(x.shape[0]):
            out_x[k, c] = x[c]
        for c in range(z.shape[0]):
            out_z[k, c] = z[c]
        for c in range(u.shape[0]):
            out_u[k, c] = u[c]
        if k < n:
            for a in range(nagents):
                lti_step(
                    x[nx * a : nx * a + nx],
                    u[nu * a : nu * a + nu],
                    A[a],
                    B[a],
                    wdrift[k, nx * a : nx * a + nx],
                    xn,
                )
                for c in range(nx):
                    x[nx * a + c] = xn[c] + dx[k, nx * a + c]
            for a in range(nagents):
                for r in range(nz):
                    acc = mudrift[k, nz * a + r]
                    for c in range(nz):
                        acc += C[a, r, c] * z[nz * a + c]
                    zn[r] = acc
                for c in range(nz):
                    z[nz * a + c] = zn[c] + dz[k, nz * a + c]


# ---------------------------------------------------------------------------
# planning loss/gradient kernels (dual-number forward mode)
# ---------------------------------------------------------------------------
#
# Shared convention: the window is n_frozen pre-committed ticks followed by
# H decision blocks of `interval` ticks each (L = n_frozen + H*interval).
# Decision tangents occupy columns [h*nu, (h+1)*nu) of the propagated
# Jacobian. Targets tx (L, nx), tu (L, nu) come from forward prediction;
# the loss is sum_t |x - tx|_qx^2 + |u - tu|_qu^2 with diagonal weights.


@njit(cache=True)
def plan_di(x0, u_frozen, u_blocks, interval, tx, tu, qx, qu, dt, gain, a_max, width):
    H = u_blocks.shape[0]
    n_frozen = u_frozen.shape[0]
    L = n_frozen + H * interval
    D = H  # nu = 1
    p = x0[0]
    v = x0[1]
    Jp = np.zeros(D)
    Jv = np.zeros(D)
    loss = 0.0
    grad = np.zeros(D)
    for k in range(L):
        if k < n_frozen:
            uc = u_frozen[k, 0]
            col = -1
        else:
            h = (k - n_frozen) // interval
            uc = u_blocks[h, 0]
            col = h
        ep = p - tx[k, 0]
        ev = v - tx[k, 1]
        eu = uc - tu[k, 0]
        loss += qx[0] * ep * ep + qx[1] * ev * ev + qu[0] * eu * eu
        for d in range(D):
            grad[d] += 2.0 * (qx[0] * ep * Jp[d] + qx[1] * ev * Jv[d])
        if col >= 0:
            grad[col] += 2.0 * qu[0] * eu
        if k < L - 1:
            a_eff, da = sclamp_vd(uc, -a_max, a_max, width)
            p = p + dt * v
            for d in range(D):
                Jp[d] += dt * Jv[d]
            v = v + dt * gain * a_eff
            if col >= 0:
                Jv[col] += dt * gain * da
    return loss, grad


@njit(cache=True)
def plan_bicycle(x0, u_frozen, u_blocks, interval, tx, tu, qx, qu, dt, wheelbase, psi_max, a_max, sdot_max, width):
    H = u_blocks.shape[0]
    nu = 2
    n_frozen = u_frozen.shape[0]
    L = n_frozen + H * interval
    D = H * nu
    x = x0.copy()
    J = np.zeros((5, D))
    Jn = np.zeros((5, D))
    loss = 0.0
    grad = np.zeros(D)
    for k in range(L):
        if k < n_frozen:
            ua = u_frozen[k, 0]
            us = u_frozen[k, 1]
            ca = -1
            cs = -1
        else:
            h = (k - n_frozen) // interval
            ua = u_blocks[h, 0]
            us = u_blocks[h, 1]
            ca = h * nu
            cs = h * nu + 1
        for c in range(5):
            e = x[c] - tx[k, c]
            loss += qx[c] * e * e
            w = 2.0 * qx[c] * e
            for d in range(D):
                grad[d] += w * J[c, d]
        ea = ua - tu[k, 0]
        es = us - tu[k, 1]
        loss += qu[0] * ea * ea + qu[1] * es * es
        if ca >= 0:
            grad[ca] += 2.0 * qu[0] * ea
            grad[cs] += 2.0 * qu[1] * es
        if k < L - 1:
            a_eff, da = sclamp_vd(ua, -a_max, a_max, width)
            s_eff, ds = sclamp_vd(us, -sdot_max, sdot_max, width)
            th = x[2]
            v = x[3]
            psi = x[4]
            cth = math.cos(th)
            sth = math.sin(th)
            tpsi = math.tan(psi)
            sec2 = 1.0 + tpsi * tpsi
            psi_mid = psi + dt * s_eff
            psi_new, dmid = sclamp_vd(psi_mid, -psi_max, psi_max, width)
            for d in range(D):
                Jn[0, d] = J[0, d] + dt * (cth * J[3, d] - v * sth * J[2, d])
                Jn[1, d] = J[1, d] + dt * (sth * J[3, d] + v * cth * J[2, d])
                Jn[2, d] = J[2, d] + dt * (tpsi * J[3, d] + v * sec2 * J[4, d]) / wheelbase
                Jn[3, d] = J[3, d]
                Jn[4, d] = dmid * J[4, d]
            if ca >= 0:
                Jn[3, ca] += dt * da
                Jn[4, cs] += dmid * dt * ds
            x[0] = x[0] + dt * v * cth
            x[1] = x[1] + dt * v * sth
            x[2] = th + dt * v * tpsi / wheelbase
            x[3] = v + dt * a_eff
            x[4] = psi_new
            tmp = J
            J = Jn
            Jn = tmp
    return loss, grad


@njit(cache=True)
def plan_lti(x0, u_frozen, u_blocks, interval, tx, tu, qx, qu, A, B, warr):
    """LTI planning kernel; warr (L-1, nx) is the model drift over the window."""
    H = u_blocks.shape[0]
    nx = A.shape[0]
    nu = B.shape[1]
    n_frozen = u_frozen.shape[0]
    L = n_frozen + H * interval
    D = H * nu
    x = x0.copy()
    xn = np.empty(nx)
    J = np.zeros((nx, D))
    Jn = np.zeros((nx, D))
    loss = 0.0
    grad = np.zeros(D)
    for k in range(L):
        if k < n_frozen:
            ublock = u_frozen[k]
            base = -1
        else:
            h = (k - n_frozen) // interval
            ublock = u_blocks[h]
            base = h * nu
        for c in range(nx):
            e = x[c] - tx[k, c]
            loss += qx[c] * e * e
            w = 2.0 * qx[c] * e
            for d in range(D):
                grad[d] += w * J[c, d]
        for j in range(nu):
            e = ublock[j] - tu[k, j]
            loss += qu[j] * e * e
            if base >= 0:
                grad[base + j] += 2.0 * qu[j] * e
        if k < L - 1:
            for r in range(nx):
                acc = warr[k, r]
                for c in range(nx):
                    acc += A[r, c] * x[c]
                for j in range(nu):
                    acc += B[r, j] * ublock[j]
                xn[r] = acc
                for d in range(D):
                    s = 0.0
                    for c in range(nx):
                        s += A[r, c] * J[c, d]
                    Jn[r, d] = s
                if base >= 0:
                    for j in range(nu):
                        Jn[r, base + j] += B[r, j]
            for r in range(nx):
                x[r] = xn[r]
            tmp = J
            J = Jn
            Jn = tmp
    return loss, grad
