"""Compiled single-configuration kernels for the iterative solvers.

These mirror :func:`ikforge.chain.frames` for one joint vector and fuse the
pose error and Jacobian into a single pass. Tests check them against the
numpy implementation.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _rotation_log(m, out):
    c = 0.5 * (m[0, 0] + m[1, 1] + m[2, 2] - 1.0)
    vx = 0.5 * (m[2, 1] - m[1, 2])
    vy = 0.5 * (m[0, 2] - m[2, 0])
    vz = 0.5 * (m[1, 0] - m[0, 1])
    s = math.sqrt(vx * vx + vy * vy + vz * vz)
    if c > -0.99:
        scale = math.atan2(s, c) / s if s > 1e-12 else 1.0
        out[0] = vx * scale
        out[1] = vy * scale
        out[2] = vz * scale
        return
    # near pi: (R + R^T)/2 - c I = (1 - c) a a^T; take its largest column,
    # sign from the antisymmetric part
    angle = math.atan2(s, c)
    diag = np.array([m[0, 0], m[1, 1], m[2, 2]])
    k = int(np.argmax(diag))
    axis = np.empty(3)
    for i in range(3):
        axis[i] = 0.5 * (m[i, k] + m[k, i])
    axis[k] -= c
    nrm = math.sqrt(axis[0] ** 2 + axis[1] ** 2 + axis[2] ** 2)
    for i in range(3):
        axis[i] /= nrm
    if axis[0] * vx + axis[1] * vy + axis[2] * vz < 0.0:
        for i in range(3):
            axis[i] = -axis[i]
    for i in range(3):
        out[i] = axis[i] * angle


@njit(cache=True)
def error_and_jacobian(pre_t, pre_r, axes, tool_t, tool_r, theta, target_p, target_r, err, jac):
    """Fill ``err`` (6,) with ``(p* - p, log(R* R^T))`` and ``jac`` (6, n)."""
    n = theta.shape[0]
    r = np.eye(3)
    p = np.zeros(3)
    origins = np.empty((n, 3))
    zs = np.empty((n, 3))
    tmp = np.empty((3, 3))
    for i in range(n):
        for a in range(3):
            p[a] += r[a, 0] * pre_t[i, 0] + r[a, 1] * pre_t[i, 1] + r[a, 2] * pre_t[i, 2]
        for a in range(3):
            for b in range(3):
                tmp[a, b] = r[a, 0] * pre_r[i, 0, b] + r[a, 1] * pre_r[i, 1, b] + r[a, 2] * pre_r[i, 2, b]
        kx, ky, kz = axes[i, 0], axes[i, 1], axes[i, 2]
        for a in range(3):
            origins[i, a] = p[a]
            zs[i, a] = tmp[a, 0] * kx + tmp[a, 1] * ky + tmp[a, 2] * kz
        s = math.sin(theta[i])
        c = math.cos(theta[i])
        v = 1.0 - c
        rot00 = c + kx * kx * v
        rot01 = kx * ky * v - kz * s
        rot02 = kx * kz * v + ky * s
        rot10 = ky * kx * v + kz * s
        rot11 = c + ky * ky * v
        rot12 = ky * kz * v - kx * s
        rot20 = kz * kx * v - ky * s
        rot21 = kz * ky * v + kx * s
        rot22 = c + kz * kz * v
        for a in range(3):
            t0, t1, t2 = tmp[a, 0], tmp[a, 1], tmp[a, 2]
            r[a, 0] = t0 * rot00 + t1 * rot10 + t2 * rot20
            r[a, 1] = t0 * rot01 + t1 * rot11 + t2 * rot21
            r[a, 2] = t0 * rot02 + t1 * rot12 + t2 * rot22
    for a in range(3):
        p[a] += r[a, 0] * tool_t[0] + r[a, 1] * tool_t[1] + r[a, 2] * tool_t[2]
    for a in range(3):
        for b in range(3):
            tmp[a, b] = r[a, 0] * tool_r[0, b] + r[a, 1] * tool_r[1, b] + r[a, 2] * tool_r[2, b]

    for i in range(n):
        dx = p[0] - origins[i, 0]
        dy = p[1] - origins[i, 1]
        dz = p[2] - origins[i, 2]
        zx, zy, zz = zs[i, 0], zs[i, 1], zs[i, 2]
        jac[0, i] = zy * dz - zz * dy
        jac[1, i] = zz * dx - zx * dz
        jac[2, i] = zx * dy - zy * dx
        jac[3, i] = zx
        jac[4, i] = zy
        jac[5, i] = zz

    rel = np.empty((3, 3))
    for a in range(3):
        err[a] = target_p[a] - p[a]
        for b in range(3):
            rel[a, b] = (target_r[a, 0] * tmp[b, 0] + target_r[a, 1] * tmp[b, 1]
                         + target_r[a, 2] * tmp[b, 2])
    _rotation_log(rel, err[3:])


@njit(cache=True)
def dls_step(jac, err, damping, cap):
    """Damped least-squares step with its Euclidean norm capped at ``cap``."""
    m, n = jac.shape
    if damping == 0.0:
        step = np.linalg.pinv(jac) @ err
    elif n < m:
        a = jac.T @ jac
        for i in range(n):
            a[i, i] += damping * damping
        step = np.linalg.solve(a, jac.T @ err)
    else:
        a = jac @ jac.T
        for i in range(m):
            a[i, i] += damping * damping
        step = jac.T @ np.linalg.solve(a, err)
    nrm = math.sqrt(np.sum(step * step))
    if nrm > cap:
        step *= cap / nrm
    return step


@njit(cache=True)
def lm_step(jac, err, mu, cap):
    """Solve ``(J^T J + mu I) d = J^T e`` and cap the step norm."""
    n = jac.shape[1]
    a = jac.T @ jac
    for i in range(n):
        a[i, i] += mu
    step = np.linalg.solve(a, jac.T @ err)
    nrm = math.sqrt(np.sum(step * step))
    if nrm > cap:
        step *= cap / nrm
    return step


@njit(cache=True)
def _record(theta, err, pos_tol, ori_tol, w, best):
    """Update ``best = [loss, eps_pos, eps_ori, *theta]``; True when within tolerance."""
    ep = math.sqrt(err[0] * err[0] + err[1] * err[1] + err[2] * err[2])
    eo = math.sqrt(err[3] * err[3] + err[4] * err[4] + err[5] * err[5])
    loss = w * ep + (1.0 - w) * eo
    if loss < best[0]:
        best[0] = loss
        best[1] = ep
        best[2] = eo
        best[3:] = theta
    return ep <= pos_tol and eo <= ori_tol


@njit(cache=True)
def _stalled(hist, count, window, gain):
    return count > window and hist[count - window - 1] - hist[count - 1] < gain


@njit(cache=True)
def pinv_chunk(pre_t, pre_r, axes, tool_t, tool_r, target_p, target_r, lo, hi, theta, hist, state,
               steps, max_iter, damping, cap, pos_tol, ori_tol, window, gain, w, best):
    """Advance one damped least-squares run by at most ``steps`` iterations.

    ``theta`` and ``hist`` (squared error per evaluation) persist between
    calls; ``state = [evaluations in this run, steps taken in total]``.
    Returns 1 when solved, 2 when the run stalled or hit ``max_iter``,
    0 when the chunk ran out.
    """
    n = theta.shape[0]
    err = np.empty(6)
    jac = np.empty((6, n))
    for _ in range(steps):
        if state[0] >= max_iter:
            return 2
        error_and_jacobian(pre_t, pre_r, axes, tool_t, tool_r, theta, target_p, target_r, err, jac)
        if _record(theta, err, pos_tol, ori_tol, w, best):
            return 1
        hist[state[0]] = err @ err
        state[0] += 1
        if _stalled(hist, state[0], window, gain):
            return 2
        step = dls_step(jac, err, damping, cap)
        for i in range(n):
            theta[i] = min(max(theta[i] + step[i], lo[i]), hi[i])
        state[1] += 1
    return 0


@njit(cache=True)
def lm_chunk(pre_t, pre_r, axes, tool_t, tool_r, target_p, target_r, lo, hi, theta, hist, state, fstate,
             steps, max_iter, mu_min, mu_max, cap, pos_tol, ori_tol, window, gain, w, best):
    """Advance one projected Levenberg-Marquardt run by at most ``steps`` trial steps.

    ``hist`` holds the accepted squared errors (``hist[0]`` is the start),
    ``state = [trial steps in this run, accepted count, steps in total]``,
    ``fstate = [mu]``. A run starts with ``state[1] == 0``. Return codes as
    for :func:`pinv_chunk`.
    """
    n = theta.shape[0]
    err = np.empty(6)
    jac = np.empty((6, n))
    cand = np.empty(n)
    cerr = np.empty(6)
    cjac = np.empty((6, n))
    error_and_jacobian(pre_t, pre_r, axes, tool_t, tool_r, theta, target_p, target_r, err, jac)
    phi = err @ err
    if state[1] == 0:
        hist[0] = phi
        state[1] = 1
    for _ in range(steps):
        if _record(theta, err, pos_tol, ori_tol, w, best):
            return 1
        if state[0] >= max_iter:
            return 2
        step = lm_step(jac, err, fstate[0], cap)
        for i in range(n):
            cand[i] = min(max(theta[i] + step[i], lo[i]), hi[i])
        state[0] += 1
        state[2] += 1
        error_and_jacobian(pre_t, pre_r, axes, tool_t, tool_r, cand, target_p, target_r, cerr, cjac)
        cphi = cerr @ cerr
        if cphi < phi:
            theta[:] = cand
            err[:] = cerr
            jac[:, :] = cjac
            phi = cphi
            fstate[0] = max(fstate[0] * 0.1, mu_min)
            hist[state[1]] = phi
            state[1] += 1
            if _stalled(hist, state[1], window, gain):
                _record(theta, err, pos_tol, ori_tol, w, best)
                return 2
        else:
            fstate[0] *= 10.0
            if fstate[0] > mu_max:
                return 2
    return 0


def rotation_log(m):
    out = np.empty(3)
    _rotation_log(np.ascontiguousarray(m, dtype=np.float64), out)
    return out


_warm = False


def warm_up():
    """Compile (or load from cache) every kernel so no solve pays for it."""
    global _warm
    if _warm:
        return
    one = np.zeros((1, 3))
    rot = np.eye(3).reshape(1, 3, 3)
    err = np.empty(6)
    jac = np.empty((6, 1))
    error_and_jacobian(one, rot, np.array([[0.0, 0.0, 1.0]]), np.zeros(3), np.eye(3),
                       np.zeros(1), np.zeros(3), np.eye(3), err, jac)
    dls_step(jac, err, 1e-3, 0.5)
    lm_step(jac, err, 1e-3, 0.5)
    args = (one, rot, np.array([[0.0, 0.0, 1.0]]), np.zeros(3), np.eye(3), np.zeros(3), np.eye(3),
            np.full(1, -1.0), np.ones(1), np.zeros(1), np.zeros(4))
    best = np.full(4, np.inf)
    pinv_chunk(*args, np.zeros(2, dtype=np.int64), 1, 2, 1e-3, 0.5, 1e-4, 1e-4, 1, 1e-12, 0.75, best)
    lm_chunk(*args, np.zeros(3, dtype=np.int64), np.full(1, 1e-3), 1, 2, 1e-12, 1e8, 0.5, 1e-4, 1e-4,
             1, 1e-12, 0.75, best)
    rotation_log(np.eye(3))
    _warm = True


def chain_tables(chain):
    """Contiguous float64 arrays the kernels read (cached per chain object)."""
    tables = getattr(chain, "_kernel_tables", None)
    if tables is None:
        warm_up()
        tables = tuple(np.array(a, dtype=np.float64, order="C") for a in
                       (chain._pre_t, chain._pre_r, chain._axes, chain._tool_t, chain._tool_r))
        object.__setattr__(chain, "_kernel_tables", tables)
    return tables
