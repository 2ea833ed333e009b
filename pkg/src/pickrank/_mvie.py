"""Compiled barrier/Newton kernel for the maximum-area inscribed ellipse.

Variables ``z = (p, q, r, dx, dy)`` describe ``B = [[p, q], [q, r]]`` and the
ellipse ``{B u + d : |u| <= 1}``.  With ``g_i = b_i - a_i.d - |B a_i|`` the
centering objective is ``log det B + (1/t) sum log g_i``; ``t`` grows
geometrically until the duality-gap bound ``m/t`` drops below ``GAP_TOL``.
"""

import math

import numpy as np
from numba import njit

MAX_NEWTON_STEPS = 200
BARRIER_GROWTH = 16.0
GAP_TOL = 1e-9

STATUS_OK = 0
STATUS_ITERATION_CAP = 1
STATUS_LINE_SEARCH = 2


@njit(cache=True)
def _terms(z, A, b, w, grad, hess, need_derivs):
    p, q, r, dx, dy = z[0], z[1], z[2], z[3], z[4]
    det = p * r - q * q
    if p <= 0.0 or det <= 0.0:
        return -np.inf
    if need_derivs:
        grad[:] = 0.0
        hess[:, :] = 0.0
    gg = np.empty(5)
    col = np.empty((3, 2))
    total = 0.0
    for i in range(A.shape[0]):
        a1 = A[i, 0]
        a2 = A[i, 1]
        vx = p * a1 + q * a2
        vy = q * a1 + r * a2
        n = math.sqrt(vx * vx + vy * vy)
        g = b[i] - a1 * dx - a2 * dy - n
        if g <= 0.0:
            return -np.inf
        total += math.log(g)
        if not need_derivs:
            continue
        inv = 1.0 / g
        gg[0] = -vx * a1 / n
        gg[1] = -(vx * a2 + vy * a1) / n
        gg[2] = -vy * a2 / n
        gg[3] = -a1
        gg[4] = -a2
        n3 = n * n * n
        p00 = 1.0 / n - vx * vx / n3
        p01 = -vx * vy / n3
        p11 = 1.0 / n - vy * vy / n3
        # columns of d(Ba)/d(p, q, r)
        col[0, 0] = a1
        col[0, 1] = 0.0
        col[1, 0] = a2
        col[1, 1] = a1
        col[2, 0] = 0.0
        col[2, 1] = a2
        for j in range(5):
            grad[j] += gg[j] * inv
            for k in range(5):
                hess[j, k] -= gg[j] * gg[k] * inv * inv
        for j in range(3):
            for k in range(3):
                hn = (
                    col[j, 0] * (p00 * col[k, 0] + p01 * col[k, 1])
                    + col[j, 1] * (p01 * col[k, 0] + p11 * col[k, 1])
                )
                hess[j, k] -= hn * inv
    value = math.log(det) + w * total
    if need_derivs:
        for j in range(5):
            grad[j] *= w
            for k in range(5):
                hess[j, k] *= w
        gd = (r, -2.0 * q, p)
        hd = ((0.0, 0.0, 1.0), (0.0, -2.0, 0.0), (1.0, 0.0, 0.0))
        for j in range(3):
            grad[j] += gd[j] / det
            for k in range(3):
                hess[j, k] += hd[j][k] / det - gd[j] * gd[k] / (det * det)
    return value


@njit(cache=True)
def _newton_step(hess, grad, step):
    """Solve ``(-hess) step = grad`` by Cholesky; False if not positive definite."""
    L = np.zeros((5, 5))
    for i in range(5):
        for j in range(i + 1):
            acc = -hess[i, j]
            for k in range(j):
                acc -= L[i, k] * L[j, k]
            if i == j:
                if acc <= 0.0:
                    return False
                L[i, i] = math.sqrt(acc)
            else:
                L[i, j] = acc / L[j, j]
    y = np.empty(5)
    for i in range(5):
        acc = grad[i]
        for k in range(i):
            acc -= L[i, k] * y[k]
        y[i] = acc / L[i, i]
    for i in range(4, -1, -1):
        acc = y[i]
        for k in range(i + 1, 5):
            acc -= L[k, i] * step[k]
        step[i] = acc / L[i, i]
    return True


@njit(cache=True)
def solve_mvie(A, b, max_steps):
    """Return ``(z, status)`` for the normalised problem ``A x <= b``.

    ``b`` must be strictly positive (origin interior).
    """
    m = A.shape[0]
    r0 = 0.5 * b.min()
    z = np.array([r0, 0.0, r0, 0.0, 0.0])
    grad = np.empty(5)
    hess = np.empty((5, 5))
    step = np.empty(5)
    trial = np.empty(5)
    t = 1.0
    steps = 0
    while True:
        while True:
            value = _terms(z, A, b, 1.0 / t, grad, hess, True)
            if not _newton_step(hess, grad, step):
                return z, STATUS_LINE_SEARCH
            decrement = 0.0
            for j in range(5):
                decrement += grad[j] * step[j]
            if decrement / 2.0 <= 1e-13:
                break
            steps += 1
            if steps > max_steps:
                return z, STATUS_ITERATION_CAP
            s = 1.0
            accepted = False
            while s >= 1e-12:
                for j in range(5):
                    trial[j] = z[j] + s * step[j]
                tv = _terms(trial, A, b, 1.0 / t, grad, hess, False)
                if tv >= value + 0.25 * s * decrement:
                    accepted = True
                    break
                s *= 0.5
            if not accepted:
                if decrement > 1e-9:
                    return z, STATUS_LINE_SEARCH
                break
            for j in range(5):
                z[j] = trial[j]
        if m / t < GAP_TOL:
            return z, STATUS_OK
        t *= BARRIER_GROWTH
