"""Independent reference implementations used only by the tests.

Nothing here imports the solver internals; each routine is the plainest
possible route to the same number.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def dense_operator(a, b, x_min, x_max, nx, t=0.0, neumann=False):
    """Row-by-row flux form of 1/2 (a v')' + b v' with central drift."""
    dx = (x_max - x_min) / (nx + 1)
    x = [x_min + dx * j for j in range(nx + 2)]
    L = np.zeros((nx, nx))
    left = np.zeros(nx)
    right = np.zeros(nx)
    for i in range(nx):
        j = i + 1
        am = 0.5 * (a(t, x[j - 1]) + a(t, x[j]))
        ap = 0.5 * (a(t, x[j]) + a(t, x[j + 1]))
        bj = b(t, x[j])
        cm = am / (2 * dx * dx) - bj / (2 * dx)
        cp = ap / (2 * dx * dx) + bj / (2 * dx)
        L[i, i] -= (am + ap) / (2 * dx * dx)
        if i > 0:
            L[i, i - 1] += cm
        elif neumann:
            L[i, i] += cm
        else:
            left[i] = cm
        if i < nx - 1:
            L[i, i + 1] += cp
        elif neumann:
            L[i, i] += cp
        else:
            right[i] = cp
    return L, left, right


def brute_lcp(M, q, h):
    """Solve min(z - h, M z - q) = 0 by enumerating active sets."""
    n = len(q)
    for mask in itertools.product([False, True], repeat=n):
        act = np.array(mask)
        z = h.astype(float).copy()
        free = ~act
        if free.any():
            rhs = q[free] - M[np.ix_(free, act)] @ h[act]
            z[free] = np.linalg.solve(M[np.ix_(free, free)], rhs)
        r = M @ z - q
        if np.all(z >= h - 1e-10) and np.all(r >= -1e-10) and np.all(np.minimum(z - h, r) <= 1e-9):
            return z
    raise RuntimeError("no complementary solution found")


def american_put_tree(K, sigma, r, T, x0, steps):
    """Arithmetic-Brownian American put on a recombining tree, scalar loops,
    discounting with the explicit factor (1 - r dt) like the explicit
    Snell recursion."""
    dt = T / steps
    d = sigma * math.sqrt(dt)
    values = [max(K - (x0 + d * (2 * i - steps)), 0.0) for i in range(steps + 1)]
    for k in range(steps - 1, -1, -1):
        nxt = []
        for i in range(k + 1):
            cont = 0.5 * (values[i] + values[i + 1])
            cont = cont - r * dt * cont
            nxt.append(max(cont, K - (x0 + d * (2 * i - k))))
        values = nxt
    return values[0]


def weighted_one_norm_sq(x_min, x_max):
    """Closed form of the integral of (1 + x^2)^-2 over [x_min, x_max]."""
    F = lambda x: x / (2 * (1 + x * x)) + 0.5 * math.atan(x)
    return F(x_max) - F(x_min)
