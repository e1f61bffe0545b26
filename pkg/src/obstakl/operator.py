"""Conservative finite-difference discretization of L_t = 1/2 (a u')' + b u'.

Bands follow the convention ``(L v)_j = lower[j] v[j-1] + diag[j] v[j] +
upper[j] v[j+1]``; ``lower[0]`` and ``upper[-1]`` are the couplings to the
left/right boundary values and only enter under Dirichlet closures.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .core import Boundary, CoefficientField, Grid


class SolverError(RuntimeError):
    """Raised when a discrete solve cannot be completed."""

    def __init__(self, message: str, time_level: int | None = None):
        super().__init__(message)
        self.time_level = time_level


class DiagonalDominanceError(SolverError):
    pass


@dataclass(frozen=True)
class OperatorMatrix:
    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray
    t: float
    boundary: Boundary
    upwind_nodes: int = 0

    @property
    def n(self) -> int:
        return self.diag.size

    def dense(self) -> np.ndarray:
        m = np.diag(self.diag)
        m += np.diag(self.lower[1:], -1)
        m += np.diag(self.upper[:-1], 1)
        return m


def _face_values(a_nodes: np.ndarray, harmonic: bool) -> np.ndarray:
    left, right = a_nodes[:-1], a_nodes[1:]
    if harmonic:
        return 2.0 * left * right / (left + right)
    return 0.5 * (left + right)


def assemble(coeffs: CoefficientField, grid: Grid, t: float, harmonic: bool = False) -> OperatorMatrix:
    dx = grid.dx
    # nodes including the two boundary points
    xs = grid.x_min + dx * np.arange(grid.nx + 2)
    a = coeffs.diffusion(t, xs)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite diffusion coefficient at t={t}")
    tol = 1e-12
    if np.any(a < coeffs.lam * (1 - tol)) or np.any(a > coeffs.Lam * (1 + tol)):
        bad = np.flatnonzero((a < coeffs.lam * (1 - tol)) | (a > coeffs.Lam * (1 + tol)))[0]
        raise ValueError(f"ellipticity violated at t={t}, x={xs[bad]}: a={a[bad]}")
    b = coeffs.drift(t, xs[1:-1])
    if not np.all(np.isfinite(b)):
        raise ValueError(f"non-finite drift at t={t}")

    af = _face_values(a, harmonic)  # length nx+1, af[j] is the face left of node j
    a_minus, a_plus = af[:-1], af[1:]
    inv = 1.0 / (2.0 * dx * dx)
    lower = a_minus * inv
    upper = a_plus * inv
    diag = -(a_minus + a_plus) * inv

    # central drift unless an off-diagonal would turn negative (cell Peclet > 2)
    a_node = a[1:-1]
    upwind = np.abs(b) * dx > a_node
    cb = b / (2.0 * dx)
    lower = lower - np.where(upwind, 0.0, cb)
    upper = upper + np.where(upwind, 0.0, cb)
    pos = upwind & (b > 0)
    neg = upwind & (b < 0)
    upper = upper + np.where(pos, b / dx, 0.0)
    lower = lower + np.where(neg, -b / dx, 0.0)
    diag = diag - np.where(upwind, np.abs(b) / dx, 0.0)

    boundary = Boundary(grid.boundary)
    if boundary is Boundary.NEUMANN_ZERO:
        # ghost value equals the end node: fold the coupling into the diagonal
        diag[0] += lower[0]
        diag[-1] += upper[-1]
        lower[0] = 0.0
        upper[-1] = 0.0
    return OperatorMatrix(lower, diag, upper, float(t), boundary, int(upwind.sum()))


def apply(m: OperatorMatrix, v, boundary_values: tuple[float, float] = (0.0, 0.0)) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != m.n:
        raise ValueError(f"length mismatch: operator has {m.n} nodes, vector has {v.shape[-1]}")
    out = m.diag * v
    out[..., 1:] += m.lower[1:] * v[..., :-1]
    out[..., :-1] += m.upper[:-1] * v[..., 1:]
    if m.boundary is not Boundary.NEUMANN_ZERO:
        out[..., 0] += m.lower[0] * boundary_values[0]
        out[..., -1] += m.upper[-1] * boundary_values[1]
    return out


def boundary_values(grid: Grid, spec, t: float) -> tuple[float, float]:
    """Dirichlet data at (t, x_min) and (t, x_max) for the grid's closure."""
    boundary = Boundary(grid.boundary)
    if boundary is Boundary.DIRICHLET_OBSTACLE:
        hv = spec.obstacle(t, np.array([grid.x_min, grid.x_max]))
        return float(max(hv[0], 0.0)), float(max(hv[1], 0.0))
    return 0.0, 0.0


def shifted_bands(m: OperatorMatrix, dt: float, theta: float = 1.0):
    """Bands of I - theta*dt*L."""
    s = theta * dt
    return -s * m.lower, 1.0 - s * m.diag, -s * m.upper


def check_dominance(lower, diag, upper) -> int:
    """Index of the first row that is not diagonally dominant, or -1."""
    off = np.abs(lower).copy()
    off[0] = 0.0
    up = np.abs(upper).copy()
    up[-1] = 0.0
    bad = np.flatnonzero(np.abs(diag) < off + up)
    return int(bad[0]) if bad.size else -1


@numba.njit(cache=True)
def thomas(lower, diag, upper, rhs):
    n = diag.size
    c = np.empty(n)
    d = np.empty(n)
    beta = diag[0]
    c[0] = upper[0] / beta if n > 1 else 0.0
    d[0] = rhs[0] / beta
    for i in range(1, n):
        beta = diag[i] - lower[i] * c[i - 1]
        c[i] = upper[i] / beta if i < n - 1 else 0.0
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / beta
    x = np.empty(n)
    x[n - 1] = d[n - 1]
    for i in range(n - 2, -1, -1):
        x[i] = d[i] - c[i] * x[i + 1]
    return x


def solve_tridiagonal(m: OperatorMatrix, rhs, dt: float, theta: float = 1.0) -> np.ndarray:
    """Solve (I - theta*dt*L) x = rhs with the Thomas algorithm."""
    rhs = np.asarray(rhs, dtype=float)
    if rhs.size != m.n:
        raise ValueError("length mismatch")
    lo, di, up = shifted_bands(m, dt, theta)
    bad = check_dominance(lo, di, up)
    if bad >= 0:
        raise DiagonalDominanceError(f"row {bad} of I - theta*dt*L is not diagonally dominant")
    return thomas(lo, di, up, rhs)


@numba.njit(cache=True)
def _lcp_residual(lower, diag, upper, rhs, h, x):
    n = diag.size
    res = 0.0
    for i in range(n):
        r = diag[i] * x[i] - rhs[i]
        if i > 0:
            r += lower[i] * x[i - 1]
        if i < n - 1:
            r += upper[i] * x[i + 1]
        v = abs(min(x[i] - h[i], r))
        if v > res:
            res = v
    return res


@numba.njit(cache=True)
def psor(lower, diag, upper, rhs, h, x0, omega, tol, max_iter):
    """Projected SOR for min(x - h, A x - rhs) = 0 with tridiagonal A.

    Returns (x, sweeps, residual); stops when both the last update and the
    complementarity residual are below ``tol``.
    """
    n = diag.size
    x = np.maximum(x0.copy(), h)
    res = _lcp_residual(lower, diag, upper, rhs, h, x)
    if res <= tol:
        return x, 0, res
    for it in range(1, max_iter + 1):
        change = 0.0
        for i in range(n):
            s = rhs[i]
            if i > 0:
                s -= lower[i] * x[i - 1]
            if i < n - 1:
                s -= upper[i] * x[i + 1]
            gs = s / diag[i]
            new = x[i] + omega * (gs - x[i])
            if new < h[i]:
                new = h[i]
            d = abs(new - x[i])
            if d > change:
                change = d
            x[i] = new
        if change <= tol:
            res = _lcp_residual(lower, diag, upper, rhs, h, x)
            if res <= tol:
                return x, it, res
    res = _lcp_residual(lower, diag, upper, rhs, h, x)
    return x, max_iter, res


def policy_iteration(lower, diag, upper, rhs, h, x0, max_iter: int = 200):
    """Howard's algorithm for the same complementarity problem.

    At each pass nodes where ``x - h <= A x - rhs`` are pinned to the obstacle
    and the remaining rows solve the linear equation.
    """
    n = diag.size
    x = np.maximum(np.asarray(x0, dtype=float), h)
    active = np.zeros(n, dtype=bool)
    for it in range(1, max_iter + 1):
        ax = diag * x
        ax[1:] += lower[1:] * x[:-1]
        ax[:-1] += upper[:-1] * x[1:]
        new_active = (x - h) <= (ax - rhs)
        if it > 1 and np.array_equal(new_active, active):
            return x, it - 1, float(_lcp_residual(lower, diag, upper, rhs, h, x))
        active = new_active
        lo = np.where(active, 0.0, lower)
        up = np.where(active, 0.0, upper)
        di = np.where(active, 1.0, diag)
        b = np.where(active, h, rhs)
        x = thomas(lo, di, up, b)
    return x, max_iter, float(_lcp_residual(lower, diag, upper, rhs, h, x))
