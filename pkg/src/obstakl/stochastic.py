"""Monte Carlo backend: forward diffusion and (reflected) backward schemes.

The diffusion generated by L_t = 1/2 (a u')' + b u' has Ito drift
b + a'/2 and diffusion coefficient sigma = sqrt(a).  Backward conditional
expectations are least-squares projections on normalized monomials of the
forward state.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson
from scipy.special import ndtr

from .core import NO_OBSTACLE, CoefficientField, Grid, ObstacleProblemSpec, rho
from .measure import DiscreteMeasure

logger = logging.getLogger(__name__)

BLOCK_SIZE = 4096


class RegressionError(RuntimeError):
    def __init__(self, message: str, condition_number: float):
        super().__init__(message)
        self.condition_number = condition_number


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("OBSTAKL_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class PathEnsemble:
    s: float
    x0: float
    times: np.ndarray
    paths: np.ndarray
    brownian_increments: np.ndarray
    seed: int
    coeffs: CoefficientField | None = field(default=None, repr=False)
    drift_correction: bool = True
    fd_step: float = 1.0e-4

    @property
    def N(self) -> int:
        return self.paths.shape[0]

    @property
    def m(self) -> int:
        return self.times.size - 1

    @property
    def T(self) -> float:
        return float(self.times[-1])


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))


def _euler(coeffs, times, x_start, dW, drift_correction: bool, fd_step: float, out=None):
    n, m = dW.shape
    if out is None:
        out = np.empty((n, m + 1))
    out[:, 0] = x_start
    x = out[:, 0].copy()
    for k in range(m):
        t, dt = times[k], times[k + 1] - times[k]
        mu = coeffs.drift(t, x)
        if drift_correction:
            mu = mu + 0.5 * coeffs.divergence(t, x, fd_step)
        x = x + mu * dt + coeffs.sigma(t, x) * dW[:, k]
        out[:, k + 1] = x
    return out


def simulate_paths(
    coeffs: CoefficientField,
    s: float,
    x0: float,
    N: int,
    m: int,
    seed: int,
    T: float,
    threads: int | None = None,
    drift_correction: bool = True,
    fd_step: float = 1.0e-4,
    allow_fd: bool = True,
) -> PathEnsemble:
    """Euler-Maruyama paths of the divergence-form diffusion started at (s, x0).

    Paths are generated in fixed blocks of :data:`BLOCK_SIZE`, each with its
    own stream keyed by (seed, block index), so the output does not depend
    on ``threads``.  ``drift_correction=False`` drops the a'/2 term and
    exists only to show that the term matters.
    """
    if coeffs.da_dx is None and not allow_fd:
        raise ValueError("no analytic da_dx and the finite-difference fallback is disabled")
    if not s < T:
        raise ValueError("need s < T")
    times = np.linspace(s, T, m + 1)
    dt = (T - s) / m
    paths = np.empty((N, m + 1))
    dB = np.empty((N, m))
    blocks = [(b, b * BLOCK_SIZE, min(N, (b + 1) * BLOCK_SIZE)) for b in range(math.ceil(N / BLOCK_SIZE))]

    def run(block):
        b, lo, hi = block
        rng = _block_rng(seed, b)
        dB[lo:hi] = rng.standard_normal((hi - lo, m)) * math.sqrt(dt)
        _euler(coeffs, times, x0, dB[lo:hi], drift_correction, fd_step, out=paths[lo:hi])

    threads = threads or default_threads()
    if threads == 1:
        for blk in blocks:
            run(blk)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, blocks))
    return PathEnsemble(float(s), float(x0), times, paths, dB, int(seed), coeffs, drift_correction, fd_step)


class _Projection:
    """Least-squares projection onto normalized monomials of one state sample."""

    def __init__(self, X: np.ndarray, center: float, degree: int, max_cond: float = 1e12):
        sd = float(X.std())
        self.center, self.sd = float(center), sd
        if sd <= 1e-12 * (1.0 + abs(center)) or degree == 0:
            self.U = np.full((X.size, 1), 1.0 / math.sqrt(X.size))
            self.W = np.full((1, 1), 1.0 / math.sqrt(X.size))
            self.degree = 0
            self.rank, self.cond, self.full_rank = 1, 1.0, True
            return
        self.degree = degree
        B = self.basis(X)
        U, sv, Vt = np.linalg.svd(B, full_matrices=False)
        keep = sv > sv[0] * 1e-10
        self.rank = int(keep.sum())
        self.cond = float(sv[0] / sv[keep][-1])
        self.full_rank = self.rank == degree + 1
        if self.cond > max_cond:
            raise RegressionError("regression basis is numerically singular", self.cond)
        self.U = U[:, keep]
        # coefficients = W @ U^T Y
        self.W = Vt[keep].T / sv[keep]

    def basis(self, X: np.ndarray) -> np.ndarray:
        if self.degree == 0:
            return np.ones((np.size(X), 1))
        return np.vander((np.asarray(X) - self.center) / self.sd, self.degree + 1, increasing=True)

    def __call__(self, Y: np.ndarray) -> np.ndarray:
        return self.U @ (self.U.T @ Y)

    def coef(self, Y: np.ndarray) -> np.ndarray:
        return self.W @ (self.U.T @ Y)


def _obstacle_mean(spec, ens: PathEnsemble, k: int, x: np.ndarray, nodes: int = 16) -> np.ndarray:
    """E[h(t_{k+1}, X_{k+1}) | X_k = x] for the Gaussian Euler step, by
    Gauss-Hermite quadrature."""
    coeffs = ens.coeffs if ens.coeffs is not None else spec.coeffs
    t, t1 = ens.times[k], ens.times[k + 1]
    dt = t1 - t
    mu = coeffs.drift(t, x)
    if ens.drift_correction:
        mu = mu + 0.5 * coeffs.divergence(t, x, ens.fd_step)
    mean, sd = x + mu * dt, coeffs.sigma(t, x) * math.sqrt(dt)
    z, w = np.polynomial.hermite_e.hermegauss(nodes)
    w = w / math.sqrt(2.0 * math.pi)
    out = np.zeros_like(x)
    for zi, wi in zip(z, w):
        out += wi * spec.obstacle(t1, mean + sd * zi)
    return out


def _newton(resid, y0, deriv, tol=1e-12, max_iter=50):
    y = y0.copy()
    for it in range(1, max_iter + 1):
        r = resid(y)
        step = r / deriv(y)
        y = y - step
        if np.max(np.abs(step)) <= tol * (1.0 + np.max(np.abs(y))):
            return y, it
    return y, max_iter


def _f_dy(spec, t, x, y, z):
    eps = 1e-6 * (1.0 + np.abs(y))
    return (spec.gen(t, x, y + eps, z) - spec.gen(t, x, y - eps, z)) / (2.0 * eps)


@dataclass
class _LevelFit:
    """Regression functions fitted at one time level, reusable on new states."""

    proj: _Projection
    beta_y: np.ndarray
    beta_z: np.ndarray
    sub: _Projection | None = None
    sub_beta_y: np.ndarray | None = None
    sub_beta_z: np.ndarray | None = None

    def __call__(self, spec, t, x, dt):
        B = self.proj.basis(x)
        ey, z = B @ self.beta_y, B @ self.beta_z
        if self.sub is not None:
            itm = spec.obstacle(t, x) > 0.0
            Bs = self.sub.basis(x[itm])
            ey[itm], z[itm] = Bs @ self.sub_beta_y, Bs @ self.sub_beta_z
        return ey, z / dt


def _step(spec, t, x, ey, z, dt, n):
    """One implicit backward step from the fitted continuation ``ey``.

    Returns (y_k, dK_k, sensitivity of y_k to ey, Newton iterations).
    """
    h = spec.obstacle(t, x)
    if n is None:

        def resid(y):
            return y - ey - dt * spec.gen(t, x, y, z)

        def deriv(y):
            return 1.0 - dt * _f_dy(spec, t, x, y, z)

        y_cont, its = _newton(resid, ey + dt * spec.gen(t, x, ey, z), deriv)
        yk = np.maximum(y_cont, h)
        # zero where the path stops
        sens = (y_cont > h) / (1.0 - dt * _f_dy(spec, t, x, y_cont, z))
        return yk, yk - y_cont, sens, its

    def resid(y):
        return y - ey - dt * (spec.gen(t, x, y, z) + n * np.maximum(h - y, 0.0))

    def deriv(y):
        return 1.0 - dt * (_f_dy(spec, t, x, y, z) - n * (y < h))

    yk, its = _newton(resid, ey + dt * spec.gen(t, x, ey, z), deriv)
    return yk, n * np.maximum(h - yk, 0.0) * dt, 1.0 / deriv(yk), its


@dataclass
class RbsdeEnsemble:
    Y: np.ndarray
    Z: np.ndarray
    K: np.ndarray
    ensemble: PathEnsemble
    penalty: float | None = None
    diagnostics: dict = field(default_factory=dict)
    # Y_k - Y_{k+1} - f_k dt + Z_k dB_k: same conditional mean as dK up to
    # regression error, but not monotone path by path
    dK_balance: np.ndarray | None = field(default=None, repr=False)
    fits: list | None = field(default=None, repr=False)
    spec: ObstacleProblemSpec | None = field(default=None, repr=False)
    obstacle_floor: bool = False

    @property
    def y0(self) -> float:
        return float(self.Y[:, 0].mean())

    @property
    def y0_stderr(self) -> float:
        return float(self.diagnostics["target_sd"] / math.sqrt(self.Y.shape[0]))

    @property
    def dK(self) -> np.ndarray:
        return np.diff(self.K, axis=1)

    def replay(self, fresh: PathEnsemble) -> "RbsdeEnsemble":
        """Apply the fitted regression functions to an independent ensemble.

        Paths of ``fresh`` are i.i.d. given the fit, so path averages of the
        result carry honest standard errors; in-sample averages do not,
        because the fit has already centred them.
        """
        ens = self.ensemble
        if self.fits is None:
            raise ValueError("this result keeps no regression functions")
        if fresh.m != ens.m or abs(fresh.s - ens.s) > 1e-12 or abs(fresh.T - ens.T) > 1e-12:
            raise ValueError("fresh ensemble must share the time grid")
        spec, dt, n = self.spec, (ens.T - ens.s) / ens.m, self.penalty
        X, dB = fresh.paths, fresh.brownian_increments
        N, m = dB.shape
        Y, Z, dK, dK_bal = np.empty((N, m + 1)), np.empty((N, m)), np.empty((N, m)), np.empty((N, m))
        Y[:, m] = spec.terminal(X[:, m])
        for k in range(m - 1, -1, -1):
            t, x = fresh.times[k], X[:, k]
            ey, z = self.fits[k](spec, t, x, dt)
            if self.obstacle_floor and k > 0:
                ey = np.maximum(ey, _obstacle_mean(spec, fresh, k, x))
            Y[:, k], dK[:, k], _, _ = _step(spec, t, x, ey, z, dt, n)
            Z[:, k] = z
            dK_bal[:, k] = Y[:, k] - Y[:, k + 1] - spec.gen(t, x, Y[:, k], z) * dt + z * dB[:, k]
        K = np.zeros((N, m + 1))
        np.cumsum(dK, axis=1, out=K[:, 1:])
        diag = {"replayed_from_seed": ens.seed, "target_sd": float(Y[:, 0].std(ddof=1)) if N > 1 else 0.0}
        return RbsdeEnsemble(Y, Z, K, fresh, n, diag, dK_bal, self.fits, spec, self.obstacle_floor)


def _backward(
    spec: ObstacleProblemSpec, ens: PathEnsemble, degree: int, n: float | None, pathwise: bool, floor: bool = False,
    split: bool = False
):
    X, dB, times = np.asfortranarray(ens.paths), np.asfortranarray(ens.brownian_increments), ens.times
    N, m = dB.shape
    dt = (times[-1] - times[0]) / m
    Y = np.empty((N, m + 1), order="F")
    Z = np.empty((N, m), order="F")
    dK = np.zeros((N, m), order="F")
    Y[:, m] = spec.terminal(X[:, m])
    dK_bal = np.empty((N, m), order="F")
    # regression target; equals Y unless pathwise targets are requested
    target = Y[:, m].copy()
    conds, deficient, balance, newton_its = [], [], [], 0
    fits: list = [None] * m
    target_sd = 0.0
    for k in range(m - 1, -1, -1):
        t, x = times[k], X[:, k]
        proj = _Projection(x, ens.x0, degree)
        conds.append(proj.cond)
        if not proj.full_rank and k > 0:
            deficient.append(k)
        if k == 0:
            target_sd = float(target.std(ddof=1)) if N > 1 else 0.0
        ey = proj(target)
        fit = _LevelFit(proj, proj.coef(target), None)
        itm = None
        if split and k > 0:
            itm = spec.obstacle(t, x) > 0.0
            if degree + 1 < itm.sum() < N:
                fit.sub = _Projection(x[itm], ens.x0, degree)
                fit.sub_beta_y = fit.sub.coef(target[itm])
                ey[itm] = fit.sub(target[itm])
            else:
                itm = None
        # centring the target leaves E_k[. dB] unchanged and removes most of its noise
        zt = (target - ey) * dB[:, k]
        z = proj(zt)
        fit.beta_z = proj.coef(zt)
        if itm is not None:
            z[itm] = fit.sub(zt[itm])
            fit.sub_beta_z = fit.sub.coef(zt[itm])
        z /= dt
        # keep the basis description only; U is N x (degree + 1)
        proj.U = None
        if fit.sub is not None:
            fit.sub.U = None
        fits[k] = fit
        if floor and k > 0:
            ey = np.maximum(ey, _obstacle_mean(spec, ens, k, x))
        Z[:, k] = z
        yk, dK[:, k], sens, its = _step(spec, t, x, ey, z, dt, n)
        newton_its = max(newton_its, its)
        Y[:, k] = yk
        fk = spec.gen(t, x, yk, z)
        dK_bal[:, k] = yk - Y[:, k + 1] - fk * dt + z * dB[:, k]
        balance.append(float(np.mean(dK_bal[:, k] - dK[:, k])))
        target = yk + sens * (target - ey) if pathwise else yk.copy()
    K = np.zeros((N, m + 1))
    np.cumsum(dK, axis=1, out=K[:, 1:])
    diag = {
        "condition_numbers": conds[::-1],
        "rank_deficient_levels": sorted(deficient),
        "balance_residual": balance[::-1],
        "newton_iterations": newton_its,
        "pathwise_targets": pathwise,
        "target_sd": target_sd,
    }
    return Y, Z, K, dK_bal, diag, fits


def penalized_bsde(
    spec: ObstacleProblemSpec, ens: PathEnsemble, n: float, degree: int = 4, pathwise: bool = True
) -> RbsdeEnsemble:
    """Backward scheme for the BSDE with generator f + n (y - h)^-.

    See :func:`reflected_bsde` for ``pathwise``.
    """
    Y, Z, K, dKb, diag, fits = _backward(spec, ens, degree, float(n), pathwise)
    return RbsdeEnsemble(Y, Z, K, ens, float(n), diag, dKb, fits, spec)


def reflected_bsde(
    spec: ObstacleProblemSpec,
    ens: PathEnsemble,
    degree: int = 4,
    pathwise: bool = True,
    obstacle_floor: bool = False,
    itm_split: bool = False,
) -> RbsdeEnsemble:
    """Discretely reflected scheme: Y_k = max(continuation, h(t_k, X_k)).

    Y, Z and K are functions of the current state at every level, so
    Y >= h and the discrete Skorokhod condition hold exactly.  With
    ``pathwise=True`` the quantity regressed at level k is the realized
    value along the path until its first stop (Longstaff-Schwartz style)
    rather than the fitted Y_{k+1}; this removes most of the upward bias
    that the max of a fitted polynomial introduces.  With exact conditional
    expectations (a tree ensemble) both choices coincide.

    ``obstacle_floor`` raises the fitted E_k[Y_{k+1}] to E_k[h(t_{k+1},
    X_{k+1})], computed by Gauss-Hermite quadrature over the Gaussian Euler
    step; this is a valid lower bound because Y_{k+1} >= h.  ``itm_split``
    refits on the paths with h > 0 alone.  Both sharpen the continuation
    estimate where the reflection acts, which K-based diagnostics need.
    The floor uses the Gaussian step law, so leave it off for tree ensembles.
    """
    Y, Z, K, dKb, diag, fits = _backward(spec, ens, degree, None, pathwise, obstacle_floor, itm_split)
    return RbsdeEnsemble(Y, Z, K, ens, None, diag, dKb, fits, spec, obstacle_floor)


# ---------------------------------------------------------------- trees


@dataclass(frozen=True)
class BinomialTree:
    """Recombining tree for constant coefficients; up/down moves are
    +-sqrt(a0 dt) around the drift line, each with probability 1/2."""

    s: float
    x0: float
    T: float
    steps: int
    a0: float
    b0: float = 0.0

    @property
    def dt(self) -> float:
        return (self.T - self.s) / self.steps

    def nodes(self, k: int) -> np.ndarray:
        i = np.arange(k + 1)
        return self.x0 + self.b0 * k * self.dt + math.sqrt(self.a0 * self.dt) * (2 * i - k)

    def time(self, k: int) -> float:
        return self.s + k * self.dt


def tree_paths(tree: BinomialTree) -> PathEnsemble:
    """Every one of the 2**steps paths through the tree as an equally weighted ensemble."""
    m = tree.steps
    signs = np.array([[1.0 if (p >> (m - 1 - k)) & 1 else -1.0 for k in range(m)] for p in range(2**m)])
    dB = signs * math.sqrt(tree.dt)
    paths = np.empty((2**m, m + 1))
    paths[:, 0] = tree.x0
    paths[:, 1:] = tree.x0 + tree.b0 * tree.dt * np.arange(1, m + 1) + math.sqrt(tree.a0) * np.cumsum(dB, axis=1)
    times = np.array([tree.time(k) for k in range(m + 1)])
    return PathEnsemble(tree.s, tree.x0, times, paths, dB, seed=0)


@dataclass
class SnellResult:
    value: float
    values: list[np.ndarray]
    exercise: list[np.ndarray]


def snell_envelope(tree: BinomialTree, spec: ObstacleProblemSpec, implicit: bool = False) -> SnellResult:
    """Exact backward induction of the optimal-stopping value on the tree.

    The generator is integrated explicitly, f evaluated at the conditional
    mean; ``implicit=True`` solves for the continuation value instead, which
    is what the discretely reflected BSDE scheme does.
    """
    if tree.steps + 1 > 10_000:
        raise ValueError("tree too large for exact backward induction")
    sq = math.sqrt(tree.dt)
    dt = tree.dt
    V = spec.terminal(tree.nodes(tree.steps))
    values, exercise = [V], [np.zeros(V.size, dtype=bool)]
    for k in range(tree.steps - 1, -1, -1):
        t, x = tree.time(k), tree.nodes(k)
        up, down = V[1:], V[:-1]
        ev = 0.5 * (up + down)
        z = (up - down) / (2.0 * sq)
        cont = ev + dt * spec.gen(t, x, ev, z)
        if implicit:
            cont, _ = _newton(
                lambda y: y - ev - dt * spec.gen(t, x, y, z),
                cont,
                lambda y: 1.0 - dt * _f_dy(spec, t, x, y, z),
            )
        h = spec.obstacle(t, x)
        V = np.maximum(cont, h)
        values.append(V)
        exercise.append((h >= cont) & (h > NO_OBSTACLE))
    return SnellResult(float(V[0]), values[::-1], exercise[::-1])


# ---------------------------------------------------------------- kernels


def _npdf(z):
    return np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class GaussianKernel:
    """Transition density of L_t for constant a0, b0."""

    a0: float
    b0: float = 0.0

    def __post_init__(self):
        if not self.a0 > 0:
            raise ValueError("a0 must be positive")

    def moments(self, s, x, t):
        return x + self.b0 * (t - s), math.sqrt(self.a0 * (t - s))

    def density(self, s, x, t, y):
        mean, sd = self.moments(s, x, t)
        return _npdf((np.asarray(y) - mean) / sd) / sd

    def cell_probability(self, s, x, t, lo, hi):
        mean, sd = self.moments(s, x, t)
        return ndtr((np.asarray(hi) - mean) / sd) - ndtr((np.asarray(lo) - mean) / sd)

    def tail_bound(self, s, x, t, x_min, x_max) -> float:
        return float(1.0 - self.cell_probability(s, x, t, x_min, x_max))

    def normalization(self, s, x, t, x_min, x_max, n: int = 4001) -> float:
        """Simpson quadrature of p(s, x, t, .) over [x_min, x_max]."""

        mean, sd = self.moments(s, x, t)
        lo, hi = max(x_min, mean - 14 * sd), min(x_max, mean + 14 * sd)
        if hi <= lo:
            return 0.0
        y = np.linspace(lo, hi, n)
        return float(simpson(self.density(s, x, t, y), x=y))

    def expect(self, func, s, x, t, n: int = 4001, width: float = 12.0) -> float:
        """E func(X_t) given X_s = x, exact for the piecewise-linear
        interpolant of ``func`` on a fine grid around the mean."""
        mean, sd = self.moments(s, x, t)
        y = np.linspace(mean - width * sd, mean + width * sd, n)
        v = np.asarray(func(y), dtype=float)
        z = (y - mean) / sd
        slope = np.diff(v) / np.diff(y)
        inter = v[:-1] - slope * y[:-1]
        cdf, pdf = ndtr(z), _npdf(z)
        return float(np.sum((inter + slope * mean) * np.diff(cdf) - slope * sd * np.diff(pdf)))


def _measure_term(kernel, mu: DiscreteMeasure, s, x, weight=None) -> float:
    grid, dx = mu.grid, mu.grid.dx
    keep = mu.times > s + 1e-12
    t, y, mass = mu.times[keep], mu.positions[keep], mu.mass[keep]
    total = 0.0
    if mass.size:
        mean, sd = x + kernel.b0 * (t - s), np.sqrt(kernel.a0 * (t - s))
        prob = ndtr((y + dx / 2 - mean) / sd) - ndtr((y - dx / 2 - mean) / sd)
        w = 1.0 if weight is None else weight(t, y)
        total += float(np.sum(w * mass * prob / dx))
    if np.any(mu.terminal_density > 0):
        y = grid.nodes
        prob = kernel.cell_probability(s, x, mu.T, y - dx / 2, y + dx / 2)
        w = 1.0 if weight is None else weight(np.full_like(y, mu.T), y)
        total += float(np.sum(w * mu.terminal_mass * prob / dx))
    return total


@dataclass
class FeynmanKacValue:
    terminal: float
    source: float
    measure: float

    @property
    def value(self) -> float:
        return self.terminal + self.source + self.measure


def feynman_kac_linear(phi, f_src, mu: DiscreteMeasure, kernel: GaussianKernel, s: float, x: float) -> FeynmanKacValue:
    """Kernel representation of the linear problem with measure data.

    The source integral pairs f at the start of each time cell with the
    kernel at its end, matching the right-end binning of the measure.
    """
    T = mu.T
    if not s < T:
        raise ValueError("need s < T")
    dt_grid = mu.grid.dt(T)
    M = max(1, int(round((T - s) / dt_grid)))
    tau = np.linspace(s, T, M + 1)
    term = kernel.expect(phi, s, x, T)
    src = 0.0
    for i in range(M):
        ti = tau[i]
        src += (tau[i + 1] - ti) * kernel.expect(lambda y: f_src(ti, y), s, x, tau[i + 1])
    return FeynmanKacValue(term, src, _measure_term(kernel, mu, s, x))


@dataclass
class RevuzReport:
    lhs: float
    rhs: float
    stderr: float
    estimator: str
    lhs_scheme: float

    @property
    def difference(self) -> float:
        return self.lhs - self.rhs


def _revuz_lhs(rbsde: RbsdeEnsemble, xi, estimator: str):
    ens = rbsde.ensemble
    X, times = ens.paths[:, :-1], ens.times[:-1]
    w = np.broadcast_to(np.asarray(xi(times[None, :], X), dtype=float), X.shape)
    scheme = np.sum(w * rbsde.dK, axis=1)
    per_path = scheme if estimator == "scheme" or rbsde.dK_balance is None else np.sum(w * rbsde.dK_balance, axis=1)
    return per_path, float(scheme.mean())


def revuz_check(
    mu: DiscreteMeasure,
    rbsde,
    kernel: GaussianKernel,
    xi,
    s: float,
    x0: float,
    estimator: str = "balance",
    fresh: PathEnsemble | None = None,
) -> RevuzReport:
    """Compare E sum_k xi(t_k, X_k) dK_k with the kernel-weighted atom sum.

    ``estimator="scheme"`` averages the stored increments of K.  Those are
    positive parts of regression-fitted quantities, so fitting error piles
    up in them.  ``"balance"`` (default) uses Y_k - Y_{k+1} - f_k dt +
    Z_k dB_k instead, whose conditional mean is the same increment computed
    with the exact one-step expectation.

    ``rbsde`` is one result or a sequence of results fitted on independent
    ensembles.  For a sequence, the left side is the mean over replicates
    and ``stderr`` the standard error of that mean; this accounts for the
    fitting noise, which the path-level spread of a single in-sample fit
    does not see.  With ``fresh`` each fit is first replayed on that
    independent ensemble (see :meth:`RbsdeEnsemble.replay`).
    """
    if estimator not in ("balance", "scheme"):
        raise ValueError(f"unknown estimator {estimator!r}")
    runs = [rbsde] if isinstance(rbsde, RbsdeEnsemble) else list(rbsde)
    if not runs:
        raise ValueError("no BSDE results given")
    if fresh is not None:
        if any(abs(fresh.x0 - r.ensemble.x0) > 1e-12 for r in runs):
            raise ValueError("fresh ensemble starts elsewhere")
        runs = [r.replay(fresh) for r in runs]
    for r in runs:
        ens = r.ensemble
        if abs(ens.s - s) > 1e-12 or abs(ens.x0 - x0) > 1e-12 or abs(ens.T - mu.T) > 1e-12:
            raise ValueError("ensemble and measure describe different instances")
    parts = [_revuz_lhs(r, xi, estimator) for r in runs]
    if len(parts) == 1:
        per_path, scheme = parts[0]
        lhs = float(per_path.mean())
        se = float(per_path.std(ddof=1) / math.sqrt(per_path.size))
    else:
        means = np.array([p.mean() for p, _ in parts])
        lhs = float(means.mean())
        se = float(means.std(ddof=1) / math.sqrt(means.size))
        scheme = float(np.mean([sc for _, sc in parts]))
    rhs = _measure_term(kernel, mu, s, x0, weight=xi)
    return RevuzReport(lhs, rhs, se, estimator, scheme)


@dataclass
class H3Estimate:
    value: float
    stderr: float
    starts: np.ndarray
    per_start: np.ndarray
    per_start_stderr: np.ndarray


def h3_estimator(
    spec: ObstacleProblemSpec,
    grid: Grid,
    N: int,
    m: int,
    n_starts: int = 5,
    seed: int = 0,
    threads: int | None = None,
) -> H3Estimate:
    """Monte Carlo estimate of sup_s int E_{s,x} max_k |h^+(t_k, X_k)|^2 rho^2(x) dx.

    The maximum over the discrete time levels stands in for the essential
    supremum over [s, T], so the estimate is biased low.
    """
    x = grid.nodes
    wts = grid.weights() * rho(x, spec.weight_alpha) ** 2
    starts = np.linspace(0.0, spec.T, n_starts, endpoint=False)
    vals, errs = np.zeros(n_starts), np.zeros(n_starts)
    for i, s in enumerate(starts):
        rng = _block_rng(seed, i)
        times = np.linspace(s, spec.T, m + 1)
        dt = (spec.T - s) / m
        X = np.repeat(x, N)
        running = np.maximum(spec.obstacle(s, X), 0.0) ** 2
        for k in range(m):
            t = times[k]
            drift = spec.coeffs.drift(t, X) + 0.5 * spec.coeffs.divergence(t, X)
            X = X + drift * dt + spec.coeffs.sigma(t, X) * rng.standard_normal(X.size) * math.sqrt(dt)
            np.maximum(running, np.maximum(spec.obstacle(times[k + 1], X), 0.0) ** 2, out=running)
        per_node = running.reshape(x.size, N)
        vals[i] = float(np.sum(wts * per_node.mean(axis=1)))
        var = per_node.var(axis=1, ddof=1) if N > 1 else np.zeros(x.size)
        errs[i] = float(np.sqrt(np.sum(wts**2 * var / N)))
    best = int(np.argmax(vals))
    return H3Estimate(float(vals[best]), float(errs[best]), starts, vals, errs)
