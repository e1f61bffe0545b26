"""Backward-in-time solvers for the discrete obstacle problem.

Two backends share the same theta-scheme in time:

* ``solve_penalized`` adds ``n (u - h)^-`` to the right-hand side and solves
  the nonlinear step by a combined active-set / Picard iteration;
* ``solve_lcp`` solves the per-step complementarity system exactly with
  projected SOR or policy iteration.

Both return the reflection measure binned to the right end of each time cell.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import (
    DiscreteSolution,
    Grid,
    ObstacleProblemSpec,
    central_gradient,
    rho,
    weighted_lp_norm_qt,
)
from .measure import DiscreteMeasure, pre_terminal_value, terminal_jump_nodes
from .operator import (
    OperatorMatrix,
    SolverError,
    apply,
    assemble,
    boundary_values,
    check_dominance,
    policy_iteration,
    psor,
    shifted_bands,
    thomas,
)

logger = logging.getLogger(__name__)


class MonotonicityError(SolverError):
    def __init__(self, message: str, witness: dict):
        super().__init__(message)
        self.witness = witness


@dataclass(frozen=True)
class PenaltySchedule:
    levels: tuple[float, ...]
    inner_tol: float = 1e-10
    inner_max: int = 200

    def __post_init__(self):
        lv = tuple(float(v) for v in self.levels)
        if not lv or any(v <= 0 for v in lv) or any(b <= a for a, b in zip(lv, lv[1:])):
            raise ValueError("penalty levels must be positive and strictly increasing")
        object.__setattr__(self, "levels", lv)

    @classmethod
    def geometric(cls, k_max: int, **kw) -> "PenaltySchedule":
        return cls(tuple(2.0**i for i in range(k_max + 1)), **kw)

    @property
    def mono_tol(self) -> float:
        return 10.0 * self.inner_tol


@dataclass
class SolveReport:
    backend: str
    iterations: list[int] = field(default_factory=list)
    penalty_residual: list[float] = field(default_factory=list)
    complementarity_residual: float = float("nan")
    wall_time: float = 0.0
    upwind_nodes: int = 0
    penalty: float | None = None
    inner_sweeps: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["max_iterations"] = max(self.iterations, default=0)
        return d


def generator_values(spec: ObstacleProblemSpec, t: float, x: np.ndarray, u: np.ndarray, dx: float):
    z = spec.coeffs.sigma(t, x) * central_gradient(u, dx)
    return spec.gen(t, x, u, z)


class _Stepper:
    """Per-time-level operator data for the backward sweep."""

    def __init__(self, spec: ObstacleProblemSpec, grid: Grid, theta: float):
        self.spec, self.grid, self.theta = spec, grid, theta
        self.dt = grid.dt(spec.T)
        self.x = grid.nodes
        self.times = grid.times(spec.T)
        self.upwind = 0
        self._cache: dict[int, tuple[OperatorMatrix, tuple[float, float]]] = {}

    def level(self, k: int):
        if k not in self._cache:
            if len(self._cache) > 2:
                self._cache.clear()
            t = self.times[k]
            m = assemble(self.spec.coeffs, self.grid, t)
            self.upwind = max(self.upwind, m.upwind_nodes)
            self._cache[k] = (m, boundary_values(self.grid, self.spec, t))
        return self._cache[k]

    def system(self, k: int, u_next: np.ndarray):
        """Bands of I - theta dt L_k and the explicit part of the right-hand side."""
        m, g = self.level(k)
        lo, di, up = shifted_bands(m, self.dt, self.theta)
        bad = check_dominance(lo, di, up)
        if bad >= 0:
            raise SolverError(f"loss of diagonal dominance at row {bad}", time_level=k)
        rhs = u_next.copy()
        if m.boundary.value != "neumann_zero":
            rhs[0] += self.theta * self.dt * m.lower[0] * g[0]
            rhs[-1] += self.theta * self.dt * m.upper[-1] * g[1]
        if self.theta < 1.0:
            m1, g1 = self.level(k + 1)
            rhs += (1.0 - self.theta) * self.dt * apply(m1, u_next, g1)
        return lo, di, up, rhs

    def obstacle(self, k: int) -> np.ndarray:
        return self.spec.obstacle(self.times[k], self.x)

    def f(self, k: int, u: np.ndarray) -> np.ndarray:
        return generator_values(self.spec, self.times[k], self.x, u, self.grid.dx)


def _check_dt(spec: ObstacleProblemSpec, grid: Grid, enforce: bool):
    cap = 1.0 / (4.0 * spec.gen.lipschitz_L)
    if enforce and grid.dt(spec.T) > cap:
        raise ValueError(f"dt={grid.dt(spec.T):.3g} exceeds 1/(4L)={cap:.3g}; increase nt")


def _split_terminal(masses: np.ndarray, u: np.ndarray, spec, grid: Grid) -> np.ndarray:
    """Move last-cell mass at terminal-jump nodes into the terminal density."""
    jump = terminal_jump_nodes(spec, grid)
    dens = np.zeros(grid.nx)
    if jump.any():
        phi = spec.terminal(grid.nodes)
        dens[jump] = np.maximum(pre_terminal_value(u) - phi, 0.0)[jump]
        masses[grid.nt, jump] = 0.0
    return dens


def solve_penalized(
    spec: ObstacleProblemSpec,
    grid: Grid,
    n: float,
    inner_tol: float = 1e-10,
    inner_max: int = 200,
    theta: float = 1.0,
    enforce_dt_cap: bool = True,
):
    """Penalized backward sweep at penalty level ``n``."""
    _check_dt(spec, grid, enforce_dt_cap)
    start = time.perf_counter()
    st = _Stepper(spec, grid, theta)
    dt, dx, nt = st.dt, grid.dx, grid.nt
    u = np.empty((nt + 1, grid.nx))
    u[nt] = spec.terminal(st.x)
    masses = np.zeros((nt + 1, grid.nx))
    report = SolveReport("penalized", penalty=float(n))
    for k in range(nt - 1, -1, -1):
        lo, di, up, rhs0 = st.system(k, u[k + 1])
        h = st.obstacle(k)
        cur = u[k + 1].copy()
        for it in range(1, inner_max + 1):
            act = cur < h
            pen = dt * n * act
            new = thomas(lo, di + pen, up, rhs0 + dt * st.f(k, cur) + pen * np.where(act, h, 0.0))
            if not np.all(np.isfinite(new)):
                raise SolverError("penalized iteration produced non-finite values", time_level=k)
            change = float(np.max(np.abs(new - cur)))
            cur = new
            if change <= inner_tol:
                break
        else:
            raise SolverError(f"penalized inner iteration did not converge (change={change:.3g})", k)
        u[k] = cur
        viol = np.maximum(h - cur, 0.0)
        masses[k + 1] = n * viol * dx * dt
        report.iterations.append(it)
        report.penalty_residual.append(float(viol.max()))
    dens = _split_terminal(masses, u, spec, grid)
    sol = DiscreteSolution.from_values(u, grid, spec.T, theta)
    mu = DiscreteMeasure.from_dense(masses, dens, grid, spec.T)
    report.upwind_nodes = st.upwind
    report.complementarity_residual = complementarity_residual(sol, spec, grid)
    report.wall_time = time.perf_counter() - start
    return sol, mu, report


def solve_lcp(
    spec: ObstacleProblemSpec,
    grid: Grid,
    method: str = "psor",
    omega: float = 1.2,
    tol: float = 1e-10,
    max_iter: int = 20000,
    theta: float = 1.0,
    outer_max: int = 200,
    enforce_dt_cap: bool = True,
):
    """Per-step linear complementarity solve of the obstacle problem."""
    if method not in ("psor", "policy_iteration"):
        raise ValueError(f"unknown LCP method {method!r}")
    if not 0.0 < omega < 2.0:
        raise ValueError("omega must lie in (0, 2)")
    _check_dt(spec, grid, enforce_dt_cap)
    start = time.perf_counter()
    st = _Stepper(spec, grid, theta)
    dt, dx, nt = st.dt, grid.dx, grid.nt
    u = np.empty((nt + 1, grid.nx))
    u[nt] = spec.terminal(st.x)
    masses = np.zeros((nt + 1, grid.nx))
    report = SolveReport(method)
    for k in range(nt - 1, -1, -1):
        lo, di, up, rhs0 = st.system(k, u[k + 1])
        h = st.obstacle(k)
        cur = np.maximum(u[k + 1], h)
        fval = st.f(k, cur)
        sweeps = 0
        for it in range(1, outer_max + 1):
            b = rhs0 + dt * fval
            if method == "psor":
                cur, sw, res = psor(lo, di, up, b, h, cur, omega, tol, max_iter)
            else:
                cur, sw, res = policy_iteration(lo, di, up, b, h, cur)
            sweeps += sw
            if not res <= tol * max(1.0, np.max(np.abs(b))):
                raise SolverError(f"{method} did not converge (residual={res:.3g})", time_level=k)
            f_new = st.f(k, cur)
            delta = dt * float(np.max(np.abs(f_new - fval)))
            fval = f_new
            if delta <= tol:
                break
        else:
            raise SolverError("generator fixed point did not converge", time_level=k)
        u[k] = cur
        r = di * cur - rhs0 - dt * fval
        r[1:] += lo[1:] * cur[:-1]
        r[:-1] += up[:-1] * cur[1:]
        contact = cur <= h
        masses[k + 1] = np.where(contact, np.maximum(r, 0.0), 0.0) * dx
        report.iterations.append(it)
        report.inner_sweeps.append(sweeps)
    dens = _split_terminal(masses, u, spec, grid)
    sol = DiscreteSolution.from_values(u, grid, spec.T, theta)
    mu = DiscreteMeasure.from_dense(masses, dens, grid, spec.T)
    report.upwind_nodes = st.upwind
    report.complementarity_residual = complementarity_residual(sol, spec, grid)
    report.wall_time = time.perf_counter() - start
    return sol, mu, report


def pde_residuals(sol: DiscreteSolution, spec: ObstacleProblemSpec, grid: Grid | None = None) -> np.ndarray:
    """dt-scaled residual of the theta-scheme at every level k < nt."""
    grid = grid or sol.grid
    st = _Stepper(spec, grid, sol.theta)
    res = np.zeros((grid.nt, grid.nx))
    for k in range(grid.nt - 1, -1, -1):
        lo, di, up, rhs0 = st.system(k, sol.u[k + 1])
        cur = sol.u[k]
        r = di * cur - rhs0 - st.dt * st.f(k, cur)
        r[1:] += lo[1:] * cur[:-1]
        r[:-1] += up[:-1] * cur[1:]
        res[k] = r
    return res


def complementarity_residual(sol: DiscreteSolution, spec: ObstacleProblemSpec, grid: Grid | None = None) -> float:
    grid = grid or sol.grid
    res = pde_residuals(sol, spec, grid)
    h = np.array([spec.obstacle(t, grid.nodes) for t in grid.times(spec.T)[:-1]])
    return float(np.max(np.abs(np.minimum(sol.u[:-1] - h, res))))


def minimality_integral(sol: DiscreteSolution, spec: ObstacleProblemSpec, mu: DiscreteMeasure) -> float:
    grid = mu.grid
    x = grid.nodes
    w = rho(x, spec.weight_alpha) ** 2
    total = 0.0
    if mu.mass.size:
        t = mu.times
        gap = sol.u[mu.k, mu.j] - spec.obstacle(t, x[mu.j])
        total += float(np.sum(gap * w[mu.j] * mu.mass))
    if np.any(mu.terminal_density > 0):
        gap_T = pre_terminal_value(sol.u) - spec.terminal(x)
        total += float(np.sum(gap_T * w * mu.terminal_mass))
    return total


@dataclass
class ConvergenceRow:
    n: float
    err_u_2: float
    err_grad: dict[float, float]
    minimality: float


@dataclass
class ConvergenceTable:
    rows: list[ConvergenceRow]
    lcp: tuple[DiscreteSolution, DiscreteMeasure, SolveReport]

    def column(self, p: float) -> np.ndarray:
        return np.array([r.err_grad[p] for r in self.rows])

    @property
    def err_u(self) -> np.ndarray:
        return np.array([r.err_u_2 for r in self.rows])


def solve_penalized_sequence(
    spec: ObstacleProblemSpec,
    grid: Grid,
    schedule: PenaltySchedule,
    lcp_kwargs: dict | None = None,
    p_values: tuple[float, ...] = (1.0, 1.5, 2.0),
):
    """Run the penalty schedule and tabulate its distance to the LCP solution."""
    lcp = solve_lcp(spec, grid, **(lcp_kwargs or {}))
    u_lcp = lcp[0]
    alpha = spec.weight_alpha
    rows: list[ConvergenceRow] = []
    prev = None
    for n in schedule.levels:
        sol, mu, _ = solve_penalized(spec, grid, n, schedule.inner_tol, schedule.inner_max)
        if prev is not None:
            drop = prev.u - sol.u
            if drop.max() > schedule.mono_tol:
                k, j = np.unravel_index(np.argmax(drop), drop.shape)
                witness = {"n": n, "k": int(k), "j": int(j), "decrease": float(drop[k, j])}
                raise MonotonicityError("penalized solutions are not nondecreasing in n", witness)
        rows.append(
            ConvergenceRow(
                n=n,
                err_u_2=weighted_lp_norm_qt(sol.u - u_lcp.u, alpha, grid, spec.T, 2.0),
                err_grad={
                    p: weighted_lp_norm_qt(sol.grad_u - u_lcp.grad_u, alpha, grid, spec.T, p)
                    for p in p_values
                },
                minimality=minimality_integral(sol, spec, mu),
            )
        )
        prev = sol
    return sol, mu, ConvergenceTable(rows, lcp)


@dataclass
class OrderingReport:
    hypotheses_ok: bool
    hypothesis_violations: list[str]
    ordered: bool | None = None
    max_violation: float = 0.0
    witness: dict | None = None
    same_obstacle: bool = False
    measure_dominance: bool | None = None
    dominance_violation: float = 0.0
    order_tol: float = 0.0


def compare_solutions(
    spec1: ObstacleProblemSpec,
    spec2: ObstacleProblemSpec,
    grid: Grid,
    method: str = "psor",
    tol: float = 1e-10,
) -> OrderingReport:
    """Check u1 <= u2 for ordered data and, with equal obstacles, dmu2 <= dmu1.

    Hypothesis violations are reported (``hypotheses_ok=False``) and the
    ordering is not evaluated.
    """
    order_tol = 10.0 * tol
    x, times = grid.nodes, grid.times(spec1.T)
    problems = []
    if spec1.T != spec2.T:
        problems.append("horizons differ")
    if np.any(spec1.terminal(x) > spec2.terminal(x)):
        problems.append("phi1 <= phi2 violated")
    h1 = np.array([spec1.obstacle(t, x) for t in times])
    h2 = np.array([spec2.obstacle(t, x) for t in times])
    if np.any(h1 > h2):
        problems.append("h1 <= h2 violated")
    if problems:
        return OrderingReport(False, problems, order_tol=order_tol)

    s1, m1, _ = solve_lcp(spec1, grid, method=method, tol=tol)
    # f1 <= f2 is only required along (u1, sigma grad u1)
    for k, t in enumerate(times[:-1]):
        z = spec1.coeffs.sigma(t, x) * s1.grad_u[k]
        if np.any(spec1.gen(t, x, s1.u[k], z) > spec2.gen(t, x, s1.u[k], z) + 1e-14):
            return OrderingReport(False, ["f1 <= f2 violated along u1"], order_tol=order_tol)
    s2, m2, _ = solve_lcp(spec2, grid, method=method, tol=tol)

    gap = s1.u - s2.u
    k, j = np.unravel_index(np.argmax(gap), gap.shape)
    report = OrderingReport(
        True,
        [],
        ordered=bool(gap.max() <= order_tol),
        max_violation=float(max(gap.max(), 0.0)),
        witness={"k": int(k), "j": int(j), "u1": float(s1.u[k, j]), "u2": float(s2.u[k, j])},
        same_obstacle=bool(np.array_equal(h1, h2)),
        order_tol=order_tol,
    )
    if report.same_obstacle:
        # larger data push the solution off the obstacle, so the second
        # measure is the smaller one on every time prefix and at every node
        c1 = np.cumsum(m1.dense(), axis=0)
        c2 = np.cumsum(m2.dense(), axis=0)
        excess = c2 - c1
        report.dominance_violation = float(max(excess.max(), 0.0))
        report.measure_dominance = bool(excess.max() <= order_tol)
    return report
