"""Domain types shared by every solver backend.

The problem data describe the obstacle problem

    min(u - h, -du/dt - L_t u - f(t, x, u, sigma grad u)) = 0,   u(T) = phi,

with L_t = 1/2 d/dx(a d/dx) + b d/dx on a truncated interval.  Everything is
one-dimensional; callables are expected to be numpy-vectorized.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

# Stand-in for h = -inf.  Finite so that (u - h) * 0 stays 0 instead of nan.
NO_OBSTACLE = -1.0e300

ArrayFn2 = Callable[[np.ndarray, np.ndarray], np.ndarray]


class Boundary(str, enum.Enum):
    DIRICHLET_OBSTACLE = "dirichlet_obstacle"
    DIRICHLET_ZERO = "dirichlet_zero"
    NEUMANN_ZERO = "neumann_zero"


def _as_field(fn, *args) -> np.ndarray:
    """Evaluate ``fn`` and broadcast the result to the shape of the inputs."""
    shape = np.broadcast(*args).shape
    out = np.asarray(fn(*args), dtype=float)
    return np.broadcast_to(out, shape).astype(float, copy=True)


@dataclass(frozen=True)
class CoefficientField:
    """Diffusion ``a`` and drift ``b`` of the divergence-form operator.

    ``da_dx`` is the spatial derivative of ``a``; when it is ``None`` the
    forward simulation falls back to central differences.
    """

    a: ArrayFn2
    b: ArrayFn2
    lam: float
    Lam: float
    da_dx: ArrayFn2 | None = None

    def __post_init__(self):
        if not (0.0 < self.lam <= self.Lam):
            raise ValueError(f"need 0 < lambda <= Lambda, got {self.lam}, {self.Lam}")

    def diffusion(self, t, x) -> np.ndarray:
        return _as_field(self.a, t, x)

    def drift(self, t, x) -> np.ndarray:
        return _as_field(self.b, t, x)

    def sigma(self, t, x) -> np.ndarray:
        # principal square root of a; scalar in d=1
        return np.sqrt(np.maximum(self.diffusion(t, x), 0.0))

    def divergence(self, t, x, step: float = 1.0e-4) -> np.ndarray:
        if self.da_dx is not None:
            return _as_field(self.da_dx, t, x)
        x = np.asarray(x, dtype=float)
        return (self.diffusion(t, x + step) - self.diffusion(t, x - step)) / (2.0 * step)


@dataclass(frozen=True)
class GeneratorSpec:
    """Generator ``f(t, x, y, z)`` with its Lipschitz and growth data."""

    f: Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    lipschitz_L: float
    growth_M: float
    g: ArrayFn2

    def __call__(self, t, x, y, z) -> np.ndarray:
        return _as_field(self.f, t, x, y, z)

    def dominant(self, t, x) -> np.ndarray:
        return _as_field(self.g, t, x)


@dataclass(frozen=True)
class ObstacleProblemSpec:
    T: float
    coeffs: CoefficientField
    gen: GeneratorSpec
    phi: Callable[[np.ndarray], np.ndarray]
    h: ArrayFn2
    weight_alpha: float = 1.0
    name: str = ""

    def terminal(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.phi(x), dtype=float), x.shape).astype(float)

    def obstacle(self, t, x) -> np.ndarray:
        """Obstacle values with -inf mapped to :data:`NO_OBSTACLE`."""
        hv = _as_field(self.h, t, x)
        hv[np.isneginf(hv)] = NO_OBSTACLE
        return np.maximum(hv, NO_OBSTACLE)

    def obstacle_left_limit(self, t, x, delta: float | None = None) -> np.ndarray:
        """Probe h(t-, x) by evaluating slightly before ``t``."""
        if delta is None:
            delta = 1.0e-9 * max(self.T, 1.0)
        return self.obstacle(t - delta, x)


@dataclass(frozen=True)
class Grid:
    x_min: float
    x_max: float
    nx: int
    nt: int
    boundary: Boundary = Boundary.DIRICHLET_OBSTACLE

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise ValueError("x_min must be < x_max")
        if self.nx < 1 or self.nt < 1:
            raise ValueError("nx and nt must be positive")
        object.__setattr__(self, "boundary", Boundary(self.boundary))

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.nx + 1)

    @property
    def nodes(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(1, self.nx + 1)

    def dt(self, T: float) -> float:
        return T / self.nt

    def times(self, T: float) -> np.ndarray:
        return np.linspace(0.0, T, self.nt + 1)

    def weights(self) -> np.ndarray:
        """Spatial quadrature weights; the two end nodes absorb the half cells
        next to the boundary so that the weights sum to x_max - x_min."""
        w = np.full(self.nx, self.dx)
        w[0] += 0.5 * self.dx
        w[-1] += 0.5 * self.dx
        return w

    def time_weights(self, T: float) -> np.ndarray:
        tw = np.full(self.nt + 1, self.dt(T))
        tw[0] *= 0.5
        tw[-1] *= 0.5
        return tw

    def refined(self) -> "Grid":
        """Grid with dx and dt both halved."""
        return Grid(self.x_min, self.x_max, 2 * self.nx + 1, 2 * self.nt, self.boundary)


def rho(x, alpha: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return (1.0 + x * x) ** (-alpha)


def central_gradient(u: np.ndarray, dx: float) -> np.ndarray:
    """Central differences in the last axis, one-sided at the two end nodes."""
    u = np.asarray(u, dtype=float)
    if u.shape[-1] < 2:
        return np.zeros_like(u)
    return np.gradient(u, dx, axis=-1, edge_order=1)


@dataclass
class DiscreteSolution:
    u: np.ndarray
    grad_u: np.ndarray
    grid: Grid
    T: float
    theta: float = 1.0

    @classmethod
    def from_values(cls, u: np.ndarray, grid: Grid, T: float, theta: float = 1.0):
        u = np.asarray(u, dtype=float)
        return cls(u=u, grad_u=central_gradient(u, grid.dx), grid=grid, T=T, theta=theta)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times(self.T)

    def at(self, t: float, x) -> np.ndarray:
        """Linear interpolation in x on the time level nearest to ``t``."""
        k = int(round(t / self.grid.dt(self.T)))
        k = min(max(k, 0), self.grid.nt)
        return np.interp(x, self.grid.nodes, self.u[k])


def weighted_l2_norm(v, alpha: float, grid: Grid) -> float:
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        return 0.0
    r = rho(grid.nodes, alpha)
    return float(np.sqrt(np.sum((v * r) ** 2 * grid.weights())))


def weighted_lp_norm_qt(V: np.ndarray, alpha: float, grid: Grid, T: float, p: float = 2.0) -> float:
    """Norm of ``V * rho`` in L_p over [0, T] x [x_min, x_max]."""
    V = np.asarray(V, dtype=float)
    r = rho(grid.nodes, alpha)
    cell = np.outer(grid.time_weights(T), grid.weights())
    return float(np.sum(np.abs(V * r) ** p * cell) ** (1.0 / p))


def potential_norm(sol: DiscreteSolution, alpha: float) -> float:
    grid = sol.grid
    sup_part = max(weighted_l2_norm(row, alpha, grid) for row in sol.u)
    grad_sq = np.array([weighted_l2_norm(row, alpha, grid) ** 2 for row in sol.grad_u])
    return float(sup_part + np.sqrt(np.sum(grad_sq * grid.time_weights(sol.T))))


@dataclass
class CheckResult:
    name: str
    passed: bool
    witness: dict | None = None
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list[CheckResult]:
        return [c for c in self.checks if not c.passed]

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "checks": [
                {"name": c.name, "passed": c.passed, "witness": c.witness, "detail": c.detail}
                for c in self.checks
            ],
        }


def _first_witness(mask: np.ndarray, **coords) -> dict | None:
    idx = np.flatnonzero(~mask)
    if idx.size == 0:
        return None
    i = idx[0]
    return {k: float(np.ravel(v)[i]) for k, v in coords.items()}


def validate_spec(
    spec: ObstacleProblemSpec, grid: Grid, samples: int = 2000, seed: int = 0
) -> ValidationReport:
    """Sample the standing assumptions on the problem data.

    Never raises on bad data; every failing check carries the first
    sample point that witnesses the violation.
    """
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, spec.T, samples)
    x = rng.uniform(grid.x_min, grid.x_max, samples)
    report = ValidationReport()
    c = spec.coeffs
    rtol = 1.0e-12

    def add(name, mask, detail, **coords):
        mask = np.asarray(mask, dtype=bool)
        report.checks.append(
            CheckResult(name, bool(mask.all()), _first_witness(mask, **coords), detail)
        )

    try:
        a = c.diffusion(t, x)
        b = c.drift(t, x)
    except Exception as exc:  # data fails to evaluate at all
        report.checks.append(CheckResult("coefficients_evaluate", False, None, repr(exc)))
        return report
    add("coefficients_finite", np.isfinite(a) & np.isfinite(b), "a, b finite", t=t, x=x, a=a, b=b)
    with np.errstate(invalid="ignore"):
        ell = (a >= c.lam * (1 - rtol)) & (a <= c.Lam * (1 + rtol))
        add("ellipticity", ell, f"lambda={c.lam} <= a <= Lambda={c.Lam}", t=t, x=x, a=a)
        add("drift_bound", np.abs(b) <= c.Lam * (1 + rtol), f"|b| <= Lambda={c.Lam}", t=t, x=x, b=b)
    # a is scalar in d=1, so symmetry holds trivially
    report.checks.append(CheckResult("symmetry", True, None, "scalar diffusion"))

    gen = spec.gen
    y1, y2 = rng.normal(0, 3, samples), rng.normal(0, 3, samples)
    z1, z2 = rng.normal(0, 3, samples), rng.normal(0, 3, samples)
    f1, f2 = gen(t, x, y1, z1), gen(t, x, y2, z2)
    lip = np.abs(f1 - f2) <= gen.lipschitz_L * (np.abs(y1 - y2) + np.abs(z1 - z2)) * (1 + 1e-9) + 1e-12
    add("generator_lipschitz", lip, f"L={gen.lipschitz_L}", t=t, x=x, y1=y1, z1=z1, y2=y2, z2=z2)
    g = gen.dominant(t, x)
    grow = np.abs(f1) <= g + gen.growth_M * (np.abs(y1) + np.abs(z1)) + 1e-12
    add("generator_growth", grow & (g >= 0), f"M={gen.growth_M}", t=t, x=x, y=y1, z=z1)

    nodes = grid.nodes
    phi = spec.terminal(nodes)
    hT = spec.obstacle(spec.T, nodes)
    add("terminal_compatibility", phi >= hT - 1e-12, "phi >= h(T) at grid nodes", x=nodes, phi=phi, h=hT)
    report.checks.append(
        CheckResult(
            "weight_integrable",
            spec.weight_alpha > 0.5,
            None if spec.weight_alpha > 0.5 else {"alpha": spec.weight_alpha},
            "alpha > d/2",
        )
    )
    return report
