"""Discrete reflection measures and their bookkeeping.

Atoms are stored per (time level, node).  A cell (t_k, t_{k+1}] of the
backward sweep is binned to its right end k+1, so no atom can ever sit at
level 0.  The part of the measure living on {T} that comes from a jump of
the solution at the terminal time is kept separately as a density with
respect to Lebesgue measure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Grid, rho


@dataclass
class DiscreteMeasure:
    k: np.ndarray
    j: np.ndarray
    mass: np.ndarray
    terminal_density: np.ndarray
    grid: Grid
    T: float

    def __post_init__(self):
        self.k = np.asarray(self.k, dtype=np.int64)
        self.j = np.asarray(self.j, dtype=np.int64)
        self.mass = np.asarray(self.mass, dtype=float)
        self.terminal_density = np.asarray(self.terminal_density, dtype=float)
        if not (self.k.shape == self.j.shape == self.mass.shape):
            raise ValueError("atom arrays must have equal length")
        if np.any(self.mass < 0) or np.any(self.terminal_density < 0):
            raise ValueError("measure masses must be nonnegative")
        if self.terminal_density.shape != (self.grid.nx,):
            raise ValueError("terminal_density must have one entry per node")

    @classmethod
    def empty(cls, grid: Grid, T: float) -> "DiscreteMeasure":
        z = np.zeros(0)
        return cls(z, z, z, np.zeros(grid.nx), grid, T)

    @classmethod
    def from_dense(cls, masses: np.ndarray, terminal_density: np.ndarray, grid: Grid, T: float):
        """Build from an [nt+1] x [nx] array of per-node masses."""
        k, j = np.nonzero(masses > 0)
        return cls(k, j, masses[k, j], terminal_density, grid, T)

    @property
    def atoms(self) -> list[tuple[int, int, float]]:
        return list(zip(self.k.tolist(), self.j.tolist(), self.mass.tolist()))

    @property
    def times(self) -> np.ndarray:
        return self.k * self.grid.dt(self.T)

    @property
    def positions(self) -> np.ndarray:
        return self.grid.nodes[self.j]

    @property
    def terminal_mass(self) -> np.ndarray:
        return self.terminal_density * self.grid.dx

    def dense(self) -> np.ndarray:
        out = np.zeros((self.grid.nt + 1, self.grid.nx))
        np.add.at(out, (self.k, self.j), self.mass)
        return out

    def total(self, alpha: float | None = None) -> float:
        """Total mass, rho^2-weighted when ``alpha`` is given; includes the terminal part."""
        if alpha is None:
            return float(self.mass.sum() + self.terminal_mass.sum())
        w = rho(self.grid.nodes, alpha) ** 2
        return float(np.sum(self.mass * w[self.j]) + np.sum(self.terminal_mass * w))

    def is_empty(self) -> bool:
        return self.mass.size == 0 and not np.any(self.terminal_density > 0)


@dataclass
class TimeMarginal:
    masses: np.ndarray
    atom_like: np.ndarray
    spatial_volume: float
    atom_frac: float

    @property
    def total(self) -> float:
        return float(self.masses.sum())

    @property
    def density(self) -> np.ndarray:
        """Per-level mass divided by the rho^2-weighted length of the grid;
        equals c for a spatially uniform atom c * delta_t (x) dx."""
        return self.masses / self.spatial_volume

    @property
    def atom_level(self) -> int | None:
        idx = np.flatnonzero(self.atom_like)
        return int(idx[0]) if idx.size else None

    def largest_fraction(self) -> float:
        tot = self.total
        return float(self.masses.max() / tot) if tot > 0 else 0.0


def time_marginal(mu: DiscreteMeasure, alpha: float, atom_frac: float = 0.95) -> TimeMarginal:
    grid = mu.grid
    w = rho(grid.nodes, alpha) ** 2
    masses = np.zeros(grid.nt + 1)
    np.add.at(masses, mu.k, mu.mass * w[mu.j])
    masses[grid.nt] += float(np.sum(mu.terminal_mass * w))
    tot = masses.sum()
    atom_like = masses > atom_frac * tot if tot > 0 else np.zeros(grid.nt + 1, dtype=bool)
    volume = float(np.sum(w) * grid.dx)
    return TimeMarginal(masses, atom_like, volume, atom_frac)


def terminal_jump_nodes(spec, grid: Grid) -> np.ndarray:
    """Nodes where the obstacle's left limit at T exceeds phi."""
    x = grid.nodes
    return spec.obstacle_left_limit(spec.T, x) > spec.terminal(x) + 1e-12


def pre_terminal_value(u: np.ndarray, extrapolate: bool = False) -> np.ndarray:
    """Estimate of u(T-) from the two last interior time levels."""
    if extrapolate and u.shape[0] >= 3:
        return 2.0 * u[-2] - u[-3]
    return u[-2]


@dataclass
class StructuralReport:
    ok: bool
    violations: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"ok": self.ok, "violations": self.violations}


def structural_checks(mu: DiscreteMeasure, sol, spec, extrapolate: bool = False) -> StructuralReport:
    violations: list[dict] = []
    at_zero = np.flatnonzero((mu.k == 0) & (mu.mass > 0))
    for i in at_zero:
        violations.append({"check": "no_mass_at_t0", "j": int(mu.j[i]), "mass": float(mu.mass[i])})

    grid = mu.grid
    phi = spec.terminal(grid.nodes)
    jump = terminal_jump_nodes(spec, grid)
    expected = np.where(jump, np.maximum(pre_terminal_value(sol.u, extrapolate) - phi, 0.0), 0.0)
    tol = grid.dt(spec.T) * (1.0 + np.max(np.abs(sol.u[-2])))
    bad = np.flatnonzero(np.abs(mu.terminal_density - expected) > tol)
    for j in bad:
        violations.append(
            {
                "check": "terminal_density",
                "j": int(j),
                "got": float(mu.terminal_density[j]),
                "expected": float(expected[j]),
            }
        )
    return StructuralReport(not violations, violations)
