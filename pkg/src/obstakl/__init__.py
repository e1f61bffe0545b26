"""Grid and Monte Carlo solvers for parabolic obstacle problems with a
divergence-form operator."""

from .core import (
    NO_OBSTACLE,
    Boundary,
    CoefficientField,
    DiscreteSolution,
    GeneratorSpec,
    Grid,
    ObstacleProblemSpec,
    potential_norm,
    rho,
    validate_spec,
    weighted_l2_norm,
)
from .measure import DiscreteMeasure, structural_checks, time_marginal
from .vi_solvers import (
    PenaltySchedule,
    compare_solutions,
    complementarity_residual,
    minimality_integral,
    solve_lcp,
    solve_penalized,
    solve_penalized_sequence,
)

__version__ = "0.1.0"

__all__ = [
    "NO_OBSTACLE",
    "Boundary",
    "CoefficientField",
    "DiscreteMeasure",
    "DiscreteSolution",
    "GeneratorSpec",
    "Grid",
    "ObstacleProblemSpec",
    "PenaltySchedule",
    "compare_solutions",
    "complementarity_residual",
    "minimality_integral",
    "potential_norm",
    "rho",
    "solve_lcp",
    "solve_penalized",
    "solve_penalized_sequence",
    "structural_checks",
    "time_marginal",
    "validate_spec",
    "weighted_l2_norm",
]
