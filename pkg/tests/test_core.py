import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import builtin, custom, grid_block, problem
from obstakl.core import (
    NO_OBSTACLE,
    Boundary,
    CoefficientField,
    DiscreteSolution,
    Grid,
    central_gradient,
    potential_norm,
    rho,
    validate_spec,
    weighted_l2_norm,
    weighted_lp_norm_qt,
)
from oracles import weighted_one_norm_sq


def test_grid_nodes_are_interior():
    g = Grid(-1.0, 1.0, 9, 4)
    assert g.dx == pytest.approx(0.2)
    assert g.nodes[0] == pytest.approx(-0.8) and g.nodes[-1] == pytest.approx(0.8)
    assert g.times(2.0)[-1] == 2.0


@given(st.integers(1, 400), st.floats(-10, 0), st.floats(0.1, 10))
def test_weights_sum_to_length(nx, lo, width):
    g = Grid(lo, lo + width, nx, 3)
    assert g.weights().sum() == pytest.approx(width, rel=1e-12)
    assert g.time_weights(2.5).sum() == pytest.approx(2.5, rel=1e-12)


def test_refined_grid_halves_steps():
    g = Grid(-2, 2, 10, 7)
    r = g.refined()
    assert r.dx == pytest.approx(g.dx / 2)
    assert r.dt(1.0) == pytest.approx(g.dt(1.0) / 2)
    # every coarse node is a fine node
    assert np.allclose(r.nodes[1::2], g.nodes)


def test_grid_rejects_bad_input():
    with pytest.raises(ValueError):
        Grid(1, 1, 4, 4)
    with pytest.raises(ValueError):
        Grid(0, 1, 0, 4)
    with pytest.raises(ValueError):
        Grid(0, 1, 4, 4, "periodic")


def test_weighted_norm_of_one_matches_closed_form():
    g = Grid(-4, 4, 2000, 1)
    val = weighted_l2_norm(np.ones(g.nx), 1.0, g) ** 2
    assert val == pytest.approx(weighted_one_norm_sq(-4, 4), rel=1e-5)


def test_weighted_norms_trivial():
    g = Grid(-1, 1, 5, 2)
    assert weighted_l2_norm(np.zeros(5), 1.0, g) == 0.0
    V = np.ones((3, 5))
    # time-constant field: L_p over Q_T is T^(1/p) times the spatial norm
    sp = weighted_l2_norm(np.ones(5), 1.0, g)
    assert weighted_lp_norm_qt(V, 1.0, g, 2.0, 2.0) == pytest.approx(math.sqrt(2.0) * sp)


def test_rho_weight():
    assert rho(0.0, 1.0) == 1.0
    assert rho(1.0, 2.0) == pytest.approx(0.25)


def test_central_gradient_exact_on_quadratics():
    g = Grid(0, 1, 20, 1)
    x = g.nodes
    d = central_gradient(x**2, g.dx)
    assert np.allclose(d[1:-1], 2 * x[1:-1])


def test_potential_norm_of_constant():
    g = Grid(-1, 1, 9, 4)
    u = np.ones((5, 9))
    sol = DiscreteSolution.from_values(u, g, 1.0)
    assert potential_norm(sol, 1.0) == pytest.approx(weighted_l2_norm(np.ones(9), 1.0, g))


def test_coefficients_fd_divergence():
    c = CoefficientField(lambda t, x: 1 + 0.5 * np.sin(x), lambda t, x: 0 * x, 0.5, 1.5)
    x = np.linspace(-3, 3, 11)
    assert np.allclose(c.divergence(0.0, x), 0.5 * np.cos(x), atol=1e-7)
    assert np.allclose(c.sigma(0.0, x) ** 2, c.diffusion(0.0, x))


def test_coefficients_require_ordered_bounds():
    with pytest.raises(ValueError):
        CoefficientField(lambda t, x: 1.0, lambda t, x: 0.0, 2.0, 1.0)


def test_obstacle_minus_infinity_maps_to_sentinel():
    spec, grid = builtin("unconstrained_heat")
    h = spec.obstacle(0.5, grid.nodes)
    assert np.all(h == NO_OBSTACLE) and np.all(np.isfinite(h))


def test_obstacle_left_limit_sees_jump():
    spec, _ = builtin("example_s5")
    assert spec.obstacle(1.0, 0.0) == pytest.approx(0.5)
    assert spec.obstacle_left_limit(1.0, 0.0) == pytest.approx(math.exp(2.0))


@pytest.mark.parametrize(
    "name", ["example_s5", "american_put", "unconstrained_heat", "continuous_h_semilinear", "discontinuous_h"]
)
def test_builtins_validate(name):
    spec, grid = builtin(name)
    assert validate_spec(spec, grid).ok


def test_validation_reports_witnesses():
    spec, grid = custom(
        problem(a="0.5 + 0.6*sin(x)", **{"lambda": "0.5", "Lambda": "0.6"}, f="3*y", phi="0", h="1 + 0*x", alpha="0.25"),
        grid_block(),
    )
    rep = validate_spec(spec, grid)
    names = {c.name for c in rep.failures}
    assert {"ellipticity", "generator_lipschitz", "terminal_compatibility", "weight_integrable"} <= names
    ell = rep["ellipticity"]
    x = ell.witness["x"]
    a = 0.5 + 0.6 * math.sin(x)
    assert a < 0.5 or a > 0.6
    assert rep.to_dict()["ok"] is False


def test_boundary_enum_values():
    assert Boundary("neumann_zero") is Boundary.NEUMANN_ZERO
