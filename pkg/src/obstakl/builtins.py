"""Named problem instances, written in the config expression language."""

from __future__ import annotations

import math


def _fmt(v: float) -> str:
    return repr(float(v))


def example_s5(a_ex: float = 1.0, T: float = 2.0) -> dict:
    """Spatially constant obstacle with a downward jump at T-1.

    Exact solution: u = exp(a(T-t)) on [T-1, T], u = c + exp(a(T-t)) on
    [0, T-1) with c = exp(aT) - exp(a(T-1)), and mu = c * delta_{T-1}.  The
    generator is the source a*exp(a(T-t)), i.e. a*u along the unconstrained
    branch, which is the reading under which that formula solves the problem.
    """
    A, Tf = _fmt(a_ex), _fmt(T)
    return {
        "problem": {
            "a": "1e-08",
            "b": "0",
            "lambda": "1e-08",
            "Lambda": "1e-08",
            "f": f"{A}*exp({A}*({Tf} - t))",
            "lipschitz_L": "1.0",
            "growth_M": "1.0",
            "g": f"abs({A})*exp({A}*({Tf} - t))",
            "phi": "1",
            "h": f"ind(t, -inf, {_fmt(T - 1)})*exp({A}*{Tf}) + ind(t, {_fmt(T - 1)}, inf)*0.5",
            "T": Tf,
            "alpha": "1.0",
        },
        "grid": {"x_min": "-1.0", "x_max": "1.0", "nx": "8", "nt": "2000", "boundary": "neumann_zero"},
    }


def example_s5_linear(a_ex: float = 1.0, T: float = 2.0) -> dict:
    """Same obstacle with the generator a*y; the solution is
    exp(aT) * exp(a(T-1-t)) before T-1 and the atom mass is still c."""
    cfg = example_s5(a_ex, T)
    A = _fmt(a_ex)
    cfg["problem"].update(
        {"f": f"{A}*y", "lipschitz_L": _fmt(abs(a_ex)), "growth_M": _fmt(abs(a_ex)), "g": "0"}
    )
    cfg["grid"]["nt"] = "8000"
    return cfg


def american_put(K: float = 1.0, sigma: float = 0.3, r: float = 0.1, T: float = 1.0) -> dict:
    a = sigma * sigma
    Kf = _fmt(K)
    return {
        "problem": {
            "a": _fmt(a),
            "b": "0",
            "lambda": _fmt(a),
            "Lambda": _fmt(a),
            "f": f"-{_fmt(r)}*y",
            "lipschitz_L": _fmt(r),
            "growth_M": _fmt(r),
            "g": "0",
            "phi": f"max({Kf} - x, 0)",
            "h": f"max({Kf} - x, 0)",
            "T": _fmt(T),
            "alpha": "1.0",
        },
        "grid": {
            "x_min": _fmt(K - 2.0),
            "x_max": _fmt(K + 2.0),
            "nx": "400",
            "nt": "400",
            "boundary": "dirichlet_obstacle",
        },
    }


def unconstrained_heat() -> dict:
    return {
        "problem": {
            "a": "1.0",
            "b": "0",
            "lambda": "1.0",
            "Lambda": "1.0",
            "f": "0",
            "lipschitz_L": "1.0",
            "growth_M": "1.0",
            "g": "0",
            "phi": "exp(-x**2)",
            "h": "-inf",
            "T": "1.0",
            "alpha": "1.0",
        },
        "grid": {"x_min": "-8.0", "x_max": "8.0", "nx": "400", "nt": "200", "boundary": "dirichlet_zero"},
    }


def continuous_h_semilinear() -> dict:
    return {
        "problem": {
            "a": "0.5 + 0.25*sin(x)",
            "da_dx": "0.25*cos(x)",
            "b": "0.1*cos(x)",
            "lambda": "0.25",
            "Lambda": "0.75",
            "f": "-1.0*y + 0.3*tanh(z)",
            "lipschitz_L": "1.0",
            "growth_M": "1.0",
            "g": "0",
            "phi": "1.5*max(1 - x**2, 0)",
            "h": "(1 + 0.5*t)*max(1 - x**2, 0)",
            "T": "1.0",
            "alpha": "1.0",
        },
        "grid": {"x_min": "-4.0", "x_max": "4.0", "nx": "200", "nt": "200", "boundary": "dirichlet_obstacle"},
    }


def discontinuous_h() -> dict:
    return {
        "problem": {
            "a": "0.5",
            "b": "0",
            "lambda": "0.5",
            "Lambda": "0.5",
            "f": "-0.5*y",
            "lipschitz_L": "0.5",
            "growth_M": "0.5",
            "g": "0",
            "phi": "0.3*ind(x, -1, 1)",
            "h": "ind(t, -inf, 0.5)*1.2*exp(-x**2) + ind(t, 0.5, inf)*0.3*ind(x, -1, 1)",
            "T": "1.0",
            "alpha": "1.0",
        },
        "grid": {"x_min": "-4.0", "x_max": "4.0", "nx": "200", "nt": "200", "boundary": "dirichlet_obstacle"},
    }


BUILTINS = {
    "example_s5": example_s5,
    "example_s5_linear": example_s5_linear,
    "american_put": american_put,
    "unconstrained_heat": unconstrained_heat,
    "continuous_h_semilinear": continuous_h_semilinear,
    "discontinuous_h": discontinuous_h,
}

# the five instances every benchmark suite runs over
BENCHMARKS = ("example_s5", "american_put", "unconstrained_heat", "continuous_h_semilinear", "discontinuous_h")


def s5_exact(t, a_ex: float = 1.0, T: float = 2.0):
    """Closed form of :func:`example_s5`."""
    import numpy as np

    t = np.asarray(t, dtype=float)
    c = math.exp(a_ex * T) - math.exp(a_ex * (T - 1))
    return np.where(t >= T - 1, np.exp(a_ex * (T - t)), c + np.exp(a_ex * (T - t)))


def s5_linear_exact(t, a_ex: float = 1.0, T: float = 2.0):
    import numpy as np

    t = np.asarray(t, dtype=float)
    return np.where(t >= T - 1, np.exp(a_ex * (T - t)), math.exp(a_ex * T) * np.exp(a_ex * (T - 1 - t)))
