from __future__ import annotations

import functools
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from obstakl.config import RunConfig  # noqa: E402
from obstakl.vi_solvers import solve_lcp  # noqa: E402


@functools.lru_cache(maxsize=None)
def builtin(name: str):
    return RunConfig.for_builtin(name).build()


@functools.lru_cache(maxsize=None)
def lcp(name: str, method: str = "policy_iteration"):
    spec, grid = builtin(name)
    return solve_lcp(spec, grid, method=method)


def custom(problem: dict, grid: dict):
    return RunConfig(problem=problem, grid=grid).build()


BASE_PROBLEM = {
    "a": "0.5",
    "b": "0",
    "lambda": "0.5",
    "Lambda": "0.5",
    "f": "0",
    "lipschitz_L": "1",
    "growth_M": "1",
    "g": "0",
    "phi": "0",
    "h": "-inf",
    "T": "1",
    "alpha": "1",
}
BASE_GRID = {"x_min": "-4", "x_max": "4", "nx": "80", "nt": "40", "boundary": "dirichlet_zero"}


def problem(**kw):
    p = dict(BASE_PROBLEM)
    p.update({k: str(v) for k, v in kw.items()})
    return p


def grid_block(**kw):
    g = dict(BASE_GRID)
    g.update({k: str(v) for k, v in kw.items()})
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# criterion number -> (passed, detail, seconds); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str, float]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail, secs = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  ({secs:.1f} s)  {detail}")
