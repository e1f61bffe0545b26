import pickle

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from obstakl.builtins import BENCHMARKS, BUILTINS
from obstakl.config import ConfigError, RunConfig, parse_config
from obstakl.expr import ExpressionError, compile_expr


def test_expression_grammar():
    e = compile_expr("max(1 - x**2, 0) + ind(t, 0, 0.5)*exp(-x) - abs(sin(x))", ("t", "x"))
    t, x = np.array([0.2, 0.7]), np.array([0.5, 2.0])
    ref = np.maximum(1 - x**2, 0) + ((t >= 0) & (t < 0.5)) * np.exp(-x) - np.abs(np.sin(x))
    assert np.allclose(e(t, x), ref)


def test_expression_broadcasts_constants():
    e = compile_expr("2", ("t", "x"))
    assert e(0.0, np.zeros(4)).shape == (4,)
    assert np.all(compile_expr("-inf", ("t", "x"))(0.0, np.zeros(2)) == -np.inf)


@pytest.mark.parametrize(
    "src,msg",
    [
        ("__import__('os')", "unknown function"),
        ("x.real", "unsupported"),
        ("foo(x)", "unknown function"),
        ("y", "unknown name"),
        ("max(x)", "takes 2"),
        ("x if x else 1", "unsupported"),
        ("1 +", "cannot parse"),
    ],
)
def test_expression_rejects(src, msg):
    with pytest.raises(ExpressionError, match=msg):
        compile_expr(src, ("t", "x"))


def test_expression_pickles():
    e = compile_expr("exp(-x**2)", ("x",))
    e2 = pickle.loads(pickle.dumps(e))
    assert e2(1.0) == pytest.approx(np.exp(-1.0))


@pytest.mark.parametrize("name", sorted(BUILTINS))
def test_round_trip_builtin(name):
    base = BUILTINS[name]()
    cfg = RunConfig(problem=dict(base["problem"]), grid=dict(base["grid"]), backend={"seed": "7"}, output={"directory": "out"})
    again = parse_config(cfg.serialize())
    assert again == cfg
    s1, g1 = cfg.build()
    s2, g2 = again.build()
    assert g1 == g2
    x = g1.nodes
    assert np.array_equal(s1.terminal(x), s2.terminal(x))


@given(st.sampled_from(sorted(BUILTINS)), st.integers(0, 2**63 - 1), st.integers(1, 64))
def test_round_trip_with_backend(name, seed, threads):
    cfg = RunConfig.for_builtin(name, seed=seed, threads=threads, method="psor")
    assert parse_config(cfg.serialize()) == cfg


def test_benchmarks_are_builtins():
    assert set(BENCHMARKS) <= set(BUILTINS) and len(BENCHMARKS) == 5


def test_missing_field_is_named():
    text = "[problem]\nbuiltin = american_put\n"
    cfg = parse_config(text)
    cfg.problem["builtin"] = ""
    with pytest.raises(ConfigError) as exc:
        cfg.build()
    assert exc.value.field.startswith("problem.")


def test_bad_value_reports_line():
    text = "[problem]\nbuiltin = american_put\n\nT = two\n"
    with pytest.raises(ConfigError) as exc:
        parse_config(text).build()
    assert exc.value.field == "problem.T" and exc.value.line == 4


def test_unknown_section_and_builtin():
    with pytest.raises(ConfigError):
        parse_config("[solver]\nx = 1\n")
    with pytest.raises(ConfigError, match="unknown builtin"):
        parse_config("[problem]\nbuiltin = nope\n").build()


def test_override_builtin_value():
    cfg = parse_config("[problem]\nbuiltin = american_put\nT = 0.5\n[grid]\nnx = 50\n")
    spec, grid = cfg.build()
    assert spec.T == 0.5 and grid.nx == 50 and grid.nt == 400
