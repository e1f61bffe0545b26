"""Run configuration files.

A config is an INI-style file with ``[problem]``, ``[grid]``, ``[backend]``
and ``[output]`` sections.  ``problem.builtin`` names an instance from
:mod:`obstakl.builtins`; any explicit key overrides the builtin's value.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field
from pathlib import Path

from .builtins import BUILTINS
from .core import Boundary, CoefficientField, GeneratorSpec, Grid, ObstacleProblemSpec
from .expr import ExpressionError, compile_expr

SECTIONS = ("problem", "grid", "backend", "output")
PROBLEM_KEYS = (
    "a", "b", "da_dx", "lambda", "Lambda", "f", "lipschitz_L", "growth_M",
    "g", "phi", "h", "T", "alpha",
)
REQUIRED_PROBLEM = tuple(k for k in PROBLEM_KEYS if k != "da_dx")
REQUIRED_GRID = ("x_min", "x_max", "nx", "nt")


class ConfigError(ValueError):
    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        where = f" (field {field}" + (f", line {line}" if line else "") + ")" if field else ""
        super().__init__(message + where)
        self.field = field
        self.line = line


@dataclass
class RunConfig:
    problem: dict[str, str] = field(default_factory=dict)
    grid: dict[str, str] = field(default_factory=dict)
    backend: dict[str, str] = field(default_factory=dict)
    output: dict[str, str] = field(default_factory=dict)
    lines: dict[str, int] = field(default_factory=dict, compare=False, repr=False)

    @classmethod
    def for_builtin(cls, name: str, **backend) -> "RunConfig":
        return cls(problem={"builtin": name}, backend={k: str(v) for k, v in backend.items()})

    def serialize(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        for sec in SECTIONS:
            parser[sec] = dict(getattr(self, sec))
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def resolved(self) -> tuple[dict[str, str], dict[str, str]]:
        """Problem and grid blocks with builtin defaults filled in."""
        problem, grid = {}, {}
        name = self.problem.get("builtin")
        if name:
            if name not in BUILTINS:
                raise ConfigError(f"unknown builtin {name!r}", "problem.builtin", self.lines.get("problem.builtin"))
            base = BUILTINS[name]()
            problem.update(base["problem"])
            grid.update(base["grid"])
        problem.update({k: v for k, v in self.problem.items() if k != "builtin"})
        grid.update(self.grid)
        return problem, grid

    def _num(self, block: dict, sec: str, key: str, kind=float):
        try:
            return kind(block[key])
        except KeyError:
            raise ConfigError(f"missing required field {sec}.{key}", f"{sec}.{key}") from None
        except ValueError:
            raise ConfigError(
                f"invalid value {block[key]!r} for {sec}.{key}", f"{sec}.{key}", self.lines.get(f"{sec}.{key}")
            ) from None

    def build(self) -> tuple[ObstacleProblemSpec, Grid]:
        problem, grid = self.resolved()
        for key in REQUIRED_PROBLEM:
            if key not in problem:
                raise ConfigError(f"missing required field problem.{key}", f"problem.{key}")
        for key in REQUIRED_GRID:
            if key not in grid:
                raise ConfigError(f"missing required field grid.{key}", f"grid.{key}")

        def ex(key, variables):
            try:
                return compile_expr(problem[key], variables)
            except ExpressionError as exc:
                raise ConfigError(str(exc), f"problem.{key}", self.lines.get(f"problem.{key}")) from None

        try:
            coeffs = CoefficientField(
                a=ex("a", ("t", "x")),
                b=ex("b", ("t", "x")),
                lam=self._num(problem, "problem", "lambda"),
                Lam=self._num(problem, "problem", "Lambda"),
                da_dx=ex("da_dx", ("t", "x")) if "da_dx" in problem else None,
            )
            gen = GeneratorSpec(
                f=ex("f", ("t", "x", "y", "z")),
                lipschitz_L=self._num(problem, "problem", "lipschitz_L"),
                growth_M=self._num(problem, "problem", "growth_M"),
                g=ex("g", ("t", "x")),
            )
            spec = ObstacleProblemSpec(
                T=self._num(problem, "problem", "T"),
                coeffs=coeffs,
                gen=gen,
                phi=ex("phi", ("x",)),
                h=ex("h", ("t", "x")),
                weight_alpha=self._num(problem, "problem", "alpha"),
                name=self.problem.get("builtin", ""),
            )
            g = Grid(
                x_min=self._num(grid, "grid", "x_min"),
                x_max=self._num(grid, "grid", "x_max"),
                nx=self._num(grid, "grid", "nx", int),
                nt=self._num(grid, "grid", "nt", int),
                boundary=Boundary(grid.get("boundary", Boundary.DIRICHLET_OBSTACLE.value)),
            )
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc), "problem") from None
        if spec.T <= 0:
            raise ConfigError("T must be positive", "problem.T", self.lines.get("problem.T"))
        return spec, g


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}", "config", getattr(exc, "lineno", None)) from None
    unknown = [s for s in parser.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"unknown section [{unknown[0]}]", unknown[0])
    cfg = RunConfig(**{sec: dict(parser[sec]) if parser.has_section(sec) else {} for sec in SECTIONS})
    cfg.lines = _key_lines(text)
    return cfg


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def _key_lines(text: str) -> dict[str, int]:
    lines, section = {}, None
    for no, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
        elif section and "=" in s and not s.startswith(("#", ";")):
            lines[f"{section}.{s.split('=', 1)[0].strip()}"] = no
    return lines
