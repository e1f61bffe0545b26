"""Command-line front end.

    obstakl solve --config run.ini [--out DIR]
    obstakl compare --config run.ini [--threads N] [--seed S]
    obstakl convergence --config run.ini

Exit codes: 0 success, 1 a cross-validation band was exceeded, 2 config or
validation error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .core import Grid, ObstacleProblemSpec, validate_spec, weighted_lp_norm_qt
from .measure import structural_checks, time_marginal
from .operator import SolverError
from .stochastic import default_threads, reflected_bsde, simulate_paths
from .vi_solvers import (
    PenaltySchedule,
    minimality_integral,
    solve_lcp,
    solve_penalized,
    solve_penalized_sequence,
)

logger = logging.getLogger("obstakl")

EXIT_OK, EXIT_BAND, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2, 3


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=float) + "\n", encoding="utf-8")


class Backend:
    """Typed view of the ``[backend]`` block."""

    def __init__(self, block: dict[str, str], seed: int | None, threads: int | None):
        self.block = block
        self.seed = seed if seed is not None else int(block.get("seed", 0))
        self.threads = threads or int(block.get("threads", 0)) or default_threads()

    def get(self, key: str, default, kind=float):
        raw = self.block.get(key)
        if raw is None:
            return default
        try:
            return kind(raw)
        except ValueError:
            raise ConfigError(f"invalid value {raw!r} for backend.{key}", f"backend.{key}") from None

    @property
    def kind(self) -> str:
        return self.block.get("backend", "lcp").strip()

    def lcp_kwargs(self) -> dict:
        return {
            "method": self.block.get("method", "psor"),
            "omega": self.get("omega", 1.2),
            "tol": self.get("tol", 1e-10),
            "max_iter": self.get("max_iter", 20000, int),
        }

    def schedule(self) -> PenaltySchedule:
        if "schedule" in self.block:
            levels = [float(v) for v in self.block["schedule"].split(",") if v.strip()]
            return PenaltySchedule(tuple(levels))
        return PenaltySchedule.geometric(self.get("schedule_kmax", 12, int))

    def list(self, key: str, default: str) -> list[str]:
        return [v.strip() for v in self.block.get(key, default).split(",") if v.strip()]


def _load(args) -> tuple[RunConfig, ObstacleProblemSpec, Grid, Backend, Path]:
    cfg = load_config(args.config)
    spec, grid = cfg.build()
    backend = Backend(cfg.backend, args.seed, args.threads)
    out = Path(args.out or cfg.output.get("directory", "."))
    out.mkdir(parents=True, exist_ok=True)
    return cfg, spec, grid, backend, out


def _validate(spec, grid) -> dict:
    report = validate_spec(spec, grid)
    if not report.ok:
        names = ", ".join(c.name for c in report.failures)
        raise ConfigError(f"problem data fail validation: {names}", "problem")
    return report.to_dict()


def _grid_solve(spec, grid, backend: Backend):
    if backend.kind == "penalized":
        return solve_penalized(spec, grid, backend.get("n", 2.0**12))
    if backend.kind in ("lcp", "all"):
        return solve_lcp(spec, grid, **backend.lcp_kwargs())
    raise ConfigError(f"solve needs a grid backend (lcp or penalized), got {backend.kind!r}", "backend.backend")


def cmd_solve(args) -> int:
    cfg, spec, grid, backend, out = _load(args)
    validation = _validate(spec, grid)
    sol, mu, report = _grid_solve(spec, grid, backend)
    times = grid.times(spec.T)
    x = grid.nodes
    _write_csv(
        out / "solution.csv",
        ["t", "x", "u", "grad_u"],
        ((times[k], x[j], sol.u[k, j], sol.grad_u[k, j]) for k in range(grid.nt + 1) for j in range(grid.nx)),
    )
    rows = [(t, x[j], m) for t, j, m in zip(mu.times, mu.j, mu.mass)]
    rows += [(spec.T, x[j], m) for j, m in enumerate(mu.terminal_mass) if m > 0]
    _write_csv(out / "measure.csv", ["t", "x", "mass"], rows)
    marg = time_marginal(mu, spec.weight_alpha)
    payload = {
        "problem": cfg.problem.get("builtin", "custom"),
        "solve": report.to_dict(),
        "complementarity_residual": report.complementarity_residual,
        "minimality_integral": minimality_integral(sol, spec, mu),
        "total_mass": mu.total(spec.weight_alpha),
        "atom_level": marg.atom_level,
        "largest_level_fraction": marg.largest_fraction(),
        "structural": structural_checks(mu, sol, spec).to_dict(),
        "validation": validation,
    }
    _write_json(out / "report.json", payload)
    return EXIT_OK


def _probe_values(spec, grid, backend: Backend, name: str, probes: list[float], s: float):
    """Values at (s, x) for each probe; returns (values, stderr)."""
    if name == "lcp":
        sol, _, _ = solve_lcp(spec, grid, **backend.lcp_kwargs())
        return [float(sol.at(s, x)) for x in probes], [0.0] * len(probes)
    if name == "penalized":
        sol, _, _ = solve_penalized(spec, grid, backend.get("n", 2.0**12))
        return [float(sol.at(s, x)) for x in probes], [0.0] * len(probes)
    if name == "mc":
        N, m, degree = backend.get("N", 100_000, int), backend.get("m", 200, int), backend.get("degree", 4, int)
        vals, errs = [], []
        for i, x in enumerate(probes):
            ens = simulate_paths(spec.coeffs, s, x, N, m, seed=backend.seed + i, T=spec.T, threads=backend.threads)
            r = reflected_bsde(spec, ens, degree)
            vals.append(r.y0)
            errs.append(r.y0_stderr)
        return vals, errs
    raise ConfigError(f"unknown backend {name!r}", "backend.compare")


def cmd_compare(args) -> int:
    cfg, spec, grid, backend, out = _load(args)
    _validate(spec, grid)
    names = backend.list("compare", "lcp,mc")
    if len(names) < 2:
        raise ConfigError("compare needs at least two backends", "backend.compare")
    s = backend.get("probe_s", 0.0)
    default_probes = ",".join(_fmt(v) for v in np.linspace(grid.x_min, grid.x_max, 7)[1:-1])
    probes = [float(v) for v in backend.list("probes", default_probes)]
    bias = backend.get("bias_band", 1e-2)
    results = {n: _probe_values(spec, grid, backend, n, probes, s) for n in names}
    rows, worst = [], 0.0
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            for p, x in enumerate(probes):
                va, ea = results[a][0][p], results[a][1][p]
                vb, eb = results[b][0][p], results[b][1][p]
                se = math.hypot(ea, eb)
                band = 3.0 * se + bias
                diff = va - vb
                if abs(diff) > band:
                    worst = max(worst, abs(diff) / band if band > 0 else math.inf)
                rows.append((s, x, a, va, ea, b, vb, eb, diff, band, int(abs(diff) <= band)))
    _write_csv(
        out / "compare.csv",
        ["s", "x", "backend_a", "value_a", "stderr_a", "backend_b", "value_b", "stderr_b", "difference", "band", "within"],
        rows,
    )
    if worst > 0.0:
        print(f"compare: a difference exceeds its band (ratio {worst:.3g})", file=sys.stderr)
        return EXIT_BAND
    return EXIT_OK


def _restrict(fine: np.ndarray, levels: int) -> np.ndarray:
    """Sample a refined-grid field at the coarse (t, x) nodes."""
    step = 2**levels
    return fine[::step, step - 1 :: step]


def cmd_convergence(args) -> int:
    cfg, spec, grid, backend, out = _load(args)
    _validate(spec, grid)
    schedule = backend.schedule()
    if len(schedule.levels) < 4:
        raise ConfigError("convergence needs a schedule with at least 4 levels", "backend.schedule")
    _, _, table = solve_penalized_sequence(spec, grid, schedule, backend.lcp_kwargs())
    _write_csv(
        out / "penalty_convergence.csv",
        ["n", "err_u_2", "err_grad_1", "err_grad_2", "minimality"],
        ((r.n, r.err_u_2, r.err_grad[1.0], r.err_grad[2.0], r.minimality) for r in table.rows),
    )
    n_ref = backend.get("refinements", 2, int)
    grids = [grid]
    for _ in range(n_ref):
        grids.append(grids[-1].refined())
    sols = [solve_lcp(spec, g, **backend.lcp_kwargs()) for g in grids]
    finest = sols[-1][0].u
    rows = []
    for lvl, (g, (sol, mu, _)) in enumerate(zip(grids, sols)):
        if lvl < n_ref:
            diff = sol.u - _restrict(finest, n_ref - lvl)
            err = weighted_lp_norm_qt(diff, spec.weight_alpha, g, spec.T, 2.0)
        else:
            err = 0.0
        rows.append((g.nx, g.nt, g.dx, g.dt(spec.T), err, mu.total(spec.weight_alpha), minimality_integral(sol, spec, mu)))
    _write_csv(
        out / "grid_refinement.csv",
        ["nx", "nt", "dx", "dt", "err_u_2_vs_finest", "total_mass", "minimality"],
        rows,
    )
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "compare": cmd_compare, "convergence": cmd_convergence}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="obstakl", description="Obstacle problem solvers for divergence-form parabolic equations.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="INI config file")
        p.add_argument("--threads", type=int, default=None, help="worker threads (default: $OBSTAKL_THREADS or 1)")
        p.add_argument("--seed", type=int, default=None, help="RNG seed, overrides backend.seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_INVALID
    if args.threads is None and "OBSTAKL_THREADS" in os.environ:
        args.threads = default_threads()
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SolverError as exc:
        level = getattr(exc, "time_level", None)
        print(f"solver failure: {exc}" + (f" (time level {level})" if level is not None else ""), file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        # numerical preconditions (dt cap, ellipticity) rejected by a solver
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
