"""Command-line harness: solve, converge, mc, subcheck, bench list.

Exit codes: 0 success, 1 numerical failure, 2 invalid configuration.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .fracops import Grid1D, StableOperatorSpec, export_matrix_market
from .problems import REGISTRY, BenchmarkProblem, get_problem
from .solvers import (
    ForcingField,
    ImplicitEulerSemigroup,
    Orbit,
    ScalarSemigroup,
    SolutionField,
    SolverError,
    TimeGrid,
    implicit_euler_solve,
    l1_caputo_solve,
    subordination_inhomogeneous,
    subordination_solve,
)
from .specfun import DomainError, mittag_leffler
from .stochastic import (
    MCConfig,
    inverse_subordinator_draws,
    mc_relaxation,
    mc_solution,
    mc_solution_with_bias,
    write_histogram_csv,
)

SOLVERS = ("implicit_euler", "l1", "subordination", "mc")
INLINE_PROFILES = ("bump", "sine", "zero")
EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG = 0, 1, 2
Z_LIMIT = 3.0


class ConfigError(ValueError):
    """Invalid run configuration; message names the offending field."""


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class MCBlock:
    particles: int = 10000
    dt: float = 1e-3
    seed: int = 0
    workers: int = 1

    def to_config(self) -> MCConfig:
        return MCConfig(self.particles, self.dt, self.seed, self.workers)


@dataclass(frozen=True)
class RunConfig:
    """One run; every default is written back into the sidecar."""

    problem: Any = "ex4"
    nx: int = 128
    dt: float = 1e-3
    t_end: float = 1.0
    beta: float | None = None
    solver: str = "implicit_euler"
    mc: MCBlock | None = None
    tol: float = 1e-8
    output: str = "solution.csv"
    params: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> RunConfig:
        if not isinstance(raw, dict):
            raise ConfigError("config: expected a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"config: unknown field(s) {', '.join(unknown)}")
        data = dict(raw)
        mc = data.get("mc")
        if mc is not None:
            if not isinstance(mc, dict):
                raise ConfigError("mc: expected an object")
            mc_known = {f.name for f in dataclasses.fields(MCBlock)}
            bad = sorted(set(mc) - mc_known)
            if bad:
                raise ConfigError(f"mc: unknown field(s) {', '.join(bad)}")
            data["mc"] = MCBlock(**mc)
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> None:
        def positive_int(name, value):
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name}: expected a positive integer, got {value!r}")

        def positive_real(name, value):
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not value > 0 or not math.isfinite(value):
                raise ConfigError(f"{name}: expected a positive number, got {value!r}")

        positive_int("nx", self.nx)
        positive_real("dt", self.dt)
        positive_real("t_end", self.t_end)
        positive_real("tol", self.tol)
        if self.beta is not None:
            positive_real("beta", self.beta)
            if self.beta > 1.0:
                raise ConfigError(f"beta: must lie in (0, 1], got {self.beta}")
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver: expected one of {', '.join(SOLVERS)}, got {self.solver!r}")
        if self.solver == "mc" and self.mc is None:
            raise ConfigError("mc: the mc solver needs an mc block")
        if self.mc is not None:
            positive_int("mc.particles", self.mc.particles)
            positive_real("mc.dt", self.mc.dt)
            positive_int("mc.workers", self.mc.workers)
            if isinstance(self.mc.seed, bool) or not isinstance(self.mc.seed, int) or self.mc.seed < 0:
                raise ConfigError(f"mc.seed: expected a nonnegative integer, got {self.mc.seed!r}")
        if not isinstance(self.output, str) or not self.output:
            raise ConfigError("output: expected a file path")
        if not isinstance(self.params, dict):
            raise ConfigError("params: expected an object")
        if isinstance(self.problem, str):
            if self.problem not in REGISTRY:
                raise ConfigError(
                    f"problem: unknown name {self.problem!r}; registered: {', '.join(sorted(REGISTRY))}"
                )
        elif not isinstance(self.problem, dict):
            raise ConfigError("problem: expected a registered name or an inline object")


def _inline_problem(raw: dict) -> BenchmarkProblem:
    allowed = {"name", "domain", "alpha", "drift", "b", "c", "beta", "initial"}
    bad = sorted(set(raw) - allowed)
    if bad:
        raise ConfigError(f"problem: unknown inline field(s) {', '.join(bad)}")
    try:
        left, right = (float(v) for v in raw.get("domain", (0.0, 1.0)))
        spec = StableOperatorSpec(
            float(raw.get("alpha", 1.8)), float(raw.get("drift", 0.0)), float(raw.get("b", 1.0)), float(raw.get("c", 0.0))
        )
        Grid1D(left, right, 1)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"problem: {exc}") from exc
    profile = raw.get("initial", "bump")
    if profile not in INLINE_PROFILES:
        raise ConfigError(f"problem.initial: expected one of {', '.join(INLINE_PROFILES)}, got {profile!r}")
    width = right - left

    def initial(x):
        y = (np.asarray(x, dtype=float) - left) / width
        if profile == "bump":
            return y**2 * (1.0 - y) ** 2
        if profile == "sine":
            return np.sin(math.pi * y)
        return np.zeros_like(y)

    return BenchmarkProblem(
        name=str(raw.get("name", "inline")),
        domain=(left, right),
        spec=spec,
        beta=float(raw.get("beta", 1.0)),
        initial=initial,
        description="inline problem",
    )


def resolve_problem(cfg: RunConfig) -> tuple[BenchmarkProblem, float]:
    """The problem and the effective time-fractional order."""
    try:
        if isinstance(cfg.problem, dict):
            problem = _inline_problem(cfg.problem)
        else:
            params = dict(cfg.params)
            if cfg.beta is not None and cfg.problem in ("heat_eigen", "ml_relaxation", "ex4_homogeneous"):
                params.setdefault("beta", cfg.beta)
            problem = get_problem(cfg.problem, params)
    except TypeError as exc:
        raise ConfigError(f"params: {exc}") from exc
    except (KeyError, DomainError) as exc:
        raise ConfigError(f"problem: {exc}") from exc
    beta = problem.beta if cfg.beta is None else float(cfg.beta)
    if problem.exact is not None and beta != problem.beta:
        raise ConfigError(f"beta: problem {problem.name!r} is defined for beta={problem.beta}")
    return problem, beta


# ---------------------------------------------------------------------------
# Output


def format_float(value: float) -> str:
    return repr(float(value))


def csv_text(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(["" if v is None else (format_float(v) if isinstance(v, float) else v) for v in row])
    return buf.getvalue()


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def sidecar_path(output: str | Path) -> Path:
    out = Path(output)
    return out.with_name(out.name + ".json")


def write_sidecar(output: str | Path, payload: dict) -> Path:
    path = sidecar_path(output)
    write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def load_sidecar_config(path: str | Path) -> RunConfig:
    with Path(path).open(encoding="utf-8") as fh:
        return RunConfig.from_dict(json.load(fh)["config"])


# ---------------------------------------------------------------------------
# Solve


def _solve_field(problem: BenchmarkProblem, beta: float, cfg: RunConfig, nx: int, dt: float) -> tuple[SolutionField, dict]:
    gen = problem.generator(nx)
    grid = gen.grid
    f0 = SolutionField.from_function(grid, problem.initial)
    forcing = ForcingField(problem.forcing) if problem.forcing is not None else None
    tg = TimeGrid.from_dt(cfg.t_end, dt)
    extra: dict = {}
    if cfg.solver == "implicit_euler":
        if beta != 1.0:
            raise ConfigError("solver: implicit_euler needs beta = 1; use l1 or subordination")
        field_ = implicit_euler_solve(gen, f0, forcing, tg)[-1]
    elif cfg.solver == "l1":
        field_ = l1_caputo_solve(beta, gen, f0, tg, forcing)[-1]
    elif cfg.solver == "subordination":
        semigroup = ImplicitEulerSemigroup(gen, dt)
        if forcing is None:
            field_ = subordination_solve(beta, Orbit.from_semigroup(semigroup, f0.values), cfg.t_end, cfg.tol)
        else:
            field_ = subordination_inhomogeneous(beta, semigroup, f0.values, forcing, cfg.t_end, cfg.tol)
    else:
        field_, extra = _mc_field(problem, beta, cfg, grid)
    return field_, extra


def _mc_field(problem: BenchmarkProblem, beta: float, cfg: RunConfig, grid: Grid1D) -> tuple[SolutionField, dict]:
    if problem.forcing is not None:
        raise ConfigError("solver: mc does not handle forced problems")
    mc = cfg.mc.to_config()
    if problem.scalar_rate is not None:
        estimates = [mc_relaxation(problem.scalar_rate, cfg.t_end, beta, mc)]
    else:
        estimates = [
            mc_solution(float(x), problem.initial, cfg.t_end, beta, problem.spec, mc, problem.domain) for x in grid.nodes
        ]
    vals = np.array([e.mean for e in estimates])
    return SolutionField(grid, vals, cfg.t_end), {"stderr": [e.stderr for e in estimates], "particles": mc.particles}


def run_solve(cfg: RunConfig, export_matrix: str | None = None, histogram: str | None = None) -> tuple[SolutionField, dict]:
    """Run one solver, write ``x,u`` CSV plus a JSON sidecar; return the field and sidecar."""
    problem, beta = resolve_problem(cfg)
    started = time.perf_counter()
    field_, extra = _solve_field(problem, beta, cfg, cfg.nx, cfg.dt)
    wall = time.perf_counter() - started
    out = Path(cfg.output)
    write_text(out, csv_text(("x", "u"), [(float(x), float(u)) for x, u in zip(field_.x, field_.values)]))
    payload = {
        "config": cfg.to_dict(),
        "problem": problem.name,
        "beta": beta,
        "grid": {"left": field_.grid.left, "right": field_.grid.right, "n": field_.grid.n, "dx": field_.grid.dx},
        "time": field_.time,
        "values": [float(v) for v in field_.values],
        "wall_time": wall,
        "max_error": field_.max_error(problem.exact) if problem.exact is not None else None,
    }
    payload.update(extra)
    write_sidecar(out, payload)
    if export_matrix:
        export_matrix_market(problem.generator(cfg.nx), export_matrix)
    if histogram:
        if cfg.mc is None or beta == 1.0:
            raise ConfigError("histogram: needs an mc block and beta < 1")
        write_histogram_csv(inverse_subordinator_draws(beta, cfg.t_end, cfg.mc.to_config()), histogram)
    return field_, payload


# ---------------------------------------------------------------------------
# Convergence


@dataclass(frozen=True)
class ConvergenceRow:
    nx: int
    dt: float
    max_error: float
    l2_error: float
    observed_order: float | None


def run_converge(cfg: RunConfig, levels: int) -> list[ConvergenceRow]:
    """Halve ``dx`` (``n -> 2n + 1``) and ``dt`` per level and record errors against the exact solution."""
    if levels < 2:
        raise ConfigError("levels: need at least 2")
    if cfg.solver == "mc":
        raise ConfigError("solver: convergence studies need a deterministic solver")
    problem, beta = resolve_problem(cfg)
    if problem.exact is None:
        raise ConfigError(f"problem: {problem.name!r} has no exact solution")
    rows: list[ConvergenceRow] = []
    nx, dt = cfg.nx, cfg.dt
    for _ in range(levels):
        field_, _ = _solve_field(problem, beta, cfg, nx, dt)
        err = field_.values - problem.exact(field_.x, field_.time)
        max_err = float(np.max(np.abs(err)))
        l2 = float(math.sqrt(field_.grid.dx * np.sum(err**2)))
        order = math.log2(rows[-1].max_error / max_err) if rows and max_err > 0.0 else None
        rows.append(ConvergenceRow(field_.grid.n, dt, max_err, l2, order))
        nx, dt = 2 * nx + 1, 0.5 * dt
    out = Path(cfg.output)
    write_text(
        out,
        csv_text(
            ("nx", "dt", "max_error", "l2_error", "observed_order"),
            [(r.nx, r.dt, r.max_error, r.l2_error, r.observed_order) for r in rows],
        ),
    )
    write_sidecar(out, {"config": cfg.to_dict(), "problem": problem.name, "levels": levels})
    return rows


# ---------------------------------------------------------------------------
# Monte Carlo comparison


@dataclass(frozen=True)
class MCCompareRow:
    x: float
    deterministic: float
    mc_mean: float
    stderr: float
    z: float
    allowance: float
    flagged: bool


def _interp_zero(grid: Grid1D, values: np.ndarray, x: float) -> float:
    xp = np.concatenate([[grid.left], grid.nodes, [grid.right]])
    fp = np.concatenate([[0.0], values, [0.0]])
    return float(np.interp(x, xp, fp))


def run_mc_compare(cfg: RunConfig, points: Sequence[float]) -> list[MCCompareRow]:
    """MC at ``points`` against the deterministic path (exact, implicit Euler or L1).

    The allowance is the deterministic discretisation estimate
    ``|u(nx, dt) - u(coarse, 2 dt)|`` plus the paired estimate of the MC
    step-monitoring bias. A row is flagged when ``|mc - det| > 3 stderr + allowance``.
    """
    if cfg.mc is None:
        raise ConfigError("mc: the comparison needs an mc block")
    problem, beta = resolve_problem(cfg)
    if problem.forcing is not None:
        raise ConfigError("problem: mc comparison needs an unforced problem")
    if problem.spec is None:
        raise ConfigError("problem: mc comparison needs a stable operator")
    left, right = problem.domain
    for x in points:
        if not left < x < right:
            raise ConfigError(f"points: {x} lies outside the domain ({left}, {right})")
    if problem.exact is not None:
        det = [float(np.asarray(problem.exact(np.array([x]), cfg.t_end))[0]) for x in points]
        det_err = [0.0] * len(points)
    else:
        ref_cfg = dataclasses.replace(cfg, solver="implicit_euler" if beta == 1.0 else "l1")
        fine, _ = _solve_field(problem, beta, ref_cfg, cfg.nx, cfg.dt)
        coarse, _ = _solve_field(problem, beta, ref_cfg, max(1, (cfg.nx - 1) // 2), 2.0 * cfg.dt)
        det = [_interp_zero(fine.grid, fine.values, x) for x in points]
        det_err = [abs(d - _interp_zero(coarse.grid, coarse.values, x)) for d, x in zip(det, points)]
    mc = cfg.mc.to_config()
    rows = []
    for x, d, de in zip(points, det, det_err):
        est = mc_solution_with_bias(float(x), problem.initial, cfg.t_end, beta, problem.spec, mc, problem.domain)
        diff = est.estimate.mean - d
        se = est.estimate.stderr
        z = 0.0 if diff == 0.0 else (diff / se if se > 0.0 else math.copysign(math.inf, diff))
        allowance = de + abs(est.bias)
        flagged = abs(diff) > Z_LIMIT * se + allowance
        rows.append(MCCompareRow(float(x), d, est.estimate.mean, se, z, allowance, flagged))
    out = Path(cfg.output)
    write_text(
        out,
        csv_text(
            ("x", "deterministic", "mc_mean", "stderr", "z", "allowance", "flagged"),
            [(r.x, r.deterministic, r.mc_mean, r.stderr, r.z, r.allowance, int(r.flagged)) for r in rows],
        ),
    )
    write_sidecar(out, {"config": cfg.to_dict(), "problem": problem.name, "beta": beta})
    return rows


# ---------------------------------------------------------------------------
# Subordination identity


@dataclass(frozen=True)
class SubcheckRow:
    beta: float
    lam: float
    t: float
    quadrature: float
    mittag_leffler: float
    abs_diff: float


def run_subordination_check(
    betas: Sequence[float], lambdas: Sequence[float], times: Sequence[float], tol: float = 1e-10
) -> list[SubcheckRow]:
    """``int h(w, t) exp(-lam w) dw`` by subordination quadrature vs ``E_beta(-lam t^beta)``."""
    rows = []
    grid = Grid1D(0.0, 1.0, 1)
    for beta in betas:
        if not 0.0 < beta < 1.0:
            raise ConfigError(f"betas: {beta} not in (0, 1)")
        for lam in lambdas:
            if lam < 0.0:
                raise ConfigError(f"lambdas: {lam} is negative")
            orbit = Orbit.from_semigroup(ScalarSemigroup(lam, grid), np.ones(1))
            for t in times:
                if not t > 0.0:
                    raise ConfigError(f"times: {t} is not positive")
                quad = float(subordination_solve(beta, orbit, t, tol).values[0])
                ml = float(mittag_leffler(beta, -lam * t**beta))
                rows.append(SubcheckRow(beta, lam, t, quad, ml, abs(quad - ml)))
    return rows


# ---------------------------------------------------------------------------
# Entry point


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from exc


def _load_config(args) -> RunConfig:
    raw: dict = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"config: cannot read {args.config}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a JSON object")
    raw = dict(raw)
    if getattr(args, "out", None):
        raw["output"] = args.out
    if getattr(args, "particles", None) is not None or getattr(args, "seed", None) is not None:
        mc = dict(raw.get("mc") or {})
        if args.particles is not None:
            mc["particles"] = args.particles
        if args.seed is not None:
            mc["seed"] = args.seed
        raw["mc"] = mc
    try:
        return RunConfig.from_dict(raw)
    except TypeError as exc:
        raise ConfigError(f"config: {exc}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fracdirichlet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--out", help="output CSV path (overrides config.output)")

    p = sub.add_parser("solve", help="solve one configured problem")
    common(p)
    p.add_argument("--particles", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--export-matrix", help="write the generator as a Matrix Market file")
    p.add_argument("--histogram", help="write a histogram CSV of the time-change draws")

    p = sub.add_parser("converge", help="convergence study against the exact solution")
    common(p)
    p.add_argument("--levels", type=int, default=4)

    p = sub.add_parser("mc", help="Monte Carlo vs deterministic comparison")
    common(p)
    p.add_argument("--points", default="0.1,0.3,0.5,0.7,0.9")
    p.add_argument("--particles", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("subcheck", help="subordination identity table")
    p.add_argument("--betas", default="0.3,0.5,0.8")
    p.add_argument("--lambdas", default="0.1,1,10")
    p.add_argument("--times", default="0.5,1,2")
    p.add_argument("--out", help="write the table as CSV")

    p = sub.add_parser("bench", help="benchmark registry")
    p.add_argument("action", choices=["list"])
    return parser


def _emit(text: str, out: str | None) -> None:
    if out:
        write_text(Path(out), text)
    sys.stdout.write(text)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        if args.command == "bench":
            lines = []
            for name in REGISTRY:
                prob = get_problem(name)
                alpha = "-" if prob.alpha is None else repr(prob.alpha)
                lines.append(
                    f"{name} alpha={alpha} beta={prob.beta!r} domain=({prob.domain[0]!r},{prob.domain[1]!r}) "
                    f"has_exact={str(prob.has_exact).lower()}\n"
                )
            sys.stdout.write("".join(lines))
        elif args.command == "subcheck":
            rows = run_subordination_check(_float_list(args.betas), _float_list(args.lambdas), _float_list(args.times))
            _emit(
                csv_text(
                    ("beta", "lambda", "t", "quadrature", "mittag_leffler", "abs_diff"),
                    [(r.beta, r.lam, r.t, r.quadrature, r.mittag_leffler, r.abs_diff) for r in rows],
                ),
                args.out,
            )
        elif args.command == "solve":
            cfg = _load_config(args)
            _, payload = run_solve(cfg, args.export_matrix, args.histogram)
            err = payload["max_error"]
            sys.stdout.write(f"wrote {cfg.output} max_error={'n/a' if err is None else repr(err)}\n")
        elif args.command == "converge":
            cfg = _load_config(args)
            rows = run_converge(cfg, args.levels)
            sys.stdout.write(Path(cfg.output).read_text(encoding="utf-8"))
        elif args.command == "mc":
            cfg = _load_config(args)
            rows = run_mc_compare(cfg, _float_list(args.points))
            sys.stdout.write(Path(cfg.output).read_text(encoding="utf-8"))
            if any(r.flagged for r in rows):
                sys.stderr.write("flagged: Monte Carlo disagrees beyond 3 stderr plus allowance\n")
                return EXIT_NUMERIC
    except ConfigError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG
    except (SolverError, DomainError, ArithmeticError, np.linalg.LinAlgError) as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
