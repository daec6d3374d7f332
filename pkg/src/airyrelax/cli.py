"""Command-line entry point.

Problem files are INI-style (``key = value`` in sections); see
``problems/*.cfg``.  Every output is CSV.  Exit status: 0 success,
1 validation error, 2 solver nonconvergence.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from airyrelax.airy import BalanceError, BoundaryCurve, BoundaryLoad, boundary_data_from_traction
from airyrelax.constructions import (
    MOLLIFIER_PEAK,
    LaminateSpec,
    build_two_level_laminate,
    laminate_1d,
    two_level_energy_scan,
)
from airyrelax.density import Density, EnergyParams, f_lambda, qc_envelope
from airyrelax.envelope import LaminationGrid, rsym_sequence
from airyrelax.grid import Grid2D, write_field_csv
from airyrelax.solver import (
    SolveConfig,
    SolverError,
    lambda_sweep,
    minimize_finite_lambda,
    minimize_limit,
    write_eigen_maps,
)
from airyrelax.sym2 import Sym2

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NONCONVERGED = 2

LOAD_KINDS = ("point", "sampled", "uniform_stress")


class ConfigError(ValueError):
    pass


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for nonconvergence
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# ---------------------------------------------------------------- problem files


@dataclass
class ProblemConfig:
    path: Path
    origin: tuple[float, float] = (0.0, 0.0)
    width: float = 1.0
    height: float = 1.0
    cells: int = 64
    load_kind: str = "point"
    points: np.ndarray | None = None
    forces: np.ndarray | None = None
    traction_file: Path | None = None
    stress: tuple[float, float, float] | None = None
    project_affine: bool = False
    lambdas: list[float] = field(default_factory=lambda: [10.0, 100.0, 1e3, 1e4])
    solver: SolveConfig = field(default_factory=SolveConfig)
    c1: float | None = None
    c2: float = MOLLIFIER_PEAK
    out_dir: Path = Path("out")
    seed: int = 0

    @classmethod
    def load(cls, path: str | Path) -> "ProblemConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
        cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
        try:
            cp.read_string(text, source=str(path))
        except configparser.Error as exc:
            raise ConfigError(str(exc).replace("\n", " ")) from None
        return _Reader(path, text, cp).build(cls)

    def grid(self, cells: int | None = None) -> Grid2D:
        n = self.cells if cells is None else cells
        if n < 3:
            raise ConfigError(f"grid must have at least 3 cells, got {n}")
        try:
            return Grid2D.rectangle(n, self.width, self.height, self.origin)
        except ValueError as exc:
            raise ConfigError(f"{self.path}: domain: {exc} for grid {n}") from None

    def load_for(self, grid: Grid2D) -> BoundaryLoad:
        if self.load_kind == "point":
            return BoundaryLoad.point_loads(self.points, self.forces)
        if self.load_kind == "uniform_stress":
            s11, s12, s22 = self.stress
            return BoundaryLoad.sampled(grid.ring_normals() @ np.array([[s11, s12], [s12, s22]]))
        g = np.loadtxt(self.traction_file, delimiter=",", ndmin=2, comments="#")
        if g.shape != (grid.n_ring, 2):
            raise ConfigError(
                f"{self.traction_file}: need {grid.n_ring} rows of 'g1,g2' (one per boundary vertex), got {g.shape}"
            )
        return BoundaryLoad.sampled(g)

    def boundary_data(self, grid: Grid2D):
        return boundary_data_from_traction(self.load_for(grid), BoundaryCurve.rectangle(grid), project_affine=self.project_affine)


class _Reader:
    """configparser with line numbers attached to value errors."""

    def __init__(self, path: Path, text: str, cp: configparser.ConfigParser):
        self.path, self.cp = path, cp
        self.lines = text.splitlines()

    def where(self, section: str, key: str | None = None) -> str:
        sec = None
        for no, raw in enumerate(self.lines, 1):
            line = raw.strip()
            if line.startswith("[") and line.endswith("]"):
                sec = line[1:-1].strip()
                if key is None and sec == section:
                    return f"{self.path}:{no}"
            elif sec == section and key is not None and line.split("=", 1)[0].strip().lower() == key:
                return f"{self.path}:{no}"
        return str(self.path)

    def fail(self, section, key, msg):
        raise ConfigError(f"{self.where(section, key)}: [{section}] {key}: {msg}")

    def get(self, section, key, default=None, required=False):
        if self.cp.has_option(section, key):
            return self.cp.get(section, key).strip()
        if required:
            loc = self.where(section) if self.cp.has_section(section) else str(self.path)
            raise ConfigError(f"{loc}: [{section}] missing required key '{key}'")
        return default

    def number(self, section, key, default, kind=float, positive=False):
        raw = self.get(section, key)
        if raw is None:
            return default
        try:
            v = kind(raw)
        except ValueError:
            self.fail(section, key, f"expected {kind.__name__}, got '{raw}'")
        if kind is float and not math.isfinite(v):
            self.fail(section, key, "must be finite")
        if positive and not v > 0:
            self.fail(section, key, f"must be positive, got {raw}")
        return v

    def floats(self, section, key, n=None, default=None, required=False):
        raw = self.get(section, key, required=required)
        if raw is None:
            return default
        try:
            v = [float(x) for x in raw.replace(",", " ").split()]
        except ValueError:
            self.fail(section, key, f"expected numbers, got '{raw}'")
        if not all(math.isfinite(x) for x in v):
            self.fail(section, key, "values must be finite")
        if n is not None and len(v) != n:
            self.fail(section, key, f"expected {n} numbers, got {len(v)}")
        return v

    def pairs(self, section, key):
        raw = self.get(section, key, required=True)
        out = []
        for part in raw.split(";"):
            if not part.strip():
                continue
            try:
                xy = [float(x) for x in part.replace(",", " ").split()]
            except ValueError:
                self.fail(section, key, f"expected 'x y' pairs separated by ';', got '{part.strip()}'")
            if len(xy) != 2:
                self.fail(section, key, f"expected 'x y' pairs separated by ';', got '{part.strip()}'")
            out.append(xy)
        if not out:
            self.fail(section, key, "empty list")
        return np.array(out)

    def boolean(self, section, key, default):
        if not self.cp.has_option(section, key):
            return default
        try:
            return self.cp.getboolean(section, key)
        except ValueError:
            self.fail(section, key, f"expected true/false, got '{self.get(section, key)}'")

    def build(self, cls) -> ProblemConfig:
        known = {"domain", "load", "sweep", "solver", "recovery", "output"}
        for sec in self.cp.sections():
            if sec not in known:
                raise ConfigError(f"{self.where(sec)}: unknown section [{sec}]")
        cfg = cls(self.path)
        cfg.origin = tuple(self.floats("domain", "origin", 2, default=[0.0, 0.0]))
        cfg.width = self.number("domain", "width", 1.0, positive=True)
        cfg.height = self.number("domain", "height", cfg.width, positive=True)
        cfg.cells = self.number("domain", "grid", 64, kind=int)
        if cfg.cells < 3:
            self.fail("domain", "grid", f"need at least 3 cells, got {cfg.cells}")
        try:
            Grid2D.rectangle(cfg.cells, cfg.width, cfg.height, cfg.origin)
        except ValueError as exc:
            self.fail("domain", "height", str(exc))

        kind = self.get("load", "kind", required=True)
        if kind not in LOAD_KINDS:
            self.fail("load", "kind", f"must be one of {', '.join(LOAD_KINDS)}, got '{kind}'")
        cfg.load_kind = kind
        if kind == "point":
            cfg.points = self.pairs("load", "points")
            cfg.forces = self.pairs("load", "forces")
            if cfg.points.shape != cfg.forces.shape:
                self.fail("load", "forces", f"{len(cfg.forces)} forces for {len(cfg.points)} points")
        elif kind == "uniform_stress":
            cfg.stress = tuple(self.floats("load", "stress", 3, required=True))
        else:
            tf = Path(self.get("load", "traction_file", required=True))
            cfg.traction_file = tf if tf.is_absolute() else self.path.parent / tf
            if not cfg.traction_file.is_file():
                self.fail("load", "traction_file", f"no such file '{cfg.traction_file}'")
        cfg.project_affine = self.boolean("load", "project_affine", False)

        lams = self.floats("sweep", "lambdas", default=cfg.lambdas)
        if not lams or any(not l > 0 for l in lams):
            self.fail("sweep", "lambdas", "need one or more positive values")
        if any(b <= a for a, b in zip(lams, lams[1:])):
            self.fail("sweep", "lambdas", "must be strictly increasing")
        cfg.lambdas = lams

        d = SolveConfig()
        schedule = tuple(self.floats("solver", "schedule", default=list(d.schedule)))
        max_iter = self.number("solver", "max_iter", d.max_iter, kind=int, positive=True)
        tol = self.number("solver", "tol", d.tol, positive=True)
        memory = self.number("solver", "memory", d.memory, kind=int, positive=True)
        perturb = self.number("solver", "perturb", 0.0)
        if perturb < 0:
            self.fail("solver", "perturb", "must be >= 0")
        method = self.get("solver", "limit_method", d.limit_method)
        cfg.seed = self.number("output", "seed", 0, kind=int)
        try:
            cfg.solver = SolveConfig(
                schedule=schedule,
                max_iter=max_iter,
                tol=tol,
                memory=memory,
                limit_method=method,
                perturb=perturb,
                seed=cfg.seed if perturb > 0 else None,
            )
        except ValueError as exc:
            raise ConfigError(f"{self.where('solver')}: [solver] {exc}") from None

        c1 = self.get("recovery", "c1", "auto")
        if c1 != "auto":
            cfg.c1 = self.number("recovery", "c1", None, positive=True)
        cfg.c2 = self.number("recovery", "c2", MOLLIFIER_PEAK, positive=True)

        out = Path(self.get("output", "dir", "out"))
        cfg.out_dir = out if out.is_absolute() else Path.cwd() / out
        return cfg


# ------------------------------------------------------------------ subcommands


def _out_dir(args, cfg: ProblemConfig | None = None) -> Path:
    if args.out is not None:
        d = Path(args.out)
    elif cfg is not None:
        d = cfg.out_dir
    else:
        d = Path("out")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _fmt(x) -> str:
    # + 0.0 folds -0.0 into 0.0
    return repr(float(x) + 0.0)


def _parse_xi(text: str) -> Sym2:
    try:
        a, b, d = (float(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise UsageError(f"--xi needs three numbers 'a,b,d', got '{text}'") from None
    return Sym2(a, b, d)


def _need_config(args) -> ProblemConfig:
    if args.config is None:
        raise UsageError(f"{args.command} needs --config PATH")
    cfg = ProblemConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.solver = SolveConfig(**{**cfg.solver.__dict__, "seed": args.seed if cfg.solver.perturb > 0 else None})
    return cfg


ENVELOPE_HEADER = ["xi_a", "xi_b", "xi_d", "lambda", "f", "qc_closed_form", "rsym_k1", "rsym_k2", "rel_gap"]


def cmd_envelope(args) -> int:
    lam = 4.0 if args.lam is None else float(args.lam)
    if not lam > 0:
        raise UsageError("--lambda must be positive")
    n = 9 if args.grid is None else args.grid
    if n < 2:
        raise UsageError("--grid must be >= 2")
    r = args.range if args.range is not None else 0.9 * math.sqrt(lam)
    p = EnergyParams(lam)
    F = Density("f_lambda", lam)
    lgrid = LaminationGrid.for_lambda(lam)
    ticks = np.linspace(-r, r, n)
    path = _out_dir(args) / "envelope.csv"
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(ENVELOPE_HEADER)
        for a in ticks:
            for d in ticks:
                xi = Sym2(float(a), args.xi_b, float(d))
                f0, r1, r2 = rsym_sequence(F, xi, 2, lgrid)
                qc = qc_envelope(xi, p)
                gap = (r2 - qc) / qc if qc > 0 else r2 - qc
                wr.writerow([_fmt(v) for v in (xi.a, xi.b, xi.d, lam, f_lambda(xi, p), qc, r1, r2, gap)])
    print(f"wrote {path} ({n * n} rows)")
    return EXIT_OK


def cmd_laminate(args) -> int:
    out = _out_dir(args)
    if args.kind == "profile":
        n = 4096 if args.grid is None else args.grid
        try:
            spec = LaminateSpec(alpha=args.alpha, beta=args.beta, t=args.t, k=args.k)
            prof = laminate_1d(spec, n)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        path = out / "laminate_profile.csv"
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["x", "u", "du", "d2u"])
            for row in zip(prof.x, prof.u, prof.du, prof.d2u):
                wr.writerow([_fmt(v) for v in row])
        vals, counts = np.unique(prof.d2u, return_counts=True)
        hist = out / "laminate_hist.csv"
        with open(hist, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["value", "count", "fraction"])
            for v, c in zip(vals, counts):
                wr.writerow([_fmt(v), int(c), _fmt(c / prof.n)])
        print(f"wrote {path} and {hist}; mean u'' = {np.mean(prof.d2u):.6g}")
        return EXIT_OK

    lam = 4.0 if args.lam is None else float(args.lam)
    n = 256 if args.grid is None else args.grid
    xi = _parse_xi(args.xi)
    try:
        if args.k_outer is None:
            scan = two_level_energy_scan(xi, lam, k_inner=args.k, eps_margin=args.eps_margin, grid_n=n)
            k_outer = min(scan, key=scan.get)
        else:
            k_outer = args.k_outer
        lam_field = build_two_level_laminate(xi, lam, k_inner=args.k, k_outer=k_outer, eps_margin=args.eps_margin, grid_n=n)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    g = lam_field.field.grid
    path = out / "laminate_field.csv"
    write_field_csv(path, g, lam_field.field.nodes)
    w = g.trapezoid_weights()
    hist = out / "laminate_hist.csv"
    with open(hist, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["label", "a", "b", "d", "count", "fraction"])
        for lab in range(len(lam_field.leaves) + 1):
            m = lam_field.labels == lab
            leaf = lam_field.leaves[lab - 1] if lab else Sym2(math.nan, math.nan, math.nan)
            wr.writerow([lab, _fmt(leaf.a), _fmt(leaf.b), _fmt(leaf.d), int(m.sum()), _fmt(w[m].sum() / w.sum())])
    energy = lam_field.average(Density("f_lambda", lam))
    target = qc_envelope(xi, EnergyParams(lam))
    print(f"wrote {path} and {hist}; k_outer = {k_outer}, mean F = {energy:.6f}, envelope = {target:.6f}")
    return EXIT_OK


BOUNDARY_HEADER = ["vertex", "arclength", "f1", "f2"]


def cmd_boundary(args) -> int:
    cfg = _need_config(args)
    g = cfg.grid(args.grid)
    data = cfg.boundary_data(g)
    s = BoundaryCurve.rectangle(g).arclength
    path = _out_dir(args, cfg) / "boundary.csv"
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(BOUNDARY_HEADER)
        for k in range(g.n_ring):
            wr.writerow([k, _fmt(s[k]), _fmt(data.f1[k]), _fmt(data.f2[k])])
    print(f"wrote {path} ({g.n_ring} vertices)")
    return EXIT_OK


def _lambda_value(text: str | None) -> float | None:
    if text is None or text.strip().lower() in ("inf", "infinity", "limit"):
        return None
    try:
        lam = float(text)
    except ValueError:
        raise UsageError(f"--lambda expects a number or 'inf', got '{text}'") from None
    if not lam > 0 or not math.isfinite(lam):
        raise UsageError(f"--lambda must be positive, got '{text}'")
    return lam


def cmd_solve(args) -> int:
    cfg = _need_config(args)
    g = cfg.grid(args.grid)
    data = cfg.boundary_data(g)
    lam = _lambda_value(args.lam)
    if lam is None:
        u, rep = minimize_limit(data, g, cfg.solver)
        tag = "inf"
    else:
        u, rep = minimize_finite_lambda(data, g, SolveConfig(**{**cfg.solver.__dict__, "lam": lam}))
        tag = f"{lam:g}"
    out = _out_dir(args, cfg)
    write_field_csv(out / f"field_lambda_{tag}.csv", g, u.nodes)
    write_eigen_maps(out / f"stress_lambda_{tag}", u)
    with open(out / f"report_lambda_{tag}.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["lambda", "energy", "initial_energy", "iters", "high_branch_frac", "converged"])
        wr.writerow([tag, _fmt(rep.energy), _fmt(rep.initial_energy), rep.iterations, _fmt(rep.high_branch_frac), int(rep.converged)])
    print(f"lambda = {tag}: energy {rep.energy:.10g} after {rep.iterations} iterations ({rep.message}, {rep.wall_s:.2f} s)")
    if not rep.converged:
        print(f"solver did not converge: {rep.message}", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _need_config(args)
    g = cfg.grid(args.grid)
    lams = cfg.lambdas
    if args.lam is not None:
        try:
            lams = [float(x) for x in args.lam.replace(",", " ").split()]
        except ValueError:
            raise UsageError(f"--lambda expects a comma-separated list, got '{args.lam}'") from None
    data = cfg.boundary_data(g)
    res = lambda_sweep([(l, data) for l in lams], g, cfg.solver, c1=cfg.c1, c2=cfg.c2)
    out = _out_dir(args, cfg)
    path = out / "sweep.csv"
    res.write_csv(path, with_timing=not args.no_timing)
    write_field_csv(out / "field_lambda_inf.csv", g, res.limit_field.nodes)
    for lam, u in res.fields.items():
        write_field_csv(out / f"field_lambda_{lam:g}.csv", g, u.nodes)
    print(f"limit energy {res.limit_report.energy:.10g}")
    for r in res.rows:
        print(f"lambda = {r.lam:g}: energy {r.energy:.10g}, gap {r.gap:.4g}, recovery {r.recovery_energy:.10g}")
    print(f"wrote {path}")
    if not res.converged:
        bad = [f"{l:g}" for l, r in res.reports.items() if not r.converged]
        print(f"solver did not converge for lambda in {bad or ['inf']}", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_verify(args) -> int:
    from airyrelax.checks import run_checks

    results = run_checks(0 if args.seed is None else args.seed)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'} {r.name}: {r.detail} ({r.seconds:.2f} s)")
    n_ok = sum(r.ok for r in results)
    print(f"{n_ok} passed, {len(results) - n_ok} failed")
    return EXIT_OK if n_ok == len(results) else EXIT_INVALID


# -------------------------------------------------------------------- dispatch


def _set_threads(n: int | None) -> None:
    if n is None:
        return
    if n < 1:
        raise UsageError("--threads must be >= 1")
    try:
        import numba
    except ImportError:
        return
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="problem file (INI sections)")
    common.add_argument("--out", help="output directory (default: [output] dir or ./out)")
    common.add_argument("--threads", type=int, help="thread cap; 1 is the reproducible mode")
    common.add_argument("--seed", type=int, help="seed for every random draw")

    p = _Parser(prog="airyrelax", description="Relaxed Airy-potential energies: envelopes, laminates, grid solves.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("envelope", parents=[common], help="tabulate F, its envelope and lamination iterates")
    s.add_argument("--lambda", dest="lam", type=float)
    s.add_argument("--grid", type=int, help="points per axis of the (xi_a, xi_d) table")
    s.add_argument("--range", type=float, help="half-width of the table (default 0.9 sqrt(lambda))")
    s.add_argument("--xi-b", dest="xi_b", type=float, default=0.0)

    s = sub.add_parser("laminate", parents=[common], help="write laminate profiles or fields")
    s.add_argument("--kind", choices=("two-level", "profile"), default="two-level")
    s.add_argument("--lambda", dest="lam", type=float)
    s.add_argument("--grid", type=int, help="cells per side (two-level) or samples (profile)")
    s.add_argument("--xi", default="1,0,0.5", help="mean Hessian 'a,b,d' (two-level)")
    s.add_argument("--k", type=int, default=32, help="inner periods (two-level) or periods (profile)")
    s.add_argument("--k-outer", dest="k_outer", type=int, help="outer periods (default: best of 4..8)")
    s.add_argument("--eps-margin", dest="eps_margin", type=float, default=0.05)
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--beta", type=float, default=-1.0)
    s.add_argument("--t", type=float, default=0.5)

    s = sub.add_parser("boundary", parents=[common], help="traction to clamped boundary data")
    s.add_argument("--grid", type=int)

    s = sub.add_parser("solve", parents=[common], help="single finite-lambda or limit solve")
    s.add_argument("--lambda", dest="lam", help="a positive number or 'inf' (default)")
    s.add_argument("--grid", type=int)

    s = sub.add_parser("sweep", parents=[common], help="lambda sweep against the limit problem")
    s.add_argument("--lambda", dest="lam", help="comma-separated list overriding [sweep] lambdas")
    s.add_argument("--grid", type=int)
    s.add_argument("--no-timing", dest="no_timing", action="store_true", help="write 0 in the wall_s column")

    sub.add_parser("verify", parents=[common], help="run the bundled invariant checks")
    return p


COMMANDS = {
    "envelope": cmd_envelope,
    "laminate": cmd_laminate,
    "boundary": cmd_boundary,
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "verify": cmd_verify,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(f"{parser.format_usage()}airyrelax: error: missing subcommand")
        _set_threads(args.threads)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_INVALID
    except BalanceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
