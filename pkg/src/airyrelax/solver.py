"""Grid minimisation of the relaxed finite-lambda functional and the limit functional.

Unknowns are the interior node values and, for the limit problem, the
outward normal derivatives on the boundary ring.  Boundary node values are
pinned to ``f1``; the finite-lambda problem also pins the normal
derivatives to ``f2`` while the limit problem pays
``2 * sum |s - f2|`` for deviating.  The discrete Hessian is a sparse linear
map of the unknowns, so energy and gradient are a kernel evaluation plus
one sparse product each.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import minimize

from airyrelax import _kernels
from airyrelax.density import Density, EnergyParams, high_branch
from airyrelax.grid import (
    GHOST,
    Grid2D,
    ScalarField,
    apply_clamped_boundary,
    energy_quadrature,
    ghost_map,
    hessian_field,
    hessian_operator,
    ring_node_values,
)
from airyrelax.sym2 import Sym2, cof, eigenvalues, rho0


class SolverError(RuntimeError):
    """Raised when the optimiser produces non-finite values or the cone solver fails."""


@dataclass(frozen=True)
class SolveConfig:
    """Optimiser settings.

    ``schedule`` lists the smoothing widths used in turn; each stage runs at
    most ``max_iter`` quasi-Newton iterations and stops once the projected
    gradient sup-norm is below ``tol * (1 + |E|)`` or the relative energy
    decrease per step falls below ``ftol``, or the smoothed energy drops by
    less than ``stall_tol`` (relative) over ``stall_window`` steps.  ``memory`` is the
    L-BFGS history length.  A non-None ``seed`` adds a perturbation of
    size ``perturb`` to the free unknowns of the starting point.
    ``limit_method`` selects the exact cone program (``"socp"``, needs
    cvxpy) or the smoothed quasi-Newton path (``"lbfgs"``) for the convex
    limit problem.
    """

    lam: float | None = None
    schedule: tuple[float, ...] = (1e-1, 1e-2, 1e-3)
    max_iter: int = 2000
    tol: float = 1e-8
    ftol: float = 1e-12
    stall_window: int = 200
    stall_tol: float = 1e-9
    memory: int = 20
    seed: int | None = None
    perturb: float = 1e-3
    limit_method: str = "socp"

    def __post_init__(self):
        sched = tuple(float(e) for e in self.schedule)
        object.__setattr__(self, "schedule", sched)
        if not sched or any(e <= 0 for e in sched):
            raise ValueError("smoothing schedule must be non-empty and positive")
        if any(b >= a for a, b in zip(sched, sched[1:])):
            raise ValueError("smoothing schedule must be strictly decreasing")
        if self.lam is not None and not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.limit_method not in ("socp", "lbfgs"):
            raise ValueError("limit_method must be 'socp' or 'lbfgs'")
        if self.max_iter < 1 or self.tol <= 0:
            raise ValueError("max_iter must be >= 1 and tol > 0")


@dataclass
class SolveReport:
    energy: float
    initial_energy: float
    history: list[float] = field(default_factory=list)
    grad_norm: float = math.nan
    wall_s: float = 0.0
    iterations: int = 0
    high_branch_frac: float = 0.0
    converged: bool = True
    message: str = ""


class DiscreteProblem:
    """Energy, gradient and exact energy of one clamped grid problem.

    ``mode`` is ``"finite"`` (needs ``lam``) or ``"limit"``.
    """

    def __init__(self, grid: Grid2D, bdata, mode: str, lam: float | None = None):
        if mode not in ("finite", "limit"):
            raise ValueError(f"unknown mode {mode!r}")
        if mode == "finite" and (lam is None or not lam > 0):
            raise ValueError("finite-lambda problem needs lambda > 0")
        f1 = np.asarray(bdata.f1, dtype=float)
        f2 = np.asarray(bdata.f2, dtype=float)
        if f1.shape != (grid.n_ring,) or f2.shape != (grid.n_ring,):
            raise ValueError(f"boundary data must have {grid.n_ring} ring values for this grid")
        if not (np.all(np.isfinite(f1)) and np.all(np.isfinite(f2))):
            raise ValueError("boundary data contains non-finite values")
        self.grid = grid
        self.mode = mode
        self.lam = None if lam is None else float(lam)
        self.f1 = f1
        self.f2 = f2
        n_nodes = grid.nx * grid.ny
        self.n_nodes = n_nodes
        full = (hessian_operator(grid) @ ghost_map(grid)).tocsc()
        fixed_nodes = ring_node_values(f1, grid).ravel()
        free = np.zeros(n_nodes + grid.n_ring, dtype=bool)
        free[:n_nodes] = grid.interior_mask().ravel()
        if mode == "limit":
            free[n_nodes:] = True
        x_fixed = np.concatenate([fixed_nodes, f2])
        x_fixed[free] = 0.0
        self.free = free
        self.x_fixed = x_fixed
        self.A = full[:, free].tocsr()
        self.AT = self.A.T.tocsr()
        self.c = full @ x_fixed
        self.w = grid.trapezoid_weights().ravel()
        self.ring_w = grid.ring_weights()
        self.n_free = int(free.sum())
        self.n_s = grid.n_ring if mode == "limit" else 0

    def full_vector(self, z: np.ndarray) -> np.ndarray:
        x = self.x_fixed.copy()
        x[self.free] = z
        return x

    def field(self, z: np.ndarray) -> ScalarField:
        x = self.full_vector(z)
        n = self.n_nodes
        return ScalarField.from_nodes(self.grid, x[:n].reshape(self.grid.shape), x[n:])

    def restrict(self, u: ScalarField) -> np.ndarray:
        """Free unknowns of a populated field (nodes and, for the limit, ring slopes)."""
        x = np.concatenate([u.nodes.ravel(), u.normal_derivative()])
        return x[self.free]

    def hessian(self, z: np.ndarray):
        H = self.A @ z + self.c
        n = self.n_nodes
        return H[:n], H[n : 2 * n], H[2 * n :]

    def smooth(self, z: np.ndarray, eps: float) -> tuple[float, np.ndarray]:
        a, b, d = self.hessian(z)
        mode = _kernels.MODE_LIMIT if self.mode == "limit" else _kernels.MODE_FINITE
        total, ga, gb, gd = _kernels.weighted_energy(a, b, d, self.w, self.lam, eps, mode)
        grad = self.AT @ np.concatenate([ga, gb, gd])
        if self.n_s:
            r = z[-self.n_s :] - self.f2
            root = np.sqrt(r * r + eps * eps)
            total += 2.0 * float(np.dot(self.ring_w, root))
            grad[-self.n_s :] += 2.0 * self.ring_w * r / root
        return total, grad

    def exact(self, z: np.ndarray) -> float:
        a, b, d = self.hessian(z)
        H = Sym2(a, b, d)
        if self.mode == "limit":
            total = float(np.dot(self.w, 2.0 * rho0(H)))
            total += 2.0 * float(np.dot(self.ring_w, np.abs(z[-self.n_s :] - self.f2)))
            return total
        return float(np.dot(self.w, Density("g_lambda", self.lam)(H)))

    def high_branch_frac(self, z: np.ndarray) -> float:
        if self.mode == "limit":
            return 0.0
        H = Sym2(*self.hessian(z))
        hb = np.asarray(high_branch(H, EnergyParams(self.lam)), dtype=bool)
        return float(self.w[hb].sum() / self.w.sum())

    def extension(self) -> np.ndarray:
        """Clamped discrete biharmonic extension of the boundary data.

        Solves ``lap_h lap_h u = 0`` at interior nodes with both traces
        imposed through the ghost layer, which reproduces quadratics
        exactly.  Ring slopes of the limit problem start at ``f2``.
        """
        grid = self.grid
        P = ghost_map(grid)
        x_fixed = np.concatenate([ring_node_values(self.f1, grid).ravel(), self.f2])
        free = np.zeros(self.n_nodes + grid.n_ring, dtype=bool)
        free[: self.n_nodes] = grid.interior_mask().ravel()
        x_fixed[free] = 0.0
        B = (_interior_laplacian(grid) @ _node_laplacian(grid) @ P).tocsc()
        z = spla.spsolve(B[:, free].tocsc(), -(B @ x_fixed))
        x = x_fixed.copy()
        x[free] = z
        return x[self.free]


def _node_laplacian(grid: Grid2D) -> sp.csr_matrix:
    """Five-point Laplacian at every node, reading the padded array."""
    ny, nx = grid.shape
    py, px = grid.padded_shape
    j, i = np.mgrid[0:ny, 0:nx]
    rows = (j * nx + i).ravel()
    centre = ((j + GHOST) * px + i + GHOST).ravel()
    h2 = grid.h * grid.h
    data, cols, rr = [], [], []
    for off, c in ((0, -4.0), (1, 1.0), (-1, 1.0), (px, 1.0), (-px, 1.0)):
        rr.append(rows)
        cols.append(centre + off)
        data.append(np.full(rows.size, c / h2))
    return sp.csr_matrix((np.concatenate(data), (np.concatenate(rr), np.concatenate(cols))), shape=(ny * nx, py * px))


def _interior_laplacian(grid: Grid2D) -> sp.csr_matrix:
    """Five-point Laplacian of a node array, rows only at interior nodes."""
    ny, nx = grid.shape
    j, i = np.mgrid[1 : ny - 1, 1 : nx - 1]
    rows = np.arange(i.size)
    centre = (j * nx + i).ravel()
    h2 = grid.h * grid.h
    data, cols, rr = [], [], []
    for off, c in ((0, -4.0), (1, 1.0), (-1, 1.0), (nx, 1.0), (-nx, 1.0)):
        rr.append(rows)
        cols.append(centre + off)
        data.append(np.full(rows.size, c / h2))
    return sp.csr_matrix((np.concatenate(data), (np.concatenate(rr), np.concatenate(cols))), shape=(i.size, ny * nx))


@dataclass
class _Data:
    f1: np.ndarray
    f2: np.ndarray


def clamped_extension(bdata, grid: Grid2D) -> ScalarField:
    """Field with traces ``(f1, f2)`` minimising the discrete Hessian L2 norm."""
    prob = DiscreteProblem(grid, bdata, "finite", 1.0)
    return prob.field(prob.extension())


def _run(prob: DiscreteProblem, z0: np.ndarray, cfg: SolveConfig) -> tuple[np.ndarray, SolveReport]:
    t0 = time.perf_counter()
    z = np.array(z0, dtype=float)
    if cfg.seed is not None and prob.n_free:
        rng = np.random.default_rng(cfg.seed)
        scale = cfg.perturb * max(1.0, float(np.abs(z).max(initial=0.0)))
        z = z + scale * rng.standard_normal(z.size)
    e0 = prob.exact(z)
    best_z, best_e = z.copy(), e0
    history = [e0]
    iters = 0
    converged = True
    message = ""
    gnorm = math.nan
    if prob.n_free == 0:
        return z, SolveReport(e0, e0, history, 0.0, time.perf_counter() - t0, 0, prob.high_branch_frac(z))

    for eps in cfg.schedule:
        trace = []

        def fun(v, eps=eps):
            return prob.smooth(v, eps)

        def callback(intermediate_result):
            nonlocal best_z, best_e
            v = intermediate_result.x
            e = prob.exact(v)
            if e < best_e:
                best_e, best_z = e, v.copy()
            history.append(best_e)
            trace.append(float(intermediate_result.fun))
            # a stage has stalled when the smoothed objective stops moving
            if len(trace) > cfg.stall_window:
                old = trace[-cfg.stall_window - 1]
                if old - trace[-1] <= cfg.stall_tol * (1.0 + abs(old)):
                    raise StopIteration

        f_start, _ = fun(z)
        gtol = cfg.tol * (1.0 + abs(f_start))
        res = minimize(
            fun,
            z,
            jac=True,
            method="L-BFGS-B",
            callback=callback,
            options={"maxiter": cfg.max_iter, "gtol": gtol, "ftol": cfg.ftol, "maxcor": cfg.memory},
        )
        iters += int(res.nit)
        z = res.x
        e = prob.exact(z)
        if e < best_e:
            best_e, best_z = e, z.copy()
        gnorm = float(np.abs(res.jac).max()) if res.jac.size else 0.0
        message = str(res.message)
        if not np.all(np.isfinite(z)):
            raise SolverError(f"optimiser produced non-finite values at eps={eps}: {message}")
        if "callback" in message.lower():
            message = f"stalled: smoothed energy change below {cfg.stall_tol:g} over {cfg.stall_window} steps"
        # reaching the iteration cap is a regular stop; a broken line search is not
        converged = "ABNORMAL" not in message.upper()
    report = SolveReport(
        energy=best_e,
        initial_energy=e0,
        history=history,
        grad_norm=gnorm,
        wall_s=time.perf_counter() - t0,
        iterations=iters,
        high_branch_frac=prob.high_branch_frac(best_z),
        converged=converged,
        message=message,
    )
    return best_z, report


def _as_start(prob: DiscreteProblem, init: ScalarField | None) -> np.ndarray:
    if init is None:
        return prob.extension()
    if init.grid != prob.grid:
        raise ValueError("initial field lives on a different grid")
    if not init.populated:
        init = apply_clamped_boundary(init, _Data(prob.f1, prob.f2))
    return prob.restrict(init)


def minimize_finite_lambda(bdata, grid: Grid2D, cfg: SolveConfig, init: ScalarField | None = None):
    """Minimise ``sum w G_lambda(hess u)`` with both traces clamped.

    Returns the lowest exact-energy iterate, so the reported energy never
    exceeds that of the starting field.
    """
    if cfg.lam is None:
        raise ValueError("finite-lambda solve needs cfg.lam")
    prob = DiscreteProblem(grid, bdata, "finite", cfg.lam)
    z, rep = _run(prob, _as_start(prob, init), cfg)
    return prob.field(z), rep


def minimize_limit(bdata, grid: Grid2D, cfg: SolveConfig, init: ScalarField | None = None):
    """Minimise ``2 sum w rho0(hess u) + 2 sum |s - f2|`` with the value trace clamped.

    The discrete problem is convex.  The default backend solves it exactly
    as a cone program; the smoothed quasi-Newton path is used when
    ``cfg.limit_method == "lbfgs"`` or cvxpy is unavailable.
    """
    prob = DiscreteProblem(grid, bdata, "limit")
    if cfg.limit_method == "socp" and _have_cvxpy() and prob.n_free:
        t0 = time.perf_counter()
        z0 = _as_start(prob, init)
        e0 = prob.exact(z0)
        z, iters, status = _limit_socp(prob)
        e = prob.exact(z)
        if e > e0:
            z, e = z0, e0
        rep = SolveReport(e, e0, [e0, e], 0.0, time.perf_counter() - t0, iters, 0.0, status == "optimal", status)
        return prob.field(z), rep
    z, rep = _run(prob, _as_start(prob, init), cfg)
    return prob.field(z), rep


def _have_cvxpy() -> bool:
    try:
        import cvxpy  # noqa: F401
    except ImportError:  # pragma: no cover - the lbfgs path covers this case
        return False
    return True


def _limit_socp(prob: DiscreteProblem, solver: str | None = None):
    import cvxpy as cp

    n = prob.n_nodes
    z = cp.Variable(prob.n_free)
    t = cp.Variable(n)
    H = prob.A @ z + prob.c
    a, b, d = H[:n], H[n : 2 * n], H[2 * n :]
    # rho0 = max(|tr H|, |l1 - l2|)
    cons = [t >= cp.abs(a + d), cp.SOC(t, cp.vstack([a - d, 2 * b]))]
    s = z[prob.n_free - prob.n_s :]
    obj = 2 * prob.w @ t + 2 * prob.ring_w @ cp.abs(s - prob.f2)
    problem = cp.Problem(cp.Minimize(obj), cons)
    if solver is None and "CLARABEL" in cp.installed_solvers():
        solver = "CLARABEL"
    problem.solve(solver=solver)
    if z.value is None:
        raise SolverError(f"cone solver failed: {problem.status}")
    iters = int(problem.solver_stats.num_iters or 0)
    return np.asarray(z.value, dtype=float), iters, str(problem.status)


def finite_energy(u: ScalarField, lam: float) -> float:
    return energy_quadrature(u, Density("g_lambda", lam))


def limit_energy(u: ScalarField, f2) -> float:
    return energy_quadrature(u, Density("limit"), f2=np.asarray(f2, dtype=float))


def limit_reference_cvxpy(bdata, grid: Grid2D, solver: str | None = None) -> tuple[float, ScalarField]:
    """Exact discrete limit energy and minimiser from the cone program."""
    prob = DiscreteProblem(grid, bdata, "limit")
    z, _, _ = _limit_socp(prob, solver)
    return prob.exact(z), prob.field(z)


@dataclass
class SweepRow:
    lam: float
    energy: float
    limit_energy: float
    gap: float
    high_branch_frac: float
    recovery_energy: float
    iters: int
    wall_s: float


SWEEP_HEADER = ["lambda", "energy", "limit_energy", "gap", "high_branch_frac", "recovery_energy", "iters", "wall_s"]


@dataclass
class SweepResult:
    rows: list[SweepRow]
    limit_field: ScalarField
    limit_report: SolveReport
    fields: dict[float, ScalarField]
    reports: dict[float, SolveReport] = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.limit_report.converged and all(r.converged for r in self.reports.values())

    def write_csv(self, path: str | Path, with_timing: bool = True) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(SWEEP_HEADER)
            for r in self.rows:
                wr.writerow(
                    [
                        repr(r.lam),
                        repr(r.energy),
                        repr(r.limit_energy),
                        repr(r.gap),
                        repr(r.high_branch_frac),
                        repr(r.recovery_energy),
                        r.iters,
                        f"{r.wall_s:.3f}" if with_timing else "0",
                    ]
                )


def read_sweep_csv(path: str | Path) -> list[SweepRow]:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header != SWEEP_HEADER:
            raise ValueError(f"{path}: unexpected sweep header {header}")
        rows = []
        for rec in rd:
            v = [float(x) for x in rec]
            rows.append(SweepRow(v[0], v[1], v[2], v[3], v[4], v[5], int(v[6]), v[7]))
    return rows


def lambda_sweep(
    bdata_per_lambda, grid: Grid2D, cfg: SolveConfig, limit_data=None, c1: float | None = None, c2: float | None = None
) -> SweepResult:
    """Solve the limit problem once and the finite-lambda problem per lambda.

    Each finite solve starts from the cheapest of: the clamped limit
    minimiser, its recovery field, the previous row's minimiser and the
    clamped extension.  ``limit_data`` defaults to the data of the last row.
    ``c1`` and ``c2`` are passed to the recovery construction.
    """
    from airyrelax.constructions import MOLLIFIER_PEAK, recovery_sequence

    c2 = MOLLIFIER_PEAK if c2 is None else c2

    pairs = [(float(l), bd) for l, bd in bdata_per_lambda]
    lams = [l for l, _ in pairs]
    if not pairs:
        raise ValueError("lambda list is empty")
    if any(b <= a for a, b in zip(lams, lams[1:])):
        raise ValueError("lambda list must be strictly increasing")
    ldata = pairs[-1][1] if limit_data is None else limit_data
    u_inf, rep_inf = minimize_limit(ldata, grid, replace(cfg, lam=None))
    e_inf = rep_inf.energy
    rows = []
    fields = {}
    reports = {}
    prev = None
    for lam, bd in pairs:
        t0 = time.perf_counter()
        f_field = clamped_extension(bd, grid)
        u_lim = apply_clamped_boundary(u_inf, bd)
        rec = recovery_sequence(u_lim, f_field, lam, c2=c2, c1=c1, bc_tol=1e-6)
        e_rec = finite_energy(rec, lam)
        starts = [rec, u_lim, f_field] + ([apply_clamped_boundary(prev, bd)] if prev is not None else [])
        energies = [finite_energy(s, lam) for s in starts]
        start = starts[int(np.argmin(energies))]
        u, rep = minimize_finite_lambda(bd, grid, replace(cfg, lam=lam), init=start)
        if not rep.converged:
            rep.message = f"lambda={lam}: {rep.message}"
        prev = u
        fields[lam] = u
        reports[lam] = rep
        rows.append(
            SweepRow(lam, rep.energy, e_inf, rep.energy - e_inf, rep.high_branch_frac, e_rec, rep.iterations, time.perf_counter() - t0)
        )
    return SweepResult(rows, u_inf, rep_inf, fields, reports)


def stress_eigen_maps(u: ScalarField) -> tuple[np.ndarray, np.ndarray]:
    """Per-node eigenvalues ``l1 >= l2`` of the stress ``cof(hess u)``."""
    l1, l2 = eigenvalues(cof(hessian_field(u)))
    return np.asarray(l1), np.asarray(l2)


def write_eigen_maps(prefix: str | Path, u: ScalarField) -> tuple[Path, Path]:
    l1, l2 = stress_eigen_maps(u)
    prefix = Path(prefix)
    p1 = prefix.with_name(prefix.name + "_sigma1.csv")
    p2 = prefix.with_name(prefix.name + "_sigma2.csv")
    np.savetxt(p1, l1, delimiter=",", fmt="%.17g")
    np.savetxt(p2, l2, delimiter=",", fmt="%.17g")
    return p1, p2
