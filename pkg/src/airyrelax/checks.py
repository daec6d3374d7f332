"""Fast invariant checks bundled with the package for ``airyrelax verify``.

Each check returns ``(ok, detail)``; none takes more than a few seconds.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from airyrelax.airy import BalanceError, BoundaryCurve, BoundaryLoad, balance_check, boundary_data_from_traction
from airyrelax.constructions import LaminateSpec, laminate_1d
from airyrelax.density import Density, EnergyParams, f_lambda, g_lambda, qc_envelope
from airyrelax.envelope import LaminationGrid, rsgl_split, rsym_iterate
from airyrelax.grid import Grid2D, ScalarField, stress_divergence
from airyrelax.solver import DiscreteProblem, SolveConfig, minimize_finite_lambda
from airyrelax.sym2 import Sym2, conjugate, frobenius, rho0


# central-difference step, near cbrt(machine eps)
FD_STEP = 1e-6


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str
    seconds: float


def _random_sym(rng, n, scale=1.0) -> Sym2:
    return Sym2(*(scale * rng.standard_normal((3, n))))


def _low_branch_diag(rng, lam, hi=0.9):
    r = hi * math.sqrt(lam) * rng.uniform(0.05, 1.0)
    s = rng.uniform(-1.0, 1.0)
    return Sym2.diag(r * s, r * (1.0 - abs(s)) * rng.choice([-1.0, 1.0]))


def check_density_inequalities(rng):
    bad = 0
    for lam in (1.0, 10.0, 100.0):
        p = EnergyParams(lam)
        xi = _random_sym(rng, 10_000, math.sqrt(lam))
        r, fro, g = rho0(xi), frobenius(xi), g_lambda(xi, p)
        bad += int(np.sum(fro > r * (1 + 1e-13)) + np.sum(r > 2 * fro * (1 + 1e-13)))
        bad += int(np.sum(0.5 * r > g * (1 + 1e-13)))
        bad += int(np.sum(qc_envelope(xi, p) > f_lambda(xi, p) * (1 + 1e-13)))
        low = r <= math.sqrt(lam)
        bad += int(np.sum(g[low] > 2 * r[low] * (1 + 1e-13)))
        scaled = lam * qc_envelope(xi / math.sqrt(lam), EnergyParams(1.0))
        bad += int(np.sum(~np.isclose(scaled, qc_envelope(xi, p), rtol=1e-12, atol=0.0)))
        A, B = _random_sym(rng, 2000, math.sqrt(lam)), _random_sym(rng, 2000, math.sqrt(lam))
        bad += int(np.sum(g_lambda(A + B, p) > 16 * (g_lambda(A, p) + g_lambda(B, p))))
    return bad == 0, f"{bad} violations over 3 x 10000 samples"


def check_rotation_invariance(rng):
    p = EnergyParams(4.0)
    xi = _random_sym(rng, 2000, 2.0)
    th = rng.uniform(0, math.pi, 2000)
    err = float(np.max(np.abs(qc_envelope(conjugate(xi, th), p) - qc_envelope(xi, p)) / (1 + qc_envelope(xi, p))))
    return err <= 1e-12, f"max rel err {err:.2e}"


def check_envelope_split(rng):
    worst = 0.0
    for lam in (1.0, 4.0, 100.0):
        for _ in range(20):
            xi = _low_branch_diag(rng, lam)
            val, _ = rsgl_split(xi, lam)
            worst = max(worst, abs(val - qc_envelope(xi, EnergyParams(lam))) / qc_envelope(xi, EnergyParams(lam)))
    return worst <= 1e-12, f"max rel err {worst:.2e}"


def check_envelope_iterate(rng):
    worst = 0.0
    for lam in (1.0, 100.0):
        F = Density("f_lambda", lam)
        for _ in range(2):
            xi = _low_branch_diag(rng, lam)
            q = qc_envelope(xi, EnergyParams(lam))
            worst = max(worst, abs(rsym_iterate(F, xi, 2, LaminationGrid.for_lambda(lam)) - q) / q)
    return worst <= 1e-2, f"max rel err {worst:.2e}"


def check_airy_identity(rng):
    g = Grid2D.rectangle(32)
    worst = 0.0
    for _ in range(10):
        u = ScalarField(g, rng.standard_normal(g.padded_shape), populated=True)
        d1, d2, scale = stress_divergence(u)
        worst = max(worst, float(max(np.abs(d1).max(), np.abs(d2).max()) / scale))
    return worst <= 1e-12, f"max divergence / scale {worst:.2e}"


def check_balance_gate(rng):
    g = Grid2D.rectangle(16)
    c = BoundaryCurve.rectangle(g)
    good = BoundaryLoad.point_loads([[0, 0], [0.5, 0], [1, 0]], [[0, 1], [0, -2], [0, 1]])
    bad = BoundaryLoad.point_loads([[0, 0], [1, 0]], [[0, 1], [0, 1]])
    ok = balance_check(good, c) and not balance_check(bad, c)
    try:
        boundary_data_from_traction(bad, c)
        ok = False
    except BalanceError:
        pass
    return ok, "balanced pair accepted, unbalanced pair rejected" if ok else "balance gate misclassified"


def check_uniform_stress_round_trip(rng):
    # constant stress sigma has potential with cof(hess) = sigma
    g = Grid2D.rectangle(16)
    c = BoundaryCurve.rectangle(g)
    s11, s12, s22 = rng.standard_normal(3)
    sigma = np.array([[s11, s12], [s12, s22]])
    data = boundary_data_from_traction(BoundaryLoad.sampled(g.ring_normals() @ sigma), c, project_affine=False)
    x, y = g.ring_points().T
    # f1 = -u + affine with u'' = cof(sigma); compare after removing the affine part
    u = -(0.5 * s22 * x * x - s12 * x * y + 0.5 * s11 * y * y)
    basis = np.stack([np.ones_like(x), x, y], axis=1)
    diff = data.f1 - u
    res = diff - basis @ np.linalg.lstsq(basis, diff, rcond=None)[0]
    err = float(np.abs(res).max())
    return err <= 1e-8, f"affine residual {err:.2e}"


def check_laminate_closure(rng):
    spec = LaminateSpec(alpha=2.0, beta=-1.0, t=float(rng.uniform(0.2, 0.8)), k=4)
    prof = laminate_1d(spec, 512)
    err = abs(prof.u[-1] - 0.5 * spec.mean)
    return err <= 1e-12 and set(np.unique(prof.d2u)) <= {2.0, -1.0}, f"endpoint err {err:.1e}"


def check_gradients(rng):
    g = Grid2D.rectangle(12)
    load = BoundaryLoad.point_loads([[0, 0], [0.5, 0], [1, 0]], [[0, 1], [0, -2], [0, 1]])
    data = boundary_data_from_traction(load, BoundaryCurve.rectangle(g), project_affine=False)
    worst = 0.0
    for mode, lam in (("finite", 100.0), ("limit", None)):
        prob = DiscreteProblem(g, data, mode, lam)
        z = prob.extension() + 0.01 * rng.standard_normal(prob.n_free)
        for eps in (1e-1, 1e-2, 1e-3):
            _, grad = prob.smooth(z, eps)
            for k in rng.choice(prob.n_free, 10, replace=False):
                e = np.zeros(prob.n_free)
                e[k] = FD_STEP
                fd = (prob.smooth(z + e, eps)[0] - prob.smooth(z - e, eps)[0]) / (2 * FD_STEP)
                worst = max(worst, abs(fd - grad[k]) / max(abs(grad[k]), 1e-12))
    return worst <= 1e-4, f"max rel err {worst:.2e}"


def check_kernel_paths(rng):
    g = Grid2D.rectangle(12)
    zero = BoundaryLoad.sampled(np.zeros((g.n_ring, 2)))
    data = boundary_data_from_traction(zero, BoundaryCurve.rectangle(g))
    prob = DiscreteProblem(g, data, "finite", 30.0)
    z = rng.standard_normal(prob.n_free)
    e1, g1 = prob.smooth(z, 1e-2)
    old = os.environ.get("AIRYRELAX_DISABLE_NUMBA")
    os.environ["AIRYRELAX_DISABLE_NUMBA"] = "1"
    try:
        e2, g2 = prob.smooth(z, 1e-2)
    finally:
        if old is None:
            del os.environ["AIRYRELAX_DISABLE_NUMBA"]
        else:
            os.environ["AIRYRELAX_DISABLE_NUMBA"] = old
    err = max(abs(e1 - e2) / abs(e1), float(np.abs(g1 - g2).max() / np.abs(g1).max()))
    return err <= 1e-10, f"max rel diff {err:.1e}"


def check_bending_closed_form(rng):
    g = Grid2D.rectangle(16)
    q = ScalarField.from_function(g, lambda x, y: 0.5 * (x * x - y * y))
    data = type("D", (), {"f1": q.trace(), "f2": q.normal_derivative()})
    worst = 0.0
    for lam in (10.0, 1e4):
        _, rep = minimize_finite_lambda(data, g, SolveConfig(lam=lam))
        worst = max(worst, abs(rep.energy - (4.0 - 2.0 / math.sqrt(lam))) / 4.0)
    return worst <= 1e-10, f"max rel err {worst:.1e}"


CHECKS: list[tuple[str, Callable]] = [
    ("density inequalities", check_density_inequalities),
    ("rotation invariance", check_rotation_invariance),
    ("envelope explicit split", check_envelope_split),
    ("envelope lamination iterate", check_envelope_iterate),
    ("airy identity", check_airy_identity),
    ("balance gate", check_balance_gate),
    ("uniform stress round trip", check_uniform_stress_round_trip),
    ("laminate closure", check_laminate_closure),
    ("gradient vs finite differences", check_gradients),
    ("numba and numpy kernels agree", check_kernel_paths),
    ("bending closed form", check_bending_closed_form),
]


def run_checks(seed: int = 0) -> list[CheckResult]:
    out = []
    for i, (name, fun) in enumerate(CHECKS):
        rng = np.random.default_rng([seed, i])
        t0 = time.perf_counter()
        try:
            ok, detail = fun(rng)
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t0))
    return out
