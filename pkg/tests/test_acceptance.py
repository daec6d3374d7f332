"""Acceptance criteria, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -s`` or directly as a script.
Each check returns ``(ok, detail)``; the wall-clock budget is part of the
verdict.
"""

from __future__ import annotations

import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from airyrelax.airy import (
    BalanceError,
    BoundaryCurve,
    BoundaryLoad,
    balance_check,
    boundary_data_from_traction,
    phi_integral,
    point_load_potential,
)
from airyrelax.cli import ProblemConfig
from airyrelax.constructions import two_level_energy_scan
from airyrelax.density import Density, EnergyParams, f_lambda, g_lambda, qc_envelope
from airyrelax.envelope import LaminationGrid, rsgl_split, rsym_iterate
from airyrelax.grid import Grid2D, ScalarField, stress_divergence
from airyrelax.solver import DiscreteProblem, lambda_sweep
from airyrelax.sym2 import Sym2, frobenius, rho0

PROBLEMS = Path(__file__).resolve().parents[1] / "problems"
SWEEP_LAMBDAS = [10.0, 100.0, 1e3, 1e4]
# near cbrt(machine eps): balances roundoff on O(1e3) energies against truncation
FD_STEP = 1e-6


def low_branch_diag(rng, lam, lo=0.01, hi=0.9):
    # diag(x, y) has rho0 = |x| + |y|
    r = math.sqrt(lam) * rng.uniform(lo, hi)
    s = rng.uniform(-1.0, 1.0)
    return Sym2.diag(r * s, r * (1.0 - abs(s)) * rng.choice([-1.0, 1.0]))


def envelope_oracle():
    rng = np.random.default_rng(101)
    worst_split = worst_iter = 0.0
    for lam in (1.0, 4.0, 100.0):
        p = EnergyParams(lam)
        F = Density("f_lambda", lam)
        grid = LaminationGrid.for_lambda(lam)
        for _ in range(100):
            xi = low_branch_diag(rng, lam)
            qc = qc_envelope(xi, p)
            worst_split = max(worst_split, abs(rsgl_split(xi, lam)[0] - qc) / qc)
            worst_iter = max(worst_iter, abs(rsym_iterate(F, xi, 2, grid) - qc) / qc)
    ok = worst_split <= 1e-12 and worst_iter <= 1e-2
    return ok, f"explicit split rel err {worst_split:.1e} (<= 1e-12), k=2 iterate rel err {worst_iter:.1e} (<= 1e-2)"


def density_suite():
    rng = np.random.default_rng(102)
    n = 100_000
    tol = 1e-13
    counts = {}
    worst_scale = worst_cont = 0.0
    for lam in (1.0, 10.0, 100.0):
        p = EnergyParams(lam)
        sq = math.sqrt(lam)
        xi = Sym2(*(sq * rng.standard_normal((3, n))))
        r, fro, g = rho0(xi), frobenius(xi), g_lambda(xi, p)
        qc = qc_envelope(xi, p)
        low = r <= sq
        checks = {
            "|xi| <= rho0": fro <= r * (1 + tol),
            "rho0 <= 2|xi|": r <= 2 * fro * (1 + tol),
            "rho0/2 <= G": 0.5 * r <= g * (1 + tol),
            "envelope <= F": qc <= f_lambda(xi, p) * (1 + tol),
            "G <= 2 rho0 (low)": g[low] <= 2 * r[low] * (1 + tol),
        }
        A = Sym2(*(sq * rng.standard_normal((3, n))))
        checks["quasi-triangle C=16"] = g_lambda(xi + A, p) <= 16 * (g + g_lambda(A, p))
        for k, v in checks.items():
            counts[k] = counts.get(k, 0) + int(np.sum(~v))
        scaled = lam * qc_envelope(Sym2(xi.a / sq, xi.b / sq, xi.d / sq), EnergyParams(1.0))
        worst_scale = max(worst_scale, float(np.max(np.abs(scaled - qc) / np.maximum(np.abs(qc), 1e-300))))
        # rescale onto the interface rho0 = sqrt(lam) and step across it
        on = Sym2(*(np.array(list(xi)) * (sq / np.maximum(r, 1e-300))))
        below = qc_envelope(on * (1 - 1e-12), p)
        above = qc_envelope(on * (1 + 1e-12), p)
        worst_cont = max(worst_cont, float(np.max(np.abs(above - below) / np.abs(above))))
    bad = sum(counts.values())
    ok = bad == 0 and worst_scale <= 1e-12 and worst_cont <= 1e-9
    return ok, f"{bad} violations in 3 x 1e5 samples, scaling rel err {worst_scale:.1e}, branch jump {worst_cont:.1e}"


def airy_identity():
    rng = np.random.default_rng(103)
    g = Grid2D.rectangle(64)
    worst = 0.0
    for _ in range(50):
        u = ScalarField(g, rng.standard_normal(g.padded_shape), populated=True)
        d1, d2, scale = stress_divergence(u)
        worst = max(worst, float(max(np.abs(d1).max(), np.abs(d2).max()) / scale))
    return worst <= 1e-12, f"max |div cof hess| / scale = {worst:.1e} over 50 fields (<= 1e-12)"


def laminate_energy():
    xi, lam = Sym2.diag(1.0, 0.5), 4.0
    scan = two_level_energy_scan(xi, lam, k_inner=32, eps_margin=0.05, grid_n=256)
    k_best = min(scan, key=scan.get)
    e = scan[k_best]
    err = abs(e - 5.0) / 5.0
    return err <= 0.05, f"mean F = {e:.4f} at {k_best} outer periods, rel err {100 * err:.2f}% (<= 5%)"


def _sweep(cfg_name):
    cfg = ProblemConfig.load(PROBLEMS / cfg_name)
    g = cfg.grid(64)
    data = cfg.boundary_data(g)
    return lambda_sweep([(l, data) for l in SWEEP_LAMBDAS], g, cfg.solver, c1=cfg.c1, c2=cfg.c2)


def bending_sweep():
    res = _sweep("bending.cfg")
    det0 = 1.0
    errs = [abs(r.gap - (-2.0 * det0 / math.sqrt(r.lam))) / (2.0 * det0 / math.sqrt(r.lam)) for r in res.rows]
    slope = float(np.polyfit(np.log(SWEEP_LAMBDAS), np.log([abs(r.gap) for r in res.rows]), 1)[0])
    ok = max(errs) <= 0.1 and abs(slope + 0.5) <= 0.05
    return ok, f"max gap rel err {max(errs):.1e} (<= 0.1), log-log slope {slope:.4f} (-0.5 +- 0.05)"


def three_point_sweep():
    res = _sweep("three_point.cfg")
    e = [r.energy for r in res.rows]
    mono = all(b <= a + 1e-3 * a for a, b in zip(e, e[1:]))
    e_inf = res.limit_report.energy
    rel = abs(e[-1] - e_inf) / e_inf
    rec = all(r.recovery_energy >= r.energy - 1e-6 * max(1.0, abs(r.energy)) for r in res.rows)
    ok = mono and rel <= 0.1 and rec
    energies = ", ".join(f"{x:.4f}" for x in e)
    return ok, (
        f"E = [{energies}] nonincreasing: {mono}; E_inf = {e_inf:.4f}, rel gap at 1e4 {rel:.1e} (<= 0.1); "
        f"recovery >= E: {rec}"
    )


def _balanced_four(rng, cells):
    edge_pts = [lambda t: (t, 0.0), lambda t: (1.0, t), lambda t: (t, 1.0), lambda t: (0.0, t)]
    normals = np.array([[0, -1], [1, 0], [0, 1], [-1, 0]], dtype=float)
    while True:
        pts = np.array([edge_pts[e](rng.integers(1, cells) / cells) for e in range(4)])
        (x2, y2), (x3, y3) = pts[2], pts[3]
        if abs(x2 - x3) < 1e-3:
            continue
        v = np.zeros((4, 2))
        v[:2] = rng.standard_normal((2, 2))
        v[2, 0] = rng.standard_normal()
        ky = v[0, 1] + v[1, 1]
        m01 = sum(pts[i, 0] * v[i, 1] - pts[i, 1] * v[i, 0] for i in range(2))
        v[3, 0] = -(v[0, 0] + v[1, 0] + v[2, 0])
        v[2, 1] = (-m01 + y2 * v[2, 0] + y3 * v[3, 0] + x3 * ky) / (x2 - x3)
        v[3, 1] = -ky - v[2, 1]
        if np.all(np.abs(np.sum(v * normals, axis=1)) > 0.2 * np.hypot(v[:, 0], v[:, 1])):
            return BoundaryLoad.point_loads(pts, v)


def boundary_machinery():
    rng = np.random.default_rng(107)
    sq = BoundaryCurve.rectangle(Grid2D.rectangle(16))
    pair = BoundaryLoad.point_loads([[0, 0], [1, 0]], [[-1, 0], [1, 0]])
    couple = BoundaryLoad.point_loads([[0, 0], [1, 0]], [[0, 1], [0, -1]])
    three = BoundaryLoad.point_loads([[0, 0], [0.5, 0], [1, 0]], [[0, 1], [0, -2], [0, 1]])
    gate = balance_check(pair, sq) and not balance_check(couple, sq) and balance_check(three, sq)
    try:
        boundary_data_from_traction(couple, sq)
        gate = False
    except BalanceError:
        pass

    errs = []
    for n in (64, 128, 256):
        c = BoundaryCurve.circle(n)
        s, L = c.arclength, c.length
        out = phi_integral(np.sin(2 * math.pi * s / L), c)
        errs.append(float(np.abs(out + (L / (2 * math.pi)) * np.cos(2 * math.pi * s / L)).max()))
    order = math.log2(errs[0] / errs[2]) / 2.0

    # u = cubic + quadratic; its traction is linear along each edge
    def hess(x, y):
        return 1.8 * x + 1.6 * y - 1.4, 1.6 * x - y + 0.5, -x + 1.2 * y

    def pot(x, y):
        return 0.3 * x**3 + 0.8 * x * x * y - 0.5 * x * y * y + 0.2 * y**3 + 0.5 * x * y - 0.7 * x * x

    c = BoundaryCurve.rectangle(Grid2D.rectangle(16))
    x, y = c.vertices.T
    uxx, uxy, uyy = hess(x, y)
    nrm = c.vertex_normals
    trac = np.stack([uyy * nrm[:, 0] - uxy * nrm[:, 1], -uxy * nrm[:, 0] + uxx * nrm[:, 1]], axis=1)
    d = boundary_data_from_traction(BoundaryLoad.sampled(trac), c, project_affine=False)
    basis = np.stack([np.ones(c.n), x, y], axis=1)
    diff = d.f1 + pot(x, y)
    round_trip = float(np.abs(diff - basis @ np.linalg.lstsq(basis, diff, rcond=None)[0]).max())

    cont = 0.0
    for _ in range(10):
        p = point_load_potential(_balanced_four(rng, 16), sq)
        cont = max(cont, p.continuity_residual() / max(1.0, float(np.abs(p.sector_grad).max())))
    ok = gate and abs(order - 2.0) <= 0.1 and round_trip <= 1e-8 and cont <= 1e-12
    return ok, (
        f"balance gate {'ok' if gate else 'wrong'}; phi_integral order {order:.3f} (2); "
        f"round-trip affine residual {round_trip:.1e} (<= 1e-8); sector continuity {cont:.1e} (<= 1e-12)"
    )


def gradient_checks():
    rng = np.random.default_rng(108)
    cfg = ProblemConfig.load(PROBLEMS / "three_point.cfg")
    g = cfg.grid(64)
    data = cfg.boundary_data(g)
    worst = 0.0
    for mode, lam in (("finite", 100.0), ("limit", None)):
        prob = DiscreteProblem(g, data, mode, lam)
        z = prob.extension() + 0.01 * rng.standard_normal(prob.n_free)
        for eps in (1e-1, 1e-2, 1e-3):
            _, grad = prob.smooth(z, eps)
            for k in rng.choice(prob.n_free, 20, replace=False):
                e = np.zeros(prob.n_free)
                e[k] = FD_STEP
                fd = (prob.smooth(z + e, eps)[0] - prob.smooth(z - e, eps)[0]) / (2 * FD_STEP)
                worst = max(worst, abs(fd - grad[k]) / max(abs(grad[k]), 1e-12))
    return worst <= 1e-4, f"max rel err {worst:.1e} over 2 objectives x 3 widths x 20 coordinates (<= 1e-4)"


CRITERIA = [
    (1, "envelope oracle", 60.0, envelope_oracle),
    (2, "density inequality suite", 10.0, density_suite),
    (3, "airy identity", 5.0, airy_identity),
    (4, "laminate energy", 120.0, laminate_energy),
    (5, "bending lambda sweep", 600.0, bending_sweep),
    (6, "three-point lambda sweep", 900.0, three_point_sweep),
    (7, "boundary machinery", 10.0, boundary_machinery),
    (8, "gradient checks", 10.0, gradient_checks),
]


def evaluate(num, name, budget, fun):
    t0 = time.perf_counter()
    ok, detail = fun()
    dt = time.perf_counter() - t0
    ok = ok and dt <= budget
    line = f"{'PASS' if ok else 'FAIL'} [{num}] {name}: {detail}; {dt:.1f} s (budget {budget:.0f} s)"
    return ok, line


@pytest.mark.parametrize("num, name, budget, fun", CRITERIA, ids=[c[1].replace(" ", "_") for c in CRITERIA])
def test_acceptance(num, name, budget, fun, capsys):
    ok, line = evaluate(num, name, budget, fun)
    with capsys.disabled():
        print(f"\n{line}")
    assert ok, line


if __name__ == "__main__":
    results = [evaluate(*c) for c in CRITERIA]
    for _, line in results:
        print(line)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
