import numpy as np
import pytest

from airyrelax.density import (
    Density,
    EnergyParams,
    f_lambda,
    g_lambda,
    g_lambda_smooth,
    g_lambda_smooth_grad,
    limit_density,
    limit_density_smooth,
    limit_density_smooth_grad,
    qc_envelope,
)
from airyrelax.sym2 import Sym2, conjugate, det, frobenius_sq, rho0

from conftest import random_sym2

LAMBDAS = [1.0, 10.0, 100.0]


def fd_grad(fun, xi, h=1e-6):
    out = []
    for k in range(3):
        e = [0.0, 0.0, 0.0]
        e[k] = h
        plus = Sym2(xi.a + e[0], xi.b + e[1], xi.d + e[2])
        minus = Sym2(xi.a - e[0], xi.b - e[1], xi.d - e[2])
        out.append((fun(plus) - fun(minus)) / (2 * h))
    return np.array(out)


def test_params_validation():
    with pytest.raises(ValueError):
        EnergyParams(0.0)
    with pytest.raises(ValueError):
        EnergyParams(1.0, smooth_eps=-1.0)


@pytest.mark.parametrize(
    "xi, lam, expected",
    [(Sym2.zero(), 1.0, 0.0), (Sym2.diag(1.0, 1.0), 1.0, 3.0), (Sym2(0.0, 1.0, 0.0), 4.0, 6.0)],
)
def test_f_lambda_examples(xi, lam, expected):
    assert f_lambda(xi, EnergyParams(lam)) == expected


def test_f_lambda_discontinuous_at_zero():
    p = EnergyParams(2.0)
    assert f_lambda(Sym2(1e-300, 0.0, 0.0), p) == pytest.approx(2.0)


@pytest.mark.parametrize(
    "xi, lam, expected",
    [(Sym2.diag(1.0, 0.0), 4.0, 4.0), (Sym2.diag(1.0, 1.0), 1.0, 3.0), (Sym2.zero(), 7.0, 0.0)],
)
def test_qc_envelope_examples(xi, lam, expected):
    assert qc_envelope(xi, EnergyParams(lam)) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize(
    "xi, lam, expected",
    [(Sym2.diag(1.0, 0.0), 4.0, 2.0), (Sym2.diag(1.0, -1.0), 100.0, 3.8), (Sym2.zero(), 3.0, 0.0)],
)
def test_g_lambda_examples(xi, lam, expected):
    assert g_lambda(xi, EnergyParams(lam)) == pytest.approx(expected, abs=1e-14)


@pytest.mark.parametrize(
    "xi, expected", [(Sym2.diag(1.0, 0.0), 2.0), (Sym2.diag(1.0, -1.0), 4.0), (Sym2.zero(), 0.0)]
)
def test_limit_density_examples(xi, expected):
    assert limit_density(xi) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("lam", LAMBDAS)
def test_inequalities(rng, lam):
    p = EnergyParams(lam)
    xi = random_sym2(rng, 100_000, scale=np.sqrt(lam))
    g = g_lambda(xi, p)
    r = rho0(xi)
    assert np.all(0.5 * r <= g * (1 + 1e-13))
    assert np.all(qc_envelope(xi, p) <= f_lambda(xi, p) * (1 + 1e-13))
    low = r <= np.sqrt(lam)
    assert np.all(g[low] <= 2 * r[low] * (1 + 1e-13))


@pytest.mark.parametrize("lam", LAMBDAS)
def test_pointwise_limit_identity(rng, lam):
    p = EnergyParams(lam)
    xi = random_sym2(rng, 10_000)
    keep = rho0(xi) ** 2 <= lam
    xi = Sym2(xi.a[keep], xi.b[keep], xi.d[keep])
    gap = np.abs(g_lambda(xi, p) - limit_density(xi))
    np.testing.assert_allclose(gap, 2 * np.abs(det(xi)) / np.sqrt(lam), rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("lam", LAMBDAS)
def test_scaling_law(rng, lam):
    xi = random_sym2(rng, 10_000, scale=2 * np.sqrt(lam))
    lhs = qc_envelope(xi, EnergyParams(lam))
    rhs = lam * qc_envelope(xi / np.sqrt(lam), EnergyParams(1.0))
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12)


@pytest.mark.parametrize("lam", LAMBDAS)
def test_branch_continuity(rng, lam):
    xi0 = random_sym2(rng, 10_000)
    s = np.sqrt(lam) / rho0(xi0)
    xi = xi0 * s
    low = 2 * np.sqrt(lam) * rho0(xi) - 2 * np.abs(det(xi))
    high = frobenius_sq(xi) + lam
    np.testing.assert_allclose(low, high, rtol=1e-9)


@pytest.mark.parametrize("lam", LAMBDAS)
def test_quasi_triangle(rng, lam):
    p = EnergyParams(lam)
    A = random_sym2(rng, 100_000, scale=np.sqrt(lam))
    B = random_sym2(rng, 100_000, scale=np.sqrt(lam))
    assert np.all(g_lambda(A + B, p) <= 16 * (g_lambda(A, p) + g_lambda(B, p)))


@pytest.mark.parametrize("lam", LAMBDAS)
def test_rotation_invariance(rng, lam):
    p = EnergyParams(lam)
    xi = random_sym2(rng, 10_000, scale=np.sqrt(lam))
    th = rng.uniform(0, np.pi, 10_000)
    np.testing.assert_allclose(qc_envelope(conjugate(xi, th), p), qc_envelope(xi, p), rtol=1e-12)


def test_smooth_examples():
    assert g_lambda_smooth(Sym2.zero(), EnergyParams(1.0, 0.1)) == pytest.approx(0.38, abs=1e-15)
    val = g_lambda_smooth(Sym2.diag(1.0, 0.0), EnergyParams(4.0, 1e-6))
    assert val == pytest.approx(2.0, abs=1e-5)
    big = Sym2(5.0, 1.0, -3.0)
    p = EnergyParams(4.0, 0.01)
    assert g_lambda_smooth(big, p) == (frobenius_sq(big) + 4.0) / 2.0
    assert limit_density_smooth(Sym2.zero(), 0.1) == pytest.approx(0.4, abs=1e-15)
    assert limit_density_smooth(Sym2.diag(3.0, -4.0), 1e-6) == pytest.approx(14.0, abs=1e-5)


def test_smooth_rejects_zero_eps():
    with pytest.raises(ValueError):
        g_lambda_smooth(Sym2.zero(), EnergyParams(1.0, 0.0))
    with pytest.raises(ValueError):
        limit_density_smooth_grad(Sym2.zero(), 0.0)


def test_smooth_bounds_and_convergence(rng):
    xi = random_sym2(rng, 5000, scale=2.0)
    lam = 10.0
    exact = g_lambda(xi, EnergyParams(lam))
    gaps = []
    for eps in (1e-2, 1e-3, 1e-4):
        sm = g_lambda_smooth(xi, EnergyParams(lam, eps))
        assert np.all(sm >= exact - 4 * eps)
        # points near the branch interface may switch branch; exclude them
        far = np.abs(rho0(xi) - np.sqrt(lam)) > 10 * eps
        gaps.append(np.max(np.abs(sm - exact)[far]))
    assert gaps[1] < 0.2 * gaps[0] and gaps[2] < 0.2 * gaps[1]


def test_grad_at_zero_is_zero():
    g = g_lambda_smooth_grad(Sym2.zero(), EnergyParams(3.0, 0.1))
    assert (g.a, g.b, g.d) == (0.0, 0.0, 0.0)
    g = limit_density_smooth_grad(Sym2.zero(), 0.1)
    assert (g.a, g.b, g.d) == (0.0, 0.0, 0.0)


def test_grad_matches_fd_random(rng):
    p = EnergyParams(10.0, 1e-2)
    checked = 0
    for _ in range(200):
        xi = Sym2(*rng.standard_normal(3) * 2)
        if abs(rho0(xi) - np.sqrt(p.lam)) < 1e-2:
            continue
        fd = fd_grad(lambda m: g_lambda_smooth(m, p), xi)
        g = g_lambda_smooth_grad(xi, p)
        np.testing.assert_allclose([g.a, g.b, g.d], fd, rtol=1e-5, atol=1e-7)
        checked += 1
    assert checked > 150


def test_grad_large_lambda_close_to_limit():
    xi = Sym2.diag(2.0, 1.0)
    p = EnergyParams(1e6, 1e-3)
    fd = fd_grad(lambda m: g_lambda_smooth(m, p), xi)
    g = g_lambda_smooth_grad(xi, p)
    np.testing.assert_allclose([g.a, g.b, g.d], fd, rtol=1e-5, atol=1e-8)
    lim = limit_density_smooth_grad(xi, 1e-3)
    np.testing.assert_allclose([g.a, g.b, g.d], [lim.a, lim.b, lim.d], atol=2 * 2.0 / 1e3 + 1e-6)


def test_limit_grad_fd(rng):
    xi = Sym2.diag(3.0, -4.0)
    g = limit_density_smooth_grad(xi, 1e-3)
    fd = fd_grad(lambda m: limit_density_smooth(m, 1e-3), xi)
    np.testing.assert_allclose([g.a, g.b, g.d], fd, rtol=1e-5, atol=1e-8)
    np.testing.assert_allclose([g.a, g.b, g.d], [2.0, 0.0, -2.0], atol=1e-6)
    for _ in range(50):
        xi = Sym2(*rng.standard_normal(3))
        g = limit_density_smooth_grad(xi, 1e-2)
        fd = fd_grad(lambda m: limit_density_smooth(m, 1e-2), xi)
        np.testing.assert_allclose([g.a, g.b, g.d], fd, rtol=1e-5, atol=1e-7)


def test_named_density():
    xi = Sym2.diag(1.0, 0.5)
    assert Density("f_lambda", 4.0)(xi) == 5.25
    assert Density("qc_envelope", 4.0)(xi) == pytest.approx(5.0)
    with pytest.raises(ValueError):
        Density("nope")(xi)
