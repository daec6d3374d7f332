"""Energy densities on 2x2 symmetric matrices.

``f_lambda``      weight-penalised compliance density (discontinuous at 0)
``qc_envelope``   its quasiconvex envelope, in closed form
``g_lambda``      the envelope rescaled by ``lambda**-0.5``
``limit_density`` ``2 * rho0``, the Michell density

plus pseudo-Huber smoothed variants with closed-form gradients for the
grid solvers.  All functions accept :class:`Sym2` values whose fields are
floats or arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from airyrelax._kernels import MODE_FINITE, MODE_LIMIT, smooth_terms_numpy
from airyrelax.sym2 import Sym2, det, frobenius_sq, rho0


@dataclass(frozen=True)
class EnergyParams:
    """Lagrange multiplier ``lam`` and smoothing width ``smooth_eps``.

    ``interface_tol`` is the half-width of the band around
    ``rho0 = sqrt(lam)`` that diagnostics treat as "on the interface".
    """

    lam: float
    smooth_eps: float = 0.0
    interface_tol: float = 0.0

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if self.smooth_eps < 0:
            raise ValueError(f"smooth_eps must be >= 0, got {self.smooth_eps}")
        if self.interface_tol < 0:
            raise ValueError(f"interface_tol must be >= 0, got {self.interface_tol}")

    @property
    def sqrt_lam(self) -> float:
        return math.sqrt(self.lam)


def f_lambda(xi: Sym2, p: EnergyParams):
    """0 at the exact zero matrix, ``lam + |xi|^2`` everywhere else."""
    is_zero = (np.asarray(xi.a) == 0) & (np.asarray(xi.b) == 0) & (np.asarray(xi.d) == 0)
    out = np.where(is_zero, 0.0, p.lam + frobenius_sq(xi))
    return out if out.ndim else float(out)


def qc_envelope(xi: Sym2, p: EnergyParams):
    r = rho0(xi)
    low = 2.0 * p.sqrt_lam * r - 2.0 * np.abs(det(xi))
    high = frobenius_sq(xi) + p.lam
    out = np.where(r <= p.sqrt_lam, low, high)
    return out if out.ndim else float(out)


def g_lambda(xi: Sym2, p: EnergyParams):
    r = rho0(xi)
    low = 2.0 * (r - np.abs(det(xi)) / p.sqrt_lam)
    high = p.sqrt_lam + frobenius_sq(xi) / p.sqrt_lam
    out = np.where(r <= p.sqrt_lam, low, high)
    return out if out.ndim else float(out)


def limit_density(xi: Sym2):
    out = 2.0 * np.asarray(rho0(xi))
    return out if out.ndim else float(out)


def high_branch(xi: Sym2, p: EnergyParams):
    """True where the envelope uses the quadratic branch ``rho0 > sqrt(lam)``."""
    return rho0(xi) > p.sqrt_lam + p.interface_tol


def _need_eps(eps: float) -> float:
    if not eps > 0:
        raise ValueError("smoothing width must be > 0; use the exact density for eps = 0")
    return float(eps)


def _scalarize(x):
    x = np.asarray(x)
    return x if x.ndim else float(x)


def g_lambda_smooth(xi: Sym2, p: EnergyParams):
    """G_lambda with ``|l_i| -> sqrt(l_i^2 + eps^2)`` and ``|det| -> sqrt(det^2 + eps^4)``.

    The branch is chosen by the smoothed rho0; the quadratic branch is
    left unsmoothed.
    """
    eps = _need_eps(p.smooth_eps)
    val, _, _, _ = smooth_terms_numpy(xi.a, xi.b, xi.d, p.lam, eps, MODE_FINITE)
    return _scalarize(val)


def g_lambda_smooth_grad(xi: Sym2, p: EnergyParams) -> Sym2:
    """Partials of :func:`g_lambda_smooth` with respect to ``(a, b, d)``."""
    eps = _need_eps(p.smooth_eps)
    _, ga, gb, gd = smooth_terms_numpy(xi.a, xi.b, xi.d, p.lam, eps, MODE_FINITE)
    return Sym2(_scalarize(ga), _scalarize(gb), _scalarize(gd))


def limit_density_smooth(xi: Sym2, eps: float):
    eps = _need_eps(eps)
    val, _, _, _ = smooth_terms_numpy(xi.a, xi.b, xi.d, 1.0, eps, MODE_LIMIT)
    return _scalarize(val)


def limit_density_smooth_grad(xi: Sym2, eps: float) -> Sym2:
    eps = _need_eps(eps)
    _, ga, gb, gd = smooth_terms_numpy(xi.a, xi.b, xi.d, 1.0, eps, MODE_LIMIT)
    return Sym2(_scalarize(ga), _scalarize(gb), _scalarize(gd))


@dataclass(frozen=True)
class Density:
    """A named density bound to its parameter, callable on :class:`Sym2`.

    ``kind`` is one of ``"f_lambda"``, ``"qc_envelope"``, ``"g_lambda"``,
    ``"limit"``, ``"frobenius_sq"``.
    """

    kind: str
    lam: float = 1.0

    def __call__(self, xi: Sym2):
        p = EnergyParams(self.lam)
        if self.kind == "f_lambda":
            return f_lambda(xi, p)
        if self.kind == "qc_envelope":
            return qc_envelope(xi, p)
        if self.kind == "g_lambda":
            return g_lambda(xi, p)
        if self.kind == "limit":
            return limit_density(xi)
        if self.kind == "frobenius_sq":
            return _scalarize(frobenius_sq(xi))
        raise ValueError(f"unknown density kind {self.kind!r}")
