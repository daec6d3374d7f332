"""Relaxed compliance and Michell functionals on Airy potentials."""

from airyrelax.sym2 import Sym2, cof, conjugate, det, eigenvalues, frobenius, rho0
from airyrelax.density import (
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

__version__ = "0.1.0"

__all__ = [
    "Sym2",
    "cof",
    "conjugate",
    "det",
    "eigenvalues",
    "frobenius",
    "rho0",
    "EnergyParams",
    "f_lambda",
    "g_lambda",
    "g_lambda_smooth",
    "g_lambda_smooth_grad",
    "limit_density",
    "limit_density_smooth",
    "limit_density_smooth_grad",
    "qc_envelope",
]
