"""Closed-form algebra of 2x2 symmetric matrices.

A :class:`Sym2` stores the three independent entries ``a = m11``,
``b = m12 = m21`` and ``d = m22``.  The fields may be Python floats or
numpy arrays of a common shape, so every function below works pointwise
on whole fields of matrices.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np


@dataclass(frozen=True)
class Sym2:
    a: Any
    b: Any
    d: Any

    @classmethod
    def diag(cls, x, y) -> "Sym2":
        b = np.zeros_like(np.asarray(x, dtype=float)) if np.ndim(x) else 0.0
        return cls(x, b, y)

    @classmethod
    def zero(cls) -> "Sym2":
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def identity(cls) -> "Sym2":
        return cls(1.0, 0.0, 1.0)

    @classmethod
    def from_matrix(cls, m) -> "Sym2":
        m = np.asarray(m, dtype=float)
        return cls(m[..., 0, 0], 0.5 * (m[..., 0, 1] + m[..., 1, 0]), m[..., 1, 1])

    @classmethod
    def outer(cls, eta) -> "Sym2":
        """eta (x) eta for a vector eta = (e1, e2)."""
        e1, e2 = eta
        return cls(e1 * e1, e1 * e2, e2 * e2)

    def to_matrix(self) -> np.ndarray:
        a, b, d = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in self))
        out = np.empty(a.shape + (2, 2))
        out[..., 0, 0] = a
        out[..., 0, 1] = b
        out[..., 1, 0] = b
        out[..., 1, 1] = d
        return out

    def __iter__(self):
        yield self.a
        yield self.b
        yield self.d

    def __add__(self, other: "Sym2") -> "Sym2":
        return Sym2(self.a + other.a, self.b + other.b, self.d + other.d)

    def __sub__(self, other: "Sym2") -> "Sym2":
        return Sym2(self.a - other.a, self.b - other.b, self.d - other.d)

    def __neg__(self) -> "Sym2":
        return Sym2(-self.a, -self.b, -self.d)

    def __mul__(self, c) -> "Sym2":
        return Sym2(c * self.a, c * self.b, c * self.d)

    __rmul__ = __mul__

    def __truediv__(self, c) -> "Sym2":
        return Sym2(self.a / c, self.b / c, self.d / c)

    @property
    def trace(self):
        return self.a + self.d


def eigenvalues(m: Sym2):
    """Eigenvalues ``(l1, l2)`` with ``l1 >= l2``.

    Uses ``mean +/- hypot((a - d)/2, b)``, which stays accurate for nearly
    repeated eigenvalues.
    """
    mean = 0.5 * (m.a + m.d)
    r = np.hypot(0.5 * (m.a - m.d), m.b)
    return mean + r, mean - r


def rho0(m: Sym2):
    """Sum of absolute eigenvalues."""
    l1, l2 = eigenvalues(m)
    return np.abs(l1) + np.abs(l2)


def det(m: Sym2):
    return m.a * m.d - m.b * m.b


def frobenius(m: Sym2):
    return np.sqrt(m.a * m.a + 2.0 * m.b * m.b + m.d * m.d)


def frobenius_sq(m: Sym2):
    return m.a * m.a + 2.0 * m.b * m.b + m.d * m.d


def cof(m: Sym2) -> Sym2:
    """Cofactor matrix: swap the diagonal, negate the off-diagonal."""
    return Sym2(m.d, -m.b, m.a)


def conjugate(m: Sym2, theta) -> Sym2:
    """``R^T m R`` for ``R = [[cos t, -sin t], [sin t, cos t]]``."""
    c = np.cos(theta)
    s = np.sin(theta)
    # R^T m R written out entrywise
    a = c * c * m.a + 2.0 * c * s * m.b + s * s * m.d
    b = -c * s * m.a + (c * c - s * s) * m.b + c * s * m.d
    d = s * s * m.a - 2.0 * c * s * m.b + c * c * m.d
    return Sym2(a, b, d)


def eigenvector_angle(m: Sym2):
    """Angle of the eigenvector belonging to the larger eigenvalue."""
    return 0.5 * np.arctan2(2.0 * m.b, m.a - m.d)
