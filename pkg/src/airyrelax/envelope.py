"""Symmetric rank-one lamination search.

``R_{k+1} f(xi)`` is the infimum of ``t R_k f(xi1) + (1 - t) R_k f(xi2)``
over splits ``xi = t xi1 + (1 - t) xi2`` with ``xi1 - xi2 = alpha eta(x)eta``.
Every split lies on the line ``s -> xi + s eta(x)eta``; with endpoints
``s_minus <= 0 <= s_plus`` one has ``alpha = s_plus - s_minus`` and
``t = -s_minus / alpha``.  The search samples each line and takes the
lower convex hull of the samples at ``s = 0``, which is the minimum over
all sampled pairs.  The degenerate pair ``s = 0`` is always present, so a
level never exceeds the level below it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from airyrelax.density import EnergyParams, f_lambda
from airyrelax.sym2 import Sym2, eigenvector_angle

DensityFn = Callable[[Sym2], np.ndarray]

_GOLDEN = 0.5 * (math.sqrt(5.0) - 1.0)
_CHUNK_ELEMS = 2_000_000


@dataclass(frozen=True)
class LaminationGrid:
    """Discretisation of the lamination infimum.

    n_alpha:   sampled offsets per side of each rank-one line
    alpha_max: largest sampled offset |s|
    n_theta:   uniformly spaced directions in [0, pi); the eigenvector
               directions of the matrix being split are always added
    n_t:       golden-section iterations of the final refinement pass
    """

    n_t: int = 25
    n_alpha: int = 24
    alpha_max: float = 4.0
    n_theta: int = 8

    def __post_init__(self):
        if min(self.n_t, self.n_alpha, self.n_theta) < 2:
            raise ValueError("all LaminationGrid counts must be >= 2")
        if not self.alpha_max > 0:
            raise ValueError("alpha_max must be positive")

    @classmethod
    def for_lambda(cls, lam: float, **kw) -> "LaminationGrid":
        return cls(alpha_max=4.0 * math.sqrt(lam), **kw)


@dataclass(frozen=True)
class SplitCandidate:
    t: float
    alpha: float
    eta_angle: float
    value: float

    def children(self, xi: Sym2) -> tuple[Sym2, Sym2]:
        c, s = math.cos(self.eta_angle), math.sin(self.eta_angle)
        # axis directions must give exactly diagonal children
        c = 0.0 if abs(c) < 1e-15 else c
        s = 0.0 if abs(s) < 1e-15 else s
        eta = Sym2.outer((c, s))
        xi1 = xi + eta * ((1.0 - self.t) * self.alpha)
        xi2 = xi - eta * (self.t * self.alpha)
        return xi1, xi2


def _flat(xi: Sym2):
    a, b, d = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in xi))
    return a.ravel(), b.ravel(), d.ravel()


def _line_samples(a, b, d, grid: LaminationGrid):
    """Directions and offsets for a batch of matrices.

    Returns ``cos, sin`` of shape (n, n_dir) and offsets of shape
    (n, n_dir, n_s).  Besides the uniform offsets, each line gets the point
    where the determinant vanishes and the point nearest to zero.
    """
    n = a.size
    uniform = np.arange(grid.n_theta) * (math.pi / grid.n_theta)
    eig = eigenvector_angle(Sym2(a, b, d))
    theta = np.concatenate(
        [np.broadcast_to(uniform, (n, grid.n_theta)), eig[:, None], eig[:, None] + 0.5 * math.pi], axis=1
    )
    c = np.cos(theta)
    s = np.sin(theta)
    c[np.abs(c) < 1e-15] = 0.0
    s[np.abs(s) < 1e-15] = 0.0
    ee_a, ee_b, ee_d = c * c, c * s, s * s
    # eta^T xi eta and eta^T cof(xi) eta
    q = a[:, None] * ee_a + 2.0 * b[:, None] * ee_b + d[:, None] * ee_d
    qc = d[:, None] * ee_a - 2.0 * b[:, None] * ee_b + a[:, None] * ee_d
    dt = (a * d - b * b)[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        s_det = np.where(qc != 0.0, -dt / qc, 0.0)
    s_min = -q
    cap = 2.0 * grid.alpha_max
    s_det = np.clip(s_det, -cap, cap)
    s_min = np.clip(s_min, -cap, cap)
    base = np.linspace(-grid.alpha_max, grid.alpha_max, 2 * grid.n_alpha + 1)
    base[grid.n_alpha] = 0.0
    offsets = np.concatenate(
        [np.broadcast_to(base, theta.shape + base.shape), s_det[..., None], s_min[..., None]], axis=-1
    )
    return theta, c, s, offsets


def _hull_at_zero(offsets, values, n_half):
    """Minimum over sample pairs straddling 0 of the chord value at 0.

    offsets, values: (m, n_s); the first ``2*n_half + 1`` columns are the
    sorted uniform offsets (centre column is 0), the rest are extra points
    of either sign.  Returns (best value, s_minus, s_plus).
    """
    n_base = 2 * n_half + 1
    extra_o = offsets[:, n_base:]
    extra_v = values[:, n_base:]
    neg_o = np.concatenate([offsets[:, : n_half + 1], extra_o], axis=1)
    neg_v = np.concatenate([values[:, : n_half + 1], np.where(extra_o <= 0.0, extra_v, np.inf)], axis=1)
    pos_o = np.concatenate([offsets[:, n_half:n_base], extra_o], axis=1)
    pos_v = np.concatenate([values[:, n_half:n_base], np.where(extra_o >= 0.0, extra_v, np.inf)], axis=1)
    sm = neg_o[:, :, None]
    sp = pos_o[:, None, :]
    vm = neg_v[:, :, None]
    vp = pos_v[:, None, :]
    width = sp - sm
    with np.errstate(divide="ignore", invalid="ignore"):
        chord = np.where(width > 0.0, (sp * vm - sm * vp) / width, np.where(sm == 0.0, vm, np.inf))
    chord = np.where(np.isnan(chord), np.inf, chord)
    m = offsets.shape[0]
    flat = chord.reshape(m, -1)
    idx = np.argmin(flat, axis=1)
    rows = np.arange(m)
    best = flat[rows, idx]
    i, j = np.divmod(idx, pos_o.shape[1])
    return best, neg_o[rows, i], pos_o[rows, j]


def _level_values(f: DensityFn, a, b, d, k: int, grid: LaminationGrid, with_split: bool = False):
    """Grid-only R_k f at a flat batch of matrices."""
    # all evaluations happen on a lattice of spacing 1e-6 * sqrt(lambda);
    # this also makes children that should vanish exactly zero
    quantum = 1e-6 * grid.alpha_max / 4.0
    keys = np.round(np.stack([a, b, d], axis=1) / quantum)
    if k == 0:
        q = keys * quantum
        return np.asarray(f(Sym2(q[:, 0], q[:, 1], q[:, 2])), dtype=float) * np.ones_like(a)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.ravel()
    ua, ub, ud = (keys[first] * quantum).T
    theta, c, s, off = _line_samples(ua, ub, ud, grid)
    ca = (c * c)[..., None]
    cb = (c * s)[..., None]
    cd = (s * s)[..., None]
    child_a = ua[:, None, None] + off * ca
    child_b = ub[:, None, None] + off * cb
    child_d = ud[:, None, None] + off * cd
    vals = _level_values(f, child_a.ravel(), child_b.ravel(), child_d.ravel(), k - 1, grid).reshape(off.shape)
    n_u, n_dir, n_s = off.shape
    lines_off = off.reshape(n_u * n_dir, n_s)
    lines_val = vals.reshape(n_u * n_dir, n_s)
    best = np.empty(n_u * n_dir)
    smin = np.empty_like(best)
    splus = np.empty_like(best)
    step = max(1, _CHUNK_ELEMS // (n_s * n_s))
    for lo in range(0, n_u * n_dir, step):
        hi = lo + step
        best[lo:hi], smin[lo:hi], splus[lo:hi] = _hull_at_zero(lines_off[lo:hi], lines_val[lo:hi], grid.n_alpha)
    best = best.reshape(n_u, n_dir)
    jdir = np.argmin(best, axis=1)
    rows = np.arange(n_u)
    out = best[rows, jdir][inverse]
    if not with_split:
        return out
    sm = smin.reshape(n_u, n_dir)[rows, jdir][inverse]
    sp = splus.reshape(n_u, n_dir)[rows, jdir][inverse]
    th = theta[rows, jdir][inverse]
    return out, sm, sp, th


def _scalar_level(f, xi_a, xi_b, xi_d, k, grid):
    return float(_level_values(f, np.array([xi_a]), np.array([xi_b]), np.array([xi_d]), k, grid)[0])


def _golden_min(fun, lo, hi, iters):
    x1 = hi - _GOLDEN * (hi - lo)
    x2 = lo + _GOLDEN * (hi - lo)
    f1, f2 = fun(x1), fun(x2)
    for _ in range(iters):
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - _GOLDEN * (hi - lo)
            f1 = fun(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + _GOLDEN * (hi - lo)
            f2 = fun(x2)
    return (x1, f1) if f1 <= f2 else (x2, f2)


def _split_search(f: DensityFn, xi: Sym2, k: int, grid: LaminationGrid) -> SplitCandidate:
    """Grid search for the best level-k split, then a golden-section pass."""
    a, b, d = (float(v) for v in xi)
    best, sm, sp, th = _level_values(f, np.array([a]), np.array([b]), np.array([d]), k, grid, with_split=True)
    best, sm, sp, th = float(best[0]), float(sm[0]), float(sp[0]), float(th[0])
    c, s = math.cos(th), math.sin(th)
    ea, eb, ed = c * c, c * s, s * s

    def child(off):
        return _scalar_level(f, a + off * ea, b + off * eb, d + off * ed, k - 1, grid)

    h = grid.alpha_max / grid.n_alpha
    if sp > 0.0 and sm < 0.0:
        v_minus = child(sm)

        def chord_plus(x):
            return (x * v_minus - sm * child(x)) / (x - sm)

        sp_new, val = _golden_min(chord_plus, max(sp - h, 0.5 * sp), sp + h, grid.n_t)
        if val < best:
            sp, best = sp_new, val
        v_plus = child(sp)

        def chord_minus(x):
            return (sp * child(x) - x * v_plus) / (sp - x)

        sm_new, val = _golden_min(chord_minus, sm - h, min(sm + h, 0.5 * sm), grid.n_t)
        if val < best:
            sm, best = sm_new, val
    alpha = sp - sm
    if alpha <= 0.0:
        return SplitCandidate(t=1.0, alpha=0.0, eta_angle=th, value=best)
    return SplitCandidate(t=-sm / alpha, alpha=alpha, eta_angle=th, value=best)


def rsym_step(f: DensityFn, xi: Sym2, grid: LaminationGrid) -> float:
    """One lamination level applied to ``f`` itself (never exceeds ``f(xi)``)."""
    return min(_split_search(f, xi, 1, grid).value, float(f(xi)))


def rsym_best_split(f: DensityFn, xi: Sym2, k: int, grid: LaminationGrid) -> SplitCandidate:
    if k < 1:
        raise ValueError("k must be >= 1")
    return _split_search(f, xi, k, grid)


def rsym_sequence(f: DensityFn, xi: Sym2, k: int, grid: LaminationGrid) -> list[float]:
    """Values ``[R_0 f, R_1 f, ..., R_k f]`` at ``xi``, nonincreasing."""
    if k < 1:
        raise ValueError("k must be >= 1")
    out = [float(f(xi))]
    for level in range(1, k + 1):
        out.append(min(out[-1], _split_search(f, xi, level, grid).value))
    return out


def rsym_iterate(f: DensityFn, xi: Sym2, k: int, grid: LaminationGrid) -> float:
    return rsym_sequence(f, xi, k, grid)[-1]


def rsgl_split(xi: Sym2, lam: float) -> tuple[float, list[SplitCandidate]]:
    """Explicit two-level laminate of ``diag(x, y)`` attaining the envelope.

    Outer split in direction e2 between ``diag(x, y/beta)`` (fraction beta)
    and ``diag(x, 0)``; the latter splits in direction e1 between
    ``diag(x/alpha, 0)`` (fraction alpha) and 0, with
    ``alpha = |x|/sqrt(lam)`` and ``beta = |y|/(sqrt(lam) - |x|)``.
    """
    x, b, y = (float(v) for v in xi)
    if abs(b) > 1e-12 * max(1.0, abs(x), abs(y)):
        raise ValueError("rsgl_split needs a diagonal matrix; diagonalise first")
    sq = math.sqrt(lam)
    if abs(x) + abs(y) >= sq:
        raise ValueError("rsgl_split needs rho0(xi) < sqrt(lambda)")
    if x == 0.0 and y == 0.0:
        raise ValueError("rsgl_split needs a nonzero matrix")
    p = EnergyParams(lam)
    F = lambda m: f_lambda(m, p)  # noqa: E731

    splits = []
    if x != 0.0:
        al = abs(x) / sq
        xi2 = Sym2.diag(x / al, 0.0)
        inner_value = al * F(xi2)
        inner = SplitCandidate(t=al, alpha=x / al, eta_angle=0.0, value=inner_value)
    else:
        inner_value = 0.0
        inner = None
    if y != 0.0:
        beta = abs(y) / (sq - abs(x))
        xi3 = Sym2.diag(x, y / beta)
        value = beta * F(xi3) + (1.0 - beta) * inner_value
        splits.append(SplitCandidate(t=beta, alpha=y / beta, eta_angle=0.5 * math.pi, value=value))
    else:
        value = inner_value
    if inner is not None:
        splits.append(inner)
    return value, splits
