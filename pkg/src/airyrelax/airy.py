"""Airy potentials and traction boundary data.

A stress ``sigma`` is divergence free exactly when ``sigma = cof(hess u)`` for
a potential ``u``.  With ``x^perp = (-x2, x1)`` and ``g = sigma n`` on the
boundary, ``g^perp`` is the tangential derivative of ``grad u``.  Integrating it
once along the curve gives ``grad u`` up to a constant, and integrating
``tau`` against that gives ``u`` up to an affine function.  Both integrals
close around the boundary exactly when ``g`` is balanced.  The clamped data
are minus these integrals, i.e. the traces of ``-u``; the energies are even,
so the sign is immaterial.

The boundary is a closed, counterclockwise polyline.  Sampled tractions are
taken to be piecewise linear between vertices and point loads sit on vertices.
Every integral below is exact for that data, so the closure conditions are
exact restatements of force and moment balance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from airyrelax.grid import Grid2D, ScalarField, hessian_field, stress_divergence
from airyrelax.sym2 import Sym2, cof

__all__ = [
    "BoundaryCurve",
    "BoundaryLoad",
    "BoundaryData",
    "BalanceError",
    "PointLoadPotential",
    "balance_check",
    "balance_residuals",
    "boundary_data_from_traction",
    "phi_integral",
    "point_load_potential",
    "stress_from_potential",
    "stress_divergence",
]

DEFAULT_TOL = 1e-9


class BalanceError(ValueError):
    """Load with a nonzero resultant force or moment."""


def perp(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


class BoundaryCurve:
    """Closed counterclockwise polyline; segment k runs from vertex k to vertex k+1 (mod n)."""

    def __init__(self, vertices):
        v = np.asarray(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise ValueError("vertices must be an (n, 2) array with n >= 3")
        self.vertices = v
        edge = np.roll(v, -1, axis=0) - v
        self.lengths = np.hypot(edge[:, 0], edge[:, 1])
        if self.lengths.max() == 0.0:
            raise ValueError("degenerate curve")
        safe = np.where(self.lengths > 0.0, self.lengths, 1.0)
        self.tangents = edge / safe[:, None]
        # tau = n^perp, so n = (tau_2, -tau_1)
        self.normals = np.stack([self.tangents[:, 1], -self.tangents[:, 0]], axis=1)
        area = 0.5 * np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1])
        if not area > 0.0:
            raise ValueError("curve must be positively oriented (counterclockwise)")
        self.area = float(area)
        self.live = self.lengths > 1e-14 * self.lengths.max()

    @classmethod
    def rectangle(cls, grid: Grid2D) -> "BoundaryCurve":
        """Boundary ring of a rectangular grid, corners duplicated (zero-length segments)."""
        return cls(grid.ring_points())

    @classmethod
    def circle(cls, n: int, radius: float = 1.0, center=(0.0, 0.0)) -> "BoundaryCurve":
        s = 2 * math.pi * np.arange(n) / n
        return cls(np.stack([center[0] + radius * np.cos(s), center[1] + radius * np.sin(s)], axis=1))

    @property
    def n(self) -> int:
        return self.vertices.shape[0]

    @property
    def length(self) -> float:
        return float(self.lengths.sum())

    @property
    def arclength(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.lengths)[:-1]])

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid weight of each vertex."""
        return 0.5 * (self.lengths + np.roll(self.lengths, 1))

    def vertex_average(self, seg_values: np.ndarray) -> np.ndarray:
        """Per-vertex mean of the two adjacent segment values, skipping zero-length segments."""
        seg_values = np.asarray(seg_values, dtype=float)
        prev = np.roll(seg_values, 1, axis=0)
        lp = np.roll(self.live, 1)
        ln = self.live
        shape = (-1,) + (1,) * (seg_values.ndim - 1)
        wp = lp.astype(float).reshape(shape)
        wn = ln.astype(float).reshape(shape)
        return (wp * prev + wn * seg_values) / np.maximum(wp + wn, 1.0)

    @property
    def vertex_normals(self) -> np.ndarray:
        m = self.vertex_average(self.normals)
        return m / np.hypot(m[:, 0], m[:, 1])[:, None]

    def locate(self, point, tol: float = 1e-9) -> tuple[int, int]:
        """Vertex index and the count of coincident copies (1 regular, 2 duplicated corner)."""
        d = np.hypot(*(self.vertices - np.asarray(point, dtype=float)).T)
        scale = tol * max(1.0, float(np.abs(self.vertices).max()))
        hits = np.flatnonzero(d <= scale)
        if hits.size == 0:
            raise ValueError(f"load point {tuple(point)} is not a vertex of the boundary curve")
        if hits.size == 1:
            return int(hits[0]), 1
        if hits.size == 2:
            a, b = int(hits[0]), int(hits[1])
            if (a + 1) % self.n == b:
                return a, 2
            if (b + 1) % self.n == a:
                return b, 2
        raise ValueError(f"load point {tuple(point)} matches non-adjacent vertices")


@dataclass(frozen=True)
class BoundaryLoad:
    """Either per-vertex traction densities or a list of point loads."""

    kind: str
    traction: np.ndarray | None = None
    points: np.ndarray | None = None
    forces: np.ndarray | None = None

    @classmethod
    def sampled(cls, traction) -> "BoundaryLoad":
        g = np.asarray(traction, dtype=float)
        if g.ndim != 2 or g.shape[1] != 2:
            raise ValueError("traction must be (n, 2)")
        return cls("sampled", traction=g)

    @classmethod
    def point_loads(cls, points, forces) -> "BoundaryLoad":
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        f = np.asarray(forces, dtype=float).reshape(-1, 2)
        if p.shape != f.shape:
            raise ValueError("points and forces must pair up")
        return cls("point", points=p, forces=f)

    @classmethod
    def zero(cls, curve: BoundaryCurve) -> "BoundaryLoad":
        return cls.sampled(np.zeros((curve.n, 2)))


@dataclass
class BoundaryData:
    """Clamped-plate data on the curve vertices.

    ``f1`` is the boundary value and ``f2`` the outward normal derivative of
    the potential.  ``grad`` is the full boundary gradient, so that
    ``f2 = grad . n``.
    """

    f1: np.ndarray
    f2: np.ndarray
    grad: np.ndarray

    def closure_mismatch(self) -> float:
        return float(abs(self.f1[-1] - self.f1[0]))


def balance_residuals(load: BoundaryLoad, curve: BoundaryCurve) -> tuple[np.ndarray, float, float]:
    """Resultant force, resultant moment ``int x^perp . g`` and the load scale."""
    if load.kind == "point":
        v, x = load.forces, load.points
        force = v.sum(axis=0)
        moment = float(np.sum(perp(x) * v))
        scale = float(np.hypot(v[:, 0], v[:, 1]).sum())
        reach = float(np.hypot(x[:, 0], x[:, 1]).max()) if len(x) else 0.0
        return force, moment, scale * max(1.0, reach)
    g = _check_sampled(load, curve)
    ln = curve.lengths[:, None]
    g1 = np.roll(g, -1, axis=0)
    force = np.sum(ln * 0.5 * (g + g1), axis=0)
    a0 = perp(curve.vertices)
    a1 = np.roll(a0, -1, axis=0)
    # exact for piecewise-linear x and g
    moment = float(
        np.sum(curve.lengths / 6.0 * (2 * np.sum(a0 * g, 1) + np.sum(a0 * g1, 1) + np.sum(a1 * g, 1) + 2 * np.sum(a1 * g1, 1)))
    )
    mag = float(np.sum(curve.weights * np.hypot(g[:, 0], g[:, 1])))
    reach = float(np.hypot(*curve.vertices.T).max())
    return force, moment, mag * max(1.0, reach)


def balance_check(load: BoundaryLoad, curve: BoundaryCurve, tol: float = DEFAULT_TOL) -> bool:
    force, moment, scale = balance_residuals(load, curve)
    if scale == 0.0:
        return True
    return bool(np.hypot(*force) <= tol * scale and abs(moment) <= tol * scale)


def _check_sampled(load: BoundaryLoad, curve: BoundaryCurve) -> np.ndarray:
    g = load.traction
    if g.shape != (curve.n, 2):
        raise ValueError(f"sampled traction needs {curve.n} rows, got {g.shape[0]}")
    return g


def phi_integral(values, curve: BoundaryCurve, tol: float = DEFAULT_TOL) -> np.ndarray:
    """First integral along the curve from vertex 0, shifted to zero mean.

    ``values`` are per-vertex samples of a piecewise-linear density.  The
    output is exact at the vertices and its mean over the curve is zero.
    """
    phi = np.asarray(values, dtype=float)
    ln = curve.lengths
    phi1 = np.roll(phi, -1)
    inc = 0.5 * ln * (phi + phi1)
    total = float(inc.sum())
    scale = float(np.sum(curve.weights * np.abs(phi)))
    if abs(total) > tol * max(scale, 1e-300) and scale > 0.0:
        raise BalanceError(f"input has nonzero integral {total:.3e} along the curve")
    F = np.concatenate([[0.0], np.cumsum(inc)[:-1]])
    F1 = np.roll(F, -1)
    F1[-1] = F[-1] + inc[-1]
    mid = F + ln * (3 * phi + phi1) / 8.0
    mean = float(np.sum(ln * (F + 4 * mid + F1) / 6.0)) / curve.length
    return F - mean


def _load_positions(load: BoundaryLoad, curve: BoundaryCurve) -> np.ndarray:
    """First segment index carrying each load in the cumulative sum.

    A load at a regular vertex k enters at segment k; at a corner pair
    (k, k+1) it enters at k+1, after the zero-length segment.  A load at
    vertex 0 enters at n, i.e. only through the closure.
    """
    pos = []
    for x in load.points:
        k, copies = curve.locate(x)
        p = k + 1 if copies == 2 else k
        pos.append(curve.n if p % curve.n == 0 else p)
    return np.asarray(pos, dtype=int)


def _segment_values(load: BoundaryLoad, curve: BoundaryCurve) -> np.ndarray:
    """Piecewise-constant first integral of ``g^perp`` per segment (before the mean shift)."""
    pos = _load_positions(load, curve)
    jumps = np.zeros((curve.n + 1, 2))
    np.add.at(jumps, pos, perp(load.forces))
    return np.cumsum(jumps, axis=0)[: curve.n]


def boundary_data_from_traction(
    load: BoundaryLoad,
    curve: BoundaryCurve,
    base: int = 0,
    project_affine: bool = True,
    tol: float = DEFAULT_TOL,
) -> BoundaryData:
    """Clamped-plate boundary data of a balanced traction.

    ``base`` picks the vertex where both integrals start.  With
    ``project_affine`` the affine part of ``f1`` (in the trapezoid inner
    product on the curve) is removed together with the matching constant
    gradient, which makes the result independent of ``base``.
    """
    force, moment, scale = balance_residuals(load, curve)
    if scale > 0.0:
        if np.hypot(*force) > tol * scale:
            raise BalanceError(f"resultant force {force.tolist()} does not vanish: load is not balanced")
        if abs(moment) > tol * scale:
            raise BalanceError(f"resultant moment {moment:.6g} does not vanish: load is not balanced")
    n = curve.n
    base = int(base) % n
    if base:
        rolled = BoundaryCurve(np.roll(curve.vertices, -base, axis=0))
        if load.kind == "sampled":
            rl = BoundaryLoad.sampled(np.roll(load.traction, -base, axis=0))
        else:
            rl = load
        out = boundary_data_from_traction(rl, rolled, 0, project_affine, tol)
        return BoundaryData(np.roll(out.f1, base), np.roll(out.f2, base), np.roll(out.grad, base, axis=0))

    ln = curve.lengths
    L = curve.length
    if load.kind == "sampled":
        gp = perp(_check_sampled(load, curve))
        gp1 = np.roll(gp, -1, axis=0)
        inc = 0.5 * ln[:, None] * (gp + gp1)
        F = np.concatenate([np.zeros((1, 2)), np.cumsum(inc, axis=0)[:-1]])
        F1 = F + inc
        Fm = F + ln[:, None] * (3 * gp + gp1) / 8.0
        c = np.sum(ln[:, None] * (F + 4 * Fm + F1) / 6.0, axis=0) / L
        F, F1, Fm = F - c, F1 - c, Fm - c
        seg_int = ln * np.sum(curve.tangents * (F + 4 * Fm + F1) / 6.0, axis=1)
        vertex_F = F
    else:
        seg = _segment_values(load, curve)
        c = np.sum(ln[:, None] * seg, axis=0) / L
        seg = seg - c
        seg_int = ln * np.sum(curve.tangents * seg, axis=1)
        vertex_F = curve.vertex_average(seg)
    G = np.concatenate([[0.0], np.cumsum(seg_int)[:-1]])
    f1 = -G
    grad = -vertex_F
    if project_affine:
        f1, grad = _project_affine(f1, grad, curve)
    f2 = np.sum(grad * curve.vertex_normals, axis=1)
    return BoundaryData(f1, f2, grad)


def _project_affine(f1, grad, curve: BoundaryCurve):
    w = curve.weights
    x = curve.vertices
    basis = np.stack([np.ones(curve.n), x[:, 0], x[:, 1]], axis=1)
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(basis * sw[:, None], f1 * sw, rcond=None)
    return f1 - basis @ coef, grad - coef[1:]


def stress_from_potential(u: ScalarField) -> Sym2:
    """``sigma = cof(hess u)`` at every node."""
    return cof(hessian_field(u))


def _transversal(v, n_prev, n_next, tol=1e-12) -> int:
    """+1 if ``x + t v`` enters the domain for small t > 0, -1 if for t < 0, 0 if tangential."""
    convex = n_prev[0] * n_next[1] - n_prev[1] * n_next[0] >= -1e-14

    def inside(w):
        a, b = np.dot(w, n_prev), np.dot(w, n_next)
        return (a < -tol and b < -tol) if convex else (a < -tol or b < -tol)

    def outside(w):
        a, b = np.dot(w, n_prev), np.dot(w, n_next)
        return (a > tol or b > tol) if convex else (a > tol and b > tol)

    v = np.asarray(v, dtype=float) / np.hypot(*v)
    if inside(v) and outside(-v):
        return 1
    if inside(-v) and outside(v):
        return -1
    return 0


class PointLoadPotential:
    """Continuous piecewise-affine potential of a balanced set of point loads.

    The domain is split into one sector per load, bounded by the boundary
    arc between consecutive loads and the segments ``[x_i, xbar_i]``, where
    the potential is affine, and an inner polygon through the ``xbar_i``
    that is fan-triangulated from its centroid.
    """

    def __init__(self, points, xbar, sector_value, sector_grad, arcs, curve):
        self.points = points
        self.xbar = xbar
        self.sector_value = sector_value
        self.sector_grad = sector_grad
        self.arcs = arcs
        self.curve = curve
        self.center = xbar.mean(axis=0)
        inner_vals = np.array([self.sector_eval(i, xbar[i]) for i in range(len(points))])
        self.center_value = float(inner_vals.mean())
        self.inner_values = inner_vals
        m = len(points)
        poly_area = 0.5 * float(np.sum(xbar[:, 0] * np.roll(xbar[:, 1], -1) - np.roll(xbar[:, 0], -1) * xbar[:, 1]))
        # two loads leave a segment, not a polygon: the sectors then meet directly
        self.has_fan = m >= 3
        if self.has_fan and not poly_area > 0.0:
            raise ValueError("inner polygon must be counterclockwise with positive area")
        self.fan_grad = np.zeros((m, 2))
        for i in range(m if self.has_fan else 0):
            j = (i + 1) % m
            A = np.array([xbar[i] - self.center, xbar[j] - self.center])
            rhs = np.array([inner_vals[i] - self.center_value, inner_vals[j] - self.center_value])
            self.fan_grad[i] = np.linalg.solve(A, rhs)

    def sector_eval(self, i: int, x) -> float:
        return float(self.sector_value[i] + np.dot(self.sector_grad[i], np.asarray(x) - self.points[i]))

    def boundary_values(self) -> np.ndarray:
        """Potential at every curve vertex."""
        out = np.empty(self.curve.n)
        for i, arc in enumerate(self.arcs):
            for k in arc:
                out[k] = self.sector_eval(i, self.curve.vertices[k])
        return out

    def edges(self):
        """Interior edges as (start, end, grad_left, grad_right)."""
        m = len(self.points)
        out = []
        for i in range(m):
            out.append((self.points[i], self.xbar[i], self.sector_grad[i - 1], self.sector_grad[i]))
            if self.has_fan:
                out.append((self.xbar[i], self.xbar[(i + 1) % m], self.sector_grad[i], self.fan_grad[i]))
                out.append((self.center, self.xbar[i], self.fan_grad[i - 1], self.fan_grad[i]))
        if not self.has_fan and m == 2:
            out.append((self.xbar[0], self.xbar[1], self.sector_grad[0], self.sector_grad[1]))
        return out

    def continuity_residual(self, samples: int = 11) -> float:
        """Largest value mismatch between neighbouring sectors along the load segments."""
        worst = 0.0
        m = len(self.points)
        for i in range(m):
            for s in np.linspace(0.0, 1.0, samples):
                x = self.points[i] + s * (self.xbar[i] - self.points[i])
                worst = max(worst, abs(self.sector_eval(i - 1, x) - self.sector_eval(i, x)))
        return worst

    def limit_energy(self) -> float:
        """``2 rho0`` mass of the Hessian, which lives on the interior edges."""
        total = 0.0
        for a, b, g0, g1 in self.edges():
            e = np.asarray(b) - np.asarray(a)
            ell = float(np.hypot(*e))
            if ell == 0.0:
                continue
            nu = np.array([-e[1], e[0]]) / ell
            total += 2.0 * ell * abs(float(np.dot(np.asarray(g1) - np.asarray(g0), nu)))
        return total


def point_load_potential(
    load: BoundaryLoad,
    curve: BoundaryCurve,
    inner_polygon=None,
    depth: float = 0.1,
    tol: float = DEFAULT_TOL,
) -> PointLoadPotential:
    """Piecewise-affine potential whose traces are the boundary data of ``load``.

    ``inner_polygon`` lists one point ``xbar_i`` per load, in the order the
    loads appear along the curve, each on the line through ``x_i`` along
    ``v_i``.  When omitted, ``xbar_i = x_i + depth * v_i / |v_i|`` on the
    inward side.  The value in sector i is ``f1(x_i) + grad_i . (x - x_i)``.
    """
    if load.kind != "point":
        raise ValueError("point_load_potential needs point loads")
    if not balance_check(load, curve, tol):
        raise BalanceError("point loads are not balanced")
    pos = _load_positions(load, curve)
    n = curve.n
    order = np.argsort(pos, kind="stable")
    if np.unique(pos).size != pos.size:
        raise ValueError("two loads share a boundary point; merge them first")
    pts = load.points[order]
    vs = load.forces[order]
    pos = pos[order]
    data = boundary_data_from_traction(load, curve, project_affine=False, tol=tol)
    seg = _segment_values(load, curve)
    seg = seg - np.sum(curve.lengths[:, None] * seg, axis=0) / curve.length

    m = len(pts)
    xbar = np.empty((m, 2))
    for i, (x, v) in enumerate(zip(pts, vs)):
        k = pos[i] % n
        prev = k - 1
        while not curve.live[prev % n]:
            prev -= 1
        nxt = k
        while not curve.live[nxt % n]:
            nxt += 1
        side = _transversal(v, curve.normals[prev % n], curve.normals[nxt % n])
        if side == 0:
            raise ValueError(f"load {v.tolist()} at {x.tolist()} is tangential to the boundary")
        if inner_polygon is None:
            xbar[i] = x + side * depth * v / np.hypot(*v)
        else:
            xbar[i] = np.asarray(inner_polygon, dtype=float)[i]
            d = xbar[i] - x
            if abs(d[0] * v[1] - d[1] * v[0]) > 1e-12 * np.hypot(*d) * np.hypot(*v):
                raise ValueError(f"inner vertex {i} is not on the load line")

    values = np.empty(m)
    grads = np.empty((m, 2))
    arcs = []
    for i in range(m):
        k0 = pos[i] % n
        k1 = pos[(i + 1) % m] % n
        grads[i] = -seg[k0]
        # f1 is continuous, so any copy of the load vertex has the right value
        values[i] = data.f1[int(curve.locate(pts[i])[0])]
        arc = []
        k = k0
        while True:
            arc.append(k)
            if k == k1 and len(arc) > 1:
                break
            k = (k + 1) % n
            if m == 1 and k == k0:
                break
        arcs.append(arc)
    return PointLoadPotential(pts, xbar, values, grads, arcs, curve)
