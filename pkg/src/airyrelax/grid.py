"""Rectangular node grids, ghost layers, Hessian stencils and quadrature.

Node ``(i, j)`` sits at ``origin + h*(i, j)`` for ``0 <= i < nx`` and
``0 <= j < ny``; the outermost nodes lie on the boundary.  Fields are
stored row-major with two ghost layers on every side, so ``values[j + 2,
i + 2]`` is node ``(i, j)``.

Boundary quantities use the ring order of a counterclockwise walk that
starts at the lower-left corner: bottom edge (i ascending), right edge
(j ascending), top edge (i descending), left edge (j descending).  Corner
nodes occur twice, once per edge, which is what lets the outward normal
derivative take a separate value on each edge at a corner.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

from airyrelax.sym2 import Sym2

GHOST = 2


@dataclass(frozen=True)
class Grid2D:
    nx: int
    ny: int
    h: float
    origin: tuple[float, float] = (0.0, 0.0)
    mask: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise ValueError("grid needs at least 4 nodes per direction")
        if not self.h > 0:
            raise ValueError("grid spacing must be positive")
        if self.mask is not None and self.mask.shape != self.shape:
            raise ValueError("mask shape does not match the grid")

    @classmethod
    def rectangle(cls, cells: int, width: float = 1.0, height: float | None = None, origin=(0.0, 0.0)):
        """Grid with ``cells`` cells across ``width``; the height is rounded to whole cells."""
        height = width if height is None else height
        h = width / cells
        ny_cells = int(round(height / h))
        if not math.isclose(ny_cells * h, height, rel_tol=1e-9):
            raise ValueError("height is not a whole number of cells")
        return cls(cells + 1, ny_cells + 1, h, (float(origin[0]), float(origin[1])))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def padded_shape(self) -> tuple[int, int]:
        return (self.ny + 2 * GHOST, self.nx + 2 * GHOST)

    @property
    def width(self) -> float:
        return (self.nx - 1) * self.h

    @property
    def height(self) -> float:
        return (self.ny - 1) * self.h

    @property
    def n_ring(self) -> int:
        return 2 * (self.nx + self.ny)

    def coords(self):
        x = self.origin[0] + self.h * np.arange(self.nx)
        y = self.origin[1] + self.h * np.arange(self.ny)
        return np.meshgrid(x, y)

    def padded_coords(self):
        x = self.origin[0] + self.h * np.arange(-GHOST, self.nx + GHOST)
        y = self.origin[1] + self.h * np.arange(-GHOST, self.ny + GHOST)
        return np.meshgrid(x, y)

    def ring_nodes(self) -> tuple[np.ndarray, np.ndarray]:
        """Node indices ``(i, j)`` of the boundary ring."""
        nx, ny = self.nx, self.ny
        i = np.concatenate([np.arange(nx), np.full(ny, nx - 1), np.arange(nx)[::-1], np.zeros(ny, dtype=int)])
        j = np.concatenate([np.zeros(nx, dtype=int), np.arange(ny), np.full(nx, ny - 1), np.arange(ny)[::-1]])
        return i, j

    def ring_points(self) -> np.ndarray:
        i, j = self.ring_nodes()
        return np.stack([self.origin[0] + self.h * i, self.origin[1] + self.h * j], axis=1)

    def ring_normals(self) -> np.ndarray:
        nx, ny = self.nx, self.ny
        return np.concatenate(
            [np.tile([0.0, -1.0], (nx, 1)), np.tile([1.0, 0.0], (ny, 1)), np.tile([0.0, 1.0], (nx, 1)), np.tile([-1.0, 0.0], (ny, 1))]
        )

    def ring_weights(self) -> np.ndarray:
        """Trapezoid weights of each edge in ring order (corners get h/2 per edge)."""
        parts = []
        for n in (self.nx, self.ny, self.nx, self.ny):
            w = np.full(n, self.h)
            w[0] = w[-1] = 0.5 * self.h
            parts.append(w)
        return np.concatenate(parts)

    def trapezoid_weights(self) -> np.ndarray:
        wx = np.full(self.nx, self.h)
        wx[0] = wx[-1] = 0.5 * self.h
        wy = np.full(self.ny, self.h)
        wy[0] = wy[-1] = 0.5 * self.h
        w = np.outer(wy, wx)
        if self.mask is not None:
            w = np.where(self.mask, w, 0.0)
        return w

    def interior_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[1:-1, 1:-1] = True
        return m


def ring_to_edges(ring: np.ndarray, nx: int, ny: int):
    """Split ring-ordered values into (bottom, right, top, left), each in ascending coordinate order."""
    ring = np.asarray(ring, dtype=float)
    if ring.shape[0] != 2 * (nx + ny):
        raise ValueError(f"expected {2 * (nx + ny)} ring values, got {ring.shape[0]}")
    b = ring[:nx]
    r = ring[nx : nx + ny]
    t = ring[nx + ny : 2 * nx + ny][::-1]
    left = ring[2 * nx + ny :][::-1]
    return b, r, t, left


def edges_to_ring(bottom, right, top, left) -> np.ndarray:
    return np.concatenate([bottom, right, top[::-1], left[::-1]])


def ring_node_values(ring: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Boundary node values from ring values; the two copies at a corner are averaged."""
    out = np.zeros(grid.shape)
    cnt = np.zeros(grid.shape)
    i, j = grid.ring_nodes()
    np.add.at(out, (j, i), ring)
    np.add.at(cnt, (j, i), 1.0)
    mask = cnt > 0
    out[mask] /= cnt[mask]
    return out


class ScalarField:
    """Node values plus a two-deep ghost layer; ``populated`` guards stencil use."""

    def __init__(self, grid: Grid2D, values: np.ndarray | None = None, populated: bool = False):
        self.grid = grid
        if values is None:
            values = np.zeros(grid.padded_shape)
        values = np.asarray(values, dtype=float)
        if values.shape != grid.padded_shape:
            raise ValueError(f"padded values must have shape {grid.padded_shape}")
        self.values = values
        self.populated = populated

    @classmethod
    def from_nodes(cls, grid: Grid2D, nodes: np.ndarray, s_edges: np.ndarray | None = None) -> "ScalarField":
        """Field from node values; ghosts are filled when outward normal derivatives are given."""
        nodes = np.asarray(nodes, dtype=float)
        if nodes.shape != grid.shape:
            raise ValueError(f"node values must have shape {grid.shape}")
        if s_edges is None:
            f = cls(grid)
            f.values[GHOST:-GHOST, GHOST:-GHOST] = nodes
            return f
        return cls(grid, fill_ghosts(nodes, s_edges, grid.h), populated=True)

    @classmethod
    def from_function(cls, grid: Grid2D, fun: Callable) -> "ScalarField":
        """Sample ``fun(x, y)`` on nodes and ghosts alike (exact ghosts for smooth fields)."""
        x, y = grid.padded_coords()
        return cls(grid, np.asarray(fun(x, y), dtype=float) * np.ones(grid.padded_shape), populated=True)

    @property
    def nodes(self) -> np.ndarray:
        return self.values[GHOST:-GHOST, GHOST:-GHOST]

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy(), self.populated)

    def normal_derivative(self) -> np.ndarray:
        """Centred outward normal differences on the boundary, in ring order."""
        self._require()
        v, h, g = self.values, self.grid.h, GHOST
        nx, ny = self.grid.nx, self.grid.ny
        bottom = (v[g - 1, g : g + nx] - v[g + 1, g : g + nx]) / (2 * h)
        top = (v[g + ny, g : g + nx] - v[g + ny - 2, g : g + nx]) / (2 * h)
        left = (v[g : g + ny, g - 1] - v[g : g + ny, g + 1]) / (2 * h)
        right = (v[g : g + ny, g + nx] - v[g : g + ny, g + nx - 2]) / (2 * h)
        return edges_to_ring(bottom, right, top, left)

    def trace(self) -> np.ndarray:
        i, j = self.grid.ring_nodes()
        return self.nodes[j, i]

    def _require(self):
        if not self.populated:
            raise RuntimeError("ghost layers are not populated")


def fill_ghosts(nodes: np.ndarray, s_edges: np.ndarray, h: float) -> np.ndarray:
    """Padded array from node values and outward normal derivatives.

    ``s_edges`` is ring ordered.  The first ghost makes the centred normal
    difference equal to ``s``; the second ghost and the corner blocks use
    quadratic extrapolation.  Quadratics are reproduced exactly.
    """
    ny, nx = nodes.shape
    g = GHOST
    sb, sr, st, sl = ring_to_edges(s_edges, nx, ny)
    v = np.zeros((ny + 2 * g, nx + 2 * g))
    v[g:-g, g:-g] = nodes
    c = slice(g, g + nx)
    r = slice(g, g + ny)
    v[g - 1, c] = nodes[1, :] + 2 * h * sb
    v[g + ny, c] = nodes[ny - 2, :] + 2 * h * st
    v[r, g - 1] = nodes[:, 1] + 2 * h * sl
    v[r, g + nx] = nodes[:, nx - 2] + 2 * h * sr
    v[g - 2, c] = 3 * v[g - 1, c] - 3 * v[g, c] + v[g + 1, c]
    v[g + ny + 1, c] = 3 * v[g + ny, c] - 3 * v[g + ny - 1, c] + v[g + ny - 2, c]
    v[r, g - 2] = 3 * v[r, g - 1] - 3 * v[r, g] + v[r, g + 1]
    v[r, g + nx + 1] = 3 * v[r, g + nx] - 3 * v[r, g + nx - 1] + v[r, g + nx - 2]
    cols = [0, 1, nx + 2, nx + 3]
    for col in cols:
        v[1, col] = 3 * v[2, col] - 3 * v[3, col] + v[4, col]
        v[0, col] = 3 * v[1, col] - 3 * v[2, col] + v[3, col]
        top = ny + 1
        v[top + 1, col] = 3 * v[top, col] - 3 * v[top - 1, col] + v[top - 2, col]
        v[top + 2, col] = 3 * v[top + 1, col] - 3 * v[top, col] + v[top - 1, col]
    return v


def ghost_map(grid: Grid2D) -> sp.csr_matrix:
    """Sparse ``P`` with ``fill_ghosts(nodes, s, h).ravel() == P @ concat(nodes.ravel(), s)``."""
    nx, ny, h, g = grid.nx, grid.ny, grid.h, GHOST
    pw = nx + 2 * g
    n_nodes = nx * ny
    rows: dict[tuple[int, int], dict[int, float]] = {}

    def node(i, j):
        return {j * nx + i: 1.0}

    def comb(*terms):
        out: dict[int, float] = {}
        for coef, row in terms:
            for k, val in row.items():
                out[k] = out.get(k, 0.0) + coef * val
        return out

    for j in range(ny):
        for i in range(nx):
            rows[(j + g, i + g)] = node(i, j)
    s_off = n_nodes
    ring_start = {"b": 0, "r": nx, "t": nx + ny, "l": 2 * nx + ny}
    for i in range(nx):
        sb = {s_off + ring_start["b"] + i: 2 * h}
        st = {s_off + ring_start["t"] + (nx - 1 - i): 2 * h}
        rows[(g - 1, i + g)] = comb((1.0, node(i, 1)), (1.0, sb))
        rows[(g + ny, i + g)] = comb((1.0, node(i, ny - 2)), (1.0, st))
    for j in range(ny):
        sr = {s_off + ring_start["r"] + j: 2 * h}
        sl = {s_off + ring_start["l"] + (ny - 1 - j): 2 * h}
        rows[(j + g, g - 1)] = comb((1.0, node(1, j)), (1.0, sl))
        rows[(j + g, g + nx)] = comb((1.0, node(nx - 2, j)), (1.0, sr))

    def extrap(dst, a, b, c):
        rows[dst] = comb((3.0, rows[a]), (-3.0, rows[b]), (1.0, rows[c]))

    for i in range(g, g + nx):
        extrap((g - 2, i), (g - 1, i), (g, i), (g + 1, i))
        extrap((g + ny + 1, i), (g + ny, i), (g + ny - 1, i), (g + ny - 2, i))
    for j in range(g, g + ny):
        extrap((j, g - 2), (j, g - 1), (j, g), (j, g + 1))
        extrap((j, g + nx + 1), (j, g + nx), (j, g + nx - 1), (j, g + nx - 2))
    top = ny + 1
    for col in (0, 1, nx + 2, nx + 3):
        extrap((1, col), (2, col), (3, col), (4, col))
        extrap((0, col), (1, col), (2, col), (3, col))
        extrap((top + 1, col), (top, col), (top - 1, col), (top - 2, col))
        extrap((top + 2, col), (top + 1, col), (top, col), (top - 1, col))

    ri, ci, vals = [], [], []
    for (j, i), row in rows.items():
        for k, val in row.items():
            if val != 0.0:
                ri.append(j * pw + i)
                ci.append(k)
                vals.append(val)
    shape = (grid.padded_shape[0] * pw, n_nodes + grid.n_ring)
    return sp.csr_matrix((vals, (ri, ci)), shape=shape)


def hessian_operator(grid: Grid2D) -> sp.csr_matrix:
    """Sparse map from padded values to stacked node Hessians ``[a; b; d]``."""
    nx, ny, h, g = grid.nx, grid.ny, grid.h, GHOST
    pw = nx + 2 * g
    jj, ii = np.meshgrid(np.arange(ny) + g, np.arange(nx) + g, indexing="ij")
    base = (jj * pw + ii).ravel()
    n = nx * ny
    out = np.arange(n)
    h2 = 1.0 / (h * h)
    rows, cols, vals = [], [], []

    def add(block, offsets):
        for (dj, di), w in offsets:
            rows.append(block * n + out)
            cols.append(base + dj * pw + di)
            vals.append(np.full(n, w * h2))

    add(0, [((0, 1), 1.0), ((0, 0), -2.0), ((0, -1), 1.0)])
    add(1, [((1, 1), 0.25), ((-1, 1), -0.25), ((1, -1), -0.25), ((-1, -1), 0.25)])
    add(2, [((1, 0), 1.0), ((0, 0), -2.0), ((-1, 0), 1.0)])
    m = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(3 * n, grid.padded_shape[0] * pw),
    )
    m.sum_duplicates()
    return m


def _hessian_arrays(v: np.ndarray, h: float, pad: int):
    """Hessian entries on the padded array, shrunk by ``pad`` cells per side (pad >= 1)."""
    h2 = h * h
    c = v[pad:-pad, pad:-pad] if pad else v
    xp = v[pad:-pad, pad + 1 : v.shape[1] - pad + 1]
    xm = v[pad:-pad, pad - 1 : -pad - 1]
    yp = v[pad + 1 : v.shape[0] - pad + 1, pad:-pad]
    ym = v[pad - 1 : -pad - 1, pad:-pad]
    pp = v[pad + 1 : v.shape[0] - pad + 1, pad + 1 : v.shape[1] - pad + 1]
    pm = v[pad - 1 : -pad - 1, pad + 1 : v.shape[1] - pad + 1]
    mp = v[pad + 1 : v.shape[0] - pad + 1, pad - 1 : -pad - 1]
    mm = v[pad - 1 : -pad - 1, pad - 1 : -pad - 1]
    a = (xp - 2 * c + xm) / h2
    d = (yp - 2 * c + ym) / h2
    b = (pp - pm - mp + mm) / (4 * h2)
    return a, b, d


def hessian_field(u: ScalarField) -> Sym2:
    """Discrete Hessian at every node as a Sym2 of (ny, nx) arrays."""
    u._require()
    return Sym2(*_hessian_arrays(u.values, u.grid.h, GHOST))


def discrete_hessian(u: ScalarField, i: int, j: int) -> Sym2:
    u._require()
    H = _hessian_arrays(u.values[j : j + 2 * GHOST + 1, i : i + 2 * GHOST + 1], u.grid.h, GHOST)
    return Sym2(*(float(x[0, 0]) for x in H))


def apply_clamped_boundary(u: ScalarField, data) -> ScalarField:
    """Set boundary nodes to ``data.f1`` and ghosts from the normal derivative ``data.f2``.

    ``data`` is anything with ring-ordered ``f1`` and ``f2`` arrays.
    """
    grid = u.grid
    f1 = np.asarray(data.f1, dtype=float)
    f2 = np.asarray(data.f2, dtype=float)
    if f1.shape != (grid.n_ring,) or f2.shape != (grid.n_ring,):
        raise ValueError(f"boundary data must have {grid.n_ring} ring values")
    nodes = u.nodes.copy()
    i, j = grid.ring_nodes()
    nodes[j, i] = ring_node_values(f1, grid)[j, i]
    return ScalarField(grid, fill_ghosts(nodes, f2, grid.h), populated=True)


def _avg(v, axis):
    """[1, 2, 1]/4 average along ``axis``, dropping one cell per side."""
    if axis == 0:
        return 0.25 * (v[:-2] + 2 * v[1:-1] + v[2:])
    return 0.25 * (v[:, :-2] + 2 * v[:, 1:-1] + v[:, 2:])


def _d0(v, axis, h):
    if axis == 0:
        return (v[2:] - v[:-2]) / (2 * h)
    return (v[:, 2:] - v[:, :-2]) / (2 * h)


def stress_divergence(u: ScalarField):
    """Row divergence of ``cof`` of the discrete Hessian at every node.

    Uses the divergence that is adjoint to the Hessian stencil:
    ``(D0x Ay s11 + D0y s12, D0x s21 + D0y Ax s22)`` with ``A`` the [1,2,1]/4
    average, which annihilates ``cof(hessian(u))`` for every ``u``.  Returns
    ``(div1, div2, scale)`` where ``scale`` is the largest single term.
    """
    u._require()
    a, b, d = _hessian_arrays(u.values, u.grid.h, 1)
    s11, s12, s22 = d, -b, a
    h = u.grid.h
    t11 = _d0(_avg(s11, 0), 1, h)
    t12 = _d0(s12, 0, h)[:, 1:-1]
    t21 = _d0(s12, 1, h)[1:-1, :]
    t22 = _d0(_avg(s22, 1), 0, h)
    div1 = t11 + t12
    div2 = t21 + t22
    scale = max(np.abs(t11).max(), np.abs(t12).max(), np.abs(t21).max(), np.abs(t22).max(), 1e-300)
    return div1, div2, scale


def energy_quadrature(u: ScalarField, density: Callable[[Sym2], np.ndarray], f2: np.ndarray | None = None) -> float:
    """Trapezoid quadrature of ``density(hessian)``; with ``f2`` also the boundary penalty
    ``2 * sum |normal derivative - f2|`` over the edges."""
    H = hessian_field(u)
    w = u.grid.trapezoid_weights()
    total = float(np.sum(w * np.asarray(density(H), dtype=float)))
    if f2 is not None:
        total += boundary_penalty(u.normal_derivative(), f2, u.grid)
    return total


def boundary_penalty(s: np.ndarray, f2: np.ndarray, grid: Grid2D) -> float:
    return 2.0 * float(np.sum(grid.ring_weights() * np.abs(np.asarray(s) - np.asarray(f2))))


def write_field_csv(path: str | Path, grid: Grid2D, nodes: np.ndarray) -> None:
    header = f"{grid.nx} {grid.ny} {grid.h!r} {grid.origin[0]!r} {grid.origin[1]!r}"
    np.savetxt(path, np.asarray(nodes, dtype=float), delimiter=",", header=header, comments="# ", fmt="%.17g")


def read_field_csv(path: str | Path) -> tuple[Grid2D, np.ndarray]:
    with open(path) as fh:
        first = fh.readline()
    if not first.startswith("#"):
        raise ValueError(f"{path}: missing '# nx ny h ox oy' header")
    parts = first[1:].split()
    if len(parts) != 5:
        raise ValueError(f"{path}: header needs 5 fields, got {len(parts)}")
    nx, ny = int(parts[0]), int(parts[1])
    h, ox, oy = (float(p) for p in parts[2:])
    nodes = np.loadtxt(path, delimiter=",", ndmin=2)
    grid = Grid2D(nx, ny, h, (ox, oy))
    if nodes.shape != grid.shape:
        raise ValueError(f"{path}: expected {grid.shape} values, got {nodes.shape}")
    return grid, nodes
