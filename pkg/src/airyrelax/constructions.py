"""Explicit fields: 1D two-slope laminates, 2D cutoff laminates, recovery fields.

A laminate oscillates the Hessian between two rank-one connected matrices
while matching the average quadratic at the edge of its support.  The 1D
profile adds the double integral of a mean-zero square wave; its phase
offset makes the double integral vanish over each period, so value and
slope return to the quadratic at every period end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, signal

from airyrelax.density import EnergyParams, f_lambda
from airyrelax.envelope import rsgl_split
from airyrelax.grid import GHOST, Grid2D, ScalarField, hessian_field
from airyrelax.sym2 import Sym2, frobenius

# (1 - r^2)^3 on the unit disc integrates to pi/4
MOLLIFIER_PEAK = 4.0 / math.pi


@dataclass(frozen=True)
class LaminateSpec:
    alpha: float
    beta: float
    t: float
    k: int = 1
    q: float | None = None
    eps_margin: float = 0.05
    eta_angle: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.t <= 1.0:
            raise ValueError("volume fraction t must lie in [0, 1]")
        if self.k < 1:
            raise ValueError("k must be >= 1")

    @property
    def phase(self) -> float:
        if self.q is not None:
            return self.q
        return q_offset(self.t) if 0.0 < self.t < 1.0 else 0.0

    @property
    def mean(self) -> float:
        return self.t * self.alpha + (1.0 - self.t) * self.beta


@dataclass
class SampledProfile:
    x: np.ndarray
    u: np.ndarray
    du: np.ndarray
    d2u: np.ndarray

    @property
    def n(self) -> int:
        return self.x.size

    def integration_residual(self) -> float:
        """Largest gap between (u, u') and trapezoid integrals of (u', u'')."""
        h = np.diff(self.x)
        du = self.du[0] + np.concatenate([[0.0], np.cumsum(0.5 * h * (self.d2u[1:] + self.d2u[:-1]))])
        u = self.u[0] + np.concatenate([[0.0], np.cumsum(0.5 * h * (self.du[1:] + self.du[:-1]))])
        return float(max(np.abs(du - self.du).max(), np.abs(u - self.u).max()))


def q_offset(t: float) -> float:
    """Phase making the period double integral of the square wave vanish.

    For unit jump the double integral is ``t (1 - 2q - t) / 2``.
    """
    if not 0.0 < t < 1.0:
        raise ValueError("q_offset needs 0 < t < 1")
    return 0.5 * (1.0 - t)


def _wave(sigma, t, q):
    """Unit square wave and its first two integrals on one period, sigma in [0, 1]."""
    A = 1.0 - t
    B = -t
    lo = sigma < q
    mid = (sigma >= q) & (sigma < q + t)
    phi = np.where(mid, A, B)
    p1 = np.where(lo, B * sigma, np.where(mid, B * q + A * (sigma - q), B * q + A * t + B * (sigma - q - t)))
    p2_q = 0.5 * B * q * q
    p2_qt = p2_q + B * q * t + 0.5 * A * t * t
    p2 = np.where(
        lo,
        0.5 * B * sigma * sigma,
        np.where(
            mid,
            p2_q + B * q * (sigma - q) + 0.5 * A * (sigma - q) ** 2,
            p2_qt + (B * q + A * t) * (sigma - q - t) + 0.5 * B * (sigma - q - t) ** 2,
        ),
    )
    return phi, p1, p2


def square_wave_double_integral(t: float, q: float) -> float:
    return float(_wave(np.array([1.0]), t, q)[2][0])


def _periodic_wave(s, t, q):
    """Wave terms at unbounded ``s``; exact zeros at whole periods."""
    frac = s - np.floor(s)
    return _wave(frac, t, q)


def laminate_1d(spec: LaminateSpec, n: int) -> SampledProfile:
    """Two-slope profile on [0, 1] with ``spec.k`` periods, sampled at n uniform nodes."""
    if n < 64 * spec.k:
        raise ValueError("laminate_1d needs n >= 64 k samples")
    x = np.linspace(0.0, 1.0, n)
    m = spec.mean
    delta = spec.alpha - spec.beta
    phi, p1, p2 = _periodic_wave(spec.k * x, spec.t, spec.phase)
    k = spec.k
    u = 0.5 * m * x * x + delta * p2 / (k * k)
    du = m * x + delta * p1 / k
    if 0.0 < spec.t < 1.0:
        d2u = np.where(phi > 0, spec.alpha, spec.beta)
    else:
        d2u = np.full(n, spec.alpha if spec.t == 1.0 else spec.beta)
    # the endpoint sits at a whole period, where both integrals vanish
    u[-1] = 0.5 * m
    du[-1] = m
    return SampledProfile(x, u, du, d2u)


def _smoothstep(s):
    """C^{1,1} step 0 -> 1 on [0, 1] with its first two derivatives.

    The cubic has a smaller slope integral than higher order steps, which
    is what the laminate cutoffs pay for.
    """
    inside = (s > 0.0) & (s < 1.0)
    s = np.clip(s, 0.0, 1.0)
    v = s * s * (3.0 - 2.0 * s)
    d1 = np.where(inside, 6.0 * s * (1.0 - s), 0.0)
    d2 = np.where(inside, 6.0 - 12.0 * s, 0.0)
    return v, d1, d2


def _cutoff(r, lo, hi, width):
    """Smooth cutoff: 0 outside [lo, hi], 1 on [lo + width, hi - width]; with r-derivatives."""
    a, a1, a2 = _smoothstep((r - lo) / width)
    b, b1, b2 = _smoothstep((hi - r) / width)
    v = a * b
    d1 = a1 * b / width - a * b1 / width
    d2 = a2 * b / width**2 - 2 * a1 * b1 / width**2 + a * b2 / width**2
    return v, d1, d2


def _rank_one_amplitude(xi1: Sym2, xi2: Sym2, tol: float = 1e-10):
    """Return (alpha, angle) with xi1 - xi2 = alpha eta eta^T, or raise."""
    d = xi1 - xi2
    a, b, c = float(d.a), float(d.b), float(d.d)
    scale = max(abs(a), abs(b), abs(c), 1.0)
    if abs(a * c - b * b) > tol * scale * scale:
        raise ValueError("xi1 - xi2 is not rank one")
    tr = a + c
    if abs(tr) <= tol * scale:
        return 0.0, 0.0
    # d = tr * eta eta^T with eta along the nonzero eigenvector
    angle = 0.5 * math.atan2(2 * b, a - c)
    return tr, angle


@dataclass
class LaminateField:
    """Laminate potential with its analytic Hessian and pure-phase labels.

    ``labels`` is 1 where the Hessian equals the first leaf, 2 the second
    and so on, and 0 in transition or margin nodes.  ``hessian`` holds the
    exact leaf matrix on labelled nodes.
    """

    field: ScalarField
    hessian: Sym2
    labels: np.ndarray
    leaves: list

    def average(self, density) -> float:
        w = self.field.grid.trapezoid_weights()
        area = w.sum()
        return float(np.sum(w * np.asarray(density(self.hessian), dtype=float)) / area)

    def fractions(self) -> list[float]:
        w = self.field.grid.trapezoid_weights()
        return [float(w[self.labels == i + 1].sum() / w.sum()) for i in range(len(self.leaves))]


def _assign_leaves(H: Sym2, labels, leaves) -> Sym2:
    a, b, d = (np.array(v, dtype=float) for v in H)
    for i, leaf in enumerate(leaves):
        m = labels == i + 1
        a[m], b[m], d[m] = leaf.a, leaf.b, leaf.d
    return Sym2(a, b, d)


def _support(lo, hi, periods):
    return lo, (hi - lo) / periods


def build_laminate_2d(
    xi1: Sym2,
    xi2: Sym2,
    t: float,
    k: int,
    eps_margin: float,
    grid_n: int,
) -> LaminateField:
    """Single-level laminate on the unit square blended into ``u_t`` near the boundary.

    For axis-aligned directions the layers cover whole periods of
    ``[eps, 1 - eps]`` along the lamination direction, and the cutoff acts
    only across it.  Other directions use a product cutoff equal to one on
    ``[eps, 1 - eps]^2``.
    """
    if not 0.0 < eps_margin < 0.25:
        raise ValueError("eps_margin must lie in (0, 1/4)")
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    amp, angle = _rank_one_amplitude(xi1, xi2)
    grid = Grid2D.rectangle(grid_n)
    mean = xi1 * t + xi2 * (1.0 - t)
    X, Y = grid.padded_coords()
    base = 0.5 * (mean.a * X * X + 2 * mean.b * X * Y + mean.d * Y * Y)
    if amp == 0.0 or t in (0.0, 1.0):
        field = ScalarField(grid, base, populated=True)
        H = hessian_field(field)
        leaf = xi1 if t == 1.0 or amp == 0.0 else xi2
        labels = np.ones(grid.shape, dtype=int)
        return LaminateField(field, _assign_leaves(H, labels, [leaf]), labels, [leaf])

    eps = eps_margin
    q = q_offset(t)
    c, s = math.cos(angle), math.sin(angle)
    axis = None
    if abs(s) < 1e-12:
        axis = 0
    elif abs(c) < 1e-12:
        axis = 1
    gx, gy = X, Y
    if axis is not None:
        along = gx if axis == 0 else gy
        across = gy if axis == 0 else gx
        lo, p = _support(eps, 1.0 - eps, k)
        sig = (along - lo) / p
        inside = (sig >= 0.0) & (sig <= k)
        phi, p1, p2 = _periodic_wave(np.clip(sig, 0.0, k), t, q)
        L = np.where(inside, amp * p * p * p2, 0.0)
        L1 = np.where(inside, amp * p * p1, 0.0)
        L2 = np.where(inside, amp * phi, 0.0)
        chi, chi1, chi2 = _cutoff(across, 0.0, 1.0, eps)
        field = ScalarField(grid, base + chi * L, populated=True)
        # Hessian in (along, across) coordinates, then mapped to (x, y)
        h_aa = chi * L2
        h_ac = chi1 * L1
        h_cc = chi2 * L
        if axis == 0:
            da, db, dd = h_aa, h_ac, h_cc
        else:
            da, db, dd = h_cc, h_ac, h_aa
        sl = np.s_[GHOST:-GHOST, GHOST:-GHOST]
        H = Sym2(mean.a + da[sl], mean.b + db[sl], mean.d + dd[sl])
        pure = (chi[sl] == 1.0) & inside[sl]
        in_I = phi[sl] > 0
        labels = np.where(pure, np.where(in_I, 1, 2), 0)
    else:
        sv = c * gx + s * gy
        p = 1.0 / k
        phi, p1, p2 = _periodic_wave(sv / p, t, q)
        L = amp * p * p * p2
        L1 = amp * p * p1
        L2 = amp * phi
        cx, cx1, cx2 = _cutoff(gx, 0.0, 1.0, eps)
        cy, cy1, cy2 = _cutoff(gy, 0.0, 1.0, eps)
        chi = cx * cy
        gcx, gcy = cx1 * cy, cx * cy1
        field = ScalarField(grid, base + chi * L, populated=True)
        # hess(chi L) = chi L'' eta eta^T + 2 sym(grad chi (x) L' eta) + L hess chi
        da = chi * L2 * c * c + 2 * gcx * L1 * c + L * cx2 * cy
        dd = chi * L2 * s * s + 2 * gcy * L1 * s + L * cx * cy2
        db = chi * L2 * c * s + (gcx * s + gcy * c) * L1 + L * cx1 * cy1
        sl = np.s_[GHOST:-GHOST, GHOST:-GHOST]
        H = Sym2(mean.a + da[sl], mean.b + db[sl], mean.d + dd[sl])
        pure = chi[sl] == 1.0
        labels = np.where(pure, np.where(phi[sl] > 0, 1, 2), 0)
    leaves = [xi1, xi2]
    return LaminateField(field, _assign_leaves(H, labels, leaves), labels, leaves)


def build_two_level_laminate(
    xi: Sym2,
    lam: float,
    k_inner: int = 32,
    k_outer: int = 2,
    eps_margin: float = 0.05,
    grid_n: int = 256,
    inner_transition: float = 0.6,
) -> LaminateField:
    """Two-level laminate of ``diag(x, y)`` following the explicit envelope split.

    Outer layers run along e2 between ``diag(x, y/beta)`` and ``diag(x, 0)``;
    inside the ``diag(x, 0)`` layers an inner laminate along e1 alternates
    ``diag(x/alpha, 0)`` and 0.  The laminated outer phase sits in the middle
    of each period so that the inner cutoff stays inside it.
    ``inner_transition`` is the inner cutoff width as a fraction of the
    xi3 layer on each side of a laminated band.
    """
    if not 0.0 < eps_margin < 0.25:
        raise ValueError("eps_margin must lie in (0, 1/4)")
    value, splits = rsgl_split(xi, lam)
    if len(splits) != 2:
        raise ValueError("two-level laminate needs both diagonal entries nonzero")
    outer, inner = splits
    xi3, xi_mid = outer.children(xi)
    xi_in1, xi_in2 = inner.children(xi_mid)
    beta = outer.t
    alpha = inner.t
    eps = eps_margin
    grid = Grid2D.rectangle(grid_n)
    X, Y = grid.padded_coords()
    sl = np.s_[GHOST:-GHOST, GHOST:-GHOST]
    mean = xi

    # outer: along y, laminated phase xi_mid first in the wave (fraction 1 - beta)
    t_o = 1.0 - beta
    amp_o = float((xi_mid - xi3).d)
    q_o = q_offset(t_o)
    lo_o, p_o = _support(eps, 1.0 - eps, k_outer)
    sig_o = (Y - lo_o) / p_o
    in_o = (sig_o >= 0.0) & (sig_o <= k_outer)
    phi_o, p1_o, p2_o = _periodic_wave(np.clip(sig_o, 0.0, k_outer), t_o, q_o)
    Lo = np.where(in_o, amp_o * p_o * p_o * p2_o, 0.0)
    Lo1 = np.where(in_o, amp_o * p_o * p1_o, 0.0)
    Lo2 = np.where(in_o, amp_o * phi_o, 0.0)
    chi_o, chi_o1, chi_o2 = _cutoff(X, 0.0, 1.0, eps)

    # inner: along x on whole periods of [eps, 1 - eps]
    t_i = alpha
    amp_i = float((xi_in1 - xi_in2).a)
    q_i = q_offset(t_i)
    lo_i, p_i = _support(eps, 1.0 - eps, k_inner)
    sig_i = (X - lo_i) / p_i
    in_i = (sig_i >= 0.0) & (sig_i <= k_inner)
    phi_i, p1_i, p2_i = _periodic_wave(np.clip(sig_i, 0.0, k_inner), t_i, q_i)
    Li = np.where(in_i, amp_i * p_i * p_i * p2_i, 0.0)
    Li1 = np.where(in_i, amp_i * p_i * p1_i, 0.0)
    Li2 = np.where(in_i, amp_i * phi_i, 0.0)

    # inner cutoff across y: equal to one on each laminated outer band
    # [q, q + t] and decaying inside the neighbouring xi3 bands, where a
    # partial inner amplitude costs less than inside the laminated band
    band = t_o * p_o
    width = inner_transition * min(q_o, 1.0 - q_o - t_o) * p_o
    chi_i = np.zeros_like(Y)
    chi_i1 = np.zeros_like(Y)
    chi_i2 = np.zeros_like(Y)
    for j in range(k_outer):
        b_lo = lo_o + (j + q_o) * p_o
        v, d1, d2 = _cutoff(Y, b_lo - width, b_lo + band + width, width)
        chi_i += v
        chi_i1 += d1
        chi_i2 += d2

    base = 0.5 * (mean.a * X * X + 2 * mean.b * X * Y + mean.d * Y * Y)
    field = ScalarField(grid, base + chi_o * Lo + chi_i * Li, populated=True)
    da = chi_o2 * Lo + chi_i * Li2
    db = chi_o1 * Lo1 + chi_i1 * Li1
    dd = chi_o * Lo2 + chi_i2 * Li
    H = Sym2(mean.a + da[sl], mean.b + db[sl], mean.d + dd[sl])

    outer_pure = (chi_o[sl] == 1.0) & in_o[sl]
    mid_phase = phi_o[sl] > 0
    labels = np.zeros(grid.shape, dtype=int)
    labels[outer_pure & ~mid_phase & (chi_i[sl] == 0.0)] = 1
    inner_pure = outer_pure & mid_phase & (chi_i[sl] == 1.0) & in_i[sl]
    labels[inner_pure & (phi_i[sl] > 0)] = 2
    labels[inner_pure & (phi_i[sl] <= 0)] = 3
    leaves = [xi3, xi_in1, xi_in2]
    return LaminateField(field, _assign_leaves(H, labels, leaves), labels, leaves)


def two_level_energy_scan(
    xi: Sym2,
    lam: float,
    k_inner: int = 32,
    k_outers=(4, 5, 6, 7, 8),
    eps_margin: float = 0.05,
    grid_n: int = 256,
    inner_transition: float = 0.6,
) -> dict[int, float]:
    """Average ``F_lambda`` of the two-level laminate for each outer period count."""
    p = EnergyParams(lam)
    out = {}
    for ko in k_outers:
        lf = build_two_level_laminate(xi, lam, k_inner, ko, eps_margin, grid_n, inner_transition)
        out[ko] = lf.average(lambda H: f_lambda(H, p))
    return out


def mollifier_kernel(eps: float, h: float) -> np.ndarray:
    """Discrete ``(1 - |x/eps|^2)^3`` bump normalised to unit sum."""
    r = int(math.floor(eps / h))
    ax = np.arange(-r, r + 1) * h
    X, Y = np.meshgrid(ax, ax)
    rho2 = (X * X + Y * Y) / (eps * eps)
    k = np.where(rho2 < 1.0, (1.0 - rho2) ** 3, 0.0)
    total = k.sum()
    if total == 0.0:
        k[r, r] = 1.0
        total = 1.0
    return k / total


def _hessian_mass(v: np.ndarray, h: float) -> tuple[float, float]:
    """Total variation and sup of the Frobenius Hessian of zero-extended node values."""
    pad = np.pad(v, 2)
    g = Grid2D(pad.shape[1] - 4, pad.shape[0] - 4, h)
    f = ScalarField(g, pad, populated=True)
    H = hessian_field(f)
    fro = np.asarray(frobenius(H))
    return float(h * h * fro.sum()), float(fro.max())


@dataclass
class RecoveryInfo:
    eps: float
    shrink: float
    hess_mass: float
    hess_sup: float
    bound: float
    vanished: bool


def recovery_sequence(
    u_limit: ScalarField,
    f_field: ScalarField,
    lam: float,
    c2: float = MOLLIFIER_PEAK,
    c1: float | None = None,
    bc_tol: float = 1e-8,
    return_info: bool = False,
):
    """Shrink-and-mollify recovery field ``f_field + mollify(shrink(u_limit - f_field))``.

    ``v = u_limit - f_field`` must vanish on the boundary.  It is extended
    by zero and contracted toward the centre so that its support keeps a
    distance larger than the mollifier radius from the boundary.  The radius
    is ``eps = sqrt(4 c2 M / sqrt(lam))``, with ``M`` the Hessian mass of
    ``v``, and it grows until the discrete Hessian sup of the mollified part
    is at most ``sqrt(lam) / 4``.  If no admissible radius fits inside the
    domain, the correction is dropped and ``f_field`` is returned.
    """
    grid = u_limit.grid
    if f_field.grid != grid:
        raise ValueError("u_limit and f_field must share a grid")
    v = u_limit.nodes - f_field.nodes
    i, j = grid.ring_nodes()
    scale = max(1.0, float(np.abs(u_limit.nodes).max()))
    if np.abs(v[j, i]).max() > bc_tol * scale:
        raise ValueError("u_limit and f_field have different boundary values")
    v = v.copy()
    v[j, i] = 0.0
    h = grid.h
    half = 0.5 * min(grid.width, grid.height)
    diam = math.hypot(grid.width, grid.height)
    c1 = 8.0 * (1.0 + diam) if c1 is None else c1
    mass, _ = _hessian_mass(v, h)
    target = math.sqrt(lam) / 4.0
    out = f_field.copy()
    if mass == 0.0:
        info = RecoveryInfo(0.0, 1.0, 0.0, 0.0, target, False)
        return (out, info) if return_info else out
    eps = math.sqrt(4.0 * c2 * mass / math.sqrt(lam))
    eps = max(eps, 2.0 * h)
    cx = grid.origin[0] + 0.5 * grid.width
    cy = grid.origin[1] + 0.5 * grid.height
    while True:
        gap = eps + 2.0 * h
        if gap >= half:
            info = RecoveryInfo(eps, math.inf, mass, 0.0, target, True)
            return (out, info) if return_info else out
        shrink = max(math.sqrt(1.0 + c1 * eps), 1.0 / (1.0 - gap / half))
        X, Y = grid.coords()
        # v evaluated at centre + shrink * (x - centre): support contracts by 1/shrink
        xs = (cx + shrink * (X - cx) - grid.origin[0]) / h
        ys = (cy + shrink * (Y - cy) - grid.origin[1]) / h
        vs = ndimage.map_coordinates(v, [ys, xs], order=1, mode="constant", cval=0.0)
        kern = mollifier_kernel(eps, h)
        vt = signal.fftconvolve(vs, kern, mode="same")
        # clear FFT round-off outside the dilated support plus the kernel radius
        reach = half / shrink + eps + h
        vt[(np.abs(X - cx) > reach) | (np.abs(Y - cy) > reach)] = 0.0
        _, sup = _hessian_mass(vt, h)
        if sup <= target:
            break
        eps *= 1.25
    out.values[GHOST:-GHOST, GHOST:-GHOST] += vt
    info = RecoveryInfo(eps, shrink, mass, sup, target, False)
    return (out, info) if return_info else out
