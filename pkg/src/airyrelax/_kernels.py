"""Pointwise density/gradient kernels used by the grid solvers.

Two interchangeable implementations are provided: a numba ``@njit`` loop
and a vectorised numpy path.  ``AIRYRELAX_DISABLE_NUMBA=1`` (or a missing
numba install) selects the numpy path.  Both return the weighted energy
sum and the per-node partials with respect to ``(a, b, d)``.
"""

from __future__ import annotations

import math
import os

import numpy as np

MODE_FINITE = 0  # smoothed G_lambda
MODE_LIMIT = 1  # smoothed 2 rho0

_R_GUARD = 1e-300


def _env_disabled() -> bool:
    return os.environ.get("AIRYRELAX_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")


try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


def smooth_terms_numpy(a, b, d, lam, eps, mode):
    """Value and (a, b, d)-partials of the smoothed density, vectorised."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = np.asarray(d, dtype=float)
    half_diff = 0.5 * (a - d)
    r = np.hypot(half_diff, b)
    mean = 0.5 * (a + d)
    l1 = mean + r
    l2 = mean - r
    s1 = np.sqrt(l1 * l1 + eps * eps)
    s2 = np.sqrt(l2 * l2 + eps * eps)
    rho_s = s1 + s2
    c1 = l1 / s1
    c2 = l2 / s2
    rg = np.maximum(r, _R_GUARD)
    csum = 0.5 * (c1 + c2)
    cdiff = (c1 - c2) / rg
    drho_a = csum + 0.5 * cdiff * half_diff
    drho_d = csum - 0.5 * cdiff * half_diff
    drho_b = cdiff * b

    if mode == MODE_LIMIT:
        return 2.0 * rho_s, 2.0 * drho_a, 2.0 * drho_b, 2.0 * drho_d

    sq = math.sqrt(lam)
    inv = 1.0 / sq
    det = a * d - b * b
    det_s = np.sqrt(det * det + eps ** 4)
    low = 2.0 * rho_s - 2.0 * inv * det_s
    high = inv * (a * a + 2.0 * b * b + d * d) + sq
    on_low = rho_s <= sq
    val = np.where(on_low, low, high)
    k = 2.0 * inv * det / det_s
    ga = np.where(on_low, 2.0 * drho_a - k * d, 2.0 * inv * a)
    gb = np.where(on_low, 2.0 * drho_b + 2.0 * k * b, 4.0 * inv * b)
    gd = np.where(on_low, 2.0 * drho_d - k * a, 2.0 * inv * d)
    return val, ga, gb, gd


def _energy_numpy(a, b, d, w, lam, eps, mode):
    val, ga, gb, gd = smooth_terms_numpy(a, b, d, lam, eps, mode)
    return float(np.dot(w, val)), w * ga, w * gb, w * gd


if HAVE_NUMBA:

    @numba.njit(cache=True, nogil=True)
    def _energy_numba(a, b, d, w, lam, eps, mode):
        n = a.shape[0]
        ga = np.empty(n)
        gb = np.empty(n)
        gd = np.empty(n)
        sq = math.sqrt(lam)
        inv = 1.0 / sq
        eps2 = eps * eps
        eps4 = eps2 * eps2
        total = 0.0
        for k in range(n):
            ak = a[k]
            bk = b[k]
            dk = d[k]
            hd = 0.5 * (ak - dk)
            r = math.sqrt(hd * hd + bk * bk)
            mean = 0.5 * (ak + dk)
            l1 = mean + r
            l2 = mean - r
            s1 = math.sqrt(l1 * l1 + eps2)
            s2 = math.sqrt(l2 * l2 + eps2)
            rho_s = s1 + s2
            c1 = l1 / s1
            c2 = l2 / s2
            rg = r if r > _R_GUARD else _R_GUARD
            csum = 0.5 * (c1 + c2)
            cdiff = (c1 - c2) / rg
            da = csum + 0.5 * cdiff * hd
            dd = csum - 0.5 * cdiff * hd
            db = cdiff * bk
            wk = w[k]
            if mode == MODE_LIMIT:
                total += wk * 2.0 * rho_s
                ga[k] = wk * 2.0 * da
                gb[k] = wk * 2.0 * db
                gd[k] = wk * 2.0 * dd
            elif rho_s <= sq:
                det = ak * dk - bk * bk
                det_s = math.sqrt(det * det + eps4)
                total += wk * (2.0 * rho_s - 2.0 * inv * det_s)
                kk = 2.0 * inv * det / det_s
                ga[k] = wk * (2.0 * da - kk * dk)
                gb[k] = wk * (2.0 * db + 2.0 * kk * bk)
                gd[k] = wk * (2.0 * dd - kk * ak)
            else:
                total += wk * (inv * (ak * ak + 2.0 * bk * bk + dk * dk) + sq)
                ga[k] = wk * 2.0 * inv * ak
                gb[k] = wk * 4.0 * inv * bk
                gd[k] = wk * 2.0 * inv * dk
        return total, ga, gb, gd


def use_numba() -> bool:
    return HAVE_NUMBA and not _env_disabled()


def weighted_energy(a, b, d, w, lam, eps, mode):
    """Return ``(sum_k w_k f(xi_k), w*df/da, w*df/db, w*df/dd)``.

    ``lam`` is ignored in limit mode.
    """
    if use_numba():
        total, ga, gb, gd = _energy_numba(
            np.ascontiguousarray(a, dtype=np.float64),
            np.ascontiguousarray(b, dtype=np.float64),
            np.ascontiguousarray(d, dtype=np.float64),
            np.ascontiguousarray(w, dtype=np.float64),
            1.0 if lam is None else float(lam),
            float(eps),
            int(mode),
        )
        return float(total), ga, gb, gd
    return _energy_numpy(a, b, d, w, lam, eps, mode)
