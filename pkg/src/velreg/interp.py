"""Periodic scattered interpolation kernels (trilinear and tricubic Lagrange).

Query points are physical coordinates in radians; they are mapped to index
space and wrapped periodically, so out-of-box queries are legal.  The cubic
kernel uses Lagrange polynomials on a 4^3 neighborhood; weights sum to one
identically, and lattice-coincident queries reproduce the samples.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

from . import runtime

ORDERS = ("linear", "cubic")


def _trilinear_impl(vals, px, py, pz, out, h1, h2, h3):
    n1, n2, n3 = vals.shape
    n = px.size
    for p in prange(n):
        qx = px[p] / h1
        qy = py[p] / h2
        qz = pz[p] / h3
        ix = int(np.floor(qx))
        iy = int(np.floor(qy))
        iz = int(np.floor(qz))
        tx = qx - ix
        ty = qy - iy
        tz = qz - iz
        i0 = ix % n1
        j0 = iy % n2
        k0 = iz % n3
        i1 = (i0 + 1) % n1
        j1 = (j0 + 1) % n2
        k1 = (k0 + 1) % n3
        c00 = vals[i0, j0, k0] * (1.0 - tz) + vals[i0, j0, k1] * tz
        c01 = vals[i0, j1, k0] * (1.0 - tz) + vals[i0, j1, k1] * tz
        c10 = vals[i1, j0, k0] * (1.0 - tz) + vals[i1, j0, k1] * tz
        c11 = vals[i1, j1, k0] * (1.0 - tz) + vals[i1, j1, k1] * tz
        c0 = c00 * (1.0 - ty) + c01 * ty
        c1 = c10 * (1.0 - ty) + c11 * ty
        out[p] = c0 * (1.0 - tx) + c1 * tx


def _tricubic_impl(vals, px, py, pz, out, h1, h2, h3):
    n1, n2, n3 = vals.shape
    n = px.size
    for p in prange(n):
        qx = px[p] / h1
        qy = py[p] / h2
        qz = pz[p] / h3
        ix = int(np.floor(qx))
        iy = int(np.floor(qy))
        iz = int(np.floor(qz))
        tx = qx - ix
        ty = qy - iy
        tz = qz - iz
        # Lagrange cubic weights on stencil offsets {-1, 0, 1, 2}.
        wx0 = -tx * (tx - 1.0) * (tx - 2.0) / 6.0
        wx1 = (tx * tx - 1.0) * (tx - 2.0) / 2.0
        wx2 = -tx * (tx + 1.0) * (tx - 2.0) / 2.0
        wx3 = tx * (tx * tx - 1.0) / 6.0
        wy0 = -ty * (ty - 1.0) * (ty - 2.0) / 6.0
        wy1 = (ty * ty - 1.0) * (ty - 2.0) / 2.0
        wy2 = -ty * (ty + 1.0) * (ty - 2.0) / 2.0
        wy3 = ty * (ty * ty - 1.0) / 6.0
        wz0 = -tz * (tz - 1.0) * (tz - 2.0) / 6.0
        wz1 = (tz * tz - 1.0) * (tz - 2.0) / 2.0
        wz2 = -tz * (tz + 1.0) * (tz - 2.0) / 2.0
        wz3 = tz * (tz * tz - 1.0) / 6.0
        acc = 0.0
        for a in range(4):
            ia = (ix - 1 + a) % n1
            if a == 0:
                wa = wx0
            elif a == 1:
                wa = wx1
            elif a == 2:
                wa = wx2
            else:
                wa = wx3
            sa = 0.0
            for b in range(4):
                ib = (iy - 1 + b) % n2
                if b == 0:
                    wb = wy0
                elif b == 1:
                    wb = wy1
                elif b == 2:
                    wb = wy2
                else:
                    wb = wy3
                sb = (
                    wz0 * vals[ia, ib, (iz - 1) % n3]
                    + wz1 * vals[ia, ib, iz % n3]
                    + wz2 * vals[ia, ib, (iz + 1) % n3]
                    + wz3 * vals[ia, ib, (iz + 2) % n3]
                )
                sa += wb * sb
            acc += wa * sa
        out[p] = acc


_trilinear_par = njit(parallel=True, cache=True)(_trilinear_impl)
_trilinear_ser = njit(parallel=False, cache=True)(_trilinear_impl)
_tricubic_par = njit(parallel=True, cache=True)(_tricubic_impl)
_tricubic_ser = njit(parallel=False, cache=True)(_tricubic_impl)


def interpolate_values(values: np.ndarray, points: np.ndarray, order: str,
                       spacing: tuple[float, float, float]) -> np.ndarray:
    """Evaluate the periodic interpolant of `values` at `points` (shape (3, ...))."""
    if order not in ORDERS:
        raise ValueError(f"interpolation order must be one of {ORDERS}, got {order!r}")
    serial = runtime.reproducible()
    if order == "linear":
        kern = _trilinear_ser if serial else _trilinear_par
    else:
        kern = _tricubic_ser if serial else _tricubic_par
    px = np.ascontiguousarray(points[0], dtype=np.float64).ravel()
    py = np.ascontiguousarray(points[1], dtype=np.float64).ravel()
    pz = np.ascontiguousarray(points[2], dtype=np.float64).ravel()
    out = np.empty(px.size, dtype=np.float64)
    h1, h2, h3 = spacing
    kern(np.ascontiguousarray(values), px, py, pz, out, h1, h2, h3)
    return out.reshape(points.shape[1:]).astype(values.dtype, copy=False)
