"""Differential and regularization operators.

First-order derivatives (gradient, divergence) use an 8th-order centered
finite-difference stencil with periodic wrap.  The regularization operator A
(negative vector Laplacian, H1 seminorm), its shifted inverse, and the
near-incompressibility projection K are applied spectrally through real FFTs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridError
from .grid import Grid, ScalarField, VectorField, TWO_PI

# Centered 8th-order first-derivative coefficients for offsets +1..+4
# (antisymmetric for the negative offsets).
_FD8_COEFFS = (4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0)
FD8_MIN_DIM = 9


class SpectralWorkspace:
    """Precomputed integer wavenumber tables and FFT helpers for one grid.

    Holds per-call scratch implicitly through numpy; not intended to be shared
    across concurrent workers.
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        n1, n2, n3 = grid.dims
        k1 = (np.fft.fftfreq(n1) * n1).reshape(n1, 1, 1)
        k2 = (np.fft.fftfreq(n2) * n2).reshape(1, n2, 1)
        k3 = np.arange(n3 // 2 + 1, dtype=np.float64).reshape(1, 1, n3 // 2 + 1)
        self.k = (k1, k2, k3)
        self.ksq = k1 ** 2 + k2 ** 2 + k3 ** 2
        with np.errstate(divide="ignore"):
            inv = 1.0 / self.ksq
        inv[0, 0, 0] = 0.0
        self.inv_ksq = inv
        # Hermitian multiplicity of each retained rfft mode (2 for modes whose
        # conjugate partner is dropped, 1 on the kz=0 and kz=Nyquist planes).
        mult = np.full(self.ksq.shape, 2.0)
        mult[:, :, 0] = 1.0
        if n3 % 2 == 0:
            mult[:, :, -1] = 1.0
        self.mode_multiplicity = mult

    def forward(self, values: np.ndarray) -> np.ndarray:
        return np.fft.rfftn(values)

    def inverse(self, spec: np.ndarray) -> np.ndarray:
        return np.fft.irfftn(spec, s=self.grid.dims)


@dataclass
class RegOperators:
    """Regularization weights plus the spectral workspace they act through."""

    beta_v: float
    beta_w: float
    workspace: SpectralWorkspace = None

    def __post_init__(self):
        if not self.beta_v > 0:
            raise ValueError(f"beta_v must be positive, got {self.beta_v}")
        if self.beta_w < 0:
            raise ValueError(f"beta_w must be non-negative, got {self.beta_w}")

    @classmethod
    def for_grid(cls, grid: Grid, beta_v: float, beta_w: float) -> "RegOperators":
        return cls(beta_v, beta_w, SpectralWorkspace(grid))


def _require_fd8(grid: Grid) -> None:
    if min(grid.dims) < FD8_MIN_DIM:
        raise GridError(
            f"8th-order stencil needs dims >= {FD8_MIN_DIM}, got {grid.dims}"
        )


def _fd8_axis(values: np.ndarray, axis: int, h: float) -> np.ndarray:
    out = np.zeros_like(values)
    for offset, c in enumerate(_FD8_COEFFS, start=1):
        out += c * (np.roll(values, -offset, axis) - np.roll(values, offset, axis))
    out /= h
    return out


def fd8_gradient(f: ScalarField) -> VectorField:
    _require_fd8(f.grid)
    h = f.grid.spacing
    data = np.stack([_fd8_axis(f.values, a, h[a]) for a in range(3)])
    return VectorField(f.grid, data)


def fd8_divergence(v: VectorField) -> ScalarField:
    _require_fd8(v.grid)
    h = v.grid.spacing
    out = _fd8_axis(v.data[0], 0, h[0])
    out += _fd8_axis(v.data[1], 1, h[1])
    out += _fd8_axis(v.data[2], 2, h[2])
    return ScalarField(v.grid, out)


def _per_component_multiplier(v: VectorField, ws: SpectralWorkspace,
                              multiplier: np.ndarray) -> VectorField:
    out = np.empty_like(v.data)
    for i in range(3):
        out[i] = ws.inverse(multiplier * ws.forward(v.data[i])).astype(v.data.dtype)
    return VectorField(v.grid, out)


def apply_A(v: VectorField, ops: RegOperators) -> VectorField:
    """Negative vector Laplacian (spectral symbol |k|^2); kills constants."""
    return _per_component_multiplier(v, ops.workspace, ops.workspace.ksq)


def apply_inv_shifted_A(v: VectorField, ops: RegOperators, shift: float) -> VectorField:
    """Spectral inverse of (beta_v*A + shift*I); preconditioner support."""
    if not shift > 0:
        raise ValueError(f"shift must be positive, got {shift}")
    ws = ops.workspace
    return _per_component_multiplier(v, ws, 1.0 / (ops.beta_v * ws.ksq + shift))


def apply_K(g: VectorField, ops: RegOperators) -> VectorField:
    """Blend toward the Leray projection: for k != 0 the parallel-to-k part of
    each mode is scaled down by c(k) = beta_w*b / (beta_v*a + beta_w*b) with
    a = |k|^2, b = 1 + |k|^2; the k = 0 mode passes through unchanged.
    beta_w = 0 gives the identity, beta_w -> inf the exact Leray projection."""
    if ops.beta_w == 0.0:
        return g.copy()
    ws = ops.workspace
    a = ws.ksq
    b = 1.0 + ws.ksq
    c = (ops.beta_w * b) / (ops.beta_v * a + ops.beta_w * b)
    spec = [ws.forward(g.data[i]) for i in range(3)]
    kdot = ws.k[0] * spec[0] + ws.k[1] * spec[1] + ws.k[2] * spec[2]
    scale = c * ws.inv_ksq * kdot
    out = np.empty_like(g.data)
    for i in range(3):
        out[i] = ws.inverse(spec[i] - ws.k[i] * scale).astype(g.data.dtype)
    return VectorField(g.grid, out)


def h1_energy(f: ScalarField, ws: SpectralWorkspace) -> float:
    """Spectral H1 norm squared: integral of f^2 + |grad f|^2 over the box."""
    n = f.grid.num_voxels
    spec = ws.forward(f.values) / n
    weights = ws.mode_multiplicity * (1.0 + ws.ksq)
    return float(TWO_PI ** 3 * np.sum(weights * (spec.real ** 2 + spec.imag ** 2)))
