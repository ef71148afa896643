"""Synthetic benchmark generation.

Template images are unions of star-shaped regions whose radial boundary is
the magnitude of a high-degree spherical harmonic evaluated about randomly
offset centers; intensities/labels are the shape indices 1..num_shapes
(overlaps resolve to the larger index).  The ground-truth velocity is a
band-limited trigonometric sum with frequency content up to K per axis.
Image coordinates are centered: voxel x maps to x - pi in (-pi, pi]^3.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import Grid, LabelMap, ScalarField, VectorField
from .transport import TransportConfig, TransportOperators, solve_state


@dataclass
class SynthSpec:
    grid: Grid
    num_shapes: int = 10
    degree: int = 8      # spherical harmonic l
    order: int = 6       # spherical harmonic m
    velocity_frequency: int = 4
    seed: int = 0
    fixed_radius: float = None  # test hook: constant-radius balls

    def __post_init__(self):
        if self.num_shapes < 1:
            raise ValueError("num_shapes must be >= 1")
        if not 0 <= self.order <= self.degree:
            raise ValueError("need 0 <= order <= degree")
        if self.velocity_frequency < 1:
            raise ValueError("velocity frequency K must be >= 1")


def assoc_legendre(l: int, m: int, x) -> np.ndarray:
    """Associated Legendre P_l^m with Condon-Shortley phase, by the standard
    upward recurrence; accepts scalars or arrays with |x| <= 1."""
    if not 0 <= m <= l:
        raise ValueError(f"need 0 <= m <= l, got l={l}, m={m}")
    x = np.asarray(x, dtype=np.float64)
    if np.any(np.abs(x) > 1.0 + 1e-14):
        raise ValueError("associated Legendre argument must satisfy |x| <= 1")
    # P_m^m = (-1)^m (2m-1)!! (1-x^2)^(m/2)
    pmm = np.ones_like(x)
    if m > 0:
        s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
        pmm = (-1.0) ** m * float(math.prod(range(1, 2 * m, 2))) * s ** m
    if l == m:
        return pmm
    pm1 = x * (2 * m + 1) * pmm  # P_{m+1}^m
    if l == m + 1:
        return pm1
    for ll in range(m + 2, l + 1):
        pmm, pm1 = pm1, (x * (2 * ll - 1) * pm1 - (ll + m - 1) * pmm) / (ll - m)
    return pm1


def spherical_harmonic_magnitude(l: int, m: int, theta, phi) -> np.ndarray:
    """|Y_l^m(theta, phi)| with azimuth theta in the unit-modulus phase factor
    and the polar angle phi entering P_l^m(cos(phi))."""
    norm = math.sqrt((2 * l + 1) / (4.0 * math.pi)
                     * math.factorial(l - m) / math.factorial(l + m))
    del theta  # |exp(i*m*theta)| == 1
    return norm * np.abs(assoc_legendre(l, m, np.cos(phi)))


QUARTER_TURNS = (0.0, 0.5 * math.pi, math.pi, 1.5 * math.pi)
OFFSET_BOUND = 0.4 * math.pi


def make_template(spec: SynthSpec) -> tuple[ScalarField, LabelMap]:
    """Template image plus its label map; intensity at a voxel is the largest
    shape index whose indicator covers it (0 = background)."""
    grid = spec.grid
    rng = np.random.default_rng(spec.seed)
    centered = grid.coords() - math.pi
    labels = np.zeros(grid.dims, dtype=np.int32)
    for i in range(1, spec.num_shapes + 1):
        center = rng.uniform(-OFFSET_BOUND, OFFSET_BOUND, size=3)
        theta_hat = QUARTER_TURNS[rng.integers(0, 4)]
        phi_hat = QUARTER_TURNS[rng.integers(0, 4)]
        u = centered - center.reshape(3, 1, 1, 1)
        r = np.sqrt((u ** 2).sum(axis=0))
        if spec.fixed_radius is not None:
            radius = spec.fixed_radius
        else:
            with np.errstate(invalid="ignore", divide="ignore"):
                cos_phi = np.where(r > 0, u[2] / np.where(r > 0, r, 1.0), 1.0)
            phi = np.arccos(np.clip(cos_phi, -1.0, 1.0))
            theta = np.arctan2(u[1], u[0])
            radius = spherical_harmonic_magnitude(
                spec.degree, spec.order, theta + theta_hat, phi + phi_hat)
        labels[r <= radius] = i
    m0 = ScalarField(grid, labels.astype(np.float64))
    return m0, LabelMap(grid, labels)


def make_velocity(K: int, grid: Grid) -> VectorField:
    """Ground-truth analytic velocity: per-axis trigonometric sums with
    amplitudes k^-0.5 for k = 1..K, evaluated on the centered lattice."""
    if K < 1:
        raise ValueError("K must be >= 1")
    x, y, z = grid.coords() - math.pi
    vx = np.zeros(grid.dims)
    vy = np.zeros(grid.dims)
    vz = np.zeros(grid.dims)
    for k in range(1, K + 1):
        a = k ** -0.5
        vx += a * np.cos(k * y) * np.cos(k * x)
        vy += a * np.sin(k * z) * np.sin(k * y)
        vz += a * np.cos(k * x) * np.cos(k * z)
    return VectorField(grid, np.stack([vx, vy, vz]))


def transport_labels(labels: LabelMap, v: VectorField, cfg: TransportConfig,
                     ops: TransportOperators = None) -> LabelMap:
    """Advect each label's indicator with the state solver and re-threshold at
    0.5; overlap ties go to the larger label index."""
    ops = ops or TransportOperators(v, cfg)
    out = np.zeros(labels.grid.dims, dtype=np.int32)
    for lab in labels.label_ids():
        indicator = ScalarField(labels.grid, (labels.labels == lab).astype(np.float64))
        moved = solve_state(indicator, v, cfg, ops)
        out[moved.values >= 0.5] = lab
    return LabelMap(labels.grid, out)


def make_reference(m0: ScalarField, labels: LabelMap, v: VectorField,
                   cfg: TransportConfig) -> tuple[ScalarField, LabelMap]:
    """Reference image by transporting the template along v, plus the
    correspondingly transported label map."""
    ops = TransportOperators(v, cfg)
    m1 = solve_state(m0, v, cfg, ops)
    l1 = transport_labels(labels, v, cfg, ops)
    return m1, l1
