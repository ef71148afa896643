"""Periodic grids and dense voxel fields on the fixed domain [0, 2*pi)^3.

Layout convention: all field arrays are C-ordered with shape (N1, N2, N3),
axis x1 outermost.  Physical coordinates of voxel (i, j, k) are
(i*h1, j*h2, k*h3) with h_i = 2*pi/N_i.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridError, ResampleError

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class Grid:
    """Regular periodic lattice; dims must be even and >= 4 per axis so the
    spectral operators have a well-defined Nyquist mode."""

    dims: tuple[int, int, int]

    def __post_init__(self):
        if len(self.dims) != 3:
            raise GridError(f"grid needs exactly three dims, got {self.dims!r}")
        dims = tuple(int(n) for n in self.dims)
        for n in dims:
            if n < 4 or n % 2 != 0:
                raise GridError(f"grid dims must be even and >= 4, got {dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def spacing(self) -> tuple[float, float, float]:
        return tuple(TWO_PI / n for n in self.dims)

    @property
    def num_voxels(self) -> int:
        n1, n2, n3 = self.dims
        return n1 * n2 * n3

    @property
    def cell_volume(self) -> float:
        h1, h2, h3 = self.spacing
        return h1 * h2 * h3

    def axis_coords(self, axis: int) -> np.ndarray:
        n = self.dims[axis]
        return np.arange(n) * (TWO_PI / n)

    def coords(self) -> np.ndarray:
        """Stacked voxel coordinates, shape (3, N1, N2, N3)."""
        axes = [self.axis_coords(a) for a in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"))


def make_grid(dims) -> Grid:
    return Grid(tuple(dims))


def _check_values(grid: Grid, values: np.ndarray, name: str) -> np.ndarray:
    values = np.ascontiguousarray(values)
    if values.shape != grid.dims:
        raise GridError(f"{name} shape {values.shape} does not match grid dims {grid.dims}")
    return values


@dataclass
class ScalarField:
    """Dense real voxel data on a Grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = _check_values(self.grid, self.values, "scalar field")

    @classmethod
    def zeros(cls, grid: Grid, dtype=np.float64) -> "ScalarField":
        return cls(grid, np.zeros(grid.dims, dtype=dtype))

    @classmethod
    def from_function(cls, grid: Grid, fn, dtype=np.float64) -> "ScalarField":
        x1, x2, x3 = grid.coords()
        return cls(grid, np.asarray(fn(x1, x2, x3), dtype=dtype))

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())

    @property
    def dtype(self):
        return self.values.dtype


@dataclass
class VectorField:
    """Three scalar components sharing one grid, stored as one (3, N1, N2, N3) array."""

    grid: Grid
    data: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(self.data)
        if data.shape != (3,) + self.grid.dims:
            raise GridError(
                f"vector field shape {data.shape} does not match (3,)+{self.grid.dims}"
            )
        self.data = data

    @classmethod
    def zeros(cls, grid: Grid, dtype=np.float64) -> "VectorField":
        return cls(grid, np.zeros((3,) + grid.dims, dtype=dtype))

    @classmethod
    def from_components(cls, c1: ScalarField, c2: ScalarField, c3: ScalarField) -> "VectorField":
        if not (c1.grid == c2.grid == c3.grid):
            raise GridError("vector components must share one grid")
        return cls(c1.grid, np.stack([c1.values, c2.values, c3.values]))

    @property
    def components(self) -> tuple[ScalarField, ScalarField, ScalarField]:
        return tuple(ScalarField(self.grid, self.data[i]) for i in range(3))

    def copy(self) -> "VectorField":
        return VectorField(self.grid, self.data.copy())

    def max_pointwise_norm(self) -> float:
        return float(np.sqrt((self.data ** 2).sum(axis=0).max()))

    @property
    def dtype(self):
        return self.data.dtype


@dataclass
class LabelMap:
    """Non-negative integer segmentation aligned with a Grid; 0 is background."""

    grid: Grid
    labels: np.ndarray

    def __post_init__(self):
        labels = _check_values(self.grid, self.labels, "label map")
        if not np.issubdtype(labels.dtype, np.integer):
            raise GridError(f"label map must be integer-valued, got dtype {labels.dtype}")
        if labels.size and labels.min() < 0:
            raise GridError("label ids must be non-negative")
        self.labels = labels

    def label_ids(self) -> list[int]:
        ids = np.unique(self.labels)
        return [int(i) for i in ids if i != 0]

    def copy(self) -> "LabelMap":
        return LabelMap(self.grid, self.labels.copy())


def restrict(field, factor: int):
    """Nearest-neighbor downsampling: output voxel i takes the input sample at
    index factor*i (lattice-aligned representative, no averaging)."""
    factor = int(factor)
    if factor < 1:
        raise ResampleError(f"restriction factor must be >= 1, got {factor}")
    grid = field.grid
    for n in grid.dims:
        if n % factor != 0:
            raise ResampleError(f"factor {factor} does not divide dims {grid.dims}")
    coarse = Grid(tuple(n // factor for n in grid.dims))
    sl = (slice(None, None, factor),) * 3
    if isinstance(field, ScalarField):
        return ScalarField(coarse, field.values[sl].copy())
    if isinstance(field, LabelMap):
        return LabelMap(coarse, field.labels[sl].copy())
    if isinstance(field, VectorField):
        return VectorField(coarse, field.data[(slice(None),) + sl].copy())
    raise TypeError(f"cannot restrict {type(field).__name__}")


def _spectral_pad(values: np.ndarray, target_dims: tuple[int, int, int]) -> np.ndarray:
    """Zero-pad the full FFT spectrum to target_dims, splitting each Nyquist
    coefficient symmetrically so real band-limited inputs are reproduced
    exactly at the original sample points."""
    source_dims = values.shape
    spec = np.fft.fftn(values)
    for axis in range(3):
        ns, nt = source_dims[axis], target_dims[axis]
        if nt == ns:
            continue
        half = ns // 2
        shape = list(spec.shape)
        shape[axis] = nt
        out = np.zeros(shape, dtype=spec.dtype)

        def sl(where, arr_axis=axis):
            idx = [slice(None)] * 3
            idx[arr_axis] = where
            return tuple(idx)

        out[sl(slice(0, half))] = spec[sl(slice(0, half))]
        out[sl(slice(nt - (half - 1), nt))] = spec[sl(slice(ns - (half - 1), ns))]
        nyquist = spec[sl(half)]
        out[sl(half)] = 0.5 * nyquist
        out[sl(nt - half)] += 0.5 * nyquist
        spec = out
    scale = np.prod(target_dims) / np.prod(source_dims)
    result = np.fft.ifftn(spec).real * scale
    return np.ascontiguousarray(result, dtype=values.dtype)


def prolong_spectral(field, target: Grid):
    """Spectral prolongation (trigonometric interpolation onto the finer
    lattice); exact for band-limited fields."""
    source = field.grid
    for ns, nt in zip(source.dims, target.dims):
        if nt < ns:
            raise ResampleError(
                f"prolongation target {target.dims} smaller than source {source.dims}"
            )
    if isinstance(field, ScalarField):
        return ScalarField(target, _spectral_pad(field.values, target.dims))
    if isinstance(field, VectorField):
        padded = np.stack([_spectral_pad(field.data[i], target.dims) for i in range(3)])
        return VectorField(target, padded)
    raise TypeError(f"cannot prolong {type(field).__name__}")
