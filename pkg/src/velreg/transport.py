"""Semi-Lagrangian transport solvers.

One RK2 (Heun) characteristic trace per velocity iterate is shared by every
solve: the forward trace (departure points x - dt*v, used by the state,
incremental state, and Jacobian-determinant equations) and the backward trace
(x + dt*v, used by the adjoint equations integrated backward in time).
Divergence source terms are coupled with a trapezoidal (Crank-Nicolson-like)
update for 2nd-order consistency with the RK2 trace.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffops import fd8_divergence, fd8_gradient
from .errors import TransportError
from .grid import Grid, ScalarField, VectorField, TWO_PI
from .interp import interpolate_values

INTERP_ORDERS = ("linear", "cubic")


@dataclass
class TransportConfig:
    n_t: int = 4
    interp_order: str = "cubic"
    direction: str = "forward"

    def __post_init__(self):
        if self.n_t < 1:
            raise ValueError(f"n_t must be >= 1, got {self.n_t}")
        if self.interp_order not in INTERP_ORDERS:
            raise ValueError(f"interp_order must be in {INTERP_ORDERS}")
        if self.direction not in ("forward", "backward"):
            raise ValueError(f"direction must be 'forward' or 'backward'")

    @property
    def dt(self) -> float:
        return 1.0 / self.n_t


@dataclass
class Characteristics:
    """Departure points, one coordinate triple per voxel, wrapped into [0, 2*pi)."""

    grid: Grid
    points: np.ndarray  # (3, N1, N2, N3)
    dt: float


def cfl_number(v: VectorField, dt: float) -> float:
    return dt * v.max_pointwise_norm() / min(v.grid.spacing)


def _check_finite_velocity(v: VectorField) -> None:
    if not np.isfinite(v.data).all():
        raise TransportError("velocity field contains non-finite values")


def _interp(values: np.ndarray, points: np.ndarray, order: str, grid: Grid) -> np.ndarray:
    return interpolate_values(values, points, order, grid.spacing)


def trace_characteristics(v: VectorField, dt: float, order: str = "cubic") -> Characteristics:
    """RK2 (Heun) backward trace: x* = x - dt*v(x), X = x - dt/2*(v(x) + v(x*))."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    _check_finite_velocity(v)
    grid = v.grid
    x = grid.coords()
    xstar = x - dt * v.data
    v_star = np.stack([_interp(v.data[i], xstar, order, grid) for i in range(3)])
    points = np.mod(x - 0.5 * dt * (v.data + v_star), TWO_PI)
    return Characteristics(grid, points, dt)


def interpolate(f: ScalarField, chars: Characteristics, order: str) -> ScalarField:
    if f.grid != chars.grid:
        raise TransportError("field and characteristics grids differ")
    return ScalarField(f.grid, _interp(f.values, chars.points, order, f.grid))


def _negated(v: VectorField) -> VectorField:
    return VectorField(v.grid, -v.data)


class TransportOperators:
    """Shared per-velocity data for all transport solves at one iterate:
    both characteristic traces, the FD divergence, and the trapezoidal
    source factors evaluated at the departure points."""

    def __init__(self, v: VectorField, cfg: TransportConfig):
        _check_finite_velocity(v)
        self.v = v
        self.cfg = cfg
        self.grid = v.grid
        order = cfg.interp_order
        dt = cfg.dt
        self.forward = trace_characteristics(v, dt, order)
        self.backward = trace_characteristics(_negated(v), dt, order)
        div = fd8_divergence(v).values
        half = 0.5 * dt
        # state/Jacobian sweep: arrival at x, departure at forward trace
        self.jac_numer = 1.0 + half * _interp(div, self.forward.points, order, self.grid)
        self.jac_denom = 1.0 - half * div
        # adjoint sweep (backward in time): arrival at x, departure at backward trace
        self.adj_numer = 1.0 + half * _interp(div, self.backward.points, order, self.grid)
        self.adj_denom = 1.0 - half * div

    def advect_step(self, values: np.ndarray) -> np.ndarray:
        return _interp(values, self.forward.points, self.cfg.interp_order, self.grid)

    def advect_back_step(self, values: np.ndarray) -> np.ndarray:
        return _interp(values, self.backward.points, self.cfg.interp_order, self.grid)


def _finite_or_raise(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        raise TransportError(f"{what} produced non-finite values")


def solve_state_series(m0: ScalarField, v: VectorField, cfg: TransportConfig,
                       ops: TransportOperators = None) -> np.ndarray:
    """All n_t + 1 snapshots of the transported template, shape (n_t+1,) + dims."""
    if m0.grid != v.grid:
        raise TransportError("template and velocity grids differ")
    ops = ops or TransportOperators(v, cfg)
    series = np.empty((cfg.n_t + 1,) + m0.grid.dims, dtype=m0.values.dtype)
    series[0] = m0.values
    for j in range(cfg.n_t):
        series[j + 1] = ops.advect_step(series[j])
    _finite_or_raise(series[-1], "state solve")
    return series


def solve_state(m0: ScalarField, v: VectorField, cfg: TransportConfig,
                ops: TransportOperators = None) -> ScalarField:
    """Deformed template m(., 1) after n_t semi-Lagrangian steps."""
    series = solve_state_series(m0, v, cfg, ops)
    return ScalarField(m0.grid, series[-1].copy())


def solve_adjoint(final_lambda: ScalarField, v: VectorField, cfg: TransportConfig,
                  ops: TransportOperators = None) -> np.ndarray:
    """Backward continuity solve; returns all snapshots indexed by forward time
    (series[n_t] is the final condition, series[0] the value at t = 0)."""
    if final_lambda.grid != v.grid:
        raise TransportError("adjoint final condition and velocity grids differ")
    ops = ops or TransportOperators(v, cfg)
    series = np.empty((cfg.n_t + 1,) + v.grid.dims, dtype=final_lambda.values.dtype)
    series[cfg.n_t] = final_lambda.values
    for j in range(cfg.n_t - 1, -1, -1):
        series[j] = ops.advect_back_step(series[j + 1]) * ops.adj_numer / ops.adj_denom
    _finite_or_raise(series[0], "adjoint solve")
    return series


def solve_incremental_state(m_series: np.ndarray, v: VectorField, v_tilde: VectorField,
                            cfg: TransportConfig, ops: TransportOperators = None,
                            grad_m_series: np.ndarray = None) -> ScalarField:
    """Linearized state equation dm~/dt + v.grad(m~) = -v~.grad(m), m~(0) = 0;
    the advective part follows the shared characteristics, the source is
    integrated trapezoidally along them.  Returns m~(., 1)."""
    ops = ops or TransportOperators(v, cfg)
    if grad_m_series is None:
        grid = v.grid
        grad_m_series = np.stack(
            [fd8_gradient(ScalarField(grid, m_series[j])).data for j in range(cfg.n_t + 1)]
        )
    vt = v_tilde.data
    half = 0.5 * cfg.dt
    source_next = -(vt[0] * grad_m_series[0][0]
                    + vt[1] * grad_m_series[0][1]
                    + vt[2] * grad_m_series[0][2])
    current = np.zeros(v.grid.dims, dtype=vt.dtype)
    for j in range(cfg.n_t):
        source_here = source_next
        source_next = -(vt[0] * grad_m_series[j + 1][0]
                        + vt[1] * grad_m_series[j + 1][1]
                        + vt[2] * grad_m_series[j + 1][2])
        current = ops.advect_step(current + half * source_here) + half * source_next
    _finite_or_raise(current, "incremental state solve")
    return ScalarField(v.grid, current)


def jacobian_determinant(v: VectorField, cfg: TransportConfig,
                         ops: TransportOperators = None) -> ScalarField:
    """Determinant of the deformation gradient at t = 1 via the scalar
    evolution dJ/dt + v.grad(J) = J div(v), J(0) = 1."""
    ops = ops or TransportOperators(v, cfg)
    current = np.ones(v.grid.dims, dtype=v.data.dtype)
    for _ in range(cfg.n_t):
        current = ops.advect_step(current) * ops.jac_numer / ops.jac_denom
    _finite_or_raise(current, "Jacobian-determinant solve")
    return ScalarField(v.grid, current)
