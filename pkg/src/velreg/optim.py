"""Objective, reduced gradient, Gauss-Newton Hessian matvec, PCG, and the
outer Gauss-Newton registration driver.

The reduced gradient is g = beta_v*A*v + K[integral of lambda*grad(m) dt]
with the state solved forward and the adjoint (continuity equation) solved
backward along shared characteristics; the Gauss-Newton matvec replaces
(m, lambda) by their incremental counterparts.  Inner products are
h1*h2*h3-weighted sums throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .diffops import (RegOperators, apply_A, apply_K, apply_inv_shifted_A,
                      fd8_gradient, h1_energy, fd8_divergence)
from .errors import GridError, ObjectiveError
from .grid import ScalarField, VectorField
from .transport import (TransportConfig, TransportOperators, cfl_number,
                        jacobian_determinant, solve_adjoint,
                        solve_incremental_state, solve_state_series)


@dataclass
class ArmijoConfig:
    c1: float = 1e-4
    backtrack: float = 0.5
    max_trials: int = 20


@dataclass
class RegistrationConfig:
    beta_v: float = 1e-2
    beta_w: float = 0.0
    n_t: int = 4
    interp_order: str = "cubic"
    gtol: float = 5e-2
    max_gn_iters: int = 50
    pcg_max_iters: int = 50
    armijo: ArmijoConfig = field(default_factory=ArmijoConfig)

    def __post_init__(self):
        if not 0 < self.gtol < 1:
            raise ValueError(f"gtol must lie in (0,1), got {self.gtol}")
        if self.max_gn_iters < 1 or self.pcg_max_iters < 1:
            raise ValueError("iteration caps must be positive")

    def transport(self) -> TransportConfig:
        return TransportConfig(n_t=self.n_t, interp_order=self.interp_order)


@dataclass
class IterationRecord:
    iteration: int
    objective: float
    rel_grad_norm: float
    pcg_iterations: int
    step_length: float
    cfl: float


@dataclass
class SolverDiagnostics:
    iterations: list = field(default_factory=list)
    relative_residual: float = math.nan
    j_min: float = math.nan
    j_max: float = math.nan
    converged: bool = False
    termination_reason: str = ""
    rungs: list = field(default_factory=list)  # continuation only

    @property
    def gn_iterations(self) -> int:
        return max(len(self.iterations) - 1, 0)


def inner(a: np.ndarray, b: np.ndarray, cell_volume: float) -> float:
    return float(np.dot(a.ravel(), b.ravel())) * cell_volume


def weighted_norm(a: np.ndarray, cell_volume: float) -> float:
    return math.sqrt(max(inner(a, a, cell_volume), 0.0))


class ObjectiveState:
    """Per-velocity cache: characteristics, state/adjoint series, gradients.

    Build a fresh instance whenever v changes; everything is lazy, so a
    line-search trial only pays for the state solve."""

    def __init__(self, m0: ScalarField, m1: ScalarField, v: VectorField,
                 cfg: RegistrationConfig, ops: RegOperators):
        if not (m0.grid == m1.grid == v.grid):
            raise GridError("template, reference, and velocity grids differ")
        self.m0 = m0
        self.m1 = m1
        self.v = v
        self.cfg = cfg
        self.ops = ops
        self._tops = None
        self._m_series = None
        self._grad_m_series = None
        self._lambda_series = None
        self._objective = None
        self._gradient = None

    @property
    def transport_ops(self) -> TransportOperators:
        if self._tops is None:
            self._tops = TransportOperators(self.v, self.cfg.transport())
        return self._tops

    @property
    def m_series(self) -> np.ndarray:
        if self._m_series is None:
            self._m_series = solve_state_series(
                self.m0, self.v, self.cfg.transport(), self.transport_ops)
        return self._m_series

    @property
    def deformed(self) -> ScalarField:
        return ScalarField(self.m0.grid, self.m_series[-1])

    @property
    def grad_m_series(self) -> np.ndarray:
        if self._grad_m_series is None:
            grid = self.m0.grid
            series = self.m_series
            self._grad_m_series = np.stack(
                [fd8_gradient(ScalarField(grid, series[j])).data
                 for j in range(series.shape[0])])
        return self._grad_m_series

    @property
    def lambda_series(self) -> np.ndarray:
        if self._lambda_series is None:
            final = ScalarField(self.m0.grid, self.m1.values - self.m_series[-1])
            self._lambda_series = solve_adjoint(
                final, self.v, self.cfg.transport(), self.transport_ops)
        return self._lambda_series

    @property
    def objective(self) -> float:
        if self._objective is None:
            hvol = self.m0.grid.cell_volume
            mis = self.m_series[-1] - self.m1.values
            value = 0.5 * inner(mis, mis, hvol)
            if self.cfg.beta_v > 0:
                av = apply_A(self.v, self.ops)
                value += 0.5 * self.cfg.beta_v * inner(av.data, self.v.data, hvol)
            if self.cfg.beta_w > 0:
                div = fd8_divergence(self.v)
                value += 0.5 * self.cfg.beta_w * h1_energy(div, self.ops.workspace)
            if not math.isfinite(value):
                raise ObjectiveError("objective evaluated to a non-finite value")
            self._objective = value
        return self._objective

    def _body_force(self, lam_series: np.ndarray) -> VectorField:
        """Trapezoidal time integral of lambda * grad(m)."""
        dt = self.cfg.transport().dt
        n_t = self.cfg.n_t
        grad_m = self.grad_m_series
        acc = np.zeros((3,) + self.m0.grid.dims, dtype=np.float64)
        for j in range(n_t + 1):
            w = 0.5 * dt if j in (0, n_t) else dt
            acc += w * lam_series[j] * grad_m[j]
        return VectorField(self.m0.grid, acc)

    @property
    def gradient(self) -> VectorField:
        if self._gradient is None:
            body = apply_K(self._body_force(self.lambda_series), self.ops)
            av = apply_A(self.v, self.ops)
            g = VectorField(self.m0.grid, self.cfg.beta_v * av.data + body.data)
            if not np.isfinite(g.data).all():
                raise ObjectiveError("reduced gradient contains non-finite values")
            self._gradient = g
        return self._gradient


def evaluate_objective(m0: ScalarField, m1: ScalarField, v: VectorField,
                       cfg: RegistrationConfig, ops: RegOperators = None) -> float:
    ops = ops or RegOperators.for_grid(m0.grid, cfg.beta_v, cfg.beta_w)
    return ObjectiveState(m0, m1, v, cfg, ops).objective


def reduced_gradient(m0: ScalarField, m1: ScalarField, v: VectorField,
                     cfg: RegistrationConfig, ops: RegOperators = None) -> VectorField:
    ops = ops or RegOperators.for_grid(m0.grid, cfg.beta_v, cfg.beta_w)
    return ObjectiveState(m0, m1, v, cfg, ops).gradient


def hessian_matvec(v_tilde: VectorField, state: ObjectiveState,
                   cfg: RegistrationConfig = None) -> VectorField:
    """Gauss-Newton matvec: incremental state forward, incremental adjoint
    backward (final condition -m~(1)), then beta_v*A*v~ + K[time integral]."""
    cfg = cfg or state.cfg
    tcfg = cfg.transport()
    tops = state.transport_ops
    m_tilde = solve_incremental_state(state.m_series, state.v, v_tilde, tcfg,
                                      tops, state.grad_m_series)
    final = ScalarField(state.m0.grid, -m_tilde.values)
    lam_tilde = solve_adjoint(final, state.v, tcfg, tops)
    body = apply_K(state._body_force(lam_tilde), state.ops)
    av = apply_A(v_tilde, state.ops)
    return VectorField(state.m0.grid, cfg.beta_v * av.data + body.data)


@dataclass
class PcgInfo:
    iterations: int
    converged: bool
    negative_curvature: bool = False


def pcg_solve(matvec, rhs: VectorField, precond, tol: float,
              max_iters: int) -> tuple[VectorField, PcgInfo]:
    """Matrix-free PCG; stops when the preconditioned residual norm falls
    below tol relative to its initial value, or on the iteration cap, or on
    detected negative curvature (returns the current iterate)."""
    x = VectorField.zeros(rhs.grid, rhs.dtype)
    if not np.any(rhs.data):
        return x, PcgInfo(0, True)
    r = rhs.copy()
    z = precond(r)
    p = z.copy()
    rz = float(np.dot(r.data.ravel(), z.data.ravel()))
    z0_norm = float(np.linalg.norm(z.data))
    if z0_norm == 0.0:
        return x, PcgInfo(0, True)
    for it in range(1, max_iters + 1):
        hp = matvec(p)
        php = float(np.dot(p.data.ravel(), hp.data.ravel()))
        if php <= 0.0:
            return x, PcgInfo(it - 1, False, negative_curvature=True)
        alpha = rz / php
        x.data += alpha * p.data
        r.data -= alpha * hp.data
        z = precond(r)
        if float(np.linalg.norm(z.data)) / z0_norm <= tol:
            return x, PcgInfo(it, True)
        rz_new = float(np.dot(r.data.ravel(), z.data.ravel()))
        p = VectorField(p.grid, z.data + (rz_new / rz) * p.data)
        rz = rz_new
    return x, PcgInfo(max_iters, False)


def relative_residual(m0: ScalarField, m1: ScalarField, m_final: ScalarField) -> float:
    """Squared post-registration mismatch over squared pre-registration mismatch."""
    num = float(np.sum((m_final.values - m1.values) ** 2))
    den = float(np.sum((m0.values - m1.values) ** 2))
    if den == 0.0:
        return 0.0
    return num / den


def _intensity_shift(m0: ScalarField, m1: ScalarField) -> float:
    """Preconditioner shift: the squared joint intensity range, so that for
    [0,1]-normalized images the preconditioner is the spectral inverse of
    (beta_v*A + I) and the solve is equivariant under joint rescaling."""
    lo = min(float(m0.values.min()), float(m1.values.min()))
    hi = max(float(m0.values.max()), float(m1.values.max()))
    scale = hi - lo
    return scale * scale if scale > 0 else 1.0


_STAGNATION_RTOL = 1e-6
_STEP_ATOL = 1e-10


def gauss_newton_register(m0: ScalarField, m1: ScalarField, cfg: RegistrationConfig,
                          v0: VectorField = None,
                          ops: RegOperators = None) -> tuple[VectorField, SolverDiagnostics]:
    """Outer Gauss-Newton iteration with inexact PCG inner solves and Armijo
    backtracking on the full objective; v0 enables warm starts."""
    if m0.grid != m1.grid:
        raise GridError("template and reference grids differ")
    grid = m0.grid
    ops = ops or RegOperators.for_grid(grid, cfg.beta_v, cfg.beta_w)
    shift = _intensity_shift(m0, m1)
    hvol = grid.cell_volume
    dt = 1.0 / cfg.n_t

    v = v0.copy() if v0 is not None else VectorField.zeros(grid)
    state = ObjectiveState(m0, m1, v, cfg, ops)
    j_cur = state.objective
    g = state.gradient
    gnorm = weighted_norm(g.data, hvol)
    gnorm0 = gnorm

    diag = SolverDiagnostics()
    diag.iterations.append(IterationRecord(0, j_cur, 1.0 if gnorm0 > 0 else 0.0,
                                           0, 0.0, cfl_number(v, dt)))
    reason = "max-iterations"
    converged = False
    stagnant = 0

    if gnorm0 == 0.0:
        reason, converged = "zero-gradient", True
    else:
        for k in range(1, cfg.max_gn_iters + 1):
            relgrad = gnorm / gnorm0
            if relgrad <= cfg.gtol:
                reason, converged = "gradient-tolerance", True
                break
            eta = min(0.5, math.sqrt(relgrad))
            neg_g = VectorField(grid, -g.data)
            direction, info = pcg_solve(
                lambda w: hessian_matvec(w, state, cfg),
                neg_g,
                lambda w: apply_inv_shifted_A(w, ops, shift),
                eta, cfg.pcg_max_iters)
            gd = inner(g.data, direction.data, hvol)
            if gd >= 0.0 or not np.any(direction.data):
                # PCG breakdown: fall back to preconditioned steepest descent
                direction = apply_inv_shifted_A(neg_g, ops, shift)
                gd = inner(g.data, direction.data, hvol)
            alpha = 1.0
            accepted = False
            for _ in range(cfg.armijo.max_trials):
                v_try = VectorField(grid, v.data + alpha * direction.data)
                state_try = ObjectiveState(m0, m1, v_try, cfg, ops)
                try:
                    j_try = state_try.objective
                except ObjectiveError:
                    alpha *= cfg.armijo.backtrack
                    continue
                if j_try <= j_cur + cfg.armijo.c1 * alpha * gd:
                    accepted = True
                    break
                alpha *= cfg.armijo.backtrack
            if not accepted:
                reason = "line-search-failure"
                break
            step_norm = alpha * weighted_norm(direction.data, hvol)
            j_prev, j_cur = j_cur, j_try
            v, state = v_try, state_try
            g = state.gradient
            gnorm = weighted_norm(g.data, hvol)
            diag.iterations.append(IterationRecord(
                k, j_cur, gnorm / gnorm0, info.iterations, alpha, cfl_number(v, dt)))
            rel_decrease = (j_prev - j_cur) / max(abs(j_prev), 1e-300)
            stagnant = stagnant + 1 if rel_decrease < _STAGNATION_RTOL else 0
            if stagnant >= 2:
                reason = "objective-stagnation"
                break
            if step_norm < _STEP_ATOL:
                reason = "step-stagnation"
                break
        else:
            reason = "max-iterations"
        if gnorm / gnorm0 <= cfg.gtol:
            converged = True
            if reason == "max-iterations":
                reason = "gradient-tolerance"

    j_field = jacobian_determinant(v, cfg.transport(), state.transport_ops)
    diag.j_min = float(j_field.values.min())
    diag.j_max = float(j_field.values.max())
    diag.relative_residual = relative_residual(m0, m1, state.deformed)
    diag.converged = converged
    diag.termination_reason = reason
    return v, diag
