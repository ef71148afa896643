"""Two-stage regularization-parameter search and decade-ladder continuation.

Stage one fixes beta_w = beta_w_max and walks beta_v down by decades from
beta_v_max (warm-starting each solve from the previous velocity) until the
Jacobian bound [J_bound, 1/J_bound] is breached, then refines with a
geometric binary search that stops once the relative change falls under 10%
of the previous valid beta_v.  Stage two fixes beta_v = beta_v_star and walks
beta_w down by decades, returning the last value that kept the Jacobian in
bounds.  Continuation replays the decade ladders toward known targets without
any bound checks.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import SearchError
from .grid import ScalarField, VectorField
from .optim import RegistrationConfig, SolverDiagnostics, gauss_newton_register


@dataclass
class SearchConfig:
    j_min_bound: float = 0.25
    beta_v_max: float = 1.0
    beta_v_min: float = 1e-5
    beta_w_max: float = 1e-5
    beta_w_min: float = 1e-7
    binary_search_rel_tol: float = 0.10

    def __post_init__(self):
        if not 0.0 < self.j_min_bound < 1.0:
            raise ValueError(f"J bound must lie in (0,1), got {self.j_min_bound}")
        if not self.beta_v_min < self.beta_v_max:
            raise ValueError("beta_v_min must be below beta_v_max")
        if not self.beta_w_min < self.beta_w_max:
            raise ValueError("beta_w_min must be below beta_w_max")


@dataclass
class TrialRecord:
    beta_v: float
    beta_w: float
    j_min: float
    j_max: float
    residual: float
    gn_iterations: int
    seconds: float
    accepted: bool


@dataclass
class SearchResult:
    beta_v_star: float
    beta_w_star: float
    trials: list
    total_solves: int
    velocity: VectorField = None
    diagnostics: SolverDiagnostics = None


TRIAL_LOG_COLUMNS = ("beta_v", "beta_w", "j_min", "j_max", "residual",
                     "gn_iterations", "seconds", "accepted")


def format_trial_log(trials, include_seconds: bool = True) -> str:
    cols = [c for c in TRIAL_LOG_COLUMNS if include_seconds or c != "seconds"]
    lines = ["\t".join(cols)]
    for t in trials:
        row = []
        for c in cols:
            val = getattr(t, c)
            row.append(f"{val:.6e}" if isinstance(val, float) else str(int(val)))
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


def in_bounds(j_field: ScalarField, bound: float) -> bool:
    """True iff min(J) >= bound and max(J) <= 1/bound."""
    if not 0.0 < bound < 1.0:
        raise ValueError(f"Jacobian bound must lie in (0,1), got {bound}")
    jmin = float(j_field.values.min())
    jmax = float(j_field.values.max())
    return jmin >= bound and jmax <= 1.0 / bound


def _extrema_in_bounds(diag: SolverDiagnostics, bound: float) -> bool:
    return diag.j_min >= bound and diag.j_max <= 1.0 / bound


class _Search:
    """Shared solve-and-log plumbing for both search stages."""

    def __init__(self, m0, m1, cfg: RegistrationConfig, search: SearchConfig):
        self.m0 = m0
        self.m1 = m1
        self.cfg = cfg
        self.search = search
        self.trials: list[TrialRecord] = []

    def solve(self, beta_v: float, beta_w: float, warm: VectorField):
        cfg = replace(self.cfg, beta_v=beta_v, beta_w=beta_w)
        t0 = time.perf_counter()
        v, diag = gauss_newton_register(self.m0, self.m1, cfg, v0=warm)
        accepted = _extrema_in_bounds(diag, self.search.j_min_bound)
        self.trials.append(TrialRecord(
            beta_v, beta_w, diag.j_min, diag.j_max, diag.relative_residual,
            diag.gn_iterations, time.perf_counter() - t0, accepted))
        return v, diag, accepted


def _decades_down(start: float, floor: float):
    """start, start/10, ... clipped so the floor itself is the last value."""
    vals = []
    b = start
    while b > floor * (1.0 + 1e-12):
        vals.append(b)
        b /= 10.0
    vals.append(floor)
    return vals


def search_beta_v(m0: ScalarField, m1: ScalarField, cfg: RegistrationConfig,
                  search: SearchConfig, _ctx: _Search = None):
    """Stage one; returns (beta_v_star, velocity, context with trial log)."""
    ctx = _ctx or _Search(m0, m1, cfg, search)
    valid_beta = None
    valid_v = None
    invalid_beta = None
    warm = None
    for beta_v in _decades_down(search.beta_v_max, search.beta_v_min):
        v, diag, ok = ctx.solve(beta_v, search.beta_w_max, warm)
        warm = v
        if ok:
            valid_beta, valid_v = beta_v, v
        else:
            invalid_beta = beta_v
            break
    if valid_beta is None:
        raise SearchError(
            f"regularization cannot satisfy Jacobian bound {search.j_min_bound}: "
            f"even beta_v = {search.beta_v_max} breaches it")
    if invalid_beta is not None:
        # geometric binary search inside (invalid, valid)
        lo, hi = invalid_beta, valid_beta
        for _ in range(32):
            if hi / lo <= 1.0 / (1.0 - search.binary_search_rel_tol):
                break
            mid = math.sqrt(lo * hi)
            v, diag, ok = ctx.solve(mid, search.beta_w_max, warm)
            warm = v
            if ok:
                rel_change = (hi - mid) / hi
                hi, valid_v = mid, v
                if rel_change < search.binary_search_rel_tol:
                    break
            else:
                lo = mid
        valid_beta = hi
    return valid_beta, valid_v, ctx


def search_beta_w(m0: ScalarField, m1: ScalarField, beta_v_star: float,
                  cfg: RegistrationConfig, search: SearchConfig,
                  warm: VectorField = None, _ctx: _Search = None):
    """Stage two; returns (beta_w_star, velocity, context with trial log)."""
    ctx = _ctx or _Search(m0, m1, cfg, search)
    valid_beta = None
    valid_v = None
    for beta_w in _decades_down(search.beta_w_max, search.beta_w_min):
        v, diag, ok = ctx.solve(beta_v_star, beta_w, warm)
        warm = v
        if ok:
            valid_beta, valid_v = beta_w, v
        else:
            break
    if valid_beta is None:
        raise SearchError(
            f"beta_w = {search.beta_w_max} already breaches the Jacobian bound "
            f"{search.j_min_bound} at beta_v = {beta_v_star}")
    return valid_beta, valid_v, ctx


def search_parameters(m0: ScalarField, m1: ScalarField, cfg: RegistrationConfig,
                      search: SearchConfig) -> SearchResult:
    """Full two-stage search with a merged trial log."""
    beta_v_star, v_star, ctx = search_beta_v(m0, m1, cfg, search)
    beta_w_star, v_final, ctx = search_beta_w(
        m0, m1, beta_v_star, cfg, search, warm=v_star, _ctx=ctx)
    last_accepted = [t for t in ctx.trials if t.accepted][-1]
    diag = SolverDiagnostics(
        relative_residual=last_accepted.residual,
        j_min=last_accepted.j_min, j_max=last_accepted.j_max,
        converged=True, termination_reason="search-complete")
    return SearchResult(beta_v_star, beta_w_star, ctx.trials, len(ctx.trials),
                        velocity=v_final, diagnostics=diag)


def continuation_ladder(beta_star: float, beta_max: float) -> list[float]:
    """Decade values beta_max, beta_max/10, ..., 10^ceil(log10(beta_star)),
    followed by beta_star itself when distinct."""
    if beta_star > beta_max:
        return [beta_star]
    k = math.ceil(math.log10(beta_star))
    ladder = []
    b = beta_max
    while b > 10.0 ** k * (1.0 + 1e-12):
        ladder.append(b)
        b /= 10.0
    ladder.append(10.0 ** k)
    if not math.isclose(ladder[-1], beta_star, rel_tol=1e-9):
        ladder.append(beta_star)
    return ladder


def continuation_register(m0: ScalarField, m1: ScalarField, beta_v_star: float,
                          beta_w_star: float, cfg: RegistrationConfig,
                          search: SearchConfig = None
                          ) -> tuple[VectorField, SolverDiagnostics]:
    """Replay the search ladders toward known targets, warm-starting every
    rung and skipping all bound checks; diagnostics carry a per-rung record."""
    search = search or SearchConfig()
    rungs = []
    v = None
    diag = None
    for beta_v in continuation_ladder(beta_v_star, search.beta_v_max):
        c = replace(cfg, beta_v=beta_v, beta_w=search.beta_w_max)
        v, diag = gauss_newton_register(m0, m1, c, v0=v)
        rungs.append(("beta_v", beta_v, search.beta_w_max, diag.gn_iterations))
    stage2 = continuation_ladder(beta_w_star, search.beta_w_max)
    if stage2 and math.isclose(stage2[0], search.beta_w_max, rel_tol=1e-9):
        stage2 = stage2[1:]  # the stage-1 tail already solved at beta_w_max
    for beta_w in stage2:
        c = replace(cfg, beta_v=beta_v_star, beta_w=beta_w)
        v, diag = gauss_newton_register(m0, m1, c, v0=v)
        rungs.append(("beta_w", beta_v_star, beta_w, diag.gn_iterations))
    diag.rungs = rungs
    return v, diag
