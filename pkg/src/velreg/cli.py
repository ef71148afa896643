"""Command-line driver.

Subcommands: register, search, continue, synth, transport, metrics,
experiment.  Exit codes: 0 success, 1 solver failure, 2 I/O or validation
failure.  Every solver run writes delimited diagnostics sufficient to rebuild
the result tables without re-running; in --reproducible mode wall-clock
columns are omitted so repeated runs are bit-identical.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import runtime
from .autoparam import (SearchConfig, continuation_register, format_trial_log,
                        search_parameters)
from .errors import (GridError, ObjectiveError, ResampleError, SearchError,
                     TransportError, VelregError, VolumeIOError)
from .experiment import (ExperimentPlan, default_interp_order,
                         format_trend_table, run_experiment)
from .grid import Grid, LabelMap, ScalarField, VectorField
from .metrics import dice_averages, jacobian_stats, residual_image
from .optim import RegistrationConfig, gauss_newton_register, relative_residual
from .synth import SynthSpec, make_reference, make_template, make_velocity, transport_labels
from .transport import TransportConfig, TransportOperators, jacobian_determinant, solve_state
from .volio import load_nifti, load_volume, save_volume

EXIT_OK = 0
EXIT_SOLVER = 1
EXIT_USAGE = 2

DIAGNOSTICS_COLUMNS = ("command", "beta_v", "beta_w", "n_t", "interp", "gtol",
                       "j_min", "j_max", "relative_residual", "gn_iterations",
                       "converged", "termination_reason", "seconds")
ITERATION_COLUMNS = ("iteration", "objective", "rel_grad_norm",
                     "pcg_iterations", "step_length", "cfl")


def _load_image(path, precision) -> ScalarField:
    p = str(path)
    if p.endswith(".nii") or p.endswith(".nii.gz"):
        f = load_nifti(p, dtype=precision)
    else:
        f = load_volume(p)
        if not isinstance(f, ScalarField):
            raise VolumeIOError(f"{p} is not a scalar volume")
    if not np.isfinite(f.values).all():
        raise VolumeIOError(f"{p} contains non-finite samples")
    return ScalarField(f.grid, f.values.astype(precision))


def _load_labels(path) -> LabelMap:
    p = str(path)
    if p.endswith(".nii") or p.endswith(".nii.gz"):
        return load_nifti(p, as_labels=True)
    f = load_volume(p)
    if not isinstance(f, LabelMap):
        raise VolumeIOError(f"{p} is not a label volume")
    return f


def _normalize(f: ScalarField) -> ScalarField:
    lo = float(f.values.min())
    hi = float(f.values.max())
    if hi <= lo:
        return f.copy()
    return ScalarField(f.grid, (f.values - lo) / (hi - lo))


def _load_pair(args):
    precision = np.float32 if args.precision == "f32" else np.float64
    m0 = _load_image(args.template, precision)
    m1 = _load_image(args.reference, precision)
    if m0.grid != m1.grid:
        raise GridError(f"template dims {m0.grid.dims} != reference dims {m1.grid.dims}")
    if not getattr(args, "no_normalize", False):
        m0, m1 = _normalize(m0), _normalize(m1)
    return m0, m1


DEFAULT_BETA_V = 1e-2
DEFAULT_BETA_W = 1e-4


def _registration_config(args, grid: Grid) -> RegistrationConfig:
    interp = args.interp or default_interp_order(grid)
    beta_v = DEFAULT_BETA_V if args.betav is None else args.betav
    beta_w = DEFAULT_BETA_W if args.betaw is None else args.betaw
    return RegistrationConfig(beta_v=beta_v, beta_w=beta_w,
                              n_t=args.nt, interp_order=interp, gtol=args.gtol)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_tsv(path: Path, columns, rows) -> None:
    with open(path, "w") as fh:
        fh.write("\t".join(columns) + "\n")
        for row in rows:
            cells = []
            for value in row:
                if isinstance(value, float):
                    cells.append(f"{value:.9e}")
                else:
                    cells.append(str(value))
            fh.write("\t".join(cells) + "\n")


def _write_diagnostics(out: Path, command: str, cfg: RegistrationConfig, diag,
                       seconds: float) -> None:
    include_seconds = not runtime.reproducible()
    cols = [c for c in DIAGNOSTICS_COLUMNS if include_seconds or c != "seconds"]
    row = [command, cfg.beta_v, cfg.beta_w, cfg.n_t, cfg.interp_order, cfg.gtol,
           diag.j_min, diag.j_max, diag.relative_residual, diag.gn_iterations,
           diag.converged, diag.termination_reason]
    if include_seconds:
        row.append(seconds)
    _write_tsv(out / "diagnostics.tsv", cols, [row])
    _write_tsv(out / "iterations.tsv", ITERATION_COLUMNS,
               [(r.iteration, r.objective, r.rel_grad_norm, r.pcg_iterations,
                 r.step_length, r.cfl) for r in diag.iterations])


def _write_registration_artifacts(out: Path, m0, m1, v, cfg: RegistrationConfig) -> None:
    tcfg = cfg.transport()
    tops = TransportOperators(v, tcfg)
    deformed = solve_state(m0, v, tcfg, tops)
    save_volume(out / "velocity", v)
    save_volume(out / "deformed_template", deformed)
    save_volume(out / "residual", residual_image(deformed, m1))
    save_volume(out / "jacobian", jacobian_determinant(v, tcfg, tops))


def cmd_register(args) -> int:
    m0, m1 = _load_pair(args)
    cfg = _registration_config(args, m0.grid)
    out = _out_dir(args)
    t0 = time.perf_counter()
    v, diag = gauss_newton_register(m0, m1, cfg)
    seconds = time.perf_counter() - t0
    _write_registration_artifacts(out, m0, m1, v, cfg)
    _write_diagnostics(out, "register", cfg, diag, seconds)
    return EXIT_OK


def _search_config(args) -> SearchConfig:
    return SearchConfig(j_min_bound=args.jbound)


def cmd_search(args) -> int:
    m0, m1 = _load_pair(args)
    cfg = _registration_config(args, m0.grid)
    search = _search_config(args)
    out = _out_dir(args)
    t0 = time.perf_counter()
    result = search_parameters(m0, m1, cfg, search)
    seconds = time.perf_counter() - t0
    with open(out / "parameters.tsv", "w") as fh:
        fh.write(f"beta_v_star\t{result.beta_v_star:.9e}\n")
        fh.write(f"beta_w_star\t{result.beta_w_star:.9e}\n")
    with open(out / "trial_log.tsv", "w") as fh:
        fh.write(format_trial_log(result.trials,
                                  include_seconds=not runtime.reproducible()))
    final_cfg = replace(cfg, beta_v=result.beta_v_star, beta_w=result.beta_w_star)
    _write_registration_artifacts(out, m0, m1, result.velocity, final_cfg)
    _write_diagnostics(out, "search", final_cfg, result.diagnostics, seconds)
    return EXIT_OK


def read_parameters(path) -> tuple[float, float]:
    p = Path(path)
    if not p.exists():
        raise VolumeIOError(f"cannot open parameter file '{p}'")
    values = {}
    for line in p.read_text().splitlines():
        parts = line.split()
        if len(parts) == 2:
            values[parts[0]] = float(parts[1])
    try:
        return values["beta_v_star"], values["beta_w_star"]
    except KeyError as exc:
        raise VolumeIOError(f"parameter file {p} missing {exc}") from exc


def cmd_continue(args) -> int:
    m0, m1 = _load_pair(args)
    beta_v_star, beta_w_star = read_parameters(args.params)
    cfg = _registration_config(args, m0.grid)
    out = _out_dir(args)
    t0 = time.perf_counter()
    v, diag = continuation_register(m0, m1, beta_v_star, beta_w_star, cfg,
                                    _search_config(args))
    seconds = time.perf_counter() - t0
    final_cfg = replace(cfg, beta_v=beta_v_star, beta_w=beta_w_star)
    _write_registration_artifacts(out, m0, m1, v, final_cfg)
    _write_diagnostics(out, "continue", final_cfg, diag, seconds)
    _write_tsv(out / "rungs.tsv", ("stage", "beta_v", "beta_w", "gn_iterations"),
               diag.rungs)
    return EXIT_OK


def _parse_dims(text) -> tuple[int, int, int]:
    parts = [int(t) for t in str(text).replace("x", ",").split(",") if t]
    if len(parts) == 1:
        parts = parts * 3
    if len(parts) != 3:
        raise ValueError(f"dims must be one integer or a triple, got {text!r}")
    return tuple(parts)


def cmd_synth(args) -> int:
    grid = Grid(_parse_dims(args.dims))
    interp = args.interp or default_interp_order(grid)
    spec = SynthSpec(grid, velocity_frequency=args.k, seed=args.seed)
    out = _out_dir(args)
    m0, labels0 = make_template(spec)
    v = make_velocity(spec.velocity_frequency, grid)
    tcfg = TransportConfig(n_t=args.nt, interp_order=interp)
    m1, labels1 = make_reference(m0, labels0, v, tcfg)
    save_volume(out / "template", m0)
    save_volume(out / "reference", m1)
    save_volume(out / "labels0", labels0)
    save_volume(out / "labels1", labels1)
    save_volume(out / "velocity", v)
    with open(out / "manifest.txt", "w") as fh:
        fh.write(f"dims: {grid.dims[0]} {grid.dims[1]} {grid.dims[2]}\n")
        fh.write(f"K: {spec.velocity_frequency}\n")
        fh.write(f"seed: {spec.seed}\n")
        fh.write(f"num_shapes: {spec.num_shapes}\n")
        fh.write(f"harmonic_degree: {spec.degree}\n")
        fh.write(f"harmonic_order: {spec.order}\n")
        fh.write(f"n_t: {tcfg.n_t}\n")
        fh.write(f"interp: {tcfg.interp_order}\n")
    return EXIT_OK


def cmd_transport(args) -> int:
    vol = load_volume(args.velocity)
    if not isinstance(vol, VectorField):
        raise VolumeIOError(f"{args.velocity} is not a vector volume")
    out = _out_dir(args)
    interp = args.interp or default_interp_order(vol.grid)
    tcfg = TransportConfig(n_t=args.nt, interp_order=interp)
    if args.labels:
        labels = _load_labels(args.image)
        if labels.grid != vol.grid:
            raise GridError("image and velocity grids differ")
        moved = transport_labels(labels, vol, tcfg)
        save_volume(out / "deformed_labels", moved)
    else:
        precision = np.float32 if args.precision == "f32" else np.float64
        image = _load_image(args.image, precision)
        if image.grid != vol.grid:
            raise GridError("image and velocity grids differ")
        save_volume(out / "deformed", solve_state(image, vol, tcfg))
    return EXIT_OK


def cmd_metrics(args) -> int:
    out = _out_dir(args)
    wrote = False
    if args.labels0 and args.labels1:
        l0 = _load_labels(args.labels0)
        l1 = _load_labels(args.labels1)
        ids = [int(t) for t in args.label_ids.split(",")] if args.label_ids else None
        report = dice_averages(l0, l1, ids)
        (out / "dice_report.tsv").write_text(report.to_table())
        wrote = True
    if args.image_final and args.image_reference:
        precision = np.float32 if args.precision == "f32" else np.float64
        m_final = _load_image(args.image_final, precision)
        m1 = _load_image(args.image_reference, precision)
        save_volume(out / "residual", residual_image(m_final, m1))
        rows = []
        if args.image_initial:
            m0 = _load_image(args.image_initial, precision)
            rows.append(("relative_residual",
                         relative_residual(m0, m1, m_final)))
        l2 = math.sqrt(float(np.sum((m_final.values - m1.values) ** 2)))
        rows.append(("residual_l2", l2))
        _write_tsv(out / "residual_report.tsv", ("metric", "value"), rows)
        wrote = True
    if args.jacobian:
        j = load_volume(args.jacobian)
        jmin, jmax = jacobian_stats(j)
        _write_tsv(out / "jacobian_report.tsv", ("metric", "value"),
                   [("j_min", jmin), ("j_max", jmax)])
        wrote = True
    if not wrote:
        raise ValueError("metrics needs label maps, final/reference images, or a Jacobian volume")
    return EXIT_OK


def cmd_experiment(args) -> int:
    out = _out_dir(args)
    precision = np.float32 if args.precision == "f32" else np.float64
    if args.template:
        m0, m1 = _load_pair(args)
        labels0 = _load_labels(args.labels0)
        labels1 = _load_labels(args.labels1)
    else:
        grid = Grid(_parse_dims(args.dims))
        spec = SynthSpec(grid, velocity_frequency=args.k, seed=args.seed)
        m0, labels0 = make_template(spec)
        v_true = make_velocity(spec.velocity_frequency, grid)
        gen_cfg = TransportConfig(n_t=args.nt, interp_order=args.interp or
                                  default_interp_order(grid))
        m1, labels1 = make_reference(m0, labels0, v_true, gen_cfg)
        m0 = ScalarField(grid, m0.values.astype(precision))
        m1 = ScalarField(grid, m1.values.astype(precision))
        m0, m1 = _normalize(m0), _normalize(m1)
    factors = tuple(int(t) for t in args.factors.split(","))
    cfg = _registration_config(args, m0.grid)
    betas = None
    if args.betav is not None and args.betaw is not None:
        betas = (args.betav, args.betaw)
    plan = ExperimentPlan(m0, m1, labels0, labels1, factors=factors,
                          nt_policy=args.nt_policy, base_config=cfg,
                          search=_search_config(args), betas=betas)
    pre, rows, velocities = run_experiment(plan)
    (out / "trend.tsv").write_text(
        format_trend_table(pre, rows, include_seconds=not runtime.reproducible()))
    for row, v in zip(rows, velocities):
        save_volume(out / f"velocity_factor{row.factor}", v)
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--betav", type=float, default=None)
    p.add_argument("--betaw", type=float, default=None)
    p.add_argument("--nt", type=int, default=4)
    p.add_argument("--jbound", type=float, default=0.25)
    p.add_argument("--gtol", type=float, default=5e-2)
    p.add_argument("--interp", choices=("linear", "cubic"), default=None,
                   help="default: cubic up to 256^3, linear above")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--precision", choices=("f32", "f64"), default="f64")
    p.add_argument("--reproducible", action="store_true")
    p.add_argument("--no-normalize", action="store_true",
                   help="skip [0,1] intensity pre-normalization")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="velreg",
        description="Stationary-velocity diffeomorphic registration toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("register", help="register a template to a reference")
    p.add_argument("--template", required=True)
    p.add_argument("--reference", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("search", help="two-stage regularization parameter search")
    p.add_argument("--template", required=True)
    p.add_argument("--reference", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("continue", help="parameter continuation toward known betas")
    p.add_argument("--template", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--params", required=True, help="parameters.tsv from a search run")
    _add_common(p)
    p.set_defaults(func=cmd_continue)

    p = sub.add_parser("synth", help="generate a synthetic template/reference pair")
    p.add_argument("--dims", default="64")
    p.add_argument("--k", type=int, default=4, help="velocity frequency")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("transport", help="advect a volume along a velocity")
    p.add_argument("--velocity", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--labels", action="store_true",
                   help="treat the image as a label map (indicator transport)")
    _add_common(p)
    p.set_defaults(func=cmd_transport)

    p = sub.add_parser("metrics", help="Dice/residual/Jacobian reports")
    p.add_argument("--labels0")
    p.add_argument("--labels1")
    p.add_argument("--label-ids", default=None,
                   help="comma-separated ids; default: all labels present")
    p.add_argument("--image-final")
    p.add_argument("--image-reference")
    p.add_argument("--image-initial")
    p.add_argument("--jacobian")
    _add_common(p)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("experiment", help="multi-resolution trend experiment")
    p.add_argument("--template")
    p.add_argument("--reference")
    p.add_argument("--labels0")
    p.add_argument("--labels1")
    p.add_argument("--dims", default="64", help="synthetic pair dims when no volumes given")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--factors", default="1,2,4")
    p.add_argument("--nt-policy", choices=("proportional", "fixed"),
                   default="proportional")
    _add_common(p)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.reproducible:
        runtime.set_reproducible(True)
    try:
        return args.func(args)
    except (VolumeIOError, GridError, ResampleError, ValueError) as exc:
        print(f"velreg {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SearchError, TransportError, ObjectiveError, VelregError) as exc:
        print(f"velreg {args.command}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
