"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 solver error, 3 line-search
failure (a partial report is still written).  ``check`` exits 0 iff every
check passes.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .experiments import (
    EXAMPLES,
    TABLE_COLUMNS,
    TABLES,
    ExperimentSpec,
    convergence_study,
    run_experiment,
    run_table,
    table_specs,
)
from .fieldio import write_field_csv, write_glf1
from .inverse import NonFiniteError
from .linsolve import SingularOperatorError
from .optimize import LineSearchFailure, NcgConfig

logger = logging.getLogger("glinverse")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_LINESEARCH = 0, 1, 2, 3
EXAMPLE_ALIASES = {f"example{k}": f"ex{k}" for k in range(1, 5)}
NCG_FROM_CONFIG = tuple(f.name for f in fields(NcgConfig) if f.name not in ("tau", "k_max"))
FORMATS = ("csv", "glf1")

# Tolerances reported by ``check``.
GRADIENT_TOL = 1e-6
DUALITY_TOL = 1e-9
SPATIAL_BAND = (1.8, 2.2)
TEMPORAL_BANDS = {"left": (0.8, 1.3), "trapezoid": (1.8, 2.2)}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    experiment: ExperimentSpec
    ncg: NcgConfig
    out: str = "runs/latest"
    formats: list = field(default_factory=lambda: list(FORMATS))

    def as_dict(self) -> dict:
        ncg = {k: v for k, v in asdict(self.ncg).items() if k in NCG_FROM_CONFIG}
        return {"experiment": self.experiment.as_dict(), "ncg": ncg, "output": {"out": self.out, "formats": list(self.formats)}}


def _complex(value):
    if isinstance(value, (list, tuple)):
        if len(value) != 2:
            raise ConfigError(f"complex value must be [re, im], got {value!r}")
        return complex(float(value[0]), float(value[1]))
    if isinstance(value, str):
        return complex(value.replace(" ", "").replace("i", "j"))
    return complex(value)


def _parse_grid(text: str):
    try:
        parts = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"--grid expects NX,NY,NT integers, got {text!r}") from None
    if len(parts) != 3:
        raise ConfigError(f"--grid expects three values NX,NY,NT, got {text!r}")
    return parts


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def header_line(config: dict, seed) -> str:
    # The output location is not part of the computation.
    config = {k: v for k, v in config.items() if k != "output"}
    return f"glinverse {__version__} config_hash={config_hash(config)} seed={seed}"


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = set(data) - {"experiment", "ncg", "output"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return data


def build_run_config(args) -> RunConfig:
    """Merge config file values with command-line flags (flags win)."""
    file_cfg = load_config(args.config) if args.config else {}
    exp = dict(file_cfg.get("experiment", {}))
    ncg = dict(file_cfg.get("ncg", {}))
    output = dict(file_cfg.get("output", {}))

    spec_fields = {f.name for f in fields(ExperimentSpec)}
    bad = set(exp) - spec_fields
    if bad:
        raise ConfigError(f"unknown experiment fields: {sorted(bad)}")
    bad = set(ncg) - set(NCG_FROM_CONFIG)
    if bad:
        raise ConfigError(f"unknown ncg fields: {sorted(bad)}")

    if args.example:
        exp["example_id"] = EXAMPLE_ALIASES.get(args.example, args.example)
    if args.grid:
        exp["Nx"], exp["Ny"], exp["Nt"] = _parse_grid(args.grid)
    flag_map = {
        "nx": "Nx", "ny": "Ny", "nt": "Nt", "eps": "eps", "tau": "tau", "delta": "noise_delta",
        "seed": "seed", "kmax": "k_max", "forcing": "forcing_rule", "grad_mode": "gradient_mode",
        "refine_data": "data_refine",
    }
    for flag, key in flag_map.items():
        value = getattr(args, flag, None)
        if value is not None:
            exp[key] = value
    for flag in ("alpha0", "rho", "step_init"):
        value = getattr(args, flag, None)
        if value is not None:
            ncg[flag] = value
    if args.out:
        output["out"] = args.out

    if "p" in exp:
        exp["p"] = _complex(exp["p"])
    for key in ("Nx", "Ny", "Nt"):
        if key in exp and (isinstance(exp[key], bool) or not isinstance(exp[key], int)):
            raise ConfigError(f"{key} must be an integer, got {exp[key]!r}")
        if key in exp and exp[key] < (1 if key == "Nt" else 2):
            raise ConfigError(f"{key} must be >= {1 if key == 'Nt' else 2}, got {exp[key]}")
    try:
        spec = ExperimentSpec(**exp)
        ncg_cfg = NcgConfig(**ncg, tau=spec.tau, k_max=spec.k_max)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    formats = output.get("formats", list(FORMATS))
    if any(f not in FORMATS for f in formats):
        raise ConfigError(f"output formats must be among {FORMATS}, got {formats}")
    return RunConfig(spec, ncg_cfg, output.get("out", "runs/latest"), list(formats))


def _progress(record):
    print(
        f"k={record.k:5d} J={record.J:.6e} misfit={record.misfit:.6e} |r|={record.grad_norm:.3e} "
        f"alpha={record.alpha:.3e} backtracks={record.backtracks}",
        file=sys.stderr,
    )


def _write_json(path: Path, header: str, payload: dict):
    path.write_text(json.dumps({"header": header, **payload}, indent=2, sort_keys=False) + "\n", encoding="utf-8")


def _write_history(path: Path, header: str, report):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {header}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["k", "J", "misfit", "grad_norm", "alpha", "beta", "backtracks", "restart"])
        writer.writerow([-1, repr(float(report.J0)), repr(float(report.misfit0)), repr(float(report.grad_norm0)), "", "", "", ""])
        for rec in report.history:
            writer.writerow([rec.k] + [repr(float(v)) for v in (rec.J, rec.misfit, rec.grad_norm, rec.alpha, rec.beta)]
                            + [rec.backtracks, int(rec.restart)])


def _dump_field(out: Path, name: str, grid, values, header: str, formats):
    if "csv" in formats:
        write_field_csv(out / f"{name}.csv", grid, values, header=header)
    if "glf1" in formats:
        write_glf1(out / f"{name}.glf", grid, values)


def write_run_artifacts(cfg: RunConfig, result=None, report=None, problem_data=None):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    config = cfg.as_dict()
    header = header_line(config, cfg.experiment.seed)
    _write_json(out / "config.json", header, {"config": config})
    report = report or result.report
    _write_history(out / "history.csv", header, report)
    grid = cfg.experiment.grid()
    _dump_field(out, "y_final", grid, report.final_state, header, cfg.formats)
    rec = report.final_control
    if rec.mode == "separable":
        _dump_field(out, "q_rec", grid, rec.values, header, cfg.formats)
    else:
        _dump_field(out, "f_rec_last", grid, rec.values[-1], header, cfg.formats)
    if result is not None:
        _dump_field(out, "data", grid, result.data, header, cfg.formats)
        truth = result.truth
        if truth.mode == "separable":
            _dump_field(out, "q_true", grid, truth.values, header, cfg.formats)
        else:
            _dump_field(out, "f_true_last", grid, truth.values[-1], header, cfg.formats)
        _write_json(out / "metrics.json", header, {"metrics": result.metrics.as_dict()})
    else:
        _write_json(out / "metrics.json", header, {"metrics": None, "stop_reason": report.stop_reason})


def cmd_run(args) -> int:
    try:
        cfg = build_run_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    callback = None if args.quiet else _progress
    try:
        result = run_experiment(cfg.experiment, cfg.ncg, callback=callback)
    except LineSearchFailure as exc:
        print(f"line search failure: {exc}", file=sys.stderr)
        if exc.report is not None:
            write_run_artifacts(cfg, report=exc.report)
        return EXIT_LINESEARCH
    except (SingularOperatorError, NonFiniteError, ValueError, RuntimeError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    write_run_artifacts(cfg, result)
    m = result.metrics
    print(
        f"{cfg.experiment.example_id}: iterations={m.iterations} stop={m.stop_reason} "
        f"misfit_sq_ratio={m.misfit_sq_ratio:.4e} q_err_sq_ratio={m.q_err_sq_ratio} "
        f"f_err_sq_ratio={m.f_err_sq_ratio:.4e}"
    )
    return EXIT_OK


TABLE_CONFIG_FIELDS = ("example_id", "Nx", "Ny", "Nt", "eps", "tau", "noise_delta", "seed")
TABLE_RESULT_FIELDS = ("iterations", "misfit_sq_ratio", "q_err_sq_ratio", "f_err_sq_ratio")


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def cmd_table(args) -> int:
    if args.table not in TABLES:
        print(f"config error: unknown table {args.table!r}, expected one of {TABLES}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        grid = _parse_grid(args.grid) if args.grid else None
        ncg = NcgConfig(**({"step_init": args.step_init} if args.step_init else {}))
        specs = table_specs(args.table, args.scale, args.seed, grid, args.kmax)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    callback = None if args.quiet else _progress
    try:
        rows = run_table(args.table, args.scale, args.seed, args.workers, ncg, grid, args.kmax, callback)
    except LineSearchFailure as exc:
        print(f"line search failure: {exc}", file=sys.stderr)
        return EXIT_LINESEARCH
    except (SingularOperatorError, NonFiniteError, ValueError, RuntimeError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    snapshot = {"table": args.table, "scale": args.scale, "rows": [s.as_dict() for s in specs],
                "ncg": {k: v for k, v in asdict(ncg).items() if k in NCG_FROM_CONFIG}}
    header = header_line(snapshot, args.seed)
    with open(out / f"{args.table}.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {header}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TABLE_CONFIG_FIELDS + TABLE_RESULT_FIELDS)
        for row in rows:
            metrics = row.metrics.as_dict()
            writer.writerow([_fmt(row.config[k]) for k in TABLE_CONFIG_FIELDS]
                            + [_fmt(metrics[k]) for k in TABLE_RESULT_FIELDS])
    with open(out / f"{args.table}_timing.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {header}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TABLE_COLUMNS[args.table] + ("wall_time_s",))
        for row in rows:
            writer.writerow([_fmt(row.config[k]) for k in TABLE_COLUMNS[args.table]] + [f"{row.wall_time:.3f}"])
    _write_json(out / f"{args.table}_config.json", header, snapshot)
    for row in rows:
        m = row.metrics
        label = ", ".join(f"{k}={row.config[k]}" for k in TABLE_COLUMNS[args.table])
        print(f"{args.table} [{label}] iterations={m.iterations} misfit_sq_ratio={m.misfit_sq_ratio:.4e} "
              f"q_err_sq_ratio={_fmt(m.q_err_sq_ratio)} f_err_sq_ratio={m.f_err_sq_ratio:.4e}")
    return EXIT_OK


def _check_instance(grid_text, seed):
    from .experiments import initial_state
    from .inverse import Control, InverseProblem
    from .linsolve import assemble_cn
    from .mesh import build_grid

    Nx, Ny, Nt = _parse_grid(grid_text)
    grid = build_grid(1, 1, 1, Nx, Ny, Nt)
    spec = ExperimentSpec(Nx=Nx, Ny=Ny, Nt=Nt)
    ops = assemble_cn(grid, spec.a, spec.b, spec.p)
    rng = np.random.default_rng(seed)

    def crandn(*shape):
        return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)

    P = InverseProblem(grid, ops, initial_state("sine", grid), crandn(grid.m), eps=1e-5, control_mode="full")
    return grid, ops, P, Control.full(crandn(grid.Nt, grid.m)), crandn


def cmd_check(args) -> int:
    from .inverse import calibrate_gradient
    from .pde import duality_mismatch

    try:
        grid, ops, P, c, crandn = _check_instance(args.grid, args.seed)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    ok = True
    if args.what == "gradient":
        best, errors = calibrate_gradient(P, c, n_probes=args.probes, h_fd=args.h_fd, seed=args.seed)
        for mode, err in errors.items():
            print(f"gradient[{mode}] max_rel_err={err:.3e}")
        ok = best == "exact" and errors["exact"] <= GRADIENT_TOL
        print(f"selected={best} tol={GRADIENT_TOL:g} {'PASS' if ok else 'FAIL'}")
    elif args.what == "duality":
        worst = 0.0
        for _ in range(args.trials):
            worst = max(worst, duality_mismatch(grid, ops, crandn(grid.Nt, grid.m), crandn(grid.m)))
        ok = worst <= DUALITY_TOL
        print(f"duality max_rel_mismatch={worst:.3e} tol={DUALITY_TOL:g} {'PASS' if ok else 'FAIL'}")
    else:
        ok = _report_convergence(args.rule)
    return EXIT_OK if ok else EXIT_SOLVER


def _report_convergence(rule, out=None) -> bool:
    res = convergence_study(rule)
    print(f"rule={rule}")
    for N, err in res.spatial:
        print(f"  spatial N={N:4d} error={err:.6e}")
    for Nt, err in res.temporal:
        print(f"  temporal Nt={Nt:4d} error={err:.6e}")
    lo, hi = SPATIAL_BAND
    s_ok = lo <= res.spatial_order <= hi
    tlo, thi = TEMPORAL_BANDS[rule]
    t_ok = tlo <= res.temporal_order <= thi
    print(f"spatial_order={res.spatial_order:.4f} in [{lo}, {hi}] {'PASS' if s_ok else 'FAIL'}")
    print(f"temporal_order={res.temporal_order:.4f} in [{tlo}, {thi}] {'PASS' if t_ok else 'FAIL'}")
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        snapshot = {"rule": rule}
        with open(out / f"convergence_{rule}.csv", "w", newline="", encoding="utf-8") as fh:
            fh.write(f"# {header_line(snapshot, '')}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["kind", "resolution", "error"])
            for N, err in res.spatial:
                writer.writerow(["spatial", N, repr(err)])
            for Nt, err in res.temporal:
                writer.writerow(["temporal", Nt, repr(err)])
            writer.writerow(["spatial_order", "", repr(res.spatial_order)])
            writer.writerow(["temporal_order", "", repr(res.temporal_order)])
    return s_ok and t_ok


def cmd_convergence(args) -> int:
    return EXIT_OK if _report_convergence(args.rule, args.out) else EXIT_SOLVER


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glinverse", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"glinverse {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="reconstruct one example")
    run.add_argument("example", nargs="?", help=f"one of {EXAMPLES} (or example1..example4)")
    run.add_argument("--config", help="JSON config file; flags override its values")
    run.add_argument("--grid", help="NX,NY,NT")
    run.add_argument("--nx", type=int)
    run.add_argument("--ny", type=int)
    run.add_argument("--nt", type=int)
    run.add_argument("--eps", type=float)
    run.add_argument("--tau", type=float)
    run.add_argument("--delta", type=float)
    run.add_argument("--seed", type=int)
    run.add_argument("--kmax", type=int)
    run.add_argument("--alpha0", type=float)
    run.add_argument("--rho", type=float)
    run.add_argument("--step-init", dest="step_init", choices=("fixed", "grow"))
    run.add_argument("--forcing", choices=("left", "trapezoid"))
    run.add_argument("--grad-mode", dest="grad_mode", choices=("exact", "paper"))
    run.add_argument("--refine-data", dest="refine_data", type=int, choices=(1, 2))
    run.add_argument("--out")
    run.add_argument("-q", "--quiet", action="store_true", help="no per-iteration progress")
    run.set_defaults(func=cmd_run)

    table = sub.add_parser("table", help="regenerate a results table as CSV")
    table.add_argument("table", help=f"one of {TABLES}")
    table.add_argument("--scale", choices=("paper", "desk"), default="desk")
    table.add_argument("--seed", type=int, default=0)
    table.add_argument("--grid", help="NX,NY,NT override for every row")
    table.add_argument("--kmax", type=int)
    table.add_argument("--step-init", dest="step_init", choices=("fixed", "grow"))
    table.add_argument("--workers", type=int, default=1)
    table.add_argument("--out", default="runs/tables")
    table.add_argument("-q", "--quiet", action="store_true")
    table.set_defaults(func=cmd_table)

    check = sub.add_parser("check", help="gradient, duality or convergence self-checks")
    check.add_argument("what", choices=("gradient", "convergence", "duality"))
    check.add_argument("--rule", choices=("left", "trapezoid"), default="left")
    check.add_argument("--grid", default="9,9,8")
    check.add_argument("--seed", type=int, default=0)
    check.add_argument("--probes", type=int, default=20)
    check.add_argument("--h-fd", dest="h_fd", type=float, default=1e-6)
    check.add_argument("--trials", type=int, default=20)
    check.set_defaults(func=cmd_check)

    conv = sub.add_parser("convergence", help="manufactured-solution convergence table")
    conv.add_argument("--rule", choices=("left", "trapezoid"), default="left")
    conv.add_argument("--out")
    conv.set_defaults(func=cmd_convergence)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on bad usage; that is a configuration error here.
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
