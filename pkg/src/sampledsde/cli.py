"""Command-line front end.

Verbs::

    sampledsde run CONFIG.toml [--out DIR] [--seed N] [--paths N] [--threads N]
    sampledsde preset pendulum-sweep [...]
    sampledsde preset linear-oracle [...]
    sampledsde check-jacobians MODEL [--param a=2 --param k=1]

All tables are computed before anything is written, and every target file is
checked before the first write, so a refused overwrite leaves nothing behind.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import presets
from .config import ConfigError, parse_config
from .experiment import ExperimentError
from .integrators import DivergenceError
from .kernels import BACKENDS
from .models import (
    MODEL_REGISTRY,
    MODEL_STATE_DIM,
    ModelDefinitionError,
    ModelEvaluationError,
    check_jacobians,
    make_model,
)
from .tables import OutputExistsError, emit_csv
from .timegrid import GRID_MODES, GridResourceError

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

_U64_MAX = (1 << 64) - 1


def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value <= _U64_MAX:
        raise argparse.ArgumentTypeError(f"must be in [0, 2**64 - 1], got {value}")
    return value


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _param(text: str) -> tuple[str, float]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected NAME=VALUE, got {text!r}")
    try:
        return key, float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {value!r}") from None


def _add_run_flags(p: argparse.ArgumentParser, out_required: bool):
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--seed", type=_u64, help="master seed (unsigned 64-bit)")
    p.add_argument("--paths", type=_positive_int, help="Monte Carlo paths per cell")
    p.add_argument("--threads", type=_positive_int, help="worker threads for path chunks")
    p.add_argument("--overwrite", action="store_true", help="replace existing output files")
    p.add_argument("--grid-mode", choices=GRID_MODES, help="time grid construction")
    p.add_argument("--backend", choices=BACKENDS, default="auto",
                   help="path kernel implementation")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sampledsde",
        description="Simulate sampled-data SDEs and measure their convergence to the limits.")
    sub = parser.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="run an experiment described by a TOML file")
    run.add_argument("config", help="path to the TOML experiment file")
    _add_run_flags(run, out_required=False)

    preset = sub.add_parser("preset", help="run a built-in experiment")
    preset.add_argument("name", choices=["pendulum-sweep", "linear-oracle"])
    _add_run_flags(preset, out_required=True)

    jac = sub.add_parser("check-jacobians",
                         help="compare analytic Jacobians with finite differences")
    jac.add_argument("model", choices=sorted(MODEL_REGISTRY))
    jac.add_argument("--param", type=_param, action="append", default=[],
                     help="model parameter NAME=VALUE (repeatable)")
    jac.add_argument("--points", type=_positive_int, default=64,
                     help="number of random test points")
    jac.add_argument("--seed", type=_u64, default=0)
    jac.add_argument("--rel-tol", type=float, default=1e-5)
    return parser


def write_tables(tables: dict, out_dir, overwrite: bool = False) -> list[Path]:
    """Write every table, refusing before the first write if any target exists."""
    out_dir = Path(out_dir)
    targets = [out_dir / name for name in tables]
    if not overwrite:
        existing = [str(t) for t in targets if t.exists()]
        if existing:
            raise OutputExistsError(
                f"refusing to overwrite {', '.join(existing)}; pass --overwrite")
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for target, (columns, rows) in zip(targets, tables.values()):
        written.append(emit_csv(columns, rows, target, overwrite=True))
    return written


def run_preset_pendulum_sweep(out_dir, overwrite: bool = False, **kwargs) -> list[Path]:
    """Run the pendulum sweep and write its summaries, rate fits and trajectories."""
    return write_tables(presets.pendulum_sweep(**kwargs), out_dir, overwrite)


def _status(line: str):
    print(line, file=sys.stderr, flush=True)


def _cmd_run(args) -> int:
    text = Path(args.config).read_text(encoding="utf-8")
    cfg = parse_config(text)
    cfg = presets.with_overrides(cfg, seed=args.seed, n_paths=args.paths,
                                 threads=args.threads, grid_mode=args.grid_mode)
    tables = presets.run_experiment(cfg, backend=args.backend, progress=_status)
    out_dir = args.out if args.out is not None else cfg.out_dir
    for path in write_tables(tables, out_dir, args.overwrite):
        print(path)
    return EXIT_OK


def _cmd_preset(args) -> int:
    kwargs = dict(seed=presets.DEFAULT_SEED if args.seed is None else args.seed,
                  threads=args.threads or 1, backend=args.backend, progress=_status)
    if args.name == "pendulum-sweep":
        tables = presets.pendulum_sweep(
            n_paths=args.paths or presets.PENDULUM_PATHS,
            grid_mode=args.grid_mode or presets.PENDULUM_GRID_MODE, **kwargs)
    else:
        tables = presets.linear_oracle(n_paths=args.paths,
                                       grid_mode=args.grid_mode or "union", **kwargs)
        _, rows = tables["oracle.csv"]
        for name, est, se, exact, z in rows:
            _status(f"{name}: {est:.6g} +- {se:.3g} (exact {exact:.6g}, z = {z:+.2f})")
    for path in write_tables(tables, args.out, args.overwrite):
        print(path)
    return EXIT_OK


def _cmd_check_jacobians(args) -> int:
    params = dict(args.param)
    if args.model == "scalar_linear":
        params.setdefault("a", presets.LINEAR_A)
        params.setdefault("k", presets.LINEAR_K)
    try:
        model = make_model(args.model, **params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {args.model!r}: {exc}") from None
    rng = np.random.default_rng(args.seed)
    points = rng.uniform(-2.0, 2.0, size=(args.points, MODEL_STATE_DIM[args.model]))
    report = check_jacobians(model, points, rel_tol=args.rel_tol)
    for name, dev in report.max_deviation.items():
        status = "PASS" if dev <= report.rel_tol else "FAIL"
        print(f"{args.model} {name}: {status} max relative deviation {dev:.3e} "
              f"(tolerance {report.rel_tol:g}) at {report.worst_point[name]}")
    return EXIT_OK if report.passed else EXIT_FAILURE


_COMMANDS = {"run": _cmd_run, "preset": _cmd_preset, "check-jacobians": _cmd_check_jacobians}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.verb](args)
    except (ConfigError, ModelDefinitionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ExperimentError, DivergenceError, ModelEvaluationError, GridResourceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except OSError as exc:
        where = f" ({exc.filename})" if getattr(exc, "filename", None) else ""
        print(f"error: {exc.strerror or exc}{where}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
