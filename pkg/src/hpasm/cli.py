"""Command-line driver.

    hpasm sweep    --problem cook --p 4:12:2 --lambda 1e1,1e3,1e5,1e7 --out kappa.csv
    hpasm ensemble --problem cook --p 7 --lambda 1e5 --ensemble 100 --out hist.csv
    hpasm solve    --problem cook --p 8 --lambda 1e5 --out stress.csv

Settings are taken from the defaults, then ``--config FILE`` (``key = value``
lines, ``#`` comments), then explicit flags.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields

from . import __version__
from .asm_precond import MODES
from .diagnostics import write_stress_csv
from .experiments import (PROBLEMS, SPACES, ConfigError, ExperimentConfig, run_condition_sweep,
                          run_ensemble, run_solution, write_ensemble_cells_csv,
                          write_solution_csv, write_sweep_csv)

log = logging.getLogger("hpasm")

# flag name -> config field
_FLAG_FIELDS = {"problem": "problem", "p": "p_list", "lambda": "lambda_list", "mu": "mu",
                "space": "boundary_space", "mode": "mode", "tol": "tol", "max_iter": "max_iter",
                "ensemble": "ensemble_count", "seed": "seed", "out": "out",
                "dense_oracle": "dense_oracle", "workers": "workers", "mesh": "mesh",
                "level": "level"}


def parse_int_list(text: str) -> list[int]:
    """``4,6,8`` or ``4:12:2`` (inclusive stop) or a mix of both."""
    out: list[int] = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            bits = [int(b) for b in part.split(":")]
            start, stop = bits[0], bits[1]
            step = bits[2] if len(bits) > 2 else 1
            if step < 1:
                raise argparse.ArgumentTypeError("range step must be >= 1")
            out.extend(range(start, stop + 1, step))
        else:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def parse_float_list(text: str) -> list[float]:
    vals = [float(v) for v in str(text).split(",") if v.strip()]
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _parse_bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


_CONVERTERS = {"p_list": parse_int_list, "lambda_list": parse_float_list, "mu": float,
               "tol": float, "max_iter": int, "ensemble_count": int, "seed": int,
               "workers": int, "level": int, "dense_oracle": _parse_bool}


def read_config_file(path) -> dict:
    """``key = value`` settings; keys are flag names (``max-iter``) or field names."""
    known = {f.name for f in fields(ExperimentConfig)}
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            name = _FLAG_FIELDS.get(key.replace("-", "_"), key.replace("-", "_"))
            if name not in known:
                raise ConfigError(f"{path}:{lineno}: unknown setting {key!r}")
            try:
                out[name] = _CONVERTERS.get(name, str)(value)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # defaults are None so that only explicitly given flags override the config file
    common.add_argument("--problem", choices=PROBLEMS)
    common.add_argument("--p", type=parse_int_list, help="degrees, e.g. 4,6,8 or 4:12:2")
    common.add_argument("--lambda", dest="lambda", type=parse_float_list,
                        help="comma-separated lambda values")
    common.add_argument("--mu", type=float)
    common.add_argument("--space", choices=tuple(SPACES), help="boundary space")
    common.add_argument("--mode", choices=MODES)
    common.add_argument("--tol", type=float)
    common.add_argument("--max-iter", dest="max_iter", type=int)
    common.add_argument("--ensemble", type=int, help="number of random right-hand sides")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output CSV path (default: standard output)")
    common.add_argument("--dense-oracle", dest="dense_oracle", action="store_const", const=True,
                        help="also compute dense-eigensolve condition numbers when feasible")
    common.add_argument("--workers", type=int)
    common.add_argument("--mesh", help="mesh file (overrides the built-in geometry)")
    common.add_argument("--level", type=int, help="refinement level of the built-in mesh")
    common.add_argument("--config", help="key = value settings file")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="hpasm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("sweep", parents=[common], help="condition-number sweep over (p, lambda)")
    sub.add_parser("ensemble", parents=[common], help="PCG residual histories for random loads")
    sub.add_parser("solve", parents=[common], help="solve one problem and sample von Mises stress")
    return parser


def config_from_args(args) -> ExperimentConfig:
    settings = read_config_file(args.config) if args.config else {}
    for flag, name in _FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            settings[name] = value
    return ExperimentConfig(**settings).validate()


def _emit(write, path, *rest):
    write(path or "-", *rest)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = config_from_args(args)
    except (ConfigError, OSError, TypeError) as exc:
        parser.error(str(exc))

    if args.command == "sweep":
        rows = run_condition_sweep(config)
        _emit(write_sweep_csv, config.out, rows, config)
        return 0 if all(not r["error"] for r in rows) else 1
    if args.command == "ensemble":
        cells = run_ensemble(config)
        _emit(write_ensemble_cells_csv, config.out, cells, config)
        for c in cells:
            if c.ensemble is not None:
                log.info("p=%d lambda=%g iterations %s", c.p, c.lam, c.ensemble.summary)
        return 0 if all(not c.error for c in cells) else 1
    try:
        result = run_solution(config)
    except ConfigError as exc:
        parser.error(str(exc))
    if config.out:
        write_solution_csv(config.out, result, config)
    else:
        write_stress_csv("-", result.samples, config.header())
    return 0 if result.converged else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
