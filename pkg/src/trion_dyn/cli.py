"""Command-line entry point: ``trion-dyn <kind> --config <path> [options]``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import PRESET_NAMES, ConfigError, Kind, load_config
from .model import ModelError
from .runner import run_experiment, write_error

KINDS = [k.value for k in Kind] + ["run"]

EXIT_OK, EXIT_CHECKS, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="trion-dyn",
        description="Quantum dynamics of a fermion coupled to photon and phonon modes.")
    ap.add_argument("kind", choices=KINDS,
                    help="experiment kind; 'run' takes the kind from the config/preset")
    ap.add_argument("--config", type=Path, help="JSON config file")
    ap.add_argument("--preset", choices=PRESET_NAMES, help="named parameter bundle")
    ap.add_argument("--out", type=Path, default=Path("trion_out"), help="output directory")
    ap.add_argument("--seed", type=int, help="RNG seed (unsigned 64-bit)")
    ap.add_argument("--threads", type=int, help="worker threads (env TRION_DYN_THREADS)")
    ap.add_argument("--ratio", type=float, help="spectrum: |Omega_tilde|/gamma_ac")
    return ap


def _threads(arg: int | None) -> int | None:
    if arg is not None:
        return arg
    env = os.environ.get("TRION_DYN_THREADS")
    if env is None or env == "":
        return None
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"TRION_DYN_THREADS must be an integer, got {env!r}") from None


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides: dict = {}
        if args.kind != "run":
            overrides["kind"] = args.kind
        if args.ratio is not None:
            overrides["spectrum"] = {"ratio": args.ratio}
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            overrides["seed"] = args.seed
        threads = _threads(args.threads)
        if threads is not None:
            if threads < 1:
                raise ConfigError("--threads must be >= 1")
            overrides["threads"] = threads
        if args.kind == "validate" and args.config is None and args.preset is None:
            args.preset = "acceptance"
        cfg = load_config(args.config, args.preset, overrides)
        if args.kind == "run" and args.config is None and args.preset is None:
            raise ConfigError("'run' needs --config or --preset")
    except ConfigError as exc:
        rec = write_error(args.out, "ConfigError", str(exc))
        print(json.dumps(rec), file=sys.stderr)
        return EXIT_CONFIG
    try:
        report = run_experiment(cfg, args.out)
    except (ModelError, RuntimeError, ArithmeticError, ValueError) as exc:
        rec = write_error(args.out, type(exc).__name__, str(exc))
        print(json.dumps(rec), file=sys.stderr)
        return EXIT_RUNTIME
    for c in report.checks:
        print(c.line())
    print(f"outputs: {', '.join(report.outputs)} -> {report.out_dir}")
    return EXIT_OK if report.passed else EXIT_CHECKS


if __name__ == "__main__":
    sys.exit(main())
