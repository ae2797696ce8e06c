"""Command line entry point: one subcommand per scenario."""
from __future__ import annotations

import argparse
import sys

from . import config as C
from .run import RunDirectoryError, run_scenario

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def build_config(scenario: str, source=None, seed=None) -> dict:
    raw = C.load_raw(source) if source else {}
    raw.setdefault("scenario", scenario)
    C.validate(raw)
    if raw["scenario"] != scenario:
        raise C.ConfigError([("scenario", f"config is for {raw['scenario']!r}, "
                                          f"but the {scenario!r} subcommand was used")])
    if seed is not None:
        raw["master_seed"] = seed
    return C.resolve(raw)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nvthermo", description="Seeded NV thermometry simulations.")
    sub = parser.add_subparsers(dest="scenario", required=True)
    for name in C.SCENARIOS:
        p = sub.add_parser(name.replace("_", "-"), aliases=[name] if "_" in name else [])
        p.set_defaults(scenario=name)
        p.add_argument("--config", help="TOML config file or preset:<name>")
        p.add_argument("--seed", type=int, help="override master_seed")
        p.add_argument("--out", help="run directory (default: output_dir from the config)")
        p.add_argument("--force", action="store_true", help="overwrite a completed run directory")
        p.add_argument("--workers", type=int, default=1, help="worker processes (speed only)")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = build_config(args.scenario, args.config, args.seed)
        path = run_scenario(cfg, out=args.out, force=args.force, workers=args.workers)
    except C.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RunDirectoryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # anything past validation is a runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print((path / "summary.txt").read_text(), end="")
    print(f"outputs written to {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
