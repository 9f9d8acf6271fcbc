"""Command-line batch runner.

One subcommand per experiment kind plus `validate`.  A run resolves its
config as: preset defaults -> config file -> --set overrides -> flag
overrides, writes the resolved config next to the artifacts, and exits
0 on success, 1 on configuration errors, 2 on numerical failures.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__, experiments
from .errors import ConfigurationError, NumericalError


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for numerical
    # failures here, so route usage problems through the config path
    def error(self, message):
        raise _UsageError(message)


def _add_common(p):
    p.add_argument("--config", type=Path, metavar="FILE",
                   help="key-value config file; overrides the preset")
    p.add_argument("--preset", choices=("ci", "full"), default="ci",
                   help="named parameter scale (default: ci)")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--seed", type=int, metavar="N")
    p.add_argument("--threads", type=int, metavar="N",
                   help="cap on the numerical worker pool")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   dest="overrides", help="override one config field")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="dualarrays",
                 description="batch runner for array-light experiments")
    ap.add_argument("--version", action="version",
                    version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for kind in experiments.KINDS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        _add_common(p)
    v = sub.add_parser("validate",
                       help="check a config and report size estimates")
    v.add_argument("kind", nargs="?", choices=experiments.KINDS,
                   help="experiment kind (may come from --config instead)")
    _add_common(v)
    return ap


def _resolve_config(kind, args) -> experiments.ExperimentConfig:
    cfg = experiments.preset(kind, args.preset) if kind else None
    if args.config is not None:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config: {exc}") from None
        cfg = experiments.ExperimentConfig.from_text(text, base=cfg)
    if cfg is None:
        raise ConfigurationError("validate needs a kind or a --config file")
    updates = {}
    for item in args.overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        updates[key.strip()] = experiments.coerce_value(key.strip(), raw)
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.threads is not None:
        updates["threads"] = args.threads
    if args.out is not None:
        updates["out"] = args.out
    if updates:
        import dataclasses
        cfg = dataclasses.replace(cfg, **updates)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        if args.command == "validate":
            cfg = _resolve_config(args.kind, args)
            report = experiments.validate_config(cfg)
            print(report.render())
            return 0 if report.ok else 1
        cfg = _resolve_config(args.command, args)
        result = experiments.run_experiment(cfg)
        for path in experiments.write_run(result):
            print(path)
        return 0
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
