"""Command-line front end.

    stathedge <command> --config <path> [--out <dir>] [--seed <u64>] [--workers <n>]

Exit codes: 0 success, 2 config error, 3 numerical error, 4 validation failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import experiments as ex
from .config import load_config
from .csvio import write_csv
from .errors import (ConfigError, InvalidArgument, NumericalError, StatHedgeError,
                     UnsupportedModelError, ValidationFailure)
from .figures import figure_data, render

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VALIDATION = 0, 2, 3, 4


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stathedge", description="Optimal static quadratic hedging.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="experiment TOML file")
        sp.add_argument("--out", help="output directory (overrides output.dir)")
        sp.add_argument("--seed", type=int, help="MC seed (overrides solver.seed)")
        sp.add_argument("--workers", type=int, help="MC worker threads (overrides solver.workers)")

    for name in ("hedge-discrete", "hedge-continuous", "profile", "validate"):
        common(sub.add_parser(name))
    fig = sub.add_parser("figure", help="emit the data behind figure 1-4")
    fig.add_argument("number", type=int, choices=(1, 2, 3, 4))
    common(fig, config_required=False)
    fig.add_argument("--plot", action="store_true", help="also render a PNG with matplotlib")
    return p


def _run(args) -> int:
    cfg = load_config(args.config) if args.config else None
    out = Path(args.out or (cfg.output if cfg else "out"))
    seed = args.seed if args.seed is not None else (cfg.solver.seed if cfg else 0)
    if not 0 <= seed < 2**64:
        raise ConfigError("--seed: must be an unsigned 64-bit integer")
    workers = args.workers or (cfg.solver.workers if cfg else 1)
    if workers < 1:
        raise ConfigError("--workers: must be positive")

    if args.command == "figure":
        files = figure_data(args.number, out)
        if args.plot:
            files.append(render(files, out, f"fig{args.number}"))
        for f in files:
            print(f)
        return EXIT_OK

    if args.command == "hedge-discrete":
        run = ex.run_config(cfg, "discrete")
        files = ex.write_discrete(run, out)
    elif args.command == "hedge-continuous":
        run = ex.run_config(cfg, "continuous")
        files = ex.write_continuous(run, out)
    elif args.command == "profile":
        run = ex.run_config(cfg)
        files = [write_csv(out / "profile.csv", ex.profile_columns(run.portfolio, cfg.solver.profile),
                           ex.portfolio_meta(run.portfolio))]
    else:
        run = ex.run_config(cfg)
        checks = ex.validate_run(run, cfg.solver.mc_paths, seed, workers, cfg.solver.steps_per_year)
        files = [ex.write_checks(checks, out / "validate.csv")]
        for c in checks:
            print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: value={c.value:.6g} target={c.target:.6g}"
                  f" se={c.std_error:.3g}")
        failed = [c.name for c in checks if not c.passed]
        if failed:
            for f in files:
                print(f)
            raise ValidationFailure(f"{len(failed)} check(s) failed: {', '.join(failed)}")
    for f in files:
        print(f)
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _run(args)
    except (ConfigError, InvalidArgument, UnsupportedModelError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValidationFailure as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except StatHedgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
