"""Command-line entry point: ``selftrain {generate,run,sweep} --config FILE``.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import data, report, runner
from .config import ConfigError, load_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _out_dir(args, cfg) -> Path:
    return Path(args.out) if args.out else cfg.output


def cmd_generate(args, cfg) -> int:
    if cfg.generator is None:
        raise ConfigError("generate needs a [dataset] generator block, not a path")
    split = cfg.load_data()
    out = _out_dir(args, cfg)
    data.save_split(split, out)
    for name in data.PARTITIONS:
        print(f"{name}\t{len(split.partition(name))}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_run(args, cfg) -> int:
    out = _out_dir(args, cfg)
    reports = runner.run_config(cfg, parallel=args.parallel)
    for rep in reports:
        report.write_atomic(out / f"report_{rep.config.preset}.txt", report.render(rep))
        report.write_atomic(out / f"roc_{rep.config.preset}.tsv", report.roc_table(rep))
        it, best = rep.best_mean_test()
        print(f"{rep.config.preset}\tteacher {rep.mean_teacher_test():.4f}\tbest mean test {best:.4f} (iteration {it})")
    if len(reports) > 1:
        table = report.comparison_table(reports)
        report.write_atomic(out / "comparison.tsv", table)
        print(table, end="")
    return EXIT_OK


def cmd_sweep(args, cfg) -> int:
    out = _out_dir(args, cfg)
    reports = runner.run_sweep(cfg, parallel=args.parallel)
    for v, rep in zip(cfg.sweep_values, reports):
        report.write_atomic(out / f"report_{cfg.sweep_axis}_{v}.txt", report.render(rep))
    table = report.sweep_table(cfg.sweep_axis, cfg.sweep_values, reports)
    report.write_atomic(out / f"sweep_{cfg.sweep_axis}.tsv", table)
    print(table, end="")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "run": cmd_run, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="selftrain", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="experiment config file (INI)")
    parser.add_argument("--out", help="output directory (overrides [experiment] output)")
    parser.add_argument("--parallel", type=int, default=1, help="worker processes for independent runs")
    parser.add_argument("--seed-override", type=int, help="run this single seed instead of the configured ones")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed_override is not None:
            cfg = cfg.with_seeds([args.seed_override])
        if args.parallel < 1:
            raise ConfigError("--parallel must be >= 1")
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any pipeline failure maps to one exit code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
