"""Command line entry point: ``rimsa run`` and ``rimsa trace``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from .config import SCENARIOS, ConfigError, ExperimentConfig, load_config, preset, to_mapping, with_overrides
from .results import emit_convergence_trace, emit_results, summarize
from .runner import convergence_trace, run_experiment

EXIT_CONFIG = 2
EXIT_IO = 3


def _snr_list(text: str):
    try:
        return tuple(float(s) for s in text.split(",") if s.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad SNR list {text!r}") from exc


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="YAML experiment file")
    p.add_argument("--scenario", choices=SCENARIOS)
    p.add_argument("--snr", type=_snr_list, help="comma-separated SNR grid in dB")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path)
    p.add_argument("--small", action="store_true", help="reduced dimensions for quick runs")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rimsa", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Monte Carlo sweep, writes CSV + JSON summary")
    _common(run)
    run.add_argument("--workers", type=int)
    run.add_argument("--timing", action="store_true", help="record wall-clock times (breaks byte determinism)")
    run.add_argument("--save-config", type=Path, help="also write the resolved config as YAML")

    trace = sub.add_parser("trace", help="per-iteration objective of one seeded run")
    _common(trace)
    trace.add_argument("--trial", type=int, default=0)
    trace.add_argument("--point", type=int, default=0, help="sweep point index")
    trace.add_argument("--objective", choices=("rate", "wmse"), default="rate")
    return parser


def resolve_config(args) -> ExperimentConfig:
    if args.config is not None:
        cfg = load_config(args.config, small=args.small)
        if args.scenario and args.scenario != cfg.scenario:
            raise ConfigError(f"--scenario {args.scenario} conflicts with {cfg.scenario} config file")
    else:
        cfg = preset(args.scenario or "miso", args.small)
    return with_overrides(
        cfg,
        snr_grid=args.snr,
        trials=args.trials,
        seed=args.seed,
        out=str(args.out) if args.out else None,
        workers=getattr(args, "workers", None),
        record_timing=True if getattr(args, "timing", False) else None,
    )


def _cmd_run(cfg: ExperimentConfig, args) -> int:
    def progress(done, total):
        logging.getLogger("rimsa").info("%d/%d trials", done, total)

    records = run_experiment(cfg, progress)
    path = emit_results(records, cfg.out)
    if args.save_config:
        args.save_config.write_text(yaml.safe_dump(to_mapping(cfg), sort_keys=False), encoding="utf-8")
    for row in summarize(records):
        print(
            f"{row['algorithm']:>12} {row['sweep_name']}={row['sweep_value']:g} "
            f"snr={row['snr_db']:g} dB  rate={row['mean_sum_rate_bits']:.4f} "
            f"+/- {row['stderr_sum_rate_bits']:.4f}  conv={row['converged_fraction']:.2f}"
        )
    print(f"wrote {path}")
    return 0


def _cmd_trace(cfg: ExperimentConfig, args) -> int:
    trace = convergence_trace(cfg, args.point, 0, args.trial, args.objective)
    out = args.out if args.out else Path("trace.csv")
    emit_convergence_trace(trace, out)
    print(f"{len(trace) - 1} iterations, final objective {trace[-1]:.6f}; wrote {out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "run":
            return _cmd_run(cfg, args)
        return _cmd_trace(cfg, args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
