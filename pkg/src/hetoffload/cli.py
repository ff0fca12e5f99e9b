"""Command line entry point: ``hetoffload {ingest,synth,train,eval,report}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 training
divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import data as data_mod
from .agents import SCHEMES
from .config import ExperimentConfig, dump_config, load_config, with_overrides
from .exceptions import ConfigError, DataFormatError, TrainingDivergenceError
from .forecast import FORECASTERS
from .harness import (
    build_envs,
    checkpoint_dir,
    emit_report,
    format_summary,
    load_series,
    read_report,
    run_evaluation,
    run_training,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

log = logging.getLogger("hetoffload")


def _resolve(args) -> ExperimentConfig:
    config = load_config(args.config)
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "forecaster", None):
        changes["forecaster.name"] = args.forecaster
    if getattr(args, "scheme", None):
        changes["schemes"] = [args.scheme]
    if getattr(args, "out", None):
        changes["output_dir"] = str(args.out)
    if getattr(args, "demand", None):
        changes["data.source"] = "csv"
        changes["data.demand_csv"] = str(args.demand)
    return with_overrides(config, changes) if changes else config


def cmd_ingest(args) -> int:
    columns = {k: v for k, v in (("grid", args.grid_col), ("timestamp", args.time_col),
                                 ("activity", args.activity_col)) if v is not None}
    tower_cols = {k: v for k, v in (("mcc", args.mcc_col), ("mnc", args.mnc_col),
                                    ("lon", args.lon_col), ("lat", args.lat_col)) if v is not None}
    traffic = data_mod.parse_traffic_records(args.traffic, columns=columns, delimiter=args.delimiter)
    towers = data_mod.parse_cell_towers(args.towers, args.mcc, args.mnc, columns=tower_cols)
    if not towers:
        raise DataFormatError(f"no towers match mcc={args.mcc} mnc={args.mnc}")
    if args.grids:
        centers = data_mod.parse_grid_centers(args.grids)
    else:
        _, centers = data_mod.synthetic_layout(args.layout_seed, len(towers))
    cmap = data_mod.assign_grids(towers, centers)
    try:
        series = data_mod.aggregate_demand(traffic.records, cmap, args.data_size)
    except ValueError as exc:
        raise DataFormatError(str(exc)) from exc
    data_mod.write_demand_csv(series, args.out)
    log.info("wrote %d macrocells x %d slots to %s (%d malformed rows skipped)",
             series.n_macrocells, series.n_slots, args.out, traffic.malformed)
    return EXIT_OK


def cmd_synth(args) -> int:
    config = _resolve(args)
    series = load_series(with_overrides(config, {"data.source": "synth"}))
    data_mod.write_demand_csv(series, args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    config = _resolve(args)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(dump_config(config))
    train_env, _ = build_envs(config)
    for scheme in config.schemes:
        _, training_log = run_training(config, scheme, checkpoint_dir(out, scheme), train_env=train_env)
        for entry in training_log:
            log.info("%s %s", scheme, entry)
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _resolve(args)
    out = Path(config.output_dir)
    checkpoints = {}
    for scheme in config.schemes:
        path = checkpoint_dir(out, scheme)
        if not (path / "manifest.json").exists():
            raise ConfigError(f"no checkpoint for {scheme} under {out}; run `train` first")
        checkpoints[scheme] = path
    report = run_evaluation(config, checkpoints)
    emit_report(report, out)
    print(format_summary(report))
    return EXIT_OK


def cmd_report(args) -> int:
    report = read_report(args.report)
    if args.out:
        emit_report(report, args.out)
    print(format_summary(report))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hetoffload", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    # also accepted after the subcommand; SUPPRESS keeps it from resetting the top-level value
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="traffic + tower files -> demand CSV")
    p.add_argument("--traffic", required=True)
    p.add_argument("--towers", required=True)
    p.add_argument("--grids", help="grid_id,lon,lat file; default is a synthetic 12x12 lattice")
    p.add_argument("--mcc", type=int, required=True)
    p.add_argument("--mnc", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--data-size", type=float, default=data_mod.DATA_SIZE_PER_ACTIVITY_MB,
                   help="megabits per activity (default 15)")
    p.add_argument("--delimiter")
    p.add_argument("--layout-seed", type=int, default=0)
    for name in ("grid", "time", "activity", "mcc", "mnc", "lon", "lat"):
        p.add_argument(f"--{name}-col", type=int, dest=f"{name}_col")
    p.set_defaults(func=cmd_ingest)

    def experiment_args(p, out_required=False):
        p.add_argument("--config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", required=out_required)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic demand CSV")
    experiment_args(p, out_required=True)
    p.set_defaults(func=cmd_synth)

    for name, func in (("train", cmd_train), ("eval", cmd_eval)):
        p = sub.add_parser(name, parents=[common])
        experiment_args(p)
        p.add_argument("--scheme", choices=sorted(SCHEMES))
        p.add_argument("--forecaster", choices=sorted(FORECASTERS))
        p.add_argument("--demand", help="demand CSV to use instead of synthetic data")
        p.set_defaults(func=func)

    p = sub.add_parser("report", parents=[common], help="summarize or re-emit a report.json")
    p.add_argument("report")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
