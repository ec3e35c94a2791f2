"""Command line entry point: ``otlpf {simulate,filter,grid-search,rank-hist,ground-truth}``."""

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from otlpf import harness
from otlpf.config import ExperimentConfig, load_config, parse_config
from otlpf.io import (
    SUMMARY_COLUMNS,
    CsvWriter,
    write_array,
    write_observations_csv,
    write_pou_csv,
    write_rank_histogram,
)
from otlpf.metrics import chi_square_uniform
from otlpf.spatial import make_pou


def _stem(path):
    path = Path(path)
    return path.with_suffix("") if path.suffix else path


def _config(args):
    config = load_config(args.config) if args.config else ExperimentConfig()
    if args.set:
        config = parse_config("\n".join(args.set), base=config)
    if args.seed is not None:
        config.run.seed = args.seed
    if args.out is not None:
        config.run.out = args.out
    if args.threads is not None:
        config.run.threads = args.threads
    elif os.environ.get("OTLPF_THREADS"):
        config.run.threads = int(os.environ["OTLPF_THREADS"])
    if args.dump_ensembles:
        config.run.dump_ensembles = True
    return config


def cmd_simulate(config):
    model = config.model.build()
    truth = harness.simulate_truth(model, config.run.seed)
    p = model.params
    stem = _stem(config.run.out)
    write_array(f"{stem}.states.bin", truth.states, "states", p.M, p.T, p.L)
    write_array(f"{stem}.obs.bin", truth.observations, "observations", p.M, p.T, p.L)
    write_observations_csv(f"{stem}.obs.csv", truth.observations, model.obs.locations)
    print(f"wrote {stem}.states.bin, {stem}.obs.bin, {stem}.obs.csv")


def cmd_filter(config):
    prepared = harness.prepare(config)
    model = prepared[0]
    p = model.params
    stem = _stem(config.run.out)
    with CsvWriter(config.run.out) as writer:
        for repeat in range(config.run.repeats):
            try:
                result = harness.run(config, prepared, repeat,
                                     keep_ensembles=config.run.dump_ensembles)
            except Exception as exc:
                writer.write(harness.row_for(config, repeat, error=f"{type(exc).__name__}: {exc}"))
                continue
            writer.write(harness.row_for(config, repeat, result))
            m = result.metrics
            print(f"repeat {repeat}: rmse_mean={m.rmse_mean:.4g} rmse_std={m.rmse_std:.4g} "
                  f"rmse_smooth={m.rmse_smooth:.4g} assim_seconds={m.assim_seconds:.3g}")
            if config.run.dump_ensembles:
                path = f"{stem}.r{repeat}.ensembles.bin"
                write_array(path, result.output.ensembles, "ensembles", p.M, p.T, p.L,
                            config.filter.P)
    print(f"wrote {config.run.out}")


def cmd_grid_search(config):
    out = config.run.out
    with CsvWriter(out) as writer:
        result = harness.grid_search(config, writer=writer)
    summary_path = f"{_stem(out)}.summary.csv"
    with CsvWriter(summary_path, SUMMARY_COLUMNS) as writer:
        for row in result.summary:
            writer.write(row)
    for cell in result.skipped:
        print(f"skipped inadmissible cell {cell}")
    print(f"wrote {len(result.rows)} rows to {out} and the summary to {summary_path}")


def cmd_rank_hist(config):
    result = harness.run(config)
    counts = result.output.rank_counts
    write_rank_histogram(config.run.out, counts)
    print(f"chi_square={chi_square_uniform(counts):.6g}; wrote {config.run.out}")


def cmd_ground_truth(config):
    model, truth, gt = harness.prepare(config)
    p = model.params
    stem = _stem(config.run.out)
    moments = np.stack([gt.means, gt.stds], axis=1)
    write_array(f"{stem}.moments.bin", moments, "moments", p.M, p.T, p.L)
    with CsvWriter(f"{stem}.smoothness.csv", ("t", "smoothness")) as writer:
        for t, value in enumerate(gt.smoothness):
            writer.write({"t": t, "smoothness": float(value)})
    print(f"source={gt.source}; wrote {stem}.moments.bin and {stem}.smoothness.csv")


COMMANDS = {
    "simulate": cmd_simulate,
    "filter": cmd_filter,
    "grid-search": cmd_grid_search,
    "rank-hist": cmd_rank_hist,
    "ground-truth": cmd_ground_truth,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="otlpf", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="key = value configuration file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one configuration key; repeatable")
    parser.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    parser.add_argument("--out", help="output path")
    parser.add_argument("--threads", type=int,
                        help="worker threads inside a run (default: $OTLPF_THREADS or 1)")
    parser.add_argument("--dump-ensembles", action="store_true",
                        help="write every analysis ensemble to a binary dump")
    parser.add_argument("--dump-pou", metavar="PATH",
                        help="write the configured partition of unity to a CSV file")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = _config(args)
    except (OSError, ValueError) as exc:
        print(f"otlpf: configuration error: {exc}", file=sys.stderr)
        return 2
    if args.dump_pou:
        pou = make_pou(config.model.M, config.filter.B, config.filter.w)
        write_pou_csv(args.dump_pou, pou.bumps)
        print(f"wrote {args.dump_pou}")
    COMMANDS[args.command](config)
    return 0


if __name__ == "__main__":
    sys.exit(main())
