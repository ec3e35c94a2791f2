"""Min/median/max metric table for several filters on one model.

Each filter is swept over ``run.r_grid`` (or a default grid per filter when the
config has none); the table reports the cell with the lowest median of the
chosen metric, as a best-tuned comparison.

    python3 scripts/compare_filters.py --config scripts/configs/linear_letkf.cfg \
        --filters letkf,sletpf --metric rmse_mean
"""

import argparse

from otlpf import harness
from otlpf.config import load_config, parse_config, parse_grid

DEFAULT_GRIDS = {
    "letkf": "0.010:0.160:0.010",
    "sletpf": "0.004:0.040:0.004",
}


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", required=True)
    parser.add_argument("--filters", default="letkf,sletpf")
    parser.add_argument("--metric", default="rmse_mean")
    parser.add_argument("--repeats", type=int)
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = parser.parse_args()

    config = load_config(args.config)
    if args.set:
        config = parse_config("\n".join(args.set), base=config)
    prepared = harness.prepare(config)
    print(f"ground truth: {prepared[2].source}")
    print(f"{'filter':<14}{'r':>8}{'minimum':>12}{'median':>12}{'maximum':>12}")
    for kind in args.filters.split(","):
        cfg = config.with_filter(kind=kind)
        grid = None if config.run.r_grid else parse_grid(DEFAULT_GRIDS.get(kind, "")) or None
        result = harness.grid_search(cfg, r_grid=grid, repeats=args.repeats, prepared=prepared)
        if not result.summary:
            print(f"{kind:<14}  no admissible cell")
            continue
        row = harness.best_cell(result.summary, args.metric)[()]
        r = "-" if row["r"] is None else f"{row['r']:.3f}"
        print(f"{kind:<14}{r:>8}{row['minimum']:>12.4g}{row['median']:>12.4g}{row['maximum']:>12.4g}")


if __name__ == "__main__":
    main()
