"""RMSE of the smoothness coefficient against the PoU kernel width at fixed B.

Wider kernels blend neighbouring patch maps and should give smoother analyses.

    python3 scripts/smoothness_vs_width.py --B 128
"""

import argparse

from otlpf import harness
from otlpf.config import parse_config

WIDTHS = [1 / 512, 1 / 256, 1 / 128]
R_GRID = [0.008, 0.014, 0.020, 0.026, 0.032]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--B", type=int, default=128)
    parser.add_argument("--repeats", type=int, default=1)
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = parser.parse_args()
    config = parse_config(f"model.kind = st_linear\nfilter.kind = sletpf\nfilter.B = {args.B}\n"
                          "run.seed = 2024\n" + "\n".join(args.set))
    prepared = harness.prepare(config)
    print(f"{'w':>10}{'best r':>9}{'rmse_smooth':>14}{'rmse_mean':>12}")
    for w in WIDTHS:
        result = harness.grid_search(config.with_filter(w=w), r_grid=R_GRID,
                                     repeats=args.repeats, prepared=prepared)
        row = harness.best_cell(result.summary, "rmse_smooth")[()]
        mean = next(s for s in result.summary
                    if s["metric"] == "rmse_mean" and s["r"] == row["r"])
        print(f"{w:>10.5f}{row['r']:>9.3f}{row['median']:>14.4g}{mean['median']:>12.4g}")


if __name__ == "__main__":
    main()
