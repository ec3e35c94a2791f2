"""Assimilation time and accuracy against the patch count B.

For each (B, w) pair the radius grid is swept and the best RMSE(mean) cell is
reported with the median assimilation time per step.

    python3 scripts/runtime_scaling.py --set model.T=50
"""

import argparse

import numpy as np

from otlpf import harness
from otlpf.config import parse_config

SETTINGS = [(512, 1 / 512), (256, 1 / 256), (128, 1 / 256), (64, 1 / 128)]
R_GRID = [0.004, 0.008, 0.012, 0.016, 0.020, 0.024, 0.028]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = parser.parse_args()
    config = parse_config("model.kind = st_transformed\nfilter.kind = sletpf\nrun.seed = 2024\n"
                          + "\n".join(args.set))
    prepared = harness.prepare(config)
    T = config.model.T
    print(f"{'B':>5}{'w':>10}{'best r':>9}{'rmse_mean':>12}{'s/step':>10}")
    for B, w in SETTINGS:
        result = harness.grid_search(config, r_grid=R_GRID, B_list=[B], w_list=[w], repeats=1,
                                     prepared=prepared)
        if not result.rows:
            print(f"{B:>5}{w:>10.5f}  no admissible cell")
            continue
        row = harness.best_cell(result.summary, "rmse_mean")[()]
        seconds = np.median([r["assim_seconds"] for r in result.rows]) / T
        print(f"{B:>5}{w:>10.5f}{row['r']:>9.3f}{row['median']:>12.4g}{seconds:>10.3f}")


if __name__ == "__main__":
    main()
