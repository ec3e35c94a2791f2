"""Experiment orchestration: truth simulation, ground truth, single runs and sweeps."""

import dataclasses
import hashlib
import itertools
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from otlpf import rng as rngs
from otlpf.config import parse_grid
from otlpf.filters import Assimilator, FilterConfig, filter_run, iter_kalman_filter
from otlpf.io import SCHEMA_VERSION
from otlpf.metrics import (
    ensemble_ground_truth,
    evaluate,
    kalman_ground_truth,
    pushforward_ground_truth,
    state_ground_truth,
)
from otlpf.models import TransformedModel

SUMMARY_METRICS = ("rmse_mean", "rmse_std", "rmse_smooth", "assim_seconds")


@dataclass(frozen=True, eq=False)
class Truth:
    """Simulated state trajectory ``(T, M)`` and observations ``(T, L)``."""

    states: np.ndarray
    observations: np.ndarray


@dataclass
class RunResult:
    """Metrics of one filtering run plus its raw output."""

    metrics: object
    output: object
    config_hash: str
    wall_seconds: float
    repeat: int = 0


@dataclass
class GridResult:
    """Rows of a sweep, their per-cell summary and the dropped cells."""

    rows: list
    summary: list
    skipped: list = field(default_factory=list)


def config_hash(config):
    """Short stable hash of the model and filter settings and the seed."""
    payload = {
        "model": dataclasses.asdict(config.model),
        "filter": dataclasses.asdict(config.filter),
        "seed": config.run.seed,
    }
    text = json.dumps(payload, sort_keys=True, default=repr)
    return hashlib.sha1(text.encode()).hexdigest()[:12]


def simulate_truth(model, seed):
    """Simulate one trajectory from the model prior and its observations.

    Transformed models reuse the base model's noise streams, so a linear and a
    transformed turbulence model with the same seed share their observations.
    """
    base = model.base if isinstance(model, TransformedModel) else model
    T = base.params.T
    states = np.empty((T, base.M))
    observations = np.empty((T, base.obs.L))
    x = None
    for t in range(T):
        draw = rngs.stream(seed, rngs.TRUTH_STATE, t)
        x = base.init(1, draw) if t == 0 else base.forward(x, draw)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"truth simulation blew up at t={t}")
        states[t] = x[0]
        observations[t] = base.obs.sample(x[0], rngs.stream(seed, rngs.TRUTH_OBS, t))
    if base is not model:
        states = model.transform.apply(states)
    return Truth(states, observations)


def ground_truth(model, truth, seed, samples=10_000, reference_particles=0):
    """Filtering means, spreads and smoothness to score filters against.

    Linear turbulence uses the Kalman filter, transformed turbulence a
    pushforward of Kalman beliefs, and Kuramoto-Sivashinsky models a large
    bootstrap filter when ``reference_particles`` is positive or the true state
    otherwise.
    """
    if model.name == "st_linear":
        return kalman_ground_truth(iter_kalman_filter(model, truth.observations))
    if model.name == "st_transformed":
        beliefs = iter_kalman_filter(model.base, truth.observations)
        draw = rngs.stream(seed, rngs.GROUND_TRUTH)
        return pushforward_ground_truth(beliefs, model.transform, samples, draw)
    if reference_particles > 0:
        config = FilterConfig(kind="bootstrap_pf", P=reference_particles)
        out = filter_run(model, config, truth.observations, seed, purpose=rngs.REFERENCE)
        return ensemble_ground_truth(out.means, out.stds, out.smoothness)
    return state_ground_truth(truth.states)


def prepare(config):
    """Model, truth and ground truth shared by every run of ``config``."""
    model = config.model.build()
    truth = simulate_truth(model, config.run.seed)
    gt = ground_truth(model, truth, config.run.seed, config.run.ground_truth_samples,
                      config.run.reference_particles)
    return model, truth, gt


def run(config, prepared=None, repeat=0, threads=None, keep_ensembles=False):
    """One filtering run scored against the ground truth.

    Args:
        config: :class:`otlpf.config.ExperimentConfig`.
        prepared: Optional ``(model, truth, ground_truth)`` from :func:`prepare`.
        repeat: Repeat index selecting the filter's random stream.
        threads: Worker threads inside the filter; defaults to ``run.threads``.
        keep_ensembles: Keep every analysis ensemble in the output.
    """
    model, truth, gt = prepared if prepared is not None else prepare(config)
    start = time.perf_counter()
    output = filter_run(
        model, config.filter, truth.observations, config.run.seed, repeat=repeat,
        truth=truth.states, keep_ensembles=keep_ensembles,
        threads=config.run.threads if threads is None else threads,
    )
    return RunResult(evaluate(output, gt), output, config_hash(config),
                     time.perf_counter() - start, repeat)


def median_n_eff(config, model):
    """Median effective observations of the configured filter's localisation."""
    return Assimilator(config.filter, model).median_n_eff


def _cells(config, r_grid, B_list, w_list):
    kind = config.filter.kind
    if kind == "sletpf":
        return [dict(B=int(B), w=w, r=r) for B, w, r in itertools.product(B_list, w_list, r_grid)]
    if kind == "letkf":
        return [dict(r=r) for r in r_grid]
    return [{}]


def row_for(config, repeat, result=None, error=None):
    """CSV row dictionary for one run."""
    f = config.filter
    row = {
        "schema_version": SCHEMA_VERSION,
        "model": config.model.kind,
        "filter": f.kind,
        "B": f.B if f.kind == "sletpf" else None,
        "w": f.w if f.kind == "sletpf" else None,
        "r": f.r if f.kind in ("letkf", "sletpf") else None,
        "P": f.P,
        "seed": config.run.seed,
        "repeat": repeat,
        "error": error,
    }
    if result is not None:
        m = result.metrics
        row.update(rmse_mean=m.rmse_mean, rmse_std=m.rmse_std, rmse_smooth=m.rmse_smooth,
                   median_n_eff=m.median_n_eff, assim_seconds=m.assim_seconds)
    return row


def summarise(rows):
    """Minimum, median and maximum of each metric per parameter cell."""
    groups = {}
    for row in rows:
        key = tuple(row[k] for k in ("model", "filter", "B", "w", "r", "P"))
        groups.setdefault(key, []).append(row)
    out = []
    for key, members in groups.items():
        ok = [m for m in members if not m.get("error")]
        for metric in SUMMARY_METRICS:
            values = np.array([m[metric] for m in ok], dtype=float)
            stats = (np.min(values), np.median(values), np.max(values)) if ok else (None,) * 3
            out.append({
                "schema_version": SCHEMA_VERSION,
                **dict(zip(("model", "filter", "B", "w", "r", "P"), key)),
                "runs": len(members),
                "errors": len(members) - len(ok),
                "metric": metric,
                "minimum": stats[0],
                "median": stats[1],
                "maximum": stats[2],
            })
    return out


def grid_search(config, r_grid=None, B_list=None, w_list=None, repeats=None, prepared=None,
                writer=None, threads=None, cell_workers=1):
    """Sweep the filter over ``(B, w, r)`` cells with independent repeats.

    SLETPF cells whose median effective observation count falls outside the
    admissibility window are skipped. Failed runs become rows with an error
    message instead of aborting the sweep.

    Args:
        config: Base :class:`otlpf.config.ExperimentConfig`.
        r_grid: Radii; defaults to ``run.r_grid``.
        B_list: Patch counts; defaults to ``run.B_grid`` or the configured ``B``.
        w_list: Kernel widths; defaults to ``run.w_grid`` or the configured ``w``.
        repeats: Runs per cell; defaults to ``run.repeats``.
        prepared: Optional ``(model, truth, ground_truth)`` to reuse.
        writer: Optional :class:`otlpf.io.CsvWriter` receiving rows in cell order.
        threads: Worker threads inside each run.
        cell_workers: Cells evaluated concurrently.

    Returns:
        :class:`GridResult`.
    """
    rc = config.run
    r_grid = parse_grid(rc.r_grid) if r_grid is None else list(r_grid)
    r_grid = r_grid or [config.filter.r]
    B_list = B_list or parse_grid(rc.B_grid) or [config.filter.B]
    w_list = w_list or parse_grid(rc.w_grid) or [config.filter.w]
    repeats = rc.repeats if repeats is None else repeats
    prepared = prepared if prepared is not None else prepare(config)
    model = prepared[0]
    lo, hi = config.admissible_window()
    cells, skipped = [], []
    for cell in _cells(config, r_grid, B_list, w_list):
        cell_config = config.with_filter(**cell)
        if config.filter.kind == "sletpf":
            n = median_n_eff(cell_config, model)
            if not lo <= n <= hi:
                skipped.append({**cell, "median_n_eff": n})
                continue
        cells.append(cell_config)

    def evaluate_cell(cell_config):
        rows = []
        for repeat in range(repeats):
            try:
                result = run(cell_config, prepared, repeat, threads)
                rows.append(row_for(cell_config, repeat, result))
            except Exception as exc:  # recorded, the sweep continues
                rows.append(row_for(cell_config, repeat, error=f"{type(exc).__name__}: {exc}"))
        return rows

    all_rows = []
    if cell_workers > 1:
        with ThreadPoolExecutor(cell_workers) as pool:
            batches = pool.map(evaluate_cell, cells)
    else:
        batches = map(evaluate_cell, cells)
    for rows in batches:
        for row in rows:
            if writer is not None:
                writer.write(row)
            all_rows.append(row)
    return GridResult(all_rows, summarise(all_rows), skipped)


def best_cell(summary, metric, by=()):
    """Lowest median ``metric`` per group of summary columns ``by``.

    Returns:
        Dict from group key tuple to the winning summary row.
    """
    best = {}
    for row in summary:
        if row["metric"] != metric or row["median"] is None:
            continue
        key = tuple(row[k] for k in by)
        if key not in best or row["median"] < best[key]["median"]:
            best[key] = row
    return best
