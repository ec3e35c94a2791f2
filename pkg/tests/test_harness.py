import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from otlpf import harness
from otlpf.cli import main
from otlpf.config import ExperimentConfig, parse_config, parse_grid, parse_number
from otlpf.io import (
    RESULT_COLUMNS,
    read_array,
    read_rank_histogram,
    read_results,
    write_array,
)

SMALL = """
# reduced turbulence model
model.kind = st_linear
model.M = 32
model.L = 4
model.T = 4
filter.kind = sletpf
filter.P = 10
filter.B = 8
filter.w = 1/32
filter.r = 0.15
"""


def small_config(extra=""):
    return parse_config(SMALL + extra)


def test_defaults_match_reference_setup():
    config = ExperimentConfig()
    assert (config.model.M, config.model.T, config.model.L, config.filter.P) == (512, 200, 64, 100)


def test_parse_config_values_and_fractions():
    config = small_config("run.seed = 12\nrun.dump_ensembles = yes\n")
    assert config.filter.w == 1 / 32 and config.filter.B == 8
    assert config.run.seed == 12 and config.run.dump_ensembles is True
    assert parse_number("1/256") == 1 / 256 and parse_number("7") == 7


@pytest.mark.parametrize("text", [
    "model.colour = red",
    "nosuch.key = 1",
    "filter = 1",
    "filter.P = 2.5",
    "filter.kind = enkf",
    "model.kind = lorenz",
    "model.S = 5",
    "model.kind = ks_linear\nmodel.amplitude = 1.0",
    "run.dump_ensembles = maybe",
    "just words",
])
def test_parse_config_rejects_bad_input(text):
    with pytest.raises(ValueError):
        parse_config(text)


def test_parse_grid_forms():
    assert parse_grid("0.001:0.005:0.001") == pytest.approx([0.001, 0.002, 0.003, 0.004, 0.005])
    assert len(parse_grid("0.010:0.160:0.002")) == 76
    assert parse_grid("32, 64,1/2") == [32.0, 64.0, 0.5]
    assert parse_grid("") == []


@given(st.lists(st.integers(1, 10_000), min_size=1, max_size=6))
def test_parse_grid_lists_round_trip(values):
    assert parse_grid(",".join(map(str, values))) == [float(v) for v in values]


def test_admissible_window():
    assert ExperimentConfig().admissible_window() == (1.0, 5.0)
    config = parse_config("model.kind = ks_tanh")
    assert config.admissible_window() == (2.0, 6.0)


def test_array_round_trip(tmp_path):
    data = np.random.default_rng(0).normal(size=(3, 4, 5))
    path = tmp_path / "e.bin"
    write_array(path, data, "ensembles", M=5, T=3, L=2, P=4)
    back, header = read_array(path)
    assert np.array_equal(back, data) and header["kind"] == "ensembles"
    raw = path.read_bytes()
    assert raw[:4] == b"OTLP"
    assert np.array_equal(np.frombuffer(raw[28:], "<f8"), data.ravel())
    (tmp_path / "bad.bin").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError):
        read_array(tmp_path / "bad.bin")


def test_simulate_truth_shapes_and_shared_observations():
    lin = small_config()
    trans = small_config("model.kind = st_transformed\n")
    a = harness.simulate_truth(lin.model.build(), 7)
    b = harness.simulate_truth(trans.model.build(), 7)
    assert a.observations.shape == (4, 4) and a.states.shape == (4, 32)
    assert np.array_equal(a.observations, b.observations)
    np.testing.assert_allclose(b.states, np.arcsinh(5 * a.states))


def test_ground_truth_sources():
    config = small_config()
    model, truth, gt = harness.prepare(config)
    assert gt.source == "kalman_exact"
    ks = small_config(f"model.kind = ks_linear\nmodel.theta1 = {8 * np.pi!r}\n")
    ks.run.reference_particles = 50
    model, truth, gt = harness.prepare(ks)
    assert gt.source == "reference_ensemble" and gt.means.shape == (4, 32)
    ks.run.reference_particles = 0
    assert harness.prepare(ks)[2].source == "true_state"


def test_run_is_deterministic_and_hashes_config():
    config = small_config()
    prepared = harness.prepare(config)
    a = harness.run(config, prepared)
    b = harness.run(config, prepared, threads=2)
    assert a.metrics.rmse_mean == b.metrics.rmse_mean
    assert a.metrics.rmse_std == b.metrics.rmse_std
    assert a.config_hash == b.config_hash
    assert a.config_hash != harness.config_hash(config.with_filter(r=0.2))


def test_grid_search_rows_and_admissibility():
    config = small_config("run.n_eff_max = 1.3\n")
    result = harness.grid_search(config, r_grid=[0.001, 0.15, 0.2], B_list=[8], w_list=[1 / 32],
                                 repeats=3)
    kept = {row["r"] for row in result.rows}
    assert kept == {0.15}
    assert len(result.rows) == 3
    assert {cell["r"] for cell in result.skipped} == {0.001, 0.2}
    medians = [row for row in result.summary if row["metric"] == "rmse_mean"]
    assert len(medians) == 1 and medians[0]["runs"] == 3
    assert medians[0]["minimum"] <= medians[0]["median"] <= medians[0]["maximum"]


def test_grid_search_records_errors():
    config = small_config("filter.kind = letkf\nfilter.P = 1\n")
    result = harness.grid_search(config, r_grid=[0.15, 0.2], repeats=2)
    assert len(result.rows) == 4
    assert all(row["error"] for row in result.rows)
    assert all(row["errors"] == 2 for row in result.summary)


def test_best_cell():
    summary = [
        {"metric": "rmse_mean", "median": 0.3, "B": 8, "r": 0.1},
        {"metric": "rmse_mean", "median": 0.2, "B": 8, "r": 0.2},
        {"metric": "rmse_mean", "median": 0.5, "B": 16, "r": 0.1},
        {"metric": "rmse_std", "median": 0.0, "B": 8, "r": 0.3},
    ]
    best = harness.best_cell(summary, "rmse_mean", by=("B",))
    assert best[(8,)]["r"] == 0.2 and best[(16,)]["r"] == 0.1


def write_config(tmp_path, extra=""):
    path = tmp_path / "run.cfg"
    path.write_text(SMALL + extra)
    return str(path)


def test_cli_simulate_is_reproducible(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["simulate", "--config", cfg, "--seed", "3", "--out", str(tmp_path / "a")]) == 0
    assert main(["simulate", "--config", cfg, "--seed", "3", "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a.obs.bin").read_bytes() == (tmp_path / "b.obs.bin").read_bytes()
    obs, header = read_array(tmp_path / "a.obs.bin")
    assert obs.size == header["T"] * header["L"]
    trans = write_config(tmp_path, "model.kind = st_transformed\n")
    main(["simulate", "--config", trans, "--seed", "3", "--out", str(tmp_path / "c")])
    assert (tmp_path / "a.obs.bin").read_bytes() == (tmp_path / "c.obs.bin").read_bytes()
    assert (tmp_path / "a.obs.csv").read_text() == (tmp_path / "c.obs.csv").read_text()


def test_cli_filter_and_grid_search(tmp_path, monkeypatch):
    cfg = write_config(tmp_path, "run.repeats = 2\nrun.r_grid = 0.15,0.2\n")
    out = tmp_path / "f.csv"
    monkeypatch.setenv("OTLPF_THREADS", "2")
    assert main(["filter", "--config", cfg, "--out", str(out), "--dump-ensembles"]) == 0
    rows = read_results(out)
    assert len(rows) == 2 and tuple(rows[0]) == RESULT_COLUMNS
    ens, header = read_array(tmp_path / "f.r0.ensembles.bin")
    assert ens.shape == (4, 10, 32)
    grid = tmp_path / "g.csv"
    assert main(["grid-search", "--config", cfg, "--out", str(grid)]) == 0
    assert len(read_results(grid)) == 4
    assert len(read_results(tmp_path / "g.summary.csv")) == 8


def test_cli_rank_hist_and_ground_truth(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "rh.csv"
    assert main(["rank-hist", "--config", cfg, "--out", str(out)]) == 0
    counts = read_rank_histogram(out)
    assert counts.size == 11 and counts.sum() == 4 * 32
    assert main(["ground-truth", "--config", cfg, "--out", str(tmp_path / "gt")]) == 0
    moments, header = read_array(tmp_path / "gt.moments.bin")
    assert moments.shape == (4, 2, 32) and header["kind"] == "moments"


def test_cli_dump_pou(tmp_path):
    cfg = write_config(tmp_path)
    path = tmp_path / "pou.csv"
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "s"),
                 "--dump-pou", str(path)]) == 0
    bumps = np.loadtxt(path, delimiter=",", skiprows=1)[:, 1:]
    assert bumps.shape == (8, 32)
    np.testing.assert_allclose(bumps.sum(axis=0), 1.0, atol=1e-12)


def test_cli_reports_config_errors(tmp_path, capsys):
    cfg = write_config(tmp_path, "filter.typo = 3\n")
    assert main(["filter", "--config", cfg]) == 2
    assert "unknown key" in capsys.readouterr().err
    assert main(["filter", "--set", "filter.P=oops"]) == 2
