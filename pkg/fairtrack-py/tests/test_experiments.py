from __future__ import annotations

import json

import numpy as np
import pandas as pd
import pytest

from fairtrack import experiments
from fairtrack.config import RunConfigFile, parse_config
from fairtrack.errors import ConfigurationError
from fairtrack.experiments import (
    CONVERGENCE_COLUMNS,
    OUTPUT_ROOT_ENV,
    SUMMARY_COLUMNS,
    ablate_convergence,
    ablate_heterogeneity,
    ablate_set_size,
    aggregate_table,
    default_output_root,
    execute,
    lambda_grid,
    pareto_front,
    parse_lambda_grid,
    run_and_write,
    run_directory,
    sweep,
)
from fairtrack.models import load_checkpoint

TINY = {
    "seed": 1,
    "data": {"n_clients": 2, "samples_per_client": 40, "dim": 2},
    "federation": {"rounds": 2, "local_epochs": 2, "local_step": 0.1, "batch_size": 5, "set_size": 5},
    "fairness": {"lam": 1.0},
    "centralized": {"epochs": 20, "step": 0.1, "record_every": 10},
}


@pytest.fixture
def tiny() -> RunConfigFile:
    return parse_config(json.dumps(TINY))


def test_run_writes_every_output(tiny, tmp_path):
    out = run_and_write(tiny, tmp_path)
    assert out == run_directory(tiny, tmp_path)
    assert out.name == f"{tiny.config_hash()}-s1"
    for name in ("records.jsonl", "summary.csv", "model.bin", "config.resolved.json", "timings.csv"):
        assert (out / name).is_file()

    records = [json.loads(line) for line in (out / "records.jsonl").read_text().splitlines()]
    assert [r["round"] for r in records] == [1, 2]
    summary = pd.read_csv(out / "summary.csv", dtype={"snapshot": str})
    assert list(summary.columns) == SUMMARY_COLUMNS
    assert summary.loc[0, "snapshot"] == records[-1]["snapshot"]
    assert len(pd.read_csv(out / "timings.csv")) == 2
    assert load_checkpoint(out / "model.bin").input_dim == 2
    assert parse_config((out / "config.resolved.json").read_text()) == tiny


def test_records_are_byte_identical_across_runs(tiny, tmp_path):
    first = run_and_write(tiny, tmp_path / "a")
    second = run_and_write(tiny, tmp_path / "b")
    assert (first / "records.jsonl").read_bytes() == (second / "records.jsonl").read_bytes()
    assert (first / "model.bin").read_bytes() == (second / "model.bin").read_bytes()


def test_centralized_trainer_records_epochs(tiny):
    outcome = execute(tiny.with_trainer("centralized"))
    assert [r["epoch"] for r in outcome.records] == [10, 20]
    assert outcome.summary["rounds"] == 20
    assert outcome.summary["pseudo_stepsize"] is None
    assert outcome.round_seconds == []


def test_local_fair_trainer_runs(tiny):
    outcome = execute(tiny.with_trainer("local_fair"))
    assert len(outcome.records) == 2
    assert all(r["trainer"] == "local_fair" for r in outcome.records)


def test_epsilon_audit_lands_in_summary(tiny):
    config = parse_config(json.dumps({**TINY, "fairness": {"lam": 1.0, "epsilon": 10.0}}))
    assert execute(config).summary["epsilon_fair"] is True
    assert execute(tiny).summary["epsilon_fair"] is None


def test_pareto_front_drops_dominated_points():
    frame = pd.DataFrame({"accuracy": [0.9, 0.8, 0.95], "sp_unfairness": [0.1, 0.2, 0.3]})
    front = pareto_front(frame)
    assert list(zip(front["accuracy"], front["sp_unfairness"])) == [(0.9, 0.1), (0.95, 0.3)]


def test_pareto_front_keeps_ties():
    frame = pd.DataFrame({"accuracy": [0.9, 0.9], "sp_unfairness": [0.1, 0.1]})
    assert len(pareto_front(frame)) == 2


def test_lambda_grid_is_log_spaced():
    grid = lambda_grid(1e-5, 100.0, 50)
    assert len(grid) == 50
    assert grid[0] == pytest.approx(1e-5) and grid[-1] == pytest.approx(100.0)
    np.testing.assert_allclose(np.diff(np.log(grid)), np.log(1e7) / 49)
    np.testing.assert_allclose(parse_lambda_grid("0.1:10:3"), [0.1, 1.0, 10.0])


@pytest.mark.parametrize("text", ["1:2", "a:b:3", "0:1:3", "2:1:3", "1:2:0"])
def test_lambda_grid_rejects_bad_input(text):
    with pytest.raises(ConfigurationError) as info:
        parse_lambda_grid(text)
    assert info.value.field == "lambda_grid"


def test_aggregate_table_mean_and_standard_error():
    runs = pd.DataFrame(
        {
            "lam": [0.1, 0.1, 1.0],
            "test_accuracy": [0.8, 0.9, 0.7],
            "test_sp_unfairness": [0.2, 0.4, 0.1],
            "test_mmd": [0.3, 0.5, 0.2],
        }
    )
    table = aggregate_table(runs)
    assert list(table["lam"]) == [0.1, 1.0]
    assert list(table["n_seeds"]) == [2, 1]
    assert table.loc[0, "accuracy"] == pytest.approx(0.85)
    assert table.loc[0, "accuracy_se"] == pytest.approx(0.05)
    assert table.loc[1, "sp_unfairness_se"] == 0.0


def test_sweep_writes_tables(tiny, tmp_path):
    result = sweep(tiny, [0.1, 1.0], [0, 1], tmp_path)
    assert result.failures == 0
    assert len(result.runs) == 4
    assert list(result.table["n_seeds"]) == [2, 2]
    assert not result.pareto.empty
    for name in ("runs.csv", "table.csv", "pareto.csv"):
        assert (result.directory / name).is_file()
    assert result.directory.name == f"sweep-{tiny.config_hash()}"


def test_sweep_counts_failures_and_continues(tiny, tmp_path):
    broken = parse_config(json.dumps({**TINY, "fairness": {"lam": 1.0, "criterion": "equalized_odds"}}))
    result = sweep(broken, [0.1, 1.0], [0, 1], tmp_path)
    assert result.failures == 4
    assert result.runs.empty
    assert (result.directory / "runs.csv").is_file()


def test_sweep_over_unreadable_csv_records_failures(tmp_path):
    path = tmp_path / "data.csv"
    path.write_bytes(b"x,y,a,g\n1.0,1,0,n\n\xff,0,1,s\n")
    csv = {
        "path": str(path),
        "feature_columns": ["x"],
        "label_column": "y",
        "protected_column": "a",
        "group_column": "g",
    }
    config = parse_config(json.dumps({**TINY, "data": {"source": "csv", "csv": csv}}))
    result = sweep(config, [0.1, 1.0], [0], tmp_path)
    assert result.failures == 2
    assert (result.directory / "runs.csv").is_file()


def test_sweep_records_unexpected_errors(tiny, tmp_path, monkeypatch):
    def explode(config):
        raise RuntimeError("boom")

    monkeypatch.setattr(experiments, "execute", explode)
    result = sweep(tiny, [0.1, 1.0], [0], tmp_path)
    assert result.failures == 2
    assert result.runs.empty


def test_ablate_set_size_writes_one_front_per_size(tiny, tmp_path):
    result = ablate_set_size(tiny, [1.0], [0], tmp_path, sizes=(5, 10))
    assert set(result.tables) == {"set_size-5", "set_size-10"}
    for size in (5, 10):
        assert (result.directory / f"pareto-{size}.csv").is_file()
        table = pd.read_csv(result.directory / f"table-{size}.csv")
        assert set(table["set_size"]) == {size}


def test_ablate_heterogeneity_reports_intervals(tiny, tmp_path):
    result = ablate_heterogeneity(tiny, [0, 1], tmp_path, alphas=(0.5, 1.0), lam=1.0)
    table = result.tables["heterogeneity"]
    assert list(table["alpha"]) == [0.5, 1.0]
    assert list(table["n_seeds"]) == [2, 2]
    assert (table["accuracy_lo"] <= table["accuracy"]).all()
    assert (table["accuracy"] <= table["accuracy_hi"]).all()
    assert (result.directory / "heterogeneity.csv").is_file()


def test_ablate_convergence_splits_the_objective(tiny, tmp_path):
    result = ablate_convergence(tiny, [0, 1], tmp_path, lam=0.5)
    table = result.tables["convergence"]
    assert list(table.columns) == CONVERGENCE_COLUMNS
    assert len(table) == 4
    np.testing.assert_allclose(table["train_objective"], table["train_ce"] + 0.5 * table["train_mmd"])


def test_ablate_convergence_needs_federated_trainer(tiny, tmp_path):
    with pytest.raises(ConfigurationError) as info:
        ablate_convergence(tiny.with_trainer("centralized"), [0], tmp_path)
    assert info.value.field == "trainer"


def test_default_output_root_honours_environment(monkeypatch, tmp_path):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
    assert default_output_root() == tmp_path
    monkeypatch.delenv(OUTPUT_ROOT_ENV)
    monkeypatch.chdir(tmp_path)
    assert default_output_root() == tmp_path / "runs"
