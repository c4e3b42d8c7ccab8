import math

import numpy as np
import pandas as pd
import pytest

from incremental_glmix.constants import Strategy, TrainModeKind
from incremental_glmix.errors import DataValidationError, NumericalError
from incremental_glmix.evaluation import benchmark
from incremental_glmix.evaluation.benchmark import (
    REPORT_COLUMNS,
    SUMMARY_COLUMNS,
    BenchmarkReport,
    run_benchmark,
    tune_forgetting_factor,
)
from incremental_glmix.evaluation.drift import generate_drift_stream
from incremental_glmix.persistence.store import list_rounds
from incremental_glmix.schemas import BenchmarkConfig, DriftGenConfig, TrainerConfig


@pytest.fixture(scope="module")
def stream():
    config = DriftGenConfig(
        seed=3,
        n_entities=8,
        feature_dim=5,
        examples_per_phase=300,
        n_phases=4,
        nnz_per_example=2,
        drift_rate=0.2,
    )
    return generate_drift_stream(config).phases


def config(*strategies, **trainer):
    return BenchmarkConfig(strategies=strategies, sweeps=1, trainer=TrainerConfig(**trainer))


def test_cold_only_has_one_row_per_evaluation_phase(stream):
    report = run_benchmark(stream, config(Strategy.COLD))

    assert list(report.rows.columns) == list(REPORT_COLUMNS)
    assert report.rows["phase"].tolist() == [2, 3]
    assert report.strategies == ["cold"]
    assert not report.rows["failed"].any()
    assert report.rows["test_auc"].between(0.0, 1.0).all()


def test_every_strategy_shares_the_first_cold_model(stream):
    cold_starts = {}

    run_benchmark(stream, config(Strategy.COLD, Strategy.WARM), cold_starts=cold_starts)

    assert len(cold_starts) == 1


def test_warm_and_incremental_agree_without_memory(stream):
    report = run_benchmark(
        stream, config(Strategy.WARM, Strategy.INCRE_DIAG, l2_base=0.0, lambda_f=0.0)
    )

    rows = report.rows.set_index(["strategy", "phase"])["test_auc"]
    np.testing.assert_allclose(rows["warm"].to_numpy(), rows["incre_diag"].to_numpy(), atol=1e-6)


def test_reruns_give_the_same_rows(stream):
    run_config = config(Strategy.COLD, Strategy.INCRE_DFP)

    first = run_benchmark(stream, run_config)
    second = run_benchmark(stream, run_config)

    pd.testing.assert_frame_equal(first.deterministic_rows(), second.deterministic_rows())


def test_a_store_round_trip_does_not_change_the_results(stream, tmp_path):
    run_config = config(Strategy.COLD, Strategy.INCRE_FULL)

    stored = run_benchmark(stream, run_config, store=tmp_path)
    in_memory = run_benchmark(stream, run_config)

    pd.testing.assert_frame_equal(stored.deterministic_rows(), in_memory.deterministic_rows())
    assert list_rounds(tmp_path / "incre_full") == [0, 1, 2]
    assert list_rounds(tmp_path / "cold") == [0, 1, 2]


def test_a_failing_strategy_marks_its_remaining_rows(stream, monkeypatch):
    real = benchmark.block_coordinate_descent

    def flaky(data, model, schedule, trainer, modes=None, priors=None):
        if modes and TrainModeKind.INCREMENTAL in modes.values() and data.phase_index == 1:
            raise NumericalError("objective became non-finite")
        return real(data, model, schedule, trainer, modes, priors)

    monkeypatch.setattr(benchmark, "block_coordinate_descent", flaky)

    report = run_benchmark(stream, config(Strategy.WARM, Strategy.INCRE_DIAG))

    incre = report.rows[report.rows["strategy"] == "incre_diag"]
    warm = report.rows[report.rows["strategy"] == "warm"]
    assert incre["failed"].all()
    assert incre["test_auc"].isna().all()
    assert not warm["failed"].any()
    summary = report.summary().set_index("strategy")
    assert summary.loc["incre_diag", "failed_phases"] == 2


def test_the_summary_compares_against_cold_start(stream):
    report = run_benchmark(stream, config(Strategy.COLD, Strategy.INCRE_DIAG))

    summary = report.summary()

    assert list(summary.columns) == list(SUMMARY_COLUMNS)
    cold = summary.set_index("strategy").loc["cold"]
    assert cold["auc_change_vs_cold_pct"] == 0.0
    assert cold["mean_auc"] == pytest.approx(report.mean_auc(Strategy.COLD))


def test_reports_render_as_csv_and_markdown(stream, tmp_path):
    report = run_benchmark(stream, config(Strategy.COLD))

    text = report.to_csv(tmp_path / "report.csv")
    markdown = report.to_markdown(tmp_path / "report.md")

    assert text.splitlines()[0] == ",".join(REPORT_COLUMNS)
    assert pd.read_csv(tmp_path / "report.csv")["phase"].tolist() == [2, 3]
    assert "| phase | strategy | test_auc |" in markdown
    assert (tmp_path / "report.md").read_text() == markdown


def test_short_or_gapped_streams_are_refused(stream):
    with pytest.raises(DataValidationError):
        run_benchmark(stream[:2], config(Strategy.COLD))
    with pytest.raises(DataValidationError):
        run_benchmark([stream[0], stream[2], stream[3]], config(Strategy.COLD))


def test_forgetting_factor_search(stream):
    search = tune_forgetting_factor(stream, Strategy.INCRE_DIAG, (0.5, 1.0), config(Strategy.COLD))

    assert set(search.mean_auc) == {0.5, 1.0}
    assert search.best in (0.5, 1.0)
    assert search.mean_auc[search.best] == max(search.mean_auc.values())
    assert search.reports[0.5].strategies == ["incre_diag"]


def test_forgetting_factor_ties_go_to_the_larger_value(stream, monkeypatch):
    def constant(stream, config, store=None, cold_starts=None):
        rows = pd.DataFrame(
            {
                "phase": [2],
                "strategy": [config.strategies[0].value],
                "test_auc": [0.7],
                "fit_seconds": [0.0],
                "load_seconds": [0.0],
                "save_seconds": [0.0],
                "failed": [False],
            }
        )
        return BenchmarkReport(rows)

    monkeypatch.setattr(benchmark, "run_benchmark", constant)

    search = tune_forgetting_factor(stream, Strategy.INCRE_DIAG, (0.8, 0.95, 0.9))

    assert search.best == 0.95


def test_forgetting_factor_search_rejects_bad_input(stream):
    with pytest.raises(DataValidationError):
        tune_forgetting_factor(stream, Strategy.COLD)
    with pytest.raises(DataValidationError):
        tune_forgetting_factor(stream, Strategy.INCRE_DIAG, ())
    with pytest.raises(DataValidationError):
        tune_forgetting_factor(stream, Strategy.INCRE_DIAG, (-0.5,))


@pytest.fixture(scope="module")
def drift():
    return generate_drift_stream(DriftGenConfig())


@pytest.fixture(scope="module")
def drift_report(drift):
    return run_benchmark(drift.phases, BenchmarkConfig())


@pytest.mark.slow
def test_incremental_training_keeps_up_with_cold_start_on_drifting_data(drift_report):
    incre = drift_report.mean_auc(Strategy.INCRE_DIAG)

    assert not math.isnan(incre)
    assert incre >= drift_report.mean_auc(Strategy.WARM) + 0.005
    assert abs(incre - drift_report.mean_auc(Strategy.COLD)) <= 0.01


@pytest.mark.slow
def test_incremental_adam_keeps_up_with_cold_start_on_drifting_data(drift_report):
    adam = drift_report.mean_auc(Strategy.INCRE_ADAM)

    assert abs(adam - drift_report.mean_auc(Strategy.COLD)) <= 0.015


@pytest.mark.slow
def test_incremental_rounds_fit_in_half_the_cold_start_time(drift_report):
    fit_seconds = drift_report.summary().set_index("strategy")["fit_seconds"]

    assert fit_seconds["incre_diag"] <= 0.5 * fit_seconds["cold"]


@pytest.mark.slow
def test_the_search_keeps_most_of_the_memory_on_drifting_data(drift):
    search = tune_forgetting_factor(drift.phases, Strategy.INCRE_DIAG)

    assert search.best >= 0.9


@pytest.mark.slow
def test_without_drift_every_strategy_reaches_the_same_auc():
    steady = DriftGenConfig(
        n_entities=10,
        feature_dim=10,
        nnz_per_example=3,
        examples_per_phase=6000,
        entity_activity_skew=0.0,
        drift_rate=0.0,
    )

    report = run_benchmark(generate_drift_stream(steady).phases, BenchmarkConfig())

    mean_auc = [report.mean_auc(strategy) for strategy in Strategy]
    assert max(mean_auc) - min(mean_auc) <= 0.01
