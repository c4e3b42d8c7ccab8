import json

import pandas as pd
import pytest

from incremental_glmix.constants import ExitCode
from incremental_glmix.main import TRUTH_FILE, run
from incremental_glmix.persistence.store import META_FILE, list_rounds, round_dir


GENERATE = [
    "--n-entities", "6",
    "--feature-dim", "9",
    "--examples-per-phase", "120",
    "--n-phases", "4",
    "--seed", "5",
]  # fmt: skip


@pytest.fixture
def data(tmp_path):
    path = tmp_path / "data"
    assert run(["generate-data", "--data", str(path), *GENERATE, "-q"]) == ExitCode.SUCCESS
    return path


def test_generate_data_writes_phases_and_truth(data):
    assert sorted(p.name for p in data.glob("phase_*.tsv")) == [
        f"phase_{t}.tsv" for t in range(4)
    ]
    truth = json.loads((data / TRUTH_FILE).read_text())
    assert truth["config"]["n_entities"] == 6
    assert len(truth["phases"]) == 4


def test_simulate_stream_trains_every_phase(data, tmp_path):
    store, output = tmp_path / "store", tmp_path / "reports"

    code = run(
        [
            "simulate-stream",
            "--data", str(data),
            "--store", str(store),
            "--output", str(output),
            "--cold-period", "2",
            "-q",
        ]
    )  # fmt: skip

    assert code == ExitCode.SUCCESS
    assert list_rounds(store) == [0, 1, 2, 3]
    rounds = pd.read_csv(output / "rounds.csv")
    assert rounds["branch"].tolist() == ["cold", "incre", "cold", "incre"]
    assert rounds["test_auc"].iloc[:3].between(0.0, 1.0).all()
    assert rounds["test_auc"].isna().iloc[3]
    assert (output / "rounds.md").is_file()


def test_train_then_evaluate(data, tmp_path, capsys):
    store = tmp_path / "store"
    common = ["--data", str(data), "--store", str(store), "--output", str(tmp_path), "-q"]

    assert run(["train-cold", "--phase", "1", *common]) == ExitCode.SUCCESS
    assert run(["train-incre", "--phase", "2", *common]) == ExitCode.SUCCESS
    assert run(["evaluate", "--phase", "3", *common]) == ExitCode.SUCCESS

    assert list_rounds(store) == [1, 2]
    assert "round 2 on phase 3: AUC" in capsys.readouterr().out


def test_training_needs_a_store(data, tmp_path):
    code = run(["train-cold", "--data", str(data), "--output", str(tmp_path), "-q"])

    assert code == ExitCode.VALIDATION_ERROR


def test_incremental_training_needs_an_earlier_round(data, tmp_path):
    code = run(
        ["train-incre", "--data", str(data), "--store", str(tmp_path / "empty"), "-q"]
    )

    assert code == ExitCode.VALIDATION_ERROR


def test_an_incremental_round_on_a_different_dimension_is_a_validation_error(data, tmp_path):
    store, wider = tmp_path / "store", tmp_path / "wider"
    generate = [*GENERATE[:2], "--feature-dim", "12", *GENERATE[4:]]
    assert run(["generate-data", "--data", str(wider), *generate, "-q"]) == ExitCode.SUCCESS
    common = ["--store", str(store), "--output", str(tmp_path), "-q"]
    assert run(["train-cold", "--data", str(data), "--phase", "0", *common]) == ExitCode.SUCCESS

    code = run(["train-incre", "--data", str(wider), "--phase", "1", *common])

    assert code == ExitCode.VALIDATION_ERROR
    assert list_rounds(store) == [0]


def test_a_newer_store_version_is_refused(data, tmp_path):
    store = tmp_path / "store"
    common = ["--data", str(data), "--store", str(store), "--output", str(tmp_path), "-q"]
    assert run(["train-cold", "--phase", "0", *common]) == ExitCode.SUCCESS
    meta_path = round_dir(store, 0) / META_FILE
    meta = json.loads(meta_path.read_text())
    meta["format_version"] += 1
    meta_path.write_text(json.dumps(meta))

    assert run(["evaluate", "--phase", "1", *common]) == ExitCode.STORE_VERSION_ERROR


@pytest.mark.parametrize(
    "argv",
    [
        ["generate-data", "--feature-dim", "5"],
        ["simulate-stream", "--forgetting-factor", "1.5"],
        ["simulate-stream", "--cold-period", "0"],
    ],
)
def test_invalid_configurations_exit_with_a_validation_error(tmp_path, argv):
    code = run([*argv, "--data", str(tmp_path / "data"), "--output", str(tmp_path), "-q"])

    assert code == ExitCode.VALIDATION_ERROR


def test_missing_phase_files_are_a_validation_error(tmp_path):
    code = run(["simulate-stream", "--data", str(tmp_path / "nowhere"), "-q"])

    assert code == ExitCode.VALIDATION_ERROR


def test_benchmark_writes_reports(data, tmp_path):
    output = tmp_path / "reports"

    code = run(
        [
            "benchmark",
            "--data", str(data),
            "--output", str(output),
            "--strategies", "cold", "incre_diag",
            "--report", "csv",
            "-q",
        ]
    )  # fmt: skip

    assert code == ExitCode.SUCCESS
    rows = pd.read_csv(output / "benchmark.csv")
    assert sorted(set(rows["strategy"])) == ["cold", "incre_diag"]
    assert (output / "benchmark_summary.csv").is_file()
    assert not (output / "benchmark.md").exists()
