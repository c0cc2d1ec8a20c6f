"""End-to-end command line flows driven through cli.main()."""

import pytest

from ens2.cli import EXIT_OK, EXIT_TASK, EXIT_USAGE, main
from ens2.demo import demo_path


@pytest.fixture(scope="module")
def cli_run(tmp_path_factory):
    run_dir = tmp_path_factory.mktemp("cli") / "run"
    code = main(
        [
            "search",
            "--train", str(demo_path("linsep")),
            "--target", "label",
            "--out", str(run_dir),
            "--budget-s", "30",
            "--seed", "0",
        ]
    )
    assert code == EXIT_OK
    return run_dir


@pytest.mark.slow
class TestSearch:
    def test_search_reports_workers_and_leaders(self, cli_run, capfd):
        # Re-exercise the happy path with output capture on a fresh dir.
        out = cli_run.parent / "run2"
        code = main(
            [
                "search",
                "--train", str(demo_path("linsep")),
                "--target", "label",
                "--out", str(out),
                "--budget-s", "30",
                "--workers", "grid",
            ]
        )
        captured = capfd.readouterr().out
        assert code == EXIT_OK
        assert "run directory:" in captured
        assert "worker grid: complete" in captured
        assert "merged pipelines:" in captured
        assert "#1 grid-" in captured

    def test_unknown_target_is_a_usage_error(self, tmp_path, capfd):
        code = main(
            [
                "search",
                "--train", str(demo_path("linsep")),
                "--target", "salary",
                "--out", str(tmp_path / "r"),
            ]
        )
        assert code == EXIT_USAGE
        assert "error:" in capfd.readouterr().err

    def test_missing_train_file_is_a_usage_error(self, tmp_path, capfd):
        code = main(
            [
                "search",
                "--train", str(tmp_path / "ghost.csv"),
                "--target", "label",
                "--out", str(tmp_path / "r"),
            ]
        )
        assert code == EXIT_USAGE

    def test_unknown_worker_kind_is_a_usage_error(self, tmp_path, capfd):
        code = main(
            [
                "search",
                "--train", str(demo_path("linsep")),
                "--target", "label",
                "--out", str(tmp_path / "r"),
                "--workers", "genetic",
            ]
        )
        assert code == EXIT_USAGE
        assert "unknown worker kinds" in capfd.readouterr().err

    def test_all_workers_crashing_is_a_task_failure(self, tmp_path, capfd):
        code = main(
            [
                "search",
                "--train", str(demo_path("linsep")),
                "--target", "label",
                "--out", str(tmp_path / "r"),
                "--budget-s", "10",
                "--workers", "chaos-crash,chaos-crash",
            ]
        )
        assert code == EXIT_TASK
        assert "meta-search failed" in capfd.readouterr().err

    def test_config_file_supplies_defaults(self, tmp_path, capfd):
        cfg = tmp_path / "ens2.toml"
        cfg.write_text('[search]\nbudget_s = 30.0\nworkers = "grid"\nseed = 3\n')
        code = main(
            [
                "search",
                "--train", str(demo_path("linsep")),
                "--target", "label",
                "--out", str(tmp_path / "r"),
                "--config", str(cfg),
            ]
        )
        assert code == EXIT_OK
        assert "worker grid: complete" in capfd.readouterr().out


@pytest.mark.slow
class TestPredict:
    def test_predict_writes_csv_copy(self, cli_run, tmp_path, capfd):
        out_csv = tmp_path / "preds.csv"
        code = main(
            [
                "predict",
                "--run", str(cli_run),
                "--test", str(demo_path("linsep")),
                "--out", str(out_csv),
            ]
        )
        assert code == EXIT_OK
        assert "120 rows, mode=voting" in capfd.readouterr().out
        lines = out_csv.read_text().splitlines()
        assert lines[0] == "row_index,predicted_label"
        assert len(lines) == 121

    def test_predict_stacking_mode(self, cli_run, capfd):
        code = main(
            [
                "predict",
                "--run", str(cli_run),
                "--test", str(demo_path("linsep")),
                "--mode", "stacking",
            ]
        )
        assert code == EXIT_OK
        assert "mode=stacking" in capfd.readouterr().out

    def test_missing_run_dir_is_a_usage_error(self, tmp_path, capfd):
        code = main(
            [
                "predict",
                "--run", str(tmp_path / "nope"),
                "--test", str(demo_path("linsep")),
            ]
        )
        assert code == EXIT_USAGE

    def test_unreadable_test_csv_is_a_usage_error(self, cli_run, tmp_path, capfd):
        code = main(
            [
                "predict",
                "--run", str(cli_run),
                "--test", str(tmp_path / "ghost.csv"),
            ]
        )
        assert code == EXIT_USAGE


@pytest.mark.slow
def test_benchmark_command_writes_report(tmp_path, capfd):
    out = tmp_path / "bench"
    code = main(
        [
            "benchmark",
            "--out", str(out),
            "--datasets", f"{demo_path('linsep')}:label",
            "--seeds", "0",
            "--budget-s", "15",
            "--no-singles",
        ]
    )
    captured = capfd.readouterr().out
    assert code == EXIT_OK
    assert (out / "report.md").exists()
    assert (out / "score_table.csv").exists()
    assert "ens-voting: avg_accuracy=" in captured


def test_benchmark_without_datasets_is_a_usage_error(tmp_path, capfd):
    code = main(["benchmark", "--out", str(tmp_path / "bench")])
    assert code == EXIT_USAGE


def test_help_exits_zero(capfd):
    with pytest.raises(SystemExit) as info:
        main(["--help"])
    assert info.value.code == 0
    assert "search" in capfd.readouterr().out
