import json

import pytest
from click.testing import CliRunner

from conftest import make_store
from evopref.cli import main


@pytest.fixture
def runner():
    return CliRunner()


def run_cli(runner, args):
    return runner.invoke(main, args, catch_exceptions=False)


class TestSearchCommand:
    def test_stub_run_writes_outputs(self, runner, tmp_path):
        out = tmp_path / "run1"
        result = run_cli(
            runner,
            [
                "search", "--task", "cvrp5", "--method", "eoh", "--budget", "6",
                "--endpoint", "stub", "--population", "3", "--timeout", "20",
                "--n-instances", "2", "--seed", "0", "--out", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        assert (out / "db.jsonl").exists()
        assert (out / "config.json").exists()
        csv_lines = (out / "convergence.csv").read_text().splitlines()
        assert csv_lines[0] == "eval_index,best_1,best_5_mean,best_10_mean"
        assert len(csv_lines) - 1 <= 6

    def test_missing_endpoint_is_usage_error(self, runner, tmp_path):
        result = runner.invoke(
            main,
            ["search", "--task", "cvrp5", "--method", "eoh", "--out", str(tmp_path / "x")],
        )
        assert result.exit_code == 2

    def test_rerun_same_seed_identical_csv(self, runner, tmp_path):
        args = lambda out: [
            "search", "--task", "tsp7", "--method", "eoh", "--budget", "5",
            "--endpoint", "stub", "--population", "3", "--timeout", "20",
            "--n-instances", "2", "--seed", "11", "--out", out,
        ]
        assert run_cli(runner, args(str(tmp_path / "a"))).exit_code == 0
        assert run_cli(runner, args(str(tmp_path / "b"))).exit_code == 0
        assert (tmp_path / "a/convergence.csv").read_bytes() == (
            tmp_path / "b/convergence.csv"
        ).read_bytes()
        assert (tmp_path / "a/db.jsonl").read_bytes() == (tmp_path / "b/db.jsonl").read_bytes()

    def test_unknown_config_key_rejected(self, runner, tmp_path):
        config = tmp_path / "conf.json"
        config.write_text(json.dumps({"task": "tsp7", "frobnicate": 1}))
        result = runner.invoke(main, ["search", "--config", str(config), "--out", str(tmp_path)])
        assert result.exit_code == 2
        assert "frobnicate" in result.output


class TestSampleCommand:
    @pytest.fixture
    def db_file(self, tmp_path):
        store = make_store([float(i) / 7.0 for i in range(120)], task_id="tsp-toy")
        path = tmp_path / "db.jsonl"
        store.export_jsonl(path)
        return path

    def test_dar_dataset_emitted(self, runner, db_file, tmp_path):
        out = tmp_path / "ds"
        result = run_cli(
            runner,
            [
                "sample", "--db", str(db_file), "--task", "tsp-toy", "--strategy", "dar",
                "--m", "10", "--tau", "3.0", "--pairs", "25", "--seed", "0", "--out", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        lines = (out / "dataset.jsonl").read_text().splitlines()
        assert len(lines) == 25
        manifest = json.loads((out / "dataset.jsonl.manifest.json").read_text())
        assert manifest["n_pairs"] == 25
        assert manifest["config"] == {"m": 10, "tau": 3.0}

    def test_topk_baseline(self, runner, db_file, tmp_path):
        out = tmp_path / "ds"
        result = run_cli(
            runner,
            [
                "sample", "--db", str(db_file), "--task", "tsp-toy", "--strategy", "topk",
                "--k", "5", "--pairs", "5", "--seed", "1", "--out", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        manifest = json.loads((out / "dataset.jsonl.manifest.json").read_text())
        assert manifest["strategy"] == "top5.0pct"

    def test_insufficient_db_exits_one(self, runner, db_file, tmp_path):
        result = runner.invoke(
            main,
            [
                "sample", "--db", str(db_file), "--task", "tsp-toy", "--strategy", "dar",
                "--pairs", "500", "--out", str(tmp_path / "x"),
            ],
        )
        assert result.exit_code == 1

    def test_topk_requires_k(self, runner, db_file, tmp_path):
        result = runner.invoke(
            main,
            [
                "sample", "--db", str(db_file), "--task", "tsp-toy", "--strategy", "topk",
                "--pairs", "5", "--out", str(tmp_path / "x"),
            ],
        )
        assert result.exit_code == 2


class TestReportCommand:
    def test_delta_report_over_datasets(self, runner, tmp_path):
        from evopref import dataset as ds
        from evopref.sampler import SamplerConfig, build_dataset

        store = make_store([float(i) for i in range(90)], task_id="toy")
        paths = []
        for seed in (0, 1):
            pairs = build_dataset(store, "toy", "x", 9, SamplerConfig(m=9, rng_seed=seed))
            path = tmp_path / f"d{seed}.jsonl"
            ds.emit_preference_jsonl(
                pairs, path, task_id="toy", strategy=f"dar{seed}",
                config={}, db_digest=store.digest(), rng_seed=seed,
            )
            paths.append(path)
        out = tmp_path / "report"
        result = run_cli(
            runner,
            ["report", "--dataset", str(paths[0]), "--dataset", str(paths[1]), "--out", str(out)],
        )
        assert result.exit_code == 0, result.output
        lines = (out / "delta_report.csv").read_text().splitlines()
        assert len(lines) == 3
        assert (out / "delta_report.png").exists()

    def test_no_inputs_is_usage_error(self, runner, tmp_path):
        result = runner.invoke(main, ["report", "--out", str(tmp_path)])
        assert result.exit_code == 2

    def test_convergence_overlay_merges_runs(self, runner, tmp_path):
        from evopref.search import ConvergenceLog

        paths = []
        for run in range(3):
            log = ConvergenceLog()
            for step in range(1, 5):
                log.append(step, [10.0 - run - 0.5 * step])
            path = tmp_path / f"run{run}.csv"
            log.to_csv(path)
            paths.append(str(path))
        out = tmp_path / "rep"
        result = run_cli(
            runner,
            ["report", "--convergence", paths[0], "--convergence", paths[1],
             "--convergence", paths[2], "--out", str(out)],
        )
        assert result.exit_code == 0, result.output
        merged = (out / "convergence_merged.csv").read_text().splitlines()
        assert merged[0] == "run,eval_index,best_1,best_5_mean,best_10_mean"
        assert len(merged) == 1 + 3 * 4
        assert (out / "convergence_overlay.png").exists()

    def test_topk_summary_from_db(self, runner, tmp_path):
        store = make_store([float(i) for i in range(1, 40)], task_id="toy")
        db_path = tmp_path / "db.jsonl"
        store.export_jsonl(db_path)
        out = tmp_path / "rep"
        result = run_cli(
            runner,
            ["report", "--db", str(db_path), "--task", "toy", "--topk", "10", "--out", str(out)],
        )
        assert result.exit_code == 0, result.output
        summary = json.loads((out / "topk_summary.json").read_text())
        assert summary["mean"] == pytest.approx(5.5)
        assert summary["gaps"] == sorted(summary["gaps"])


class TestEvaluateCommand:
    def test_cvrp_seed_reports_finite_gap(self, runner, tmp_path):
        from evopref import assets

        source = tmp_path / "seed.py"
        source.write_text(assets.load_seed("cvrp"))
        result = run_cli(
            runner,
            [
                "evaluate", "--task", "cvrp5", "--source", str(source),
                "--timeout", "25", "--n-instances", "3", "--seed", "4",
            ],
        )
        assert result.exit_code == 0, result.output
        payload = json.loads(result.output[result.output.index("{") :])
        assert payload["status"] == "ok"
        assert payload["report"]["feasible"] is True
        assert isinstance(payload["report"]["average_gap"], float)

    def test_infinite_loop_exits_one_with_timeout_status(self, runner, tmp_path):
        source = tmp_path / "loop.py"
        source.write_text(
            "def select_next_node(current_node, destination_node, unvisited_nodes, distance_matrix):\n"
            "    while True:\n        pass\n"
        )
        result = runner.invoke(
            main,
            [
                "evaluate", "--task", "tsp7", "--source", str(source),
                "--timeout", "1", "--n-instances", "2",
            ],
        )
        assert result.exit_code == 1
        payload = json.loads(result.output[result.output.index("{") :])
        assert payload["status"] == "timeout"

    def test_asp_seed_matches_greedy_tie_break_constant(self, runner, tmp_path):
        from evopref import assets

        source = tmp_path / "seed.py"
        source.write_text(assets.load_seed("asp"))
        result = run_cli(
            runner,
            ["evaluate", "--task", "asp3x2", "--source", str(source), "--timeout", "25"],
        )
        assert result.exit_code == 0, result.output
        payload = json.loads(result.output[result.output.index("{") :])
        # constant-score greedy reaches the optimum 3 on A(3,2), so gap is 0
        assert payload["report"]["per_instance_objective"] == [3.0]
        assert payload["report"]["average_gap"] == 0.0
