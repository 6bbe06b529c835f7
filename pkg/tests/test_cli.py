"""Tests for the experiment runner CLI: verbs, plans, summaries, reports."""

import json

import pytest

from accr.cli import (
    ExperimentPlan,
    main,
    run_plan,
    summarize_cells,
    write_report_files,
)
from accr.data import load_dataset
from accr.errors import ValidationError
from accr.evaluation import EvalReport
from accr.report import render_table

MICRO_TASK = {"size": 16, "n_train": 24, "n_val": 16, "n_classifier": 48}
MICRO_BASE = {
    "epochs_constant": 1,
    "epochs_decay": 1,
    "batch_size": 8,
    "g_width": 8,
    "d_width": 8,
}


def micro_plan(out, **overrides):
    kwargs = dict(
        task="digits",
        task_params=dict(MICRO_TASK),
        base=dict(MICRO_BASE),
        variants=[{"variant": "baseline"}, {"variant": "cr"}],
        seeds=[0, 1],
        data_seed=5,
        output_dir=str(out),
    )
    kwargs.update(overrides)
    return ExperimentPlan(**kwargs)


@pytest.fixture(scope="module")
def plan_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("plan")
    plan = micro_plan(out)
    summary = run_plan(plan)
    return plan, out, summary


class TestRunPlan:
    def test_cardinality(self, plan_run):
        plan, out, summary = plan_run
        run_dirs = sorted(p.name for p in (out / "runs").iterdir())
        assert len(run_dirs) == 4  # 2 variants x 2 seeds
        assert (out / "summary.json").exists()
        assert len(summary["cells"]) == 4
        assert not summary["failed"]

    def test_cell_contents(self, plan_run):
        _, out, _ = plan_run
        cell = out / "runs" / "baseline__seed0"
        assert (cell / "config.json").exists()
        assert (cell / "metrics.jsonl").exists()
        assert (cell / "eval_report.json").exists()
        assert (cell / "DONE").exists()
        assert list((cell / "checkpoints").glob("*.ckpt"))

    def test_report_files(self, plan_run):
        _, out, _ = plan_run
        assert (out / "report.txt").exists()
        assert (out / "report.csv").exists()
        figures = list((out / "figures").iterdir())
        assert any(f.suffix == ".png" for f in figures)
        assert any(f.suffix == ".svg" for f in figures)

    def test_csv_has_per_cell_rows(self, plan_run):
        _, out, _ = plan_run
        lines = (out / "report.csv").read_text().strip().split("\n")
        assert len(lines) == 5  # header + 4 cells
        assert lines[0].startswith("variant,")

    def test_t_test_in_summary(self, plan_run):
        _, _, summary = plan_run
        by_variant = {r["variant"]: r for r in summary["reports"]}
        assert "t_test" in by_variant["cr"]
        assert "t_test" not in by_variant["baseline"]

    def test_resume_skips_completed_cells(self, plan_run):
        plan, out, _ = plan_run
        marker = out / "runs" / "cr__seed1" / "eval_report.json"
        before = marker.stat().st_mtime_ns
        summary = run_plan(plan, resume=True)
        assert marker.stat().st_mtime_ns == before
        assert len(summary["cells"]) == 4

    def test_summary_matches_recomputation_from_cell_files(self, plan_run):
        plan, out, summary = plan_run
        cells = []
        for cell_dir in (out / "runs").iterdir():
            with open(cell_dir / "eval_report.json") as f:
                cells.append(json.load(f))
        rebuilt = summarize_cells(plan, cells, [])
        got = {r["variant"]: r for r in summary["reports"]}
        ref = {r["variant"]: r for r in rebuilt["reports"]}
        assert set(got) == set(ref)
        for key in got:
            assert got[key].get("accuracy_mean") == pytest.approx(ref[key]["accuracy_mean"])

    def test_failed_cell_does_not_stop_plan(self, tmp_path):
        plan = micro_plan(
            tmp_path / "p",
            variants=[{"variant": "bogus"}, {"variant": "baseline"}],
            seeds=[0],
        )
        summary = run_plan(plan)
        assert len(summary["failed"]) == 1
        assert "bogus" in summary["failed"][0]
        assert len(summary["cells"]) == 1


class TestSweep:
    def test_sweep_cells_and_csv(self, tmp_path):
        out = tmp_path / "sweep"
        plan = micro_plan(
            out,
            variants=[{"variant": "cr"}],
            seeds=[0, 1],
            sweep={"parameter": "weights.lambda_real", "values": [0.1, 1.0]},
        )
        summary = run_plan(plan)
        assert len(summary["cells"]) == 4
        labels = {r["variant"] for r in summary["reports"]}
        assert labels == {"cr;weights.lambda_real=0.1", "cr;weights.lambda_real=1.0"}
        csv_text = (out / "report.csv").read_text()
        assert "0.1" in csv_text
        sweep_vals = {c["sweep_value"] for c in summary["cells"]}
        assert sweep_vals == {0.1, 1.0}


class TestRenderTable:
    def test_empty_summary(self):
        assert render_table([]) == "no results\n"

    def test_single_seed_no_std(self):
        rep = EvalReport(task="digits", variant="cr", seeds=[0], accuracy_mean=42.0)
        text = render_table([rep])
        assert "42.0" in text
        assert "+/-" not in text

    def test_star_on_significant_win(self):
        reports = [
            EvalReport(task="d", variant="baseline", seeds=[0, 1, 2], accuracy_mean=50.0),
            EvalReport(
                task="d",
                variant="accr",
                seeds=[0, 1, 2],
                accuracy_mean=60.0,
                accuracy_std=1.0,
                t_test={"significant": True, "degenerate": False, "p_value": 0.01},
            ),
        ]
        text = render_table(reports)
        assert "accr*" in text
        assert "p=0.0100*" in text

    def test_degenerate_flag_shown_without_star(self):
        rep = EvalReport(
            task="d",
            variant="cr",
            seeds=[0, 1],
            accuracy_mean=50.0,
            t_test={"significant": False, "degenerate": True, "p_value": None},
        )
        text = render_table([rep])
        assert "degenerate" in text
        assert "cr*" not in text

    def test_failed_cells_listed(self):
        rep = EvalReport(task="d", variant="baseline", seeds=[0], accuracy_mean=1.0)
        text = render_table([rep], failed=["cr__seed0: boom"])
        assert "failed cells" in text


class TestStarFromRealPipeline:
    def test_significant_improvement_gets_star(self, tmp_path):
        # Synthetic per-cell metrics with a consistent accr win.
        plan = micro_plan(tmp_path, variants=[{"variant": "baseline"}, {"variant": "accr"}], seeds=[0, 1, 2, 3, 4])
        cells = []
        for seed in range(5):
            cells.append({"variant": "baseline", "seed": seed, "sweep_value": None, "accuracy": 50.0 + seed})
            cells.append({"variant": "accr", "seed": seed, "sweep_value": None, "accuracy": 55.0 + seed + 0.1 * seed})
        summary = summarize_cells(plan, cells, [])
        write_report_files(summary, tmp_path)
        text = (tmp_path / "report.txt").read_text()
        assert "accr*" in text

    def test_identical_streams_degenerate_no_star(self, tmp_path):
        plan = micro_plan(tmp_path, variants=[{"variant": "baseline"}, {"variant": "cr"}], seeds=[0, 1])
        cells = []
        for seed in range(2):
            for variant in ("baseline", "cr"):
                cells.append({"variant": variant, "seed": seed, "sweep_value": None, "accuracy": 33.0})
        summary = summarize_cells(plan, cells, [])
        text = render_table([EvalReport.from_dict(r) for r in summary["reports"]])
        assert "degenerate" in text
        assert "cr*" not in text


class TestVerbs:
    def test_prepare_data_and_roundtrip(self, tmp_path):
        out = tmp_path / "data"
        rc = main(
            [
                "prepare-data",
                "--task",
                "digits",
                "--out",
                str(out),
                "--size",
                "16",
                "--n-train",
                "16",
                "--n-val",
                "8",
                "--seed",
                "3",
            ]
        )
        assert rc == 0
        meta = json.loads((out / "task.json").read_text())
        assert meta["task"] == "digits"
        ds = load_dataset(out / "source_train.ds")
        assert ds.images.shape == (16, 3, 16, 16)

    def test_prepare_data_paired(self, tmp_path):
        out = tmp_path / "paired"
        rc = main(["prepare-data", "--task", "paired", "--out", str(out), "--n-train", "8", "--n-val", "4"])
        assert rc == 0
        assert json.loads((out / "task.json").read_text())["paired"] is True

    def test_train_evaluate_cycle(self, tmp_path):
        data_dir = tmp_path / "data"
        main(["prepare-data", "--out", str(data_dir), "--size", "16", "--n-train", "16", "--n-val", "8"])
        run_dir = tmp_path / "run"
        rc = main(
            [
                "train",
                "--data",
                str(data_dir),
                "--out",
                str(run_dir),
                "--variant",
                "cr",
                "--epochs-constant",
                "1",
                "--epochs-decay",
                "0",
                "--batch-size",
                "8",
                "--g-width",
                "8",
                "--d-width",
                "8",
                "--seed",
                "0",
            ]
        )
        assert rc == 0
        assert json.loads((run_dir / "config.json").read_text())["variant"] == "cr"
        ckpt = sorted((run_dir / "checkpoints").glob("*.ckpt"))[-1]
        out_json = tmp_path / "metrics.json"
        rc = main(["evaluate", "--checkpoint", str(ckpt), "--data", str(data_dir), "--out", str(out_json)])
        assert rc == 0
        metrics = json.loads(out_json.read_text())
        assert "accuracy" in metrics and "feature_distance" in metrics

    def test_config_file_with_flag_override(self, tmp_path):
        data_dir = tmp_path / "data"
        main(["prepare-data", "--out", str(data_dir), "--size", "16", "--n-train", "8", "--n-val", "8"])
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(
            json.dumps(
                {
                    "variant": "cr",
                    "epochs_constant": 1,
                    "epochs_decay": 0,
                    "batch_size": 8,
                    "g_width": 8,
                    "d_width": 8,
                }
            )
        )
        run_dir = tmp_path / "run"
        rc = main(
            ["train", "--data", str(data_dir), "--out", str(run_dir), "--config", str(cfg_file), "--variant", "baseline"]
        )
        assert rc == 0
        # The explicit flag wins over the config file value.
        assert json.loads((run_dir / "config.json").read_text())["variant"] == "baseline"

    def test_env_output_dir_override(self, tmp_path, monkeypatch):
        target = tmp_path / "env_out"
        monkeypatch.setenv("ACCR_OUTPUT_DIR", str(target))
        rc = main(["prepare-data", "--out", str(tmp_path / "ignored"), "--n-train", "8", "--n-val", "8", "--size", "16"])
        assert rc == 0
        assert target.exists()
        assert not (tmp_path / "ignored").exists()

    def test_run_plan_verb_and_exit_codes(self, tmp_path):
        plan_file = tmp_path / "plan.json"
        plan_file.write_text(
            json.dumps(
                {
                    "task": "digits",
                    "task_params": MICRO_TASK,
                    "base": MICRO_BASE,
                    "variants": [{"variant": "baseline"}],
                    "seeds": [0],
                    "output_dir": str(tmp_path / "out"),
                }
            )
        )
        assert main(["run-plan", "--plan", str(plan_file)]) == 0
        bad_plan = tmp_path / "bad.json"
        bad_plan.write_text(
            json.dumps(
                {
                    "task": "digits",
                    "task_params": MICRO_TASK,
                    "base": MICRO_BASE,
                    "variants": [{"variant": "nope"}],
                    "seeds": [0],
                    "output_dir": str(tmp_path / "out2"),
                }
            )
        )
        assert main(["run-plan", "--plan", str(bad_plan)]) == 1

    def test_report_verb_regenerates(self, tmp_path):
        plan = micro_plan(tmp_path / "p", variants=[{"variant": "baseline"}], seeds=[0])
        run_plan(plan)
        report = tmp_path / "p" / "report.txt"
        report.unlink()
        rc = main(["report", "--run-dir", str(tmp_path / "p")])
        assert rc == 0
        assert report.exists()

    def test_benchmark_speed_verb(self, tmp_path):
        out_json = tmp_path / "speed.json"
        rc = main(
            [
                "benchmark-speed",
                "--variants",
                "baseline",
                "--steps",
                "16",
                "--repeats",
                "1",
                "--size",
                "16",
                "--n",
                "32",
                "--batch-size",
                "8",
                "--g-width",
                "8",
                "--d-width",
                "8",
                "--out",
                str(out_json),
            ]
        )
        assert rc == 0
        results = json.loads(out_json.read_text())
        assert results["baseline"]["steps_per_sec_mean"] > 0


class TestPlanValidation:
    def test_unknown_task(self):
        with pytest.raises(ValidationError):
            ExperimentPlan(task="nope")

    def test_sweep_needs_keys(self):
        with pytest.raises(ValidationError):
            ExperimentPlan(sweep={"values": [1]})

    def test_desk_defaults_merged(self):
        plan = ExperimentPlan(base={"batch_size": 4})
        assert plan.base["batch_size"] == 4
        assert plan.base["g_width"] == 16  # desk default preserved
        assert plan.task_params["size"] == 16

    def test_paired_task_uses_symmetric_cycle_weights(self):
        plan = ExperimentPlan(task="paired")
        assert plan.base["weights"] == {"lambda_cyc_1": 10.0, "lambda_cyc_2": 10.0}


class TestStrictIdempotence:
    def test_identical_plan_identical_layout_and_metrics(self, tmp_path):
        # Strict mode: two fresh runs of the same plan produce the same
        # directory layout and byte-identical metrics streams.
        summaries = []
        for run_idx in range(2):
            out = tmp_path / f"run{run_idx}"
            plan = micro_plan(
                out,
                base={**MICRO_BASE, "strict_deterministic": True},
                variants=[{"variant": "cr"}],
                seeds=[0],
            )
            summaries.append(run_plan(plan))
        layout0 = sorted(p.name for p in (tmp_path / "run0" / "runs").iterdir())
        layout1 = sorted(p.name for p in (tmp_path / "run1" / "runs").iterdir())
        assert layout0 == layout1
        m0 = (tmp_path / "run0" / "runs" / "cr__seed0" / "metrics.jsonl").read_bytes()
        m1 = (tmp_path / "run1" / "runs" / "cr__seed0" / "metrics.jsonl").read_bytes()
        assert m0 == m1
        assert summaries[0]["reports"] == summaries[1]["reports"]

    def test_paired_task_plan_runs(self, tmp_path):
        plan = ExperimentPlan(
            task="paired",
            task_params={"size": 16, "n_train": 16, "n_val": 8},
            base=dict(MICRO_BASE),
            variants=[{"variant": "baseline"}, {"variant": "accr"}],
            seeds=[0, 1],
            output_dir=str(tmp_path / "paired"),
        )
        summary = run_plan(plan)
        assert not summary["failed"]
        assert all("mse" in c for c in summary["cells"])
        by_variant = {r["variant"]: r for r in summary["reports"]}
        assert "mse_mean" in by_variant["baseline"]
        assert "t_test" in by_variant["accr"]
