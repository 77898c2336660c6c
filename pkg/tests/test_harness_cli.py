"""Ablation sweeps, report emission, and the command-line interface."""

import csv
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from coplan.harness import (
    ABLATION_COLUMNS,
    COMPONENTS_GRID,
    COUPLING_GRID,
    component_config,
    load_config,
    main,
    parse_grid,
    point_config,
    read_ablation_csv,
    read_metrics,
    run_ablation,
    stage_chain,
    train_signature,
    validate_experiment,
    write_report,
)
from coplan.synthworld import generate_dataset
from coplan.training import DeskDataset


@pytest.fixture(scope="module")
def cfg():
    return load_config("tiny")


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_data")
    return generate_dataset(root / "data", 12, seed=19)


@pytest.fixture(scope="module")
def dataset(cfg, dataset_dir):
    return DeskDataset(dataset_dir, cfg.render)


class TestGrid:
    def test_invalid_axis(self):
        with pytest.raises(ValueError, match="unknown ablation axis"):
            parse_grid("widgets", "1,2")

    def test_numeric_axes(self):
        assert parse_grid("rounds", "1,2,4") == [1, 2, 4]
        assert parse_grid("horizon", [0, 4, 8]) == [0, 4, 8]
        with pytest.raises(ValueError, match="needs an explicit grid"):
            parse_grid("rounds", None)
        with pytest.raises(ValueError, match="integer grid"):
            parse_grid("tokens", "a,b")
        with pytest.raises(ValueError, match="non-negative"):
            parse_grid("rounds", "-1,2")

    def test_coupling_grid_fixed(self):
        assert tuple(parse_grid("coupling", None)) == COUPLING_GRID
        with pytest.raises(ValueError, match="fixed"):
            parse_grid("coupling", "full,no_action_to_world")

    def test_components_grid(self):
        assert tuple(parse_grid("components", None)) == COMPONENTS_GRID
        assert parse_grid("components", "base,+interactive") == [
            "base",
            "+interactive",
        ]
        with pytest.raises(ValueError, match="unknown component presets"):
            parse_grid("components", "base,+everything")


class TestPointConfig:
    def test_rounds_and_horizon_are_eval_only(self, cfg):
        for axis, grid in (("rounds", [1, 2, 4]), ("horizon", [0, 4, 8])):
            sigs = {train_signature(point_config(cfg, axis, v)) for v in grid}
            assert sigs == {train_signature(cfg)}, axis
        assert point_config(cfg, "rounds", 4).eval.rounds == 4
        assert point_config(cfg, "horizon", 0).eval.t_w == 0

    def test_horizon_zero_severs_world_conditioning(self, cfg):
        icfg = point_config(cfg, "horizon", 0).eval.interaction()
        assert icfg.world_to_action is False
        assert icfg.t_w == 0

    def test_coupling_points(self, cfg):
        full = point_config(cfg, "coupling", "full")
        no_w2a = point_config(cfg, "coupling", "no_world_to_action")
        no_a2w = point_config(cfg, "coupling", "no_action_to_world")
        assert full.eval == cfg.eval
        assert no_w2a.eval.world_to_action is False
        assert no_a2w.eval.action_to_world is False
        assert train_signature(no_w2a) == train_signature(cfg)

    def test_tokens_point_keeps_interfaces_consistent(self, cfg):
        point = point_config(cfg, "tokens", 2)
        validate_experiment(point)
        assert point.model.resampler.m_tokens == 2
        assert point.model.predictor.m_tokens == 2
        assert point.model.denoiser.m_tokens == 2
        assert train_signature(point) != train_signature(cfg)

    def test_component_presets(self, cfg):
        base = component_config(cfg, "base")
        plus_res = component_config(cfg, "+resampler")
        plus_pred = component_config(cfg, "+predictor")
        full = component_config(cfg, "+interactive")

        assert full == cfg
        assert stage_chain(base) == (4,)
        assert base.model.use_resampler is False
        assert base.model.denoiser.d_latent == cfg.model.encoder.d_e
        assert base.stage4.refine_rounds == 0 and base.eval.rounds == 0

        assert stage_chain(plus_res) == (2, 4)
        assert plus_res.model.use_predictor is False

        assert stage_chain(plus_pred) == (2, 3, 4)
        assert plus_pred.stage4.refine_rounds == 1
        assert plus_pred.stage4.action_to_world is False
        assert plus_pred.eval.rounds == 1
        assert plus_pred.eval.action_to_world is False

        for point in (base, plus_res, plus_pred, full):
            validate_experiment(point)

    def test_unknown_preset(self, cfg):
        with pytest.raises(ValueError, match="unknown component preset"):
            component_config(cfg, "+magic")


@pytest.fixture(scope="module")
def rounds_run(cfg, dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("ab_rounds")
    result = run_ablation("rounds", "1,2", cfg, dataset, out)
    return out, result


class TestRunAblation:
    def test_csv_rows(self, rounds_run):
        out, result = rounds_run
        rows = read_ablation_csv(out / "ablation_rounds.csv")
        assert [(r["axis"], r["value"]) for r in rows] == [
            ("rounds", "1"),
            ("rounds", "2"),
        ]
        for r in rows:
            assert r["l2_avg"] >= 0
            assert 0 <= r["col_avg"] <= 1

    def test_eval_only_axis_shares_one_checkpoint(self, rounds_run):
        out, _ = rounds_run
        train_dirs = [p for p in (out / "checkpoints").iterdir() if p.is_dir()]
        assert len(train_dirs) == 1

    def test_plots_emitted(self, rounds_run):
        out, result = rounds_run
        for metric in ("l2_avg", "col_avg", "latency_ms"):
            assert (out / f"ablation_rounds_{metric}.png").exists()
        assert len(result["plots"]) == 3

    def test_rerun_identical_up_to_latency(self, rounds_run, cfg, dataset, tmp_path):
        out, _ = rounds_run
        run_ablation(
            "rounds", "1,2", cfg, dataset, tmp_path,
            work_dir=out / "checkpoints",
        )
        first = read_ablation_csv(out / "ablation_rounds.csv")
        second = read_ablation_csv(tmp_path / "ablation_rounds.csv")
        assert len(first) == len(second)
        for a, b in zip(first, second):
            for col in ABLATION_COLUMNS:
                if col == "latency_ms":
                    continue
                assert a[col] == b[col], col

    def test_malformed_row_names_file_and_line(self, rounds_run):
        out, _ = rounds_run
        path = out / "ablation_rounds.csv"
        broken = out / "broken.csv"
        lines = path.read_text().splitlines()
        lines[2] = lines[2].rsplit(",", 1)[0] + ",oops"
        broken.write_text("\n".join(lines) + "\n")
        with pytest.raises(ValueError, match=r"broken\.csv: malformed row at line 3"):
            read_ablation_csv(broken)

    def test_empty_grid_rejected(self, cfg, dataset, tmp_path):
        with pytest.raises(ValueError, match="explicit grid"):
            run_ablation("rounds", "", cfg, dataset, tmp_path)

    def test_invalid_axis_rejected(self, cfg, dataset, tmp_path):
        with pytest.raises(ValueError, match="unknown ablation axis"):
            run_ablation("widgets", "1", cfg, dataset, tmp_path)


@pytest.fixture(scope="module")
def rounds_tree(cfg, dataset, tmp_path_factory):
    run_dir = tmp_path_factory.mktemp("report_tree")
    run_ablation("rounds", "1,2", cfg, dataset, run_dir / "ab")
    return run_dir, write_report(run_dir)


class TestReport:
    def test_missing_dir(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="no run directory"):
            write_report(tmp_path / "nope")

    def test_empty_dir(self, tmp_path):
        with pytest.raises(ValueError, match="no metrics CSVs"):
            write_report(tmp_path)

    def test_non_metric_csvs_are_skipped(self, tmp_path):
        (tmp_path / "losses.csv").write_text("step,loss\n0,1.0\n")
        with pytest.raises(ValueError, match="no metrics CSVs"):
            write_report(tmp_path)

    def test_report_content(self, rounds_tree):
        run_dir, report = rounds_tree
        text = report.read_text()
        assert "Best round count" in text
        assert "K=4 rounds (PDMS 87.9)" in text
        assert "not comparable" in text
        assert "ablation_rounds_l2_avg.png" in text

    def test_metrics_csv_echoed(self, rounds_tree, tmp_path):
        run_dir, _ = rounds_tree
        from coplan.harness import MetricsRecord, write_metrics

        rec = MetricsRecord(
            config_fingerprint="f" * 64,
            seed=5,
            l2_1s=0.5,
            l2_2s=1.5,
            l2_3s=2.5,
            l2_avg=1.5,
            col_1s=0.0,
            col_2s=0.25,
            col_3s=0.25,
            col_avg=1 / 6,
            latency_ms=12.0,
        )
        write_metrics(tmp_path / "metrics.csv", [rec])
        report = write_report(tmp_path)
        text = report.read_text()
        for token in ("0.5000", "1.5000", "2.5000", "0.2500", "12.0000", "| 5 |"):
            assert token in text, token

    def test_malformed_csv_propagates(self, rounds_tree, tmp_path):
        run_dir, _ = rounds_tree
        src = run_dir / "ab" / "ablation_rounds.csv"
        dst = tmp_path / "ablation_rounds.csv"
        lines = src.read_text().splitlines()
        lines[1] = lines[1].rsplit(",", 1)[0] + ",oops"
        dst.write_text("\n".join(lines) + "\n")
        with pytest.raises(ValueError, match="malformed row at line 2"):
            write_report(tmp_path)


@pytest.fixture(scope="module")
def drive(dataset_dir, tmp_path_factory):
    """Full CLI pass: train 2->3->4, eval, report."""
    root = tmp_path_factory.mktemp("cli_drive")
    data = str(dataset_dir)
    assert main(["train", "--stage", "2", "--config", "tiny",
                 "--data", data, "--out", str(root / "s2")]) == 0
    assert main(["train", "--stage", "3", "--config", "tiny",
                 "--data", data, "--out", str(root / "s3"),
                 "--ckpt-in", str(root / "s2")]) == 0
    assert main(["train", "--stage", "4", "--config", "tiny",
                 "--data", data, "--out", str(root / "s4"),
                 "--ckpt-in", str(root / "s3")]) == 0
    assert main(["eval", "--ckpt", str(root / "s4"), "--data", data,
                 "--rounds", "2", "--horizon", "4",
                 "--out", str(root / "metrics.csv")]) == 0
    return root


class TestCli:
    def test_no_command_exits(self):
        with pytest.raises(SystemExit):
            main([])

    def test_gen_data_requires_seed(self):
        with pytest.raises(SystemExit):
            main(["gen-data", "--episodes", "4", "--out", "/tmp/x"])

    def test_missing_data_path(self, tmp_path, capsys):
        rc = main(
            ["train", "--stage", "2", "--config", "tiny",
             "--data", str(tmp_path / "none"), "--out", str(tmp_path / "out")]
        )
        assert rc == 2
        assert "no such path" in capsys.readouterr().err

    def test_unknown_config_rejected(self, dataset_dir, tmp_path, capsys):
        rc = main(
            ["train", "--stage", "2", "--config", "huge",
             "--data", str(dataset_dir), "--out", str(tmp_path / "out")]
        )
        assert rc == 2
        assert "no such profile or file" in capsys.readouterr().err

    def test_bad_override_reported(self, dataset_dir, tmp_path, capsys):
        rc = main(
            ["train", "--stage", "2", "--config", "tiny",
             "--data", str(dataset_dir), "--out", str(tmp_path / "out"),
             "-o", "bogus.epochs=1"]
        )
        assert rc == 2
        assert "unknown config section" in capsys.readouterr().err

    def test_bad_seeds_reported(self, cfg, dataset_dir, tmp_path, capsys):
        rc = main(
            ["ablate", "--axis", "rounds", "--grid", "1", "--config", "tiny",
             "--data", str(dataset_dir), "--out", str(tmp_path),
             "--seeds", "0,x"]
        )
        assert rc == 2
        assert "comma-separated ints" in capsys.readouterr().err

    def test_drive_writes_metrics(self, drive):
        records = read_metrics(drive / "metrics.csv")
        assert len(records) == 1
        assert np.isfinite(records[0].l2_avg)

    def test_drive_checkpoint_has_config(self, drive):
        assert (drive / "s4" / "config.yaml").exists()

    def test_eval_rerun_matches(self, drive, dataset_dir, tmp_path):
        out = tmp_path / "again.csv"
        assert main(["eval", "--ckpt", str(drive / "s4"),
                     "--data", str(dataset_dir),
                     "--rounds", "2", "--horizon", "4",
                     "--out", str(out)]) == 0
        a = read_metrics(drive / "metrics.csv")[0]
        b = read_metrics(out)[0]
        for col in ("l2_1s", "l2_2s", "l2_3s", "l2_avg",
                    "col_1s", "col_2s", "col_3s", "col_avg"):
            assert getattr(a, col) == getattr(b, col), col

    def test_eval_severed_flags(self, drive, dataset_dir, capsys):
        assert main(["eval", "--ckpt", str(drive / "s4"),
                     "--data", str(dataset_dir),
                     "--rounds", "2", "--horizon", "0"]) == 0
        assert main(["eval", "--ckpt", str(drive / "s4"),
                     "--data", str(dataset_dir), "--rounds", "2",
                     "--horizon", "4", "--no-action-to-world",
                     "--prompt-refine"]) == 0
        assert "l2_avg" in capsys.readouterr().out

    def test_latency_command(self, drive, dataset_dir, capsys):
        assert main(["latency", "--ckpt", str(drive / "s4"),
                     "--data", str(dataset_dir), "--trials", "2",
                     "--rounds", "1", "--horizon", "2"]) == 0
        out = capsys.readouterr().out
        assert "median_ms" in out

    def test_report_command(self, drive, capsys):
        assert main(["report", "--dir", str(drive)]) == 0
        path = drive / "report.md"
        assert path.exists()
        assert "Planning metrics" in path.read_text()

    def test_report_missing_dir(self, tmp_path, capsys):
        rc = main(["report", "--dir", str(tmp_path / "none")])
        assert rc == 2
