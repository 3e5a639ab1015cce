"""Harness tests: config validation, sweep execution, resume, aggregation,
and the CLI entry points."""

import json
import os
from pathlib import Path

import numpy as np
import pytest

import rpbandits.harness as harness
from rpbandits.cli import main
from rpbandits.env import generate_instance, save_instance
from rpbandits.errors import CheckpointOutOfRange, ConfigInvalid
from rpbandits.harness import (
    PLOTDATA_HEADER,
    SUMMARY_FIELDS,
    config_hash,
    emit_plotdata,
    load_sweep,
    resolve_instance,
    run_cell,
    run_sweep,
    summarize,
    summary_table,
    trace_to_bytes,
    validate_config,
    write_summary_csv,
    write_trace_csv,
)
from rpbandits.policy import CSV_FIELDS

DATA_DIR = Path(__file__).parent / "data"

GOLDEN_CONFIG = {
    "version": 1,
    "instance": {"generate": {"dim": 2, "num_actions": 6, "seed": 3}},
    "schedule": {"horizon": 200, "num_rounds": 3},
    "model": "M1",
    "adversary": {"alpha": 0.1, "strategy": "constant", "magnitude": 25.0},
    "threshold": {"delta": 0.05, "alpha": 0.1},
    "seeds": 2,
    "baselines": ["vanilla"],
    "master_seed": 7,
}


def small_config(**overrides):
    config = {
        "version": 1,
        "instance": {"generate": {"dim": 2, "num_actions": 6, "seed": 3}},
        "schedule": {"horizon": 200, "num_rounds": 3},
        "model": "M1",
        "threshold": {"delta": 0.05},
        "seeds": 2,
        "baselines": ["vanilla"],
    }
    config.update(overrides)
    return config


class TestConfigValidation:
    def test_minimal_config_passes(self):
        validate_config(small_config())

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigInvalid, match="extra"):
            validate_config(small_config(extra=1))

    def test_missing_required_section(self):
        config = small_config()
        del config["threshold"]
        with pytest.raises(ConfigInvalid, match="threshold"):
            validate_config(config)

    def test_error_message_carries_field_path(self):
        config = small_config(schedule={"horizon": -5})
        with pytest.raises(ConfigInvalid, match="schedule/horizon"):
            validate_config(config)

    def test_instance_needs_exactly_one_source(self):
        with pytest.raises(ConfigInvalid, match="instance"):
            validate_config(small_config(instance={}))
        both = {
            "file": "x.json",
            "generate": {"dim": 2, "num_actions": 3, "seed": 0},
        }
        with pytest.raises(ConfigInvalid, match="instance"):
            validate_config(small_config(instance=both))

    def test_aggregating_model_requires_nu(self):
        config = small_config(model="M2")
        with pytest.raises(ConfigInvalid, match="threshold/nu"):
            validate_config(config)
        config["threshold"]["nu"] = 0.01
        validate_config(config)

    def test_robust_is_not_a_baseline(self):
        with pytest.raises(ConfigInvalid, match="baselines"):
            validate_config(small_config(baselines=["robust"]))

    def test_seed_forms(self):
        validate_config(small_config(seeds=[0, 5, 9]))
        with pytest.raises(ConfigInvalid):
            validate_config(small_config(seeds=0))
        with pytest.raises(ConfigInvalid):
            validate_config(small_config(seeds=[]))

    def test_version_is_pinned(self):
        with pytest.raises(ConfigInvalid, match="version"):
            validate_config(small_config(version=2))


class TestConfigHash:
    def test_key_order_does_not_matter(self):
        a = small_config()
        b = json.loads(json.dumps(a, sort_keys=True))
        scrambled = dict(reversed(list(b.items())))
        assert config_hash(a) == config_hash(scrambled)

    def test_value_changes_do(self):
        assert config_hash(small_config()) != config_hash(small_config(master_seed=1))


class TestResolveInstance:
    def test_generate_source(self):
        inst = resolve_instance(small_config())
        direct = generate_instance(dim=2, num_actions=6, seed=3)
        np.testing.assert_array_equal(inst.theta_star, direct.theta_star)
        np.testing.assert_array_equal(inst.actions.vectors, direct.actions.vectors)

    def test_inline_source(self):
        direct = generate_instance(dim=2, num_actions=4, seed=1)
        config = small_config(instance={"inline": direct.to_json_dict()})
        inst = resolve_instance(config)
        np.testing.assert_array_equal(inst.theta_star, direct.theta_star)

    def test_file_source_resolves_against_base_dir(self, tmp_path):
        direct = generate_instance(dim=2, num_actions=4, seed=1)
        save_instance(direct, tmp_path / "inst.json")
        config = small_config(instance={"file": "inst.json"})
        inst = resolve_instance(config, base_dir=str(tmp_path))
        np.testing.assert_array_equal(inst.theta_star, direct.theta_star)


class TestRunCell:
    def test_unknown_variant_rejected(self):
        with pytest.raises(ConfigInvalid, match="variant"):
            run_cell(small_config(), "fancy", 0)

    def test_single_arm_instance_has_zero_regret(self):
        inline = {
            "theta_star": [0.7, 0.0],
            "actions": {"dim": 2, "actions": [[1.0, 0.0]]},
        }
        config = small_config(instance={"inline": inline})
        trace = run_cell(config, "robust", 0)
        assert trace.total_plays == 200
        assert trace.final_regret == 0.0

    def test_repeat_call_is_byte_identical(self):
        config = small_config()
        a = trace_to_bytes(run_cell(config, "robust", 0))
        b = trace_to_bytes(run_cell(config, "robust", 0))
        assert a == b
        c = trace_to_bytes(run_cell(config, "robust", 1))
        assert a != c

    def test_non_private_variant_drops_privacy(self):
        config = small_config(privacy={"enabled": True, "epsilon": 1.0})
        private = run_cell(config, "robust", 0)
        stripped = run_cell(config, "non-private", 0)
        # Same estimator, but the width loses its privacy terms.
        assert stripped.rounds[0].gamma < private.rounds[0].gamma
        assert stripped.rounds[0].filter_diagnostics is not None


class TestRunSweep:
    def test_layout_and_repeat_byte_identity(self, tmp_path):
        config = small_config()
        dirs = [str(tmp_path / "a"), str(tmp_path / "b")]
        results = [run_sweep(config, d) for d in dirs]
        for result in results:
            assert sorted(result.traces) == [
                ("robust", 0), ("robust", 1), ("vanilla", 0), ("vanilla", 1)
            ]
            assert result.failures == []
        for rel in ["manifest.json", "traces/robust_0.json", "traces/robust_1.json",
                    "traces/vanilla_0.json", "traces/vanilla_1.json"]:
            a = (tmp_path / "a" / rel).read_bytes()
            b = (tmp_path / "b" / rel).read_bytes()
            assert a == b, rel

    def test_manifest_structure(self, tmp_path):
        config = small_config()
        run_sweep(config, str(tmp_path / "s"))
        lines = (tmp_path / "s" / "manifest.json").read_text().splitlines()
        records = [json.loads(line) for line in lines]
        assert records[0]["kind"] == "header"
        assert records[0]["config_hash"] == config_hash(config)
        assert records[0]["config"] == config
        cells = records[1:]
        assert [(c["variant"], c["seed"]) for c in cells] == [
            ("robust", 0), ("robust", 1), ("vanilla", 0), ("vanilla", 1)
        ]
        assert all(c["status"] == "ok" for c in cells)

    def test_default_checkpoints_are_quarters(self, tmp_path):
        result = run_sweep(small_config(), str(tmp_path / "s"))
        assert result.checkpoints == [50, 100, 150, 200]

    def test_aggregates_match_recomputation(self, tmp_path):
        result = run_sweep(small_config(), str(tmp_path / "s"))
        for variant in result.variants:
            values = {
                cp: [result.traces[(variant, s)].cumulative_at(cp) for s in result.seeds]
                for cp in result.checkpoints
            }
            for cp, vals in values.items():
                stats = result.stats[variant][cp]
                assert stats["n_seeds"] == len(result.seeds)
                assert stats["mean"] == pytest.approx(np.mean(vals), rel=1e-12)
                assert stats["median"] == pytest.approx(np.median(vals), rel=1e-12)
                assert stats["iqr"] == pytest.approx(
                    np.percentile(vals, 75) - np.percentile(vals, 25), abs=1e-12
                )
            survived = [
                result.traces[(variant, s)].optimal_arm_survived() for s in result.seeds
            ]
            assert result.survival[variant] == pytest.approx(np.mean(survived))

    def test_resume_skips_finished_cells(self, tmp_path, monkeypatch):
        config = small_config()
        out = str(tmp_path / "s")
        run_sweep(config, out)
        manifest_before = (tmp_path / "s" / "manifest.json").read_bytes()
        trace_path = tmp_path / "s" / "traces" / "vanilla_1.json"
        trace_before = trace_path.read_bytes()

        calls = []
        real = harness.run_cell

        def counting(cfg, variant, seed, base_dir=None):
            calls.append((variant, seed))
            return real(cfg, variant, seed, base_dir)

        monkeypatch.setattr(harness, "run_cell", counting)

        # Nothing missing: resume does zero work.
        run_sweep(config, out, resume=True)
        assert calls == []

        # One trace file lost: resume recomputes exactly that cell.
        trace_path.unlink()
        result = run_sweep(config, out, resume=True)
        assert calls == [("vanilla", 1)]
        assert trace_path.read_bytes() == trace_before
        assert (tmp_path / "s" / "manifest.json").read_bytes() == manifest_before
        assert result.failures == []

    def test_mismatched_config_is_refused(self, tmp_path):
        out = str(tmp_path / "s")
        run_sweep(small_config(), out)
        other = small_config(master_seed=99)
        with pytest.raises(ConfigInvalid, match="different config"):
            run_sweep(other, out)
        with pytest.raises(ConfigInvalid, match="resume"):
            run_sweep(other, out, resume=True)

    def test_parallel_matches_sequential(self, tmp_path):
        config = small_config()
        run_sweep(config, str(tmp_path / "seq"), workers=1)
        run_sweep(config, str(tmp_path / "par"), workers=2)
        for rel in ["manifest.json", "traces/robust_0.json", "traces/robust_1.json",
                    "traces/vanilla_0.json", "traces/vanilla_1.json"]:
            assert (tmp_path / "seq" / rel).read_bytes() == (
                tmp_path / "par" / rel
            ).read_bytes(), rel

    def test_partial_failure_is_recorded_not_raised(self, tmp_path, monkeypatch):
        real = harness.run_cell

        def flaky(cfg, variant, seed, base_dir=None):
            if (variant, seed) == ("vanilla", 1):
                raise RuntimeError("synthetic cell failure")
            return real(cfg, variant, seed, base_dir)

        monkeypatch.setattr(harness, "run_cell", flaky)
        result = run_sweep(small_config(), str(tmp_path / "s"))
        assert len(result.failures) == 1
        failure = result.failures[0]
        assert (failure["variant"], failure["seed"]) == ("vanilla", 1)
        assert failure["error"] == "RuntimeError: synthetic cell failure"
        assert not (tmp_path / "s" / "traces" / "vanilla_1.json").exists()
        assert (tmp_path / "s" / "traces" / "vanilla_0.json").exists()
        assert result.stats["vanilla"][200]["n_seeds"] == 1

        records = [
            json.loads(line)
            for line in (tmp_path / "s" / "manifest.json").read_text().splitlines()
        ]
        errors = [r for r in records if r.get("status") == "error"]
        assert len(errors) == 1
        assert errors[0]["error"].startswith("RuntimeError")

    def test_load_sweep_round_trips(self, tmp_path):
        config = small_config()
        out = str(tmp_path / "s")
        ran = run_sweep(config, out)
        loaded = load_sweep(out)
        assert loaded.config == config
        assert loaded.variants == ran.variants
        assert loaded.seeds == ran.seeds
        assert loaded.checkpoints == ran.checkpoints
        assert sorted(loaded.traces) == sorted(ran.traces)
        for key, trace in ran.traces.items():
            assert trace_to_bytes(loaded.traces[key]) == trace_to_bytes(trace)
        assert loaded.stats == ran.stats
        assert loaded.survival == ran.survival
        assert loaded.failures == []


class TestSummaries:
    def test_summary_matches_recorded_golden(self, tmp_path):
        result = run_sweep(GOLDEN_CONFIG, str(tmp_path / "sweep"))
        rows = summarize(result)
        write_summary_csv(rows, str(tmp_path / "summary.csv"))
        produced = (tmp_path / "summary.csv").read_bytes()
        golden = (DATA_DIR / "summary_golden.csv").read_bytes()
        assert produced == golden

    def test_row_shape_and_fields(self, tmp_path):
        result = run_sweep(small_config(), str(tmp_path / "s"))
        rows = summarize(result)
        assert len(rows) == len(result.variants) * len(result.checkpoints)
        for row in rows:
            assert list(row) == SUMMARY_FIELDS
            assert row["n_seeds"] == 2
            assert np.isfinite(float(row["mean_regret"]))
            assert 0.0 <= float(row["survival_rate"]) <= 1.0

    def test_checkpoint_validation(self, tmp_path):
        result = run_sweep(small_config(), str(tmp_path / "s"))
        with pytest.raises(CheckpointOutOfRange):
            summarize(result, [201])
        with pytest.raises(CheckpointOutOfRange):
            summarize(result, [-1])
        rows = summarize(result, [1, 200])
        assert [r["checkpoint"] for r in rows] == [1, 200, 1, 200]

    def test_summary_table_alignment(self, tmp_path):
        result = run_sweep(small_config(), str(tmp_path / "s"))
        rows = summarize(result)
        table = summary_table(rows)
        lines = table.splitlines()
        assert len(lines) == len(rows) + 1
        assert lines[0].startswith("variant")
        assert len({len(line) for line in lines}) == 1

    def test_summary_csv_layout(self, tmp_path):
        result = run_sweep(small_config(), str(tmp_path / "s"))
        rows = summarize(result)
        path = tmp_path / "summary.csv"
        write_summary_csv(rows, str(path))
        lines = path.read_text().splitlines()
        assert lines[0] == ",".join(SUMMARY_FIELDS)
        assert len(lines) == len(rows) + 1

    def test_plotdata_layout(self, tmp_path):
        result = run_sweep(small_config(), str(tmp_path / "s"))
        path = tmp_path / "plotdata.csv"
        count = emit_plotdata(result, str(path))
        expected_rows = sum(len(t.rounds) for t in result.traces.values())
        assert count == expected_rows
        lines = path.read_text().splitlines()
        assert lines[0] == PLOTDATA_HEADER
        assert len(lines) == expected_rows + 1
        first = result.traces[("robust", 0)].rounds[0]
        assert lines[1] == f"robust,0,{first.cumulative_plays},{first.cumulative_regret!r}"
        for line in lines[1:]:
            variant, seed, plays, regret = line.split(",")
            assert variant in result.variants
            assert int(plays) <= 200
            assert np.isfinite(float(regret))

    def test_trace_csv_layout(self, tmp_path):
        trace = run_cell(small_config(), "robust", 0)
        path = tmp_path / "trace.csv"
        write_trace_csv(trace, str(path))
        lines = path.read_text().splitlines()
        assert lines[0] == ",".join(CSV_FIELDS)
        assert len(lines) == len(trace.rounds) + 1


class TestCli:
    def test_gen_instance(self, tmp_path, capsys):
        out = tmp_path / "inst.json"
        rc = main([
            "gen-instance", "--dim", "2", "--num-actions", "5",
            "--seed", "1", "--out", str(out),
        ])
        assert rc == 0
        data = json.loads(out.read_text())
        assert len(data["theta_star"]) == 2
        assert "wrote" in capsys.readouterr().out

    def test_run_summarize_plotdata_pipeline(self, tmp_path, capsys):
        cfg_dir = tmp_path / "cfgs"
        cfg_dir.mkdir()
        inst = generate_instance(dim=2, num_actions=6, seed=3)
        save_instance(inst, cfg_dir / "inst.json")
        config = small_config(instance={"file": "inst.json"})
        (cfg_dir / "run.json").write_text(json.dumps(config))
        out = tmp_path / "out"

        rc = main(["run", "--config", str(cfg_dir / "run.json"), "--out", str(out)])
        assert rc == 0
        for name in ["manifest.json", "summary.csv", "plotdata.csv"]:
            assert (out / name).exists()
        stdout = capsys.readouterr().out
        assert "variant" in stdout
        assert "4 traces" in stdout

        rc = main(["summarize", "--out", str(out), "--checkpoints", "100,200"])
        assert rc == 0
        assert "200" in capsys.readouterr().out

        dest = tmp_path / "curves.csv"
        rc = main(["plot-data", "--out", str(out), "--dest", str(dest)])
        assert rc == 0
        assert dest.read_text().splitlines()[0] == PLOTDATA_HEADER

    def test_run_seed_override(self, tmp_path):
        cfg_path = tmp_path / "run.json"
        cfg_path.write_text(json.dumps(small_config(baselines=[])))
        out = tmp_path / "out"
        rc = main([
            "run", "--config", str(cfg_path), "--out", str(out), "--seeds", "0,3",
        ])
        assert rc == 0
        names = sorted(os.listdir(out / "traces"))
        assert names == ["robust_0.json", "robust_3.json"]

    def test_invalid_config_exits_2(self, tmp_path, capsys):
        config = small_config()
        del config["threshold"]
        cfg_path = tmp_path / "bad.json"
        cfg_path.write_text(json.dumps(config))
        rc = main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "out")])
        assert rc == 2
        assert "error:" in capsys.readouterr().err

    def test_failed_cells_exit_1(self, tmp_path, capsys):
        config = small_config(instance={"file": "missing.json"})
        cfg_path = tmp_path / "run.json"
        cfg_path.write_text(json.dumps(config))
        rc = main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "out")])
        assert rc == 1
        assert "FAILED" in capsys.readouterr().err
