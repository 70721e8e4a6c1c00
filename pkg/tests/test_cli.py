import json
import os
from pathlib import Path

import numpy as np
import pytest

from samsbo.cli import (
    AGGREGATE_HEADER,
    PLOTDATA_HEADER,
    RAW_HEADER,
    best_curves,
    build_problem,
    cmd_plotdata,
    cmd_run,
    main,
)
from samsbo.config import (
    ConfigError,
    ExperimentConfig,
    parse_config_text,
    serialize_config,
)


class TestParseConfig:
    def test_empty_file_gives_defaults(self):
        cfg = parse_config_text("")
        assert cfg == ExperimentConfig()
        assert cfg.delta == 0.05 and cfg.rho == 0.15
        assert cfg.tau == 0.001 and cfg.eta == 0.1
        assert cfg.iterations == 40 and cfg.repetitions == 15
        assert cfg.disturbance == 0.3

    def test_values_and_comments(self):
        cfg = parse_config_text("""
        # campaign setup
        problem = powell
        iterations = 10   # short run
        delta = 0.1
        include_psi = true
        algorithm = samsbo,safe-ucb
        """)
        assert cfg.problem == "powell"
        assert cfg.iterations == 10
        assert cfg.include_psi is True
        assert cfg.algorithms() == ["samsbo", "safe-ucb"]

    def test_unknown_key_names_line(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_config_text("problem = branin\nbogus = 1\n")

    def test_out_of_range_names_key(self):
        with pytest.raises(ConfigError, match="rho"):
            parse_config_text("rho = 1.5\n")

    def test_bad_type_reports_line(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config_text("iterations = soon\n")

    def test_roundtrip(self):
        cfg = parse_config_text("problem = laser\nseed = 9\ninclude_psi = true\n")
        again = parse_config_text(serialize_config(cfg))
        assert again == cfg


def small_config(tmp_path, **overrides):
    base = dict(
        problem="branin", algorithm="samsbo", iterations=2, repetitions=2,
        mcmc_samples=30, grid_size=128, seed=3, seed_points=2,
        out=str(tmp_path / "results"),
    )
    base.update(overrides)
    return ExperimentConfig(**base)


class TestCmdRun:
    def test_writes_expected_files_and_schema(self, tmp_path):
        cfg = small_config(tmp_path)
        assert cmd_run(cfg) == 0
        out = Path(cfg.out)
        raw = (out / "samsbo_raw.csv").read_text().splitlines()
        assert raw[0] == ",".join(RAW_HEADER)
        agg = (out / "samsbo_aggregate.csv").read_text().splitlines()
        assert agg[0] == ",".join(AGGREGATE_HEADER)
        assert len(agg) == 1 + cfg.iterations
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["master_seed"] == 3
        assert len(manifest["repetition_seeds"]) == 2
        assert "samsbo" in manifest["algorithms"]

    def test_zero_iterations_only_seed_rows(self, tmp_path):
        cfg = small_config(tmp_path, iterations=0, repetitions=1)
        cmd_run(cfg)
        rows = (Path(cfg.out) / "samsbo_raw.csv").read_text().splitlines()
        assert len(rows) == 1 + cfg.seed_points

    def test_byte_identical_reruns(self, tmp_path):
        cfg_a = small_config(tmp_path / "a")
        cfg_b = small_config(tmp_path / "b")
        cmd_run(cfg_a)
        cmd_run(cfg_b)
        for name in ("samsbo_raw.csv", "samsbo_aggregate.csv"):
            assert (Path(cfg_a.out) / name).read_bytes() == \
                (Path(cfg_b.out) / name).read_bytes()

    def test_parallel_jobs_match_serial(self, tmp_path):
        serial = small_config(tmp_path / "serial", jobs=1)
        parallel = small_config(tmp_path / "parallel", jobs=2)
        cmd_run(serial)
        cmd_run(parallel)
        assert (Path(serial.out) / "samsbo_raw.csv").read_bytes() == \
            (Path(parallel.out) / "samsbo_raw.csv").read_bytes()

    def test_multiple_algorithms(self, tmp_path):
        cfg = small_config(tmp_path, algorithm="safe-ucb,ucb", iterations=1)
        cmd_run(cfg)
        out = Path(cfg.out)
        assert (out / "safe-ucb_raw.csv").exists()
        assert (out / "ucb_raw.csv").exists()
        assert (out / "safe-ucb_aggregate.csv").exists()


class TestPlotdata:
    def test_quantile_convention(self, tmp_path):
        # one algorithm, ten repetitions with best-so-far 1..10 at iteration 1
        raw = tmp_path / "alg_raw.csv"
        lines = [",".join(RAW_HEADER)]
        for rep, value in enumerate(range(1, 11)):
            lines.append(f"alg,{rep},1,1,0.5,{value}.0,{value}.0,1.0,1,1.0,0.0,4,0")
        raw.write_text("\n".join(lines) + "\n")
        out = tmp_path / "plot.csv"
        assert cmd_plotdata([str(raw)], str(out)) == 0
        rows = out.read_text().splitlines()
        assert rows[0] == ",".join(PLOTDATA_HEADER)
        record = dict(zip(PLOTDATA_HEADER, rows[1].split(",")))
        assert float(record["q10"]) == pytest.approx(1.9)
        assert float(record["median"]) == pytest.approx(5.5)
        assert float(record["mean"]) == pytest.approx(5.5)

    def test_single_repetition_median_equals_mean(self, tmp_path):
        cfg = small_config(tmp_path, repetitions=1)
        cmd_run(cfg)
        out = tmp_path / "plot.csv"
        cmd_plotdata([str(Path(cfg.out) / "samsbo_raw.csv")], str(out))
        rows = out.read_text().splitlines()[1:]
        assert len(rows) == cfg.iterations
        for row in rows:
            record = dict(zip(PLOTDATA_HEADER, row.split(",")))
            assert float(record["median"]) == pytest.approx(float(record["mean"]))

    def test_schema_mismatch_names_file(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("nope,nope\n1,2\n")
        with pytest.raises(ConfigError, match="bad.csv"):
            cmd_plotdata([str(bad)], str(tmp_path / "out.csv"))


class TestBestCurves:
    def test_forward_fill_on_stall(self):
        from samsbo.safeopt import TraceRecord

        def row(iteration, observed):
            return TraceRecord(0, iteration, 1, np.zeros(1), observed,
                               observed, 1.0, 1, 1.0, 0.0, 4, False, 0.0)

        trace = [row(0, 5.0), row(1, 4.0), row(3, 3.0)]  # iteration 2 stalled
        curves = best_curves([trace], 4)
        assert np.allclose(curves[0], [4.0, 4.0, 3.0, 3.0])


class TestMainEntry:
    def test_env_var_overrides_out(self, tmp_path, monkeypatch):
        cfg_file = tmp_path / "cfg.txt"
        cfg_file.write_text(
            "iterations = 1\nrepetitions = 1\nmcmc_samples = 30\n"
            "grid_size = 128\nseed_points = 2\n")
        env_out = tmp_path / "from_env"
        monkeypatch.setenv("SAMSBO_OUT", str(env_out))
        code = main(["run", "--config", str(cfg_file), "--out", str(tmp_path / "ignored")])
        assert code == 0
        assert (env_out / "samsbo_raw.csv").exists()
        assert not (tmp_path / "ignored").exists()

    def test_verify_bounds_zero_trials(self, tmp_path, monkeypatch):
        monkeypatch.delenv("SAMSBO_OUT", raising=False)
        cfg_file = tmp_path / "cfg.txt"
        cfg_file.write_text(
            f"frequentist_trials = 0\nbayesian_trials = 0\nout = {tmp_path / 'v'}\n")
        assert main(["verify-bounds", "--config", str(cfg_file)]) == 0
        report = json.loads((tmp_path / "v" / "coverage.json").read_text())
        assert all(r["trials"] == 0 and r["passed"] for r in report)

    def test_bad_config_exit_code(self, tmp_path, monkeypatch):
        monkeypatch.delenv("SAMSBO_OUT", raising=False)
        cfg_file = tmp_path / "cfg.txt"
        cfg_file.write_text("rho = 2.0\n")
        assert main(["run", "--config", str(cfg_file)]) == 2


class TestBuildProblem:
    def test_each_problem_constructs(self):
        for name, dim in (("branin", 2), ("powell", 4), ("laser", 10)):
            cfg = ExperimentConfig(problem=name)
            problem = build_problem(cfg, disturbance_seed=1)
            assert problem.dimension == dim

    def test_threshold_override(self):
        cfg = ExperimentConfig(problem="branin", threshold=99.0)
        assert build_problem(cfg, 1).threshold == 99.0
