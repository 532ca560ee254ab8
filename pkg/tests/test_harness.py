import json

import numpy as np
import pytest

from regbench import harness
from regbench.datagen import SourceSample
from regbench.harness import (
    ConfigError,
    DataSpec,
    ErrorGrid,
    ExperimentConfig,
    GridSpec,
    MethodSpec,
    OperatorSpec,
    build_dataset,
    build_operator,
    cli_main,
    config_hash,
    emit_mismatch_csv,
    load_config,
    make_manifest,
    run_dim_experiment,
    run_mismatch_grid,
)
from regbench.tikhonov import wc_bound

SMALL_CONFIG = """
[operator]
kind = integration
n = 25

[data]
kind = source
count = 6

[grid]
delta_bar = 0.01, 0.1, 0.5
delta = 0.01, 0.1, 0.5
realizations = 10

[method]
kind = tikhonov
rho = estimate
"""


@pytest.fixture()
def small_config(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(SMALL_CONFIG)
    return load_config(path, seed=7)


class TestConfig:
    def test_reads_sections(self, small_config):
        assert small_config.operator.kind == "integration"
        assert small_config.operator.n == 25
        assert small_config.grid.delta_bar == (0.01, 0.1, 0.5)
        assert small_config.grid.realizations == 10
        assert small_config.method.rho == "estimate"
        assert small_config.seed == 7

    def test_defaults_mirror_reference_levels(self, tmp_path):
        path = tmp_path / "defaults.cfg"
        path.write_text("[operator]\nkind = integration\nn = 10\n")
        config = load_config(path)
        assert config.grid.delta_bar == harness.DEFAULT_LEVELS
        assert config.grid.delta == harness.DEFAULT_LEVELS
        assert config.grid.realizations == 100
        assert config.data.count == 50

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("[wormhole]\nx = 1\n")
        with pytest.raises(ConfigError, match="unknown sections"):
            load_config(path)

    def test_bad_values_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("[operator]\nkind = integration\nn = soon\n")
        with pytest.raises(ConfigError):
            load_config(path)
        path.write_text("[method]\nrho = maybe\n")
        with pytest.raises(ConfigError, match="rho"):
            load_config(path)
        path.write_text("[operator]\nkind = fft\n")
        with pytest.raises(ConfigError, match="operator kind"):
            load_config(path)

    def test_numeric_rho(self, tmp_path):
        path = tmp_path / "r.cfg"
        path.write_text("[method]\nrho = 0.75\n")
        assert load_config(path).method.rho == 0.75

    def test_hash_stability(self, small_config):
        assert config_hash(small_config) == config_hash(small_config)
        bumped = ExperimentConfig(operator=small_config.operator,
                                  data=small_config.data,
                                  grid=small_config.grid,
                                  method=small_config.method,
                                  seed=small_config.seed + 1)
        assert config_hash(bumped) != config_hash(small_config)


class TestDatasets:
    def test_source_and_subspace(self, small_config):
        op = build_operator(small_config.operator)
        samples = build_dataset(op, small_config.data, seed=0)
        assert len(samples) == 6
        assert isinstance(samples[0], SourceSample)
        sub = build_dataset(op, DataSpec(kind="subspace", count=2, n_dim=3), seed=0)
        assert isinstance(sub[0], SourceSample)

    def test_missing_idx_falls_back_to_phantoms(self):
        op = build_operator(OperatorSpec(kind="integration", n=16))
        images = build_dataset(op, DataSpec(kind="idx", count=3, path="/no/such/file.idx3"), seed=1)
        assert len(images) == 3
        assert images[0].shape == (16,)

    def test_phantom_requires_square(self):
        op = build_operator(OperatorSpec(kind="integration", n=10))
        with pytest.raises(ConfigError, match="square"):
            build_dataset(op, DataSpec(kind="phantom", count=1), seed=0)

    def test_operator_file_roundtrip(self, tmp_path):
        from regbench.linop import save_operator
        op = build_operator(OperatorSpec(kind="integration", n=8))
        save_operator(tmp_path / "op.rgb", op)
        loaded = build_operator(OperatorSpec(kind="file", path=str(tmp_path / "op.rgb")))
        assert np.array_equal(loaded.entries, op.entries)


class TestMismatchGrid:
    @pytest.fixture(scope="class")
    def grid(self):
        config = ExperimentConfig(
            operator=OperatorSpec(kind="integration", n=25),
            data=DataSpec(kind="source", count=6),
            grid=GridSpec(delta_bar=(0.01, 0.1, 0.5), delta=(0.01, 0.1, 0.5),
                          realizations=10),
            method=MethodSpec(kind="tikhonov", rho="estimate"),
            seed=7)
        return run_mismatch_grid(config)

    def test_relative_diagonal_is_one(self, grid):
        assert np.abs(np.diag(grid.relative_errors) - 1.0).max() <= 1e-12

    def test_grid_shapes(self, grid):
        assert grid.mean_errors.shape == (3, 3)
        assert grid.checked == 6 * 10 * 9
        assert grid.violations == 0

    def test_overlay_matches_closed_form(self, grid):
        for bi, delta_bar in enumerate(grid.delta_bar):
            for di, delta in enumerate(grid.delta):
                alpha = grid.alphas[bi, di]
                if np.isinf(alpha):
                    expected = grid.rho_overlay
                else:
                    expected = wc_bound(alpha, delta, grid.rho_overlay)
                assert abs(grid.wc_overlay[bi, di] - expected) <= 1e-15

    def test_rerun_is_identical(self, grid):
        config = ExperimentConfig(
            operator=OperatorSpec(kind="integration", n=25),
            data=DataSpec(kind="source", count=6),
            grid=GridSpec(delta_bar=(0.01, 0.1, 0.5), delta=(0.01, 0.1, 0.5),
                          realizations=10),
            method=MethodSpec(kind="tikhonov", rho="estimate"),
            seed=7)
        again = run_mismatch_grid(config)
        assert np.array_equal(again.mean_errors, grid.mean_errors)

    def test_threads_do_not_change_results(self, grid):
        config = ExperimentConfig(
            operator=OperatorSpec(kind="integration", n=25),
            data=DataSpec(kind="source", count=6),
            grid=GridSpec(delta_bar=(0.01, 0.1, 0.5), delta=(0.01, 0.1, 0.5),
                          realizations=10),
            method=MethodSpec(kind="tikhonov", rho="estimate"),
            seed=7, threads=4)
        threaded = run_mismatch_grid(config)
        assert np.array_equal(threaded.mean_errors, grid.mean_errors)

    def test_sentinel_flagged_for_large_delta_bar(self):
        config = ExperimentConfig(
            operator=OperatorSpec(kind="integration", n=20),
            data=DataSpec(kind="source", count=4),
            grid=GridSpec(delta_bar=(0.01, 2.0), delta=(0.01,), realizations=3),
            method=MethodSpec(kind="tikhonov", rho="per-sample"),
            seed=1)
        grid = run_mismatch_grid(config)
        assert grid.sentinel_fraction[1, 0] == 1.0
        assert grid.sentinel_fraction[0, 0] == 0.0
        assert np.isinf(grid.alphas[1, 0])
        assert grid.violations == 0

    def test_per_sample_requires_source_elements(self):
        config = ExperimentConfig(
            operator=OperatorSpec(kind="integration", n=16),
            data=DataSpec(kind="phantom", count=2),
            grid=GridSpec(delta_bar=(0.1,), delta=(0.1,), realizations=2),
            method=MethodSpec(kind="tikhonov", rho="per-sample"),
            seed=1)
        with pytest.raises(ConfigError, match="per-sample"):
            run_mismatch_grid(config)

    def test_lasso_grid_runs(self):
        config = ExperimentConfig(
            operator=OperatorSpec(kind="integration", n=12),
            data=DataSpec(kind="source", count=2),
            grid=GridSpec(delta_bar=(0.01, 0.1), delta=(0.01, 0.1), realizations=2),
            method=MethodSpec(kind="lasso", transform="identity", alpha=0.05),
            seed=3)
        grid = run_mismatch_grid(config)
        assert grid.mean_errors.shape == (2, 2)
        assert np.abs(np.diag(grid.relative_errors) - 1.0).max() <= 1e-12


class TestCsvEmission:
    def test_schema_and_row_count(self, tmp_path):
        config = ExperimentConfig(
            operator=OperatorSpec(kind="integration", n=16),
            data=DataSpec(kind="source", count=2),
            grid=GridSpec(delta_bar=(0.01, 0.1), delta=(0.01, 0.1, 0.2), realizations=2),
            seed=2)
        grid = run_mismatch_grid(config)
        emit_mismatch_csv(grid, tmp_path / "grid.csv")
        lines = (tmp_path / "grid.csv").read_text().splitlines()
        assert lines[0] == "delta_bar,delta,mean_error,relative_error,wc_bound,alpha"
        assert len(lines) == 1 + 2 * 3
        # shortest round-trip decimals parse back exactly
        for line in lines[1:]:
            cells = line.split(",")
            assert float(cells[2]) == grid.mean_errors[
                list(grid.delta_bar).index(float(cells[0])),
                list(grid.delta).index(float(cells[1]))]

    def test_empty_grid_header_only(self, tmp_path):
        empty = ErrorGrid(delta_bar=(), delta=(), mean_errors=np.zeros((0, 0)),
                          relative_errors=np.zeros((0, 0)), wc_overlay=np.zeros((0, 0)),
                          alphas=np.zeros((0, 0)), sentinel_fraction=np.zeros((0, 0)),
                          mean_realized_delta=np.zeros((0, 0)), rho_overlay=1.0,
                          violations=0, checked=0, min_margin=np.inf)
        emit_mismatch_csv(empty, tmp_path / "empty.csv")
        assert (tmp_path / "empty.csv").read_text() == (
            "delta_bar,delta,mean_error,relative_error,wc_bound,alpha\n")

    def test_reemission_identical(self, tmp_path):
        config = ExperimentConfig(
            operator=OperatorSpec(kind="integration", n=12),
            data=DataSpec(kind="source", count=2),
            grid=GridSpec(delta_bar=(0.1,), delta=(0.1,), realizations=2),
            seed=4)
        grid = run_mismatch_grid(config)
        emit_mismatch_csv(grid, tmp_path / "a.csv")
        emit_mismatch_csv(grid, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


class TestDimExperiment:
    def test_subspace_scan_runs(self):
        config = ExperimentConfig(
            operator=OperatorSpec(kind="integration", n=30),
            data=DataSpec(kind="subspace", count=1, n_dim=4),
            grid=GridSpec(delta_bar=(0.01,), delta=(0.01, 0.05), realizations=5),
            method=MethodSpec(kind="subspace", basis="svd", alpha=0.5,
                              m_grid=(2, 4, 6, 8), exact_truth=True),
            seed=6)
        result = run_dim_experiment(config)
        assert result.mean_errors.shape == (4, 2)
        assert result.estimated_n in (2, 4, 6, 8)

    def test_requires_alpha(self):
        config = ExperimentConfig(
            operator=OperatorSpec(kind="integration", n=10),
            data=DataSpec(kind="subspace", count=1, n_dim=2),
            method=MethodSpec(kind="subspace", alpha=None))
        with pytest.raises(ConfigError, match="alpha"):
            run_dim_experiment(config)

    def test_mismatch_method_rejected(self):
        config = ExperimentConfig(method=MethodSpec(kind="tikhonov"))
        with pytest.raises(ConfigError):
            run_dim_experiment(config)


class TestManifest:
    def test_fields_and_write(self, tmp_path, small_config):
        op = build_operator(small_config.operator)
        manifest = make_manifest(small_config, op, wall_time_s=1.5)
        manifest.write(tmp_path / "manifest.json")
        payload = json.loads((tmp_path / "manifest.json").read_text())
        assert payload["master_seed"] == 7
        assert payload["tool_version"] == harness.__version__
        assert len(payload["operator_checksum"]) == 64
        assert payload["config_hash"] == config_hash(small_config)


class TestCli:
    def test_help_exits_zero(self, capsys):
        assert cli_main(["--help"]) == 0

    def test_no_command_is_usage_error(self):
        assert cli_main([]) == 1

    def test_unknown_command(self):
        assert cli_main(["frobnicate"]) == 1

    def test_missing_config(self):
        assert cli_main(["mismatch-grid", "--config", "/no/such.cfg"]) == 1

    def test_wc_curve_minimum(self, capsys, tmp_path):
        code = cli_main(["wc-curve", "--rho", "1", "--delta", "0.1",
                         "--out", str(tmp_path)])
        out = capsys.readouterr().out.strip().splitlines()
        assert code == 0
        assert out[0] == "alpha,bound"
        assert out[-1] == "min_alpha=0.1"
        assert (tmp_path / "wc_curve.csv").exists()

    def test_mismatch_grid_end_to_end(self, tmp_path):
        cfg = tmp_path / "exp.cfg"
        cfg.write_text(SMALL_CONFIG)
        out = tmp_path / "run"
        assert cli_main(["--seed", "7", "--config", str(cfg),
                         "--out", str(out), "mismatch-grid"]) == 0
        assert (out / "mismatch_grid.csv").exists()
        assert (out / "manifest.json").exists()

    def test_threads_give_identical_bytes(self, tmp_path):
        cfg = tmp_path / "exp.cfg"
        cfg.write_text(SMALL_CONFIG)
        out1, out8 = tmp_path / "t1", tmp_path / "t8"
        assert cli_main(["--seed", "7", "--config", str(cfg), "--threads", "1",
                         "--out", str(out1), "mismatch-grid"]) == 0
        assert cli_main(["--seed", "7", "--config", str(cfg), "--threads", "8",
                         "--out", str(out8), "mismatch-grid"]) == 0
        assert (out1 / "mismatch_grid.csv").read_bytes() == \
               (out8 / "mismatch_grid.csv").read_bytes()

    def test_dim_scan_prints_estimate(self, tmp_path, capsys):
        cfg = tmp_path / "dim.cfg"
        cfg.write_text("""
[operator]
kind = integration
n = 30

[data]
kind = subspace
count = 1
n_dim = 4

[grid]
delta = 0.01, 0.05
realizations = 5

[method]
kind = subspace
basis = svd
alpha = 0.5
m_grid = 2 4 6 8
exact_truth = true
""")
        out = tmp_path / "dim"
        assert cli_main(["--seed", "6", "--config", str(cfg),
                         "--out", str(out), "dim-scan"]) == 0
        printed = capsys.readouterr().out
        assert "estimated_N=" in printed
        lines = (out / "dim_scan.csv").read_text().splitlines()
        assert lines[0] == "basis,M,delta,mean_error"
        assert len(lines) == 1 + 4 * 2

    def test_lasso_solve_and_alpha_tune(self, tmp_path, capsys):
        cfg = tmp_path / "lasso.cfg"
        cfg.write_text("""
[operator]
kind = integration
n = 12

[data]
kind = source
count = 3

[method]
kind = lasso
transform = identity
alpha = 0.05
""")
        out = tmp_path / "lasso"
        assert cli_main(["--seed", "2", "--config", str(cfg), "--out", str(out),
                         "lasso-solve", "--delta", "0.01"]) == 0
        assert (out / "lasso_solution.csv").exists()
        assert "kkt_residual=" in capsys.readouterr().out
        assert cli_main(["--seed", "2", "--config", str(cfg), "--out", str(out),
                         "alpha-tune", "--delta-grid", "0.01 0.1",
                         "--alpha-grid", "0.01 0.1", "--tuples", "2"]) == 0
        rule = (out / "alpha_rule.csv").read_text().splitlines()
        assert rule[0] == "delta,alpha"
        assert len(rule) == 3

    def test_numerical_failure_exit_code(self, tmp_path):
        # tiny penalty on the ill-conditioned operator stalls the solver
        cfg = tmp_path / "stall.cfg"
        cfg.write_text("""
[operator]
kind = integration
n = 40

[data]
kind = source
count = 1

[method]
kind = lasso
transform = identity
""")
        code = cli_main(["--seed", "1", "--config", str(cfg), "--out", str(tmp_path),
                         "lasso-solve", "--alpha", "1e-12", "--delta", "0.01"])
        assert code == 2
