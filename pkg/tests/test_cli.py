import numpy as np
import pytest

from lsphase.cli import main
from lsphase.dataset import load_field, read_manifest
from lsphase.pipeline import ExperimentConfig, config_to_text

TINY_CFG = dict(grid_size=16, train_count=8, val_count=2, test_count=2,
                epochs=1, widths=(2, 3), l3_widths=(4, 5))


def write_tiny_config(path):
    path.write_text(config_to_text(ExperimentConfig(**TINY_CFG)))
    return path


def run(*argv):
    return main([str(a) for a in argv])


class TestExitCodes:
    def test_usage_error_is_one(self, capsys):
        assert run("gen-data") == 1
        assert "error" in capsys.readouterr().err

    def test_unknown_config_key_is_one(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("bogus_key=1\n")
        assert run("run-ls", "--exp", tmp_path / "e", "--config", cfg) == 1

    def test_missing_data_is_two(self, tmp_path):
        assert run("simulate", "--data", tmp_path / "nope", "--out",
                   tmp_path / "out") == 2

    def test_bad_lspr_is_two(self, tmp_path):
        (tmp_path / "bad.lspr").write_bytes(b"garbage")
        assert run("export-pgm", tmp_path / "bad.lspr", tmp_path / "x.pgm") == 2

    def test_degenerate_prediction_is_three(self, tmp_path):
        cfg = write_tiny_config(tmp_path / "exp.cfg")
        assert run("run-ls", "--exp", tmp_path / "e", "--config", cfg) == 0
        exp_dir = tmp_path / "e"
        preds = tmp_path / "preds"
        preds.mkdir()
        import numpy as np
        from lsphase.dataset import save_field
        from lsphase.fieldcore import Grid2D, RealField
        grid = Grid2D.square(16, 144e-6)
        for item_id, _, role in read_manifest(exp_dir / "dataset"):
            if role == "test":
                save_field(RealField(grid, np.ones(grid.shape)),
                           preds / f"{item_id}.lspr")
        assert run("evaluate", "--exp", exp_dir, "--predictions", preds) == 3


class TestGenData:
    def test_rerun_is_bit_identical(self, tmp_path):
        for name in ("a", "b"):
            assert run("gen-data", "--n", 4, "--size", 16, "--exponent", 2,
                       "--seed", 7, "--out", tmp_path / name) == 0
        for item_id, filename, _ in read_manifest(tmp_path / "a"):
            assert (tmp_path / "a" / filename).read_bytes() == \
                (tmp_path / "b" / filename).read_bytes()

    def test_refuses_nonempty_without_force(self, tmp_path):
        assert run("gen-data", "--n", 2, "--size", 16, "--out", tmp_path / "d") == 0
        assert run("gen-data", "--n", 2, "--size", 16, "--out", tmp_path / "d") == 1
        assert run("gen-data", "--n", 2, "--size", 16, "--out", tmp_path / "d",
                   "--force") == 0


class TestSimulate:
    @pytest.fixture()
    def dataset(self, tmp_path):
        run("gen-data", "--n", 3, "--size", 16, "--seed", 1,
            "--out", tmp_path / "data")
        return tmp_path / "data"

    def test_noiseless_sentinel(self, dataset, tmp_path):
        assert run("simulate", "--data", dataset, "--photons", "inf",
                   "--out", tmp_path / "m") == 0
        entries = read_manifest(tmp_path / "m")
        g = load_field(tmp_path / "m" / "g_phase_00000.lspr")
        g0 = load_field(tmp_path / "m" / "g0_phase_00000.lspr")
        assert np.array_equal(g.values, g0.values)
        assert {role for _, _, role in entries} == {"g", "g0"}

    def test_seeded_rerun_identical(self, dataset, tmp_path):
        for name in ("m1", "m2"):
            assert run("simulate", "--data", dataset, "--photons", 1,
                       "--seed", 3, "--out", tmp_path / name) == 0
        a = load_field(tmp_path / "m1" / "g_phase_00001.lspr")
        b = load_field(tmp_path / "m2" / "g_phase_00001.lspr")
        assert np.array_equal(a.values, b.values)

    def test_mean_counts_near_p(self, tmp_path):
        # 8 * 32*32 samples: the +-0.05 band sits at 4.5 standard errors
        run("gen-data", "--n", 8, "--size", 32, "--seed", 1,
            "--out", tmp_path / "data32")
        assert run("simulate", "--data", tmp_path / "data32", "--photons", 1,
                   "--seed", 0, "--out", tmp_path / "m") == 0
        means = [load_field(tmp_path / "m" / f"g_phase_{i:05d}.lspr").values.mean()
                 for i in range(8)]
        assert np.mean(means) == pytest.approx(1.0, abs=0.05)


class TestRetrievalCommands:
    @pytest.fixture()
    def measurements(self, tmp_path):
        run("gen-data", "--n", 2, "--size", 16, "--seed", 2,
            "--out", tmp_path / "data")
        run("simulate", "--data", tmp_path / "data", "--photons", "inf",
            "--out", tmp_path / "m")
        return tmp_path / "m"

    def test_gs_one_iteration_equals_approximant(self, measurements, tmp_path):
        assert run("approximant", "--measurements", measurements,
                   "--out", tmp_path / "ap") == 0
        assert run("gs", "--measurements", measurements, "--iters", 1,
                   "--out", tmp_path / "gs1") == 0
        a = load_field(tmp_path / "ap" / "xi_phase_00000.lspr")
        b = load_field(tmp_path / "gs1" / "gs_phase_00000.lspr")
        assert np.max(np.abs(a.values - b.values)) < 1e-12

    def test_residual_csv_rows(self, measurements, tmp_path):
        assert run("gs", "--measurements", measurements, "--iters", 5,
                   "--out", tmp_path / "gs") == 0
        lines = (tmp_path / "gs" / "phase_00000_residuals.csv").read_text().splitlines()
        assert lines[0] == "iteration,residual"
        assert len(lines) == 1 + 6


class TestExperimentCommands:
    def test_train_role_ordering(self, tmp_path):
        cfg = write_tiny_config(tmp_path / "exp.cfg")
        code = run("train", "--exp", tmp_path / "e", "--config", cfg, "--role", "S")
        assert code == 1  # band networks missing
        assert run("train", "--exp", tmp_path / "e", "--config", cfg,
                   "--role", "L") == 0
        assert run("train", "--exp", tmp_path / "e", "--config", cfg,
                   "--role", "H") == 0
        assert run("train", "--exp", tmp_path / "e", "--config", cfg,
                   "--role", "S") == 0

    def test_run_ls_rerun_identical_reports(self, tmp_path, capsys):
        cfg = write_tiny_config(tmp_path / "exp.cfg")
        assert run("run-ls", "--exp", tmp_path / "e1", "--config", cfg) == 0
        manifest = tmp_path / "e1" / "manifest.txt"
        assert run("run-ls", "--exp", tmp_path / "e2", "--config", manifest) == 0
        for name in ("summary_q0.5.csv", "metrics_dnn_s_q0.5.csv"):
            assert (tmp_path / "e1" / "reports" / name).read_bytes() == \
                (tmp_path / "e2" / "reports" / name).read_bytes()

    def test_evaluate_predictions_of_references_all_ones(self, tmp_path):
        cfg = write_tiny_config(tmp_path / "exp.cfg")
        assert run("run-ls", "--exp", tmp_path / "e", "--config", cfg) == 0
        exp_dir = tmp_path / "e"
        preds = tmp_path / "preds"
        preds.mkdir()
        roles = {i: r for i, _, r in read_manifest(exp_dir / "dataset")}
        import shutil
        for item_id, filename, role in read_manifest(exp_dir / "dataset"):
            if role == "test":
                shutil.copy(exp_dir / "dataset" / filename, preds / filename)
        assert run("evaluate", "--exp", exp_dir, "--predictions", preds) == 0
        text = (exp_dir / "reports" / "metrics_predictions.csv").read_text()
        for line in text.splitlines()[2:-2]:
            cells = line.split(",")
            assert float(cells[1]) == pytest.approx(1.0, abs=1e-9)   # pcc
            assert float(cells[3]) == pytest.approx(1.0, abs=1e-6)   # ssim

    def test_sweep_q_writes_per_q_reports(self, tmp_path):
        cfg = write_tiny_config(tmp_path / "exp.cfg")
        assert run("sweep-q", "--exp", tmp_path / "e", "--config", cfg,
                   "--qs", "0.5,1") == 0
        assert (tmp_path / "e" / "reports" / "summary_q0.5.csv").exists()
        assert (tmp_path / "e" / "reports" / "summary_q1.csv").exists()


class TestAnalyzePsd:
    def test_slope_and_diagonal(self, tmp_path, capsys):
        run("gen-data", "--n", 32, "--size", 32, "--exponent", 2, "--seed", 4,
            "--out", tmp_path / "data")
        assert run("analyze-psd", "--in", tmp_path / "data",
                   "--out", tmp_path / "psd.lspr",
                   "--diagonal", tmp_path / "diag.csv") == 0
        out = capsys.readouterr().out
        slope = float(out.split("psd_slope=")[1].split()[0])
        assert slope == pytest.approx(-2.0, abs=0.5)
        lines = (tmp_path / "diag.csv").read_text().splitlines()
        assert len(lines) == 1 + 32 // 2
        psd = load_field(tmp_path / "psd.lspr")
        assert psd.values.shape == (32, 32)


class TestExportPgm:
    def test_export_writes_scale_sidecar(self, tmp_path):
        run("gen-data", "--n", 1, "--size", 16, "--out", tmp_path / "d")
        src = tmp_path / "d" / "phase_00000.lspr"
        assert run("export-pgm", src, tmp_path / "out.pgm") == 0
        assert (tmp_path / "out.pgm").exists()
        assert (tmp_path / "out.pgm.scale.txt").exists()
