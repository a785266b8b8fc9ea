import pandas as pd
import pytest

import app
from src.modules.commands.sweeps import _factory, sweep_values

SMALL_SWEEP = ["--set", "q1_values=0.1", "--set", "sigma_sq_values=1", "--set", "steps=10", "--mc-runs", "2", "--variants", "EKF,DIEKF"]


def run_cli(*argv):
    return app.main([str(a) for a in argv])


class TestVerify:
    def test_covariance_suite_passes(self, capsys):
        assert run_cli("verify", "--suite", "covariances") == 0
        assert "covariances" in capsys.readouterr().out

    def test_injected_fault_is_caught(self, capsys):
        assert run_cli("verify", "--suite", "covariances", "--inject-fault") == 2
        assert "first failing property: covariances" in capsys.readouterr().out


class TestCommands:
    def test_illustrate_writes_grid_and_iterates(self, tmp_path, capsys):
        assert run_cli("illustrate", "--out", tmp_path, "--set", "grid_points=201") == 0
        iterates = pd.read_csv(tmp_path / "iterates.csv")
        assert list(iterates.columns) == ["iteration", "density", "mean", "var"]
        assert sorted(iterates["iteration"].unique()) == [0, 1, 2]
        assert len(pd.read_csv(tmp_path / "grid.csv")) == 201
        assert "KL" in capsys.readouterr().out

    def test_example1d_writes_one_path_per_variant(self, tmp_path):
        assert run_cli("example1d", "--out", tmp_path, "--set", "grid_points=41", "--variants", "DIEKF,LS_DIEKF") == 0
        for name in ("landscape.csv", "marginals.csv", "optimum.csv", "iterates_DIEKF.csv", "iterates_LS_DIEKF.csv"):
            assert (tmp_path / name).is_file()
        assert len(pd.read_csv(tmp_path / "landscape.csv")) == 41 * 41

    def test_track_sweep_outputs(self, tmp_path):
        assert run_cli("track-sweep", "--out", tmp_path, *SMALL_SWEEP) == 0
        table = pd.read_csv(tmp_path / "sweep.csv")
        assert list(table.columns) == ["config_id", "q1", "q2_or_sigma_sq", "variant", "pos_rmse", "vel_rmse", "diverged", "total"]
        assert set(table["variant"]) == {"EKF", "DIEKF"}
        assert (tmp_path / "sweep.json").is_file()
        assert (tmp_path / "summary.md").read_text().startswith("# Coordinated-turn tracking sweep")

    def test_sweeps_are_reproducible_across_jobs(self, tmp_path):
        for name, jobs in (("a", 1), ("b", 1), ("c", 2)):
            assert run_cli("track-sweep", "--out", tmp_path / name, "--seed", 11, "--jobs", jobs, *SMALL_SWEEP) == 0
        for filename in ("sweep.csv", "sweep.json"):
            a = (tmp_path / "a" / filename).read_bytes()
            assert a == (tmp_path / "b" / filename).read_bytes()
            assert a == (tmp_path / "c" / filename).read_bytes()

    def test_config_file(self, tmp_path):
        config = tmp_path / "run.env"
        config.write_text("steps=5\nq1_values=0.1\nsigma_sq_values=1\nmc_runs=1\n")
        assert run_cli("track-sweep", "--config", config, "--out", tmp_path / "out", "--variants", "EKF") == 0
        assert pd.read_csv(tmp_path / "out" / "sweep.csv")["total"].tolist() == [1]

    def test_tracking_turn_rate_noise_follows_q2(self):
        default = _factory("tracking", sweep_values("tracking"))(0.1, 1.0)
        scenario = _factory("tracking", sweep_values("tracking", None, ["q2=0.5"]))(0.1, 1.0)
        assert default.model.Q[4, 4] == pytest.approx(1e-2)
        assert scenario.model.Q[4, 4] == pytest.approx(0.5)


class TestExitCodes:
    def test_unknown_config_key(self, tmp_path, capsys):
        assert run_cli("illustrate", "--out", tmp_path, "--set", "speed=3") == 1
        assert "valid keys" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert run_cli("illustrate", "--out", tmp_path, "--config", tmp_path / "absent.env") == 3

    def test_bad_jobs(self, tmp_path):
        assert run_cli("track-sweep", "--out", tmp_path, "--jobs", 0) == 1

    def test_unknown_variant(self, tmp_path):
        with pytest.raises(SystemExit) as info:
            run_cli("track-sweep", "--out", tmp_path, "--variants", "KF")
        assert info.value.code == 1

    def test_missing_command(self):
        with pytest.raises(SystemExit) as info:
            run_cli()
        assert info.value.code == 1
