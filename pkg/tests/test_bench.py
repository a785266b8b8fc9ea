import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from docs.constants import scenarios
from src.modules.bench import (
    CSV_COLUMNS,
    Scenario,
    SweepGrid,
    SweepResult,
    make_rng,
    markdown_summary,
    ratio_matrix,
    rmse,
    run_sweep,
    simulate,
    tdoa_scenario,
    tracking_scenario,
)
from src.modules.errors import DimensionError
from src.modules.gaussian_core import GaussianDensity
from src.modules.models import make_affine_model, random_affine_params

SMALL_TRACKING = dict(scenarios["tracking"], steps=10)
GRID = SweepGrid((0.1,), (1.0,), "sigma_sq", mc_runs=2)


def tracking_factory(q1, sigma_sq):
    return tracking_scenario(SMALL_TRACKING, q1=q1, sigma_sq=sigma_sq)


def loose_threshold(q1, sigma_sq):
    return 10.0 * float(np.sqrt(sigma_sq))


class TestSimulation:
    def test_rng_streams_are_reproducible(self):
        assert_allclose(make_rng(1, 2, 3).standard_normal(5), make_rng(1, 2, 3).standard_normal(5))
        assert not np.allclose(make_rng(1, 2, 3).standard_normal(5), make_rng(1, 2, 4).standard_normal(5))

    def test_shapes(self):
        scenario = tracking_factory(0.1, 1.0)
        states, ys = simulate(scenario, make_rng(0))
        assert states.shape == (11, 5)
        assert ys.shape == (10, 2)
        assert_allclose(states[0], scenario.true_x0)

    def test_noise_free_rollout(self):
        scenario = tracking_factory(0.1, 1.0)
        states, ys = simulate(scenario, noise=False)
        model = scenario.model
        for k in range(1, 11):
            assert_allclose(states[k], model.transition(states[k - 1]))
            assert_allclose(ys[k - 1], model.measurement(states[k]))

    def test_fixed_truth_only_draws_measurement_noise(self):
        scenario = tdoa_scenario(dict(scenarios["tdoa"], steps=15))
        states, ys = simulate(scenario, make_rng(0))
        assert np.array_equal(states, scenario.truth)
        assert ys.shape == (15, 3)

    def test_noise_has_the_model_covariances(self):
        model = make_affine_model(0.0, 0.0, 1.0, 0.0, 2.0, 0.5)
        scenario = Scenario(model, GaussianDensity([0.0], [[1.0]]), [0.0], steps=100_000)
        states, ys = simulate(scenario, make_rng(11))
        assert_allclose(np.var(states[1:, 0]), 2.0, rtol=0.02)
        assert_allclose(np.var(ys[:, 0] - states[1:, 0]), 0.5, rtol=0.02)

    def test_scenario_validation(self):
        with pytest.raises(ValueError):
            tracking_scenario(dict(SMALL_TRACKING, steps=0))
        with pytest.raises(DimensionError):
            tracking_scenario(dict(SMALL_TRACKING, prior_cov=[1.0, 1.0]))


class TestRmse:
    def test_hand_example(self):
        assert_allclose(rmse([[0.0, 0.0], [3.0, 4.0]], np.zeros((2, 2))), np.sqrt(12.5))

    def test_selector(self):
        est = np.array([[1.0, 100.0, 2.0], [1.0, -100.0, 2.0]])
        assert_allclose(rmse(est, np.zeros((2, 3)), (0, 2)), np.sqrt(5.0))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            rmse(np.zeros((3, 2)), np.zeros((2, 2)))


class TestSweepGrid:
    def test_row_major_configs(self):
        grid = SweepGrid((1.0, 2.0), (10.0, 20.0, 30.0), "q2", mc_runs=1)
        configs = grid.configs()
        assert len(configs) == 6
        assert configs[0] == (0, 1.0, 10.0)
        assert configs[4] == (4, 2.0, 20.0)

    @pytest.mark.parametrize("kwargs", [{"q1_values": ()}, {"q1_values": (-1.0,)}, {"second": "R"}, {"mc_runs": 0}])
    def test_validation(self, kwargs):
        base = {"q1_values": (1.0,), "second_values": (1.0,), "second": "sigma_sq", "mc_runs": 1}
        base.update(kwargs)
        with pytest.raises(ValueError):
            SweepGrid(**base)

    def test_from_values(self):
        grid = SweepGrid.from_values({"q1_values": [1.0], "q2_values": [0.1, 0.01], "mc_runs": 3}, "q2")
        assert grid.second_values == (0.1, 0.01)
        assert grid.mc_runs == 3


class TestRunSweep:
    def test_table_layout(self):
        result = run_sweep(tracking_factory, GRID, ["EKF", "DIEKF"], loose_threshold, master_seed=5)
        assert list(result.table.columns[: len(CSV_COLUMNS)]) == CSV_COLUMNS
        assert len(result.table) == 2
        assert set(result.table["total"]) == {2}
        assert list(result.table["variant"]) == ["DIEKF", "EKF"]

    def test_deterministic_and_independent_of_jobs(self):
        first = run_sweep(tracking_factory, GRID, ["EKF", "IEKF"], loose_threshold, master_seed=5)
        again = run_sweep(tracking_factory, GRID, ["EKF", "IEKF"], loose_threshold, master_seed=5)
        threaded = run_sweep(tracking_factory, GRID, ["EKF", "IEKF"], loose_threshold, master_seed=5, jobs=2)
        pd.testing.assert_frame_equal(first.table, again.table)
        pd.testing.assert_frame_equal(first.table, threaded.table)

    def test_common_random_numbers(self):
        # IEKF equals EKF under the linear position measurement, on the same simulated runs
        result = run_sweep(tracking_factory, GRID, ["EKF", "IEKF"], loose_threshold, master_seed=5)
        ekf, iekf = result.rows("EKF").iloc[0], result.rows("IEKF").iloc[0]
        assert_allclose(iekf["pos_rmse"], ekf["pos_rmse"], rtol=1e-10)

    def test_everything_diverges_under_zero_threshold(self):
        result = run_sweep(tracking_factory, GRID, ["EKF"], lambda q1, s: 0.0)
        row = result.rows("EKF").iloc[0]
        assert row["diverged"] == 2
        assert np.isnan(row["pos_rmse"])
        assert result.diverged_configs("EKF") == 1

    def test_affine_model_makes_the_variants_agree(self):
        p = random_affine_params(np.random.default_rng(3), 2, 2)
        model = make_affine_model(p.F, p.u, p.H, p.c, p.Q, p.R)

        def factory(q1, second):
            return Scenario(model, GaussianDensity(np.zeros(2), np.eye(2)), np.zeros(2), steps=8)

        variants = ["EKF", "UKF", "DIEKF", "DIPLF", "LS_DIEKF"]
        result = run_sweep(factory, GRID, variants, lambda q1, s: 1e6, master_seed=2)
        ekf = result.rows("EKF").iloc[0]["pos_rmse"]
        for variant in variants[1:]:
            assert_allclose(result.rows(variant).iloc[0]["pos_rmse"], ekf, rtol=1e-8)
        assert result.rows("EKF")["vel_rmse"].isna().all()

    def test_needs_variants(self):
        with pytest.raises(ValueError):
            run_sweep(tracking_factory, GRID, [], loose_threshold)


class TestSweepResult:
    @pytest.fixture
    def result(self):
        return run_sweep(tracking_factory, GRID, ["EKF", "DIEKF"], loose_threshold, master_seed=5)

    def test_json_keeps_the_table(self, result, tmp_path):
        result.to_json(tmp_path / "sweep.json")
        back = SweepResult.from_json(tmp_path / "sweep.json")
        pd.testing.assert_frame_equal(back.table, result.table)
        assert back.second == "sigma_sq"

    def test_nan_is_written_as_null(self):
        table = pd.DataFrame(
            [{"config_id": 0, "q1": 1.0, "q2_or_sigma_sq": 1.0, "variant": "EKF", "pos_rmse": np.nan, "vel_rmse": np.nan, "diverged": 3, "total": 3, "errored": 1}]
        )
        data = SweepResult(table).to_dict()
        cell = data["configs"][0]["variants"]["EKF"]
        assert cell["pos_rmse"] is None
        assert cell["errored"] == 1

    def test_csv_columns(self, result, tmp_path):
        result.to_csv(tmp_path / "sweep.csv")
        assert list(pd.read_csv(tmp_path / "sweep.csv").columns) == CSV_COLUMNS

    def test_ratio_of_a_variant_with_itself(self, result):
        ratio = ratio_matrix(result, "EKF", "EKF")
        assert ratio.shape == (1, 1)
        assert_allclose(ratio.iloc[0, 0], 1.0)

    def test_summary_mentions_divergence_and_ratios(self, result):
        summary = markdown_summary(result, [("DIEKF", "EKF"), ("DIUKF", "UKF")], "Tracking")
        assert summary.startswith("# Tracking")
        assert "Diverged configurations" in summary
        assert "## DIEKF/EKF position RMSE" in summary
        assert "DIUKF/UKF" not in summary
