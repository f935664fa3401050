import numpy as np
import pytest

from labelmoments import ContractError
from labelmoments.analysis import median_mse
from labelmoments.estimators import SampleMoments, labeled_from_moments
from labelmoments.experiments import (
    DEFAULT_ACCURACIES,
    ExperimentConfig,
    SyntheticModelSpec,
    TrialEngine,
    approx_data_value_ratio,
    combined_sweep,
    data_value_ratio,
    edge_layout,
    expected_excess_error,
    labeled_search_grid,
    run_combined,
    run_curves,
    run_dvr,
    trial_rng,
)
from labelmoments.label_model import LabelModel, config_dist_from_model
from labelmoments.analysis import exact_generalization_error


@pytest.fixture(scope="module")
def dep_engine(synth_model_dep, synth_diag_dep):
    return TrialEngine(synth_model_dep, synth_diag_dep)


@pytest.fixture(scope="module")
def indep_engine(synth_model_indep, synth_diag_indep):
    return TrialEngine(synth_model_indep, synth_diag_indep)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ContractError):
            ExperimentConfig(n_grid=(100, 100))
        with pytest.raises(ContractError):
            ExperimentConfig(trials=0)
        with pytest.raises(ContractError):
            ExperimentConfig(estimators=("nope",))

    def test_round_trip_and_hash(self):
        cfg = ExperimentConfig(SyntheticModelSpec(d=3), trials=7, seed=5)
        again = ExperimentConfig.from_dict(cfg.to_dict())
        assert again == cfg
        assert again.hash() == cfg.hash()

    def test_edge_layout(self):
        assert edge_layout(3) == ((0, 1), (2, 3), (4, 5))
        with pytest.raises(ContractError):
            edge_layout(6, m=10)

    def test_grid_shape(self):
        grid = labeled_search_grid()
        assert grid[0] == 10 and grid[-1] == 5000
        assert 100 in grid and 102 in grid and 1010 in grid
        assert all(b > a for a, b in zip(grid, grid[1:]))


class TestExpectedExcess:
    def test_single_trial_matches_enumeration(self, synth_model_dep, dep_engine):
        # trials=1 reduces to one fit scored by the exact enumerated loss
        res = expected_excess_error(
            synth_model_dep, "labeled", 400, trials=1, seed=9, engine=dep_engine
        )
        rng = trial_rng(9, "excess:labeled", 400, 0)
        counts = rng.multinomial(400, synth_model_dep.joint).astype(np.float64)
        est = labeled_from_moments(SampleMoments.from_state_counts(counts, 10))
        fitted = LabelModel.from_accuracies(
            est, 0.5, mode="empirical",
            config_dist=config_dist_from_model(synth_model_dep),
        )
        _, excess = exact_generalization_error(synth_model_dep, fitted)
        assert res.mean == pytest.approx(excess, abs=1e-12)
        assert res.trials == 1 and res.failures == 0

    def test_labeled_matches_parametric_rate(self, synth_model_indep, indep_engine):
        # d = 0 labeled fits concentrate at m / (2 n)
        res = expected_excess_error(
            synth_model_indep, "labeled", 100_000, trials=1000, seed=0,
            engine=indep_engine,
        )
        assert abs(res.mean - 10 / (2 * 100_000)) <= 2 * res.stderr

    def test_mean_triplet_plateaus_above_bias(self, synth_model_dep, dep_engine):
        res = expected_excess_error(
            synth_model_dep, "triplet-mean", 100_000, trials=100, seed=1,
            engine=dep_engine,
        )
        plateau = res.mean - dep_engine.diag.inference_bias
        assert plateau > 5 * res.stderr

    def test_determinism(self, synth_model_dep, dep_engine):
        a = expected_excess_error(
            synth_model_dep, "triplet-median", 500, 40, 3, engine=dep_engine
        )
        b = expected_excess_error(
            synth_model_dep, "triplet-median", 500, 40, 3, engine=dep_engine
        )
        assert a == b

    def test_rejects_bad_sizes(self, synth_model_dep, dep_engine):
        with pytest.raises(ContractError):
            expected_excess_error(synth_model_dep, "labeled", 0, engine=dep_engine)


class TestDataValueRatio:
    def test_minimal_grid_point_with_failing_predecessor(
        self, synth_model_dep, dep_engine
    ):
        res = data_value_ratio(
            synth_model_dep, 500, "triplet-mean", trials=150, seed=2,
            engine=dep_engine,
        )
        assert res.matched_n_labeled is not None
        assert not res.lower_bounded
        trace = {n: mean for n, mean, _ in res.trace}
        grid = labeled_search_grid()
        idx = grid.index(res.matched_n_labeled)
        assert trace[res.matched_n_labeled] <= res.target_excess
        if idx > 0:
            assert trace[grid[idx - 1]] > res.target_excess
        assert res.value_ratio == pytest.approx(500 / res.matched_n_labeled)

    def test_lower_bounded_flag(self, synth_model_dep, dep_engine):
        res = data_value_ratio(
            synth_model_dep, 100_000, "triplet-median", trials=40, seed=3,
            grid=[10, 12, 14], engine=dep_engine,
        )
        assert res.lower_bounded and res.matched_n_labeled is None

    def test_first_point_qualifies(self, synth_model_dep, dep_engine):
        res = data_value_ratio(
            synth_model_dep, 50, "triplet-mean", trials=40, seed=4,
            grid=[4000, 4010], engine=dep_engine,
        )
        assert res.matched_n_labeled == 4000


class TestApproxDataValueRatio:
    def test_well_specified_constant(self, synth_diag_indep):
        a = approx_data_value_ratio(synth_diag_indep, "well-specified", 100)
        b = approx_data_value_ratio(synth_diag_indep, "well-specified", 100_000)
        assert a == b > 0

    def test_misspecified_affine_in_d(self, synth_diag_dep):
        vals = [
            approx_data_value_ratio(synth_diag_dep, "misspecified", 1000, d=d)
            for d in (0, 1, 2)
        ]
        assert vals[2] - vals[1] == pytest.approx(vals[1] - vals[0], rel=1e-12)
        assert vals[1] > vals[0]

    def test_corrected_below_misspecified(self, synth_model_dep, synth_diag_dep):
        rho = median_mse(synth_model_dep, 10_000, trials=60, seed=5,
                         diag=synth_diag_dep).rho
        corrected = approx_data_value_ratio(
            synth_diag_dep, "corrected", 10_000, rho=rho
        )
        misspec = approx_data_value_ratio(synth_diag_dep, "misspecified", 10_000)
        assert 0 < corrected < misspec

    def test_corrected_needs_rho(self, synth_diag_dep):
        with pytest.raises(ContractError):
            approx_data_value_ratio(synth_diag_dep, "corrected", 1000)


class TestCombinedSweep:
    def test_alpha_zero_column_is_labeled_only(self, synth_model_dep, dep_engine):
        rows = combined_sweep(
            synth_model_dep, 300, [80], trials=30, seed=6, engine=dep_engine
        )
        row = rows[0]
        # reproduce the labeled-only column directly from the same trials
        excesses = []
        for t in range(30):
            rng = trial_rng(6, "combined:triplet-mean:300", 80, t)
            rng.multinomial(300, synth_model_dep.joint)
            counts_l = rng.multinomial(80, synth_model_dep.joint).astype(np.float64)
            mom = SampleMoments.from_state_counts(counts_l, 10)
            excesses.append(float(dep_engine.excess(mom.acc)))
        assert row.excess_labeled == pytest.approx(np.mean(excesses), abs=1e-12)

    def test_combined_never_worse_than_best_endpoint(
        self, synth_model_dep, dep_engine
    ):
        rows = combined_sweep(
            synth_model_dep, 1000, [100, 400], trials=120, seed=7, engine=dep_engine
        )
        for row in rows:
            assert row.excess_best <= min(row.excess_labeled, row.excess_unlabeled) + 1e-12
            assert 0.0 <= row.best_alpha <= 1.0
            assert 0.0 <= row.gs_alpha_mean <= 1.0


class TestSuiteRunners:
    def test_curves_deterministic_bytes(self, tmp_path):
        cfg = ExperimentConfig(
            SyntheticModelSpec(d=1, accuracies=DEFAULT_ACCURACIES[:6]),
            estimators=("labeled", "triplet-median"),
            n_grid=(50, 100),
            trials=25,
            seed=11,
        )
        run_curves(cfg, tmp_path / "a")
        run_curves(cfg, tmp_path / "b")
        a = (tmp_path / "a" / "curves.csv").read_bytes()
        b = (tmp_path / "b" / "curves.csv").read_bytes()
        assert a == b
        header = a.decode().splitlines()[0]
        assert header == "estimator,n,mean_excess,stderr,trials,failures"

    def test_dvr_runner_writes_rows(self, tmp_path):
        cfg = ExperimentConfig(
            SyntheticModelSpec(d=1, accuracies=DEFAULT_ACCURACIES[:6]),
            estimators=("labeled", "triplet-mean"),
            n_grid=(100,),
            trials=25,
            seed=12,
        )
        results = run_dvr(cfg, tmp_path)
        text = (tmp_path / "dvr.csv").read_text().splitlines()
        assert len(text) == 1 + len(results)
        assert text[0].startswith("estimator,n_unlabeled")

    def test_combined_runner_writes_rows(self, tmp_path):
        cfg = ExperimentConfig(
            SyntheticModelSpec(d=1, accuracies=DEFAULT_ACCURACIES[:6]),
            n_grid=(100,),
            trials=20,
            seed=13,
        )
        rows = run_combined(cfg, tmp_path, n_unlabeled=200, n_labeled_grid=(40, 80))
        lines = (tmp_path / "combined.csv").read_text().splitlines()
        assert len(lines) == 1 + len(rows) == 3
