"""Grid metrics, Student-t intervals, and the comparison drivers."""

import numpy as np
import pytest

from modeiv.data import split, SplitSpec
from modeiv.errors import ConfigError
from modeiv.estimators import EnsembleFitConfig, EstimatorSpec, fit_ensemble, fit_instrument
from modeiv.evaluation import (
    GridSpec,
    build_report,
    cate_abs_bias,
    confidence_interval,
    mse_on_grid,
    normalize_method,
    run_comparison,
    sensitivity_sweep,
    truth_metadata,
    write_plot_csv,
    write_report_csv,
    write_results_csv,
)
from modeiv.simulate import MRConfig, demand_config, generate_demand, generate_mr


class QuadraticTruth:
    """Stand-in oracle: structural f(t, x) = t^2 + x_1, no instrument leak."""

    def structural(self, t, x):
        return np.asarray(t) ** 2 + np.atleast_2d(x)[:, 0]

    def direct(self, z):
        return np.zeros(np.atleast_2d(z).shape[0])

    def slope(self, x):
        return np.zeros(np.atleast_2d(x).shape[0])


def toy_dataset(n=50, seed=0):
    rng = np.random.default_rng(seed)
    from modeiv.data import Dataset

    return Dataset(
        y=rng.standard_normal(n),
        t=rng.uniform(-1, 1, n),
        x=rng.standard_normal((n, 2)),
        z=rng.standard_normal((n, 2)),
    )


class TestMseOnGrid:
    def test_zero_for_exact_predictor(self):
        truth = QuadraticTruth()
        data = toy_dataset()
        grid = GridSpec(n_points=50, x_sample=10)
        fn = lambda t, x: truth.structural(t, x)
        assert mse_on_grid(fn, truth, grid, data) == 0.0

    def test_constant_offset(self):
        truth = QuadraticTruth()
        data = toy_dataset()
        grid = GridSpec(n_points=50, x_sample=10)
        fn = lambda t, x: truth.structural(t, x) + 0.1
        assert mse_on_grid(fn, truth, grid, data) == pytest.approx(0.01, abs=1e-12)

    def test_matches_double_loop(self):
        truth = QuadraticTruth()
        data = toy_dataset(seed=3)
        grid = GridSpec(n_points=13, x_sample=7, bounds=(-0.8, 0.9))
        coef = np.array([0.4, -0.7])
        fn = lambda t, x: 1.1 * np.asarray(t) + np.atleast_2d(x) @ coef
        got = mse_on_grid(fn, truth, grid, data)
        t_grid = np.linspace(-0.8, 0.9, 13)
        total = 0.0
        for i in range(7):
            for t in t_grid:
                pred = 1.1 * t + data.x[i] @ coef
                total += (pred - (t**2 + data.x[i, 0])) ** 2
        assert got == pytest.approx(total / (13 * 7), rel=1e-12)

    def test_chunking_invariance(self, monkeypatch):
        import modeiv.evaluation as ev

        truth = QuadraticTruth()
        data = toy_dataset(seed=4)
        grid = GridSpec(n_points=40, x_sample=20)
        fn = lambda t, x: np.asarray(t) * 0.5
        full = mse_on_grid(fn, truth, grid, data)
        monkeypatch.setattr(ev, "_CHUNK_POINTS", 40)
        chunked = mse_on_grid(fn, truth, grid, data)
        assert full == pytest.approx(chunked, rel=1e-14)


class TestCateAbsBias:
    def test_exact_slope(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((30, 2))
        slope = lambda rows: np.atleast_2d(rows)[:, 0]
        fn = lambda t, rows: np.asarray(t) * np.atleast_2d(rows)[:, 0] + 3.0
        assert cate_abs_bias(fn, slope, x, (0.0, 1.0)) == pytest.approx(0.0, abs=1e-12)

    def test_uniform_offset(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((30, 2))
        slope = lambda rows: np.atleast_2d(rows)[:, 0]
        fn = lambda t, rows: np.asarray(t) * (np.atleast_2d(rows)[:, 0] + 0.05)
        assert cate_abs_bias(fn, slope, x, (-1.0, 2.0)) == pytest.approx(0.05, abs=1e-12)

    def test_intercept_invariance(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((30, 2))
        slope = lambda rows: np.atleast_2d(rows)[:, 0]
        base = lambda t, rows: np.asarray(t) * np.atleast_2d(rows)[:, 0]
        shifted = lambda t, rows: base(t, rows) + np.sin(np.atleast_2d(rows)[:, 1])
        assert cate_abs_bias(base, slope, x, (0.0, 1.0)) == pytest.approx(
            cate_abs_bias(shifted, slope, x, (0.0, 1.0)), abs=1e-12
        )

    def test_cond_linear_slope_is_finite_difference(self):
        cfg = MRConfig(K=5, n_valid=5, n=8_000, param_seed=1, noise_seed=2)
        ds, truth = generate_mr(cfg)
        spec = EstimatorSpec(kind="cond_linear", degree=1, weak_instrument_threshold=0.0)
        est = fit_instrument(ds, (0,), spec)
        xs = np.random.default_rng(8).uniform(-0.5, 0.5, (50, 10))
        phi = est.cov_map.features(xs)
        ghat = phi @ est.second_stage[phi.shape[1] :]
        fd = (est.predict_batch(np.ones(50), xs) - est.predict_batch(np.zeros(50), xs)) / 1.0
        assert np.max(np.abs(fd - ghat)) < 1e-10

    def test_equal_probes_rejected(self):
        with pytest.raises(ConfigError):
            cate_abs_bias(lambda t, x: t, lambda x: 0.0, np.zeros((3, 1)), (1.0, 1.0))


class TestConfidenceInterval:
    def test_constant_samples(self):
        mean, half = confidence_interval([2.0, 2.0, 2.0])
        assert (mean, half) == (2.0, 0.0)

    def test_two_point_t_quantile(self):
        mean, half = confidence_interval([0.0, 2.0])
        assert mean == 1.0
        assert half == pytest.approx(12.706204736, rel=1e-6)

    def test_half_width_shrinks_with_samples(self):
        rng = np.random.default_rng(9)
        small = rng.standard_normal(100)
        big = rng.standard_normal(400)
        _, h_small = confidence_interval(small)
        _, h_big = confidence_interval(big)
        assert 0.35 <= h_big / h_small <= 0.7

    def test_requires_two(self):
        with pytest.raises(ConfigError):
            confidence_interval([1.0])


@pytest.fixture(scope="module")
def mr_small():
    cfg = MRConfig(K=6, n_valid=3, rho=0.5, n=6_000, param_seed=0, noise_seed=1)
    return generate_mr(cfg)


class TestRunComparison:
    def spec(self):
        return EstimatorSpec(kind="cond_linear", degree=1, ridge_lambda=6.0, weak_instrument_threshold=0.0)

    def test_deterministic(self, mr_small):
        ds, truth = mr_small
        grid = GridSpec(n_points=60, x_sample=40)
        a = run_comparison(ds, truth, ("modeiv", "naive"), grid, 3, spec=self.spec(), v=3)
        b = run_comparison(ds, truth, ("modeiv", "naive"), grid, 3, spec=self.spec(), v=3)
        assert [(r.method, r.mse, r.cate_abs_bias) for r in a] == [
            (r.method, r.mse, r.cate_abs_bias) for r in b
        ]

    def test_four_methods_reported(self, mr_small):
        ds, truth = mr_small
        grid = GridSpec(n_points=60, x_sample=40)
        res = run_comparison(ds, truth, ("modeiv", "mean", "naive", "oracle"), grid, 3, spec=self.spec(), v=3)
        assert [r.method for r in res] == ["modeiv", "mean_ensemble", "naive_all", "oracle_valid"]
        assert res[0].v == 3

    def test_matches_manual_pipeline(self, mr_small):
        # identical split, grid bounds, and held-out rows for every method
        ds, truth = mr_small
        grid = GridSpec(n_points=60, x_sample=40)
        res = run_comparison(ds, truth, ("naive",), grid, 7, spec=self.spec())
        train, heldout, _ = split(ds, SplitSpec(0.9, 0.1, 7))
        from dataclasses import replace
        from modeiv.estimators import fit_pooled

        bounds = tuple(np.percentile(train.t, [2.5, 97.5]))
        pooled = fit_pooled(train, range(ds.k), self.spec())
        manual = mse_on_grid(pooled.predict_batch, truth, replace(grid, bounds=bounds), heldout)
        assert res[0].mse == manual

    def test_oracle_beats_naive_majority_of_seeds(self):
        wins = 0
        grid = GridSpec(n_points=60, x_sample=40)
        for seed in range(1, 6):
            cfg = MRConfig(K=8, n_valid=4, rho=0.5, n=8_000, param_seed=0, noise_seed=seed)
            ds, truth = generate_mr(cfg)
            res = {
                r.method: r.mse
                for r in run_comparison(ds, truth, ("naive", "oracle"), grid, seed, spec=self.spec())
            }
            wins += res["oracle_valid"] <= res["naive_all"]
        assert wins >= 4

    def test_single_method(self, mr_small):
        ds, truth = mr_small
        grid = GridSpec(n_points=40, x_sample=20)
        res = run_comparison(ds, truth, ("single:2",), grid, 3, spec=self.spec())
        assert res[0].method == "single:2"

    def test_unknown_method_rejected(self):
        with pytest.raises(ConfigError):
            normalize_method("votes")


class TestSensitivitySweep:
    def test_shared_fit_equals_prefit(self):
        cfg = demand_config(k=5, n_invalid=1, gamma=1.0, n=4_000, param_seed=0, noise_seed=1)
        ds, truth = generate_demand(cfg)
        spec = EstimatorSpec(kind="cond_linear", degree=2, n_bumps=4)
        grid = GridSpec(n_points=50, x_sample=30)
        internal = sensitivity_sweep(ds, truth, range(2, 6), grid, 5, spec=spec)
        train, _, _ = split(ds, SplitSpec(0.9, 0.1, 5))
        prefit = fit_ensemble(train, EnsembleFitConfig(spec=spec))
        injected = sensitivity_sweep(ds, truth, range(2, 6), grid, 5, spec=spec, ensemble=prefit)
        assert [r.mse for r in internal] == [r.mse for r in injected]
        assert [r.v for r in internal] == [2, 3, 4, 5]

    def test_v_out_of_range(self):
        cfg = demand_config(k=4, n_invalid=1, n=2_000, param_seed=0, noise_seed=1)
        ds, truth = generate_demand(cfg)
        with pytest.raises(ConfigError):
            sensitivity_sweep(ds, truth, [5], GridSpec(n_points=10, x_sample=5), 0)


class TestReportsAndCsv:
    def make_results(self):
        cfg = MRConfig(K=6, n_valid=3, n=6_000, param_seed=0, noise_seed=1)
        ds, truth = generate_mr(cfg)
        grid = GridSpec(n_points=40, x_sample=20)
        spec = EstimatorSpec(kind="cond_linear", degree=1, ridge_lambda=6.0, weak_instrument_threshold=0.0)
        results = []
        for seed in (1, 2):
            results += run_comparison(ds, truth, ("modeiv", "naive"), grid, seed, spec=spec, v=3)
        return results, truth

    def test_report_groups_replicates(self):
        results, _ = self.make_results()
        report = build_report(results)
        rows = {(r.method, r.metric): r for r in report}
        assert rows[("modeiv(V=3)", "mse")].n_replicates == 2
        got = rows[("naive_all", "mse")].mean
        expect = np.mean([r.mse for r in results if r.method == "naive_all"])
        assert got == pytest.approx(expect, rel=1e-12)

    def test_csv_writers(self, tmp_path):
        results, truth = self.make_results()
        meta = truth_metadata(truth)
        assert meta["n_invalid"] == 3
        write_results_csv(tmp_path / "results.csv", results, meta)
        lines = (tmp_path / "results.csv").read_text().strip().splitlines()
        assert lines[0] == "method,V,seed,gamma,n_invalid,metric,value"
        assert len(lines) == 1 + 3 * len(results)
        write_report_csv(tmp_path / "report.csv", build_report(results))
        assert (tmp_path / "report.csv").read_text().startswith(
            "method,metric,mean,ci_half_width,n_replicates"
        )
        write_plot_csv(tmp_path / "plot.csv", [(0.5, "modeiv", 1.0, 0.1)])
        assert "x_axis_value,method,mean,ci" in (tmp_path / "plot.csv").read_text()
