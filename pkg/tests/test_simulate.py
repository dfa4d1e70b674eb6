"""Generator determinism, moments, and ground-truth consistency."""

import json

import numpy as np
import pytest

from modeiv.errors import ConfigError
from modeiv.simulate import (
    DEMAND_TYPE_EFFECTS,
    MRConfig,
    beta_of_x,
    demand_config,
    draw_mr_params,
    generate_demand,
    generate_mr,
    psi,
    round_to_tenth,
    truth_from_doc,
)


class TestPsi:
    def test_center_value(self):
        assert psi(5.0) == -1.0

    def test_endpoints(self):
        # direct evaluation: 2*(625/600 + exp(-100) + t/10 - 2)
        assert psi(0.0) == pytest.approx(-1.9166666666666667, abs=1e-12)
        assert psi(10.0) == pytest.approx(0.08333333333333333, abs=1e-12)

    def test_vectorized(self):
        t = np.array([0.0, 5.0, 10.0])
        assert np.allclose(psi(t), [psi(0.0), -1.0, psi(10.0)])


class TestDemand:
    def test_deterministic(self):
        cfg = demand_config(k=6, n_invalid=2, gamma=1.0, n=500, param_seed=3, noise_seed=4)
        a, _ = generate_demand(cfg)
        b, _ = generate_demand(cfg)
        for fa, fb in ((a.y, b.y), (a.t, b.t), (a.x, b.x), (a.z, b.z)):
            assert np.array_equal(fa, fb)

    def test_gamma_zero_equals_all_valid(self):
        # gamma multiplies the leak; zero coefficient vectors kill it too
        biased = demand_config(k=6, n_invalid=2, gamma=0.0, n=400, param_seed=1, noise_seed=2)
        clean = demand_config(k=6, n_invalid=0, gamma=3.0, n=400, param_seed=1, noise_seed=2)
        da, _ = generate_demand(biased)
        db, _ = generate_demand(clean)
        assert np.array_equal(da.y, db.y)
        assert np.array_equal(da.t, db.t)

    def test_gamma_only_touches_y(self):
        a, _ = generate_demand(demand_config(k=6, n_invalid=2, gamma=0.0, n=400, param_seed=1, noise_seed=2))
        b, _ = generate_demand(demand_config(k=6, n_invalid=2, gamma=1.5, n=400, param_seed=1, noise_seed=2))
        assert np.array_equal(a.z, b.z)
        assert np.array_equal(a.t, b.t)
        assert np.array_equal(a.x, b.x)
        assert not np.array_equal(a.y, b.y)

    def test_valid_coefficients_zero(self):
        cfg = demand_config(k=8, n_invalid=3, n=10, param_seed=0, noise_seed=0)
        _, truth = generate_demand(cfg)
        assert np.all(truth.direct_coefs[list(cfg.valid_indices)] == 0.0)
        assert np.all(truth.direct_coefs[list(cfg.invalid_indices)] >= 0.5)
        assert np.all((truth.treat_coefs >= 0.5) & (truth.treat_coefs <= 1.5))

    def test_time_std_and_confounding(self):
        cfg = demand_config(k=8, n_invalid=3, gamma=1.0, rho=0.5, n=100_000, param_seed=0, noise_seed=1)
        ds, truth = generate_demand(cfg)
        time = ds.x[:, 0]
        assert abs(time.std() / 2.8867513459481287 - 1.0) < 0.02
        # recover the noise draws from the stored coefficients
        p_raw = ds.t * cfg.p_std + cfg.p_mu
        nu = p_raw - (25.0 + (ds.z @ truth.treat_coefs + 3.0) * psi(time))
        y_raw = ds.y * cfg.y_std + cfg.y_mu
        te = ds.x[:, 1:8] @ DEMAND_TYPE_EFFECTS
        e = y_raw - (
            100.0 + 10.0 * te * psi(time) + (te * psi(time) - 2.0) * p_raw
            + cfg.gamma * 60.0 * np.sin(ds.z @ truth.direct_coefs)
        )
        assert abs(np.corrcoef(e, nu)[0, 1] - cfg.rho) < 0.02

    def test_zero_noise_matches_response_any_gamma(self):
        cfg = demand_config(k=5, n_invalid=2, gamma=1.3, n=300, param_seed=5, noise_seed=6)
        ds, truth = generate_demand(cfg, zero_noise=True)
        expect = truth.response(ds.t, ds.x, ds.z)
        assert np.max(np.abs(ds.y - expect)) < 1e-12

    def test_zero_noise_matches_structural_when_clean(self):
        cfg = demand_config(k=5, n_invalid=0, gamma=0.0, n=300, param_seed=5, noise_seed=6)
        ds, truth = generate_demand(cfg, zero_noise=True)
        assert np.max(np.abs(ds.y - truth.structural(ds.t, ds.x))) < 1e-12

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            demand_config(k=4, n_invalid=4)
        with pytest.raises(ConfigError):
            demand_config(k=4, n_invalid=1, gamma=-0.5)
        with pytest.raises(ConfigError):
            demand_config(k=4, n_invalid=1, rho=1.5)


class TestRounding:
    def test_examples(self):
        assert round_to_tenth(0.26) == pytest.approx(0.3)
        assert round_to_tenth(0.0) == 0.0
        assert round_to_tenth(-0.14) == pytest.approx(-0.1)

    def test_ties_away_from_zero(self):
        assert round_to_tenth(0.25) == pytest.approx(0.3)
        assert round_to_tenth(-0.25) == pytest.approx(-0.3)

    def test_beta_of_x_matches_params(self):
        cfg = MRConfig(K=5, n_valid=5, n=10, param_seed=9, noise_seed=9)
        params = draw_mr_params(cfg)
        rng = np.random.default_rng(4)
        for _ in range(20):
            x = rng.uniform(-0.5, 0.5, 10)
            assert beta_of_x(x, cfg) == round_to_tenth(float(x @ params.slope_coefs))

    def test_beta_of_x_dimension(self):
        cfg = MRConfig(K=5, n_valid=5, n=10)
        with pytest.raises(ConfigError):
            beta_of_x(np.zeros(4), cfg)


class TestMR:
    def test_deterministic(self):
        cfg = MRConfig(K=10, n_valid=6, n=400, param_seed=2, noise_seed=3)
        a, _ = generate_mr(cfg)
        b, _ = generate_mr(cfg)
        assert np.array_equal(a.y, b.y)
        assert np.array_equal(a.z, b.z)

    def test_all_valid_kills_direct_effects(self):
        cfg = MRConfig(K=10, n_valid=10, n=400, param_seed=2, noise_seed=3)
        _, truth = generate_mr(cfg)
        assert np.all(truth.params.direct_effects == 0.0)

    def test_unit_variances(self):
        cfg = MRConfig(K=20, n_valid=10, rho=0.5, n=100_000, param_seed=0, noise_seed=1)
        ds, _ = generate_mr(cfg)
        assert 0.98 <= ds.t.var() <= 1.02
        assert 0.98 <= ds.y.var() <= 1.02

    def test_instrument_variance_share(self):
        cfg = MRConfig(K=20, n_valid=10, rho=0.5, n=100_000, param_seed=0, noise_seed=1)
        ds, truth = generate_mr(cfg)
        share = (ds.z @ truth.params.inst_effects).var()
        assert abs(share / 0.1 - 1.0) < 0.1

    def test_instrument_means(self):
        cfg = MRConfig(K=20, n_valid=10, n=100_000, param_seed=0, noise_seed=1)
        ds, truth = generate_mr(cfg)
        p = truth.params.p_freq
        se = np.sqrt(2.0 * p * (1.0 - p) / cfg.n)
        assert np.all(np.abs(ds.z.mean(axis=0) - 2.0 * p) <= 3.0 * se)

    def test_slope_values_on_tenth_grid(self):
        cfg = MRConfig(K=10, n_valid=5, n=20_000, param_seed=0, noise_seed=1)
        ds, truth = generate_mr(cfg)
        beta = truth.slope(ds.x)
        assert np.max(np.abs(beta * 10 - np.round(beta * 10))) < 1e-9
        # the slope coefficient draw bounds |beta| by 1.5 * 0.5; most mass is small
        assert np.max(np.abs(beta)) <= 0.8
        assert np.mean(np.abs(beta) <= 0.3) > 0.8

    def test_zero_noise_matches_response(self):
        cfg = MRConfig(K=8, n_valid=4, n=300, param_seed=1, noise_seed=2)
        ds, truth = generate_mr(cfg, zero_noise=True)
        assert np.array_equal(ds.y, truth.response(ds.t, ds.x, ds.z))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            MRConfig(K=10, n_valid=11)
        with pytest.raises(ConfigError):
            MRConfig(K=10, n_valid=5, rho=-0.1)


class TestTruthDocs:
    def test_demand_round_trip(self):
        cfg = demand_config(k=6, n_invalid=2, gamma=0.7, n=50, param_seed=1, noise_seed=2)
        ds, truth = generate_demand(cfg)
        clone = truth_from_doc(json.loads(json.dumps(truth.to_doc())))
        assert np.array_equal(clone.structural(ds.t, ds.x), truth.structural(ds.t, ds.x))
        assert np.array_equal(clone.slope(ds.x), truth.slope(ds.x))

    def test_mr_round_trip(self):
        cfg = MRConfig(K=6, n_valid=3, n=50, param_seed=1, noise_seed=2)
        ds, truth = generate_mr(cfg)
        clone = truth_from_doc(json.loads(json.dumps(truth.to_doc())))
        assert np.array_equal(clone.response(ds.t, ds.x, ds.z), truth.response(ds.t, ds.x, ds.z))
