import numpy as np
import pytest
from helpers import (finite_difference_gradient, manual_data,
                     relative_errors)
from scipy.special import expit

from occudet.errors import NoDetections
from occudet.mle_engine import (fit_all_mle, fit_species_mle, read_mle_csv,
                                species_neg_loglik, write_mle_csv)
from occudet.model_core import OccupancyPosterior, ParameterSet, log_likelihood
from occudet.simulator import simulate_dataset
from occudet.vi_engine import VIConfig, fit_vi


def intercept_only_data(detections):
    """One site, visits = len pattern, no env covariates, obs intercept."""
    k = len(detections)
    det_idx = [i for i, s in enumerate(detections) if s]
    return manual_data(np.empty((1, 0)), np.ones((k, 1)),
                       [0] * k, [det_idx])


class TestSingleSpecies:
    def test_grid_oracle_two_visits(self):
        # one site visited twice, detections (1, 0): the likelihood is
        # psi * p * (1 - p); a grid over (psi, p) is the reference
        data = intercept_only_data([1, 0])
        fit = fit_species_mle(data, 0)
        grid = np.linspace(5e-4, 1 - 5e-4, 2001)
        psi_g, p_g = np.meshgrid(grid, grid, indexing="ij")
        nll = -np.log(psi_g * p_g * (1 - p_g))
        best = nll.min()
        i, j = np.unravel_index(nll.argmin(), nll.shape)
        p_hat = expit(fit.beta_obs[0])
        assert fit.final_neg_loglik <= best + 1e-4
        assert abs(p_hat - grid[j]) < 1e-3
        assert abs(p_hat - 0.5) < 1e-4

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        sim = simulate_dataset(
            ParameterSet(beta_env=[[0.8, -0.5]], gamma=[0.2],
                         beta_obs=[[0.4, 0.6]], mu=np.zeros(2),
                         sigma=np.ones(2)),
            n_sites=40, visit_law=(3.0, 0.0), seed=1)
        from occudet.mle_engine import _species_data
        data_j = _species_data(sim.data, 0)
        x = rng.normal(size=sim.data.d_env + 1 + sim.data.d_obs) * 0.5
        _, grad = species_neg_loglik(data_j, x, ridge=0.3)
        fd = finite_difference_gradient(
            lambda t: species_neg_loglik(data_j, t, ridge=0.3)[0], x)
        assert relative_errors(grad, fd).max() < 1e-6

    def test_recovery_within_asymptotic_se(self):
        # strong-signal simulation: >= 90% of coordinates within 3 SEs
        truth = ParameterSet(beta_env=[[0.9, -0.6]], gamma=[0.4],
                             beta_obs=[[0.5, 0.7]], mu=np.zeros(2),
                             sigma=np.ones(2))
        hits = total = 0
        for rep in range(20):
            sim = simulate_dataset(truth, n_sites=500, visit_law=(3.0, 0.0),
                                   seed=100 + rep)
            fit = fit_species_mle(sim.data, 0)
            x_hat = np.concatenate([fit.beta_env, [fit.gamma], fit.beta_obs])
            from occudet.mle_engine import _species_data
            data_j = _species_data(sim.data, 0)
            hess = np.zeros((5, 5))
            for i in range(5):
                e = np.zeros(5)
                e[i] = 1e-5
                gp = species_neg_loglik(data_j, x_hat + e)[1]
                gm = species_neg_loglik(data_j, x_hat - e)[1]
                hess[:, i] = (gp - gm) / 2e-5
            se = np.sqrt(np.diag(np.linalg.inv(0.5 * (hess + hess.T))))
            x_true = np.array([0.9, -0.6, 0.4, 0.5, 0.7])
            hits += int(np.sum(np.abs(x_hat - x_true) <= 3 * se))
            total += 5
        assert hits / total >= 0.9

    def test_separation_flagged(self):
        # detected sites all have x = +1, undetected all x = -1
        env = np.array([[1.0]] * 5 + [[-1.0]] * 5)
        obs = np.ones((10, 1))
        soc = list(range(10))
        data = manual_data(env, obs, soc, [[0, 1, 2, 3, 4]])
        fit = fit_species_mle(data, 0)
        coef_mag = max(abs(fit.beta_env[0]), abs(fit.gamma),
                       abs(fit.beta_obs[0]))
        assert (not fit.converged) or coef_mag > 10.0

    def test_no_detections_raises(self):
        data = intercept_only_data([0, 0])
        with pytest.raises(NoDetections):
            fit_species_mle(data, 0)


class TestFitAll:
    def _data(self):
        params = ParameterSet(beta_env=[[0.5], [0.1], [-0.4]],
                              gamma=[0.5, 0.2, -0.2],
                              beta_obs=[[0.3], [0.1], [0.5]],
                              mu=np.zeros(1), sigma=np.ones(1))
        sim = simulate_dataset(params, n_sites=60, visit_law=(2.0, 0.0), seed=3)
        # erase species 1's detections entirely
        detections = [d.copy() for d in sim.store.detections]
        detections[1] = np.empty(0, dtype=np.int64)
        return manual_data(sim.env_design, sim.obs_design,
                           sim.store.site_of_checklist, detections,
                           sim.store.species_names)

    def test_skip_and_fit_counts(self):
        report = fit_all_mle(self._data())
        assert len(report.fits) == 2
        assert report.skipped == ["sp001"]

    def test_serial_parallel_identical(self):
        data = self._data()
        serial = fit_all_mle(data, n_workers=1)
        parallel = fit_all_mle(data, n_workers=4)
        for a, b in zip(serial.fits, parallel.fits):
            assert a.species == b.species
            np.testing.assert_array_equal(a.beta_env, b.beta_env)
            np.testing.assert_array_equal(a.beta_obs, b.beta_obs)
            assert a.gamma == b.gamma

    def test_mle_is_per_species_training_optimum(self, small_synthetic):
        # any other parameter point, e.g. the VI posterior mean, cannot
        # beat the (unpenalized) MLE on training likelihood
        data = small_synthetic.data
        model = OccupancyPosterior(data)
        post, _ = fit_vi(model, VIConfig(m_draws=25, seed=4))
        vi_params = model.layout.unpack(post.m)
        report = fit_all_mle(data)
        for j, fit in enumerate(report.fits):
            single = ParameterSet(
                beta_env=vi_params.beta_env[j][None],
                gamma=vi_params.gamma[j][None],
                beta_obs=vi_params.beta_obs[j][None],
                mu=np.zeros(data.d_obs), sigma=np.ones(data.d_obs))
            from occudet.mle_engine import _species_data
            nll_vi = -log_likelihood(single, _species_data(data, j))
            assert nll_vi >= fit.final_neg_loglik - 1e-6


class TestSerialization:
    def test_csv_roundtrip(self):
        params = ParameterSet(beta_env=[[0.5], [0.1]], gamma=[0.3, -0.1],
                              beta_obs=[[0.2], [0.4]], mu=np.zeros(1),
                              sigma=np.ones(1))
        sim = simulate_dataset(params, n_sites=50, visit_law=(2.0, 0.0), seed=5)
        report = fit_all_mle(sim.data)
        import tempfile
        with tempfile.TemporaryDirectory() as d:
            path = f"{d}/mle.csv"
            write_mle_csv(report, path, ["env0"], ["(intercept)"])
            back = read_mle_csv(path)
        assert [f.species for f in back.fits] == [f.species for f in report.fits]
        for a, b in zip(back.fits, report.fits):
            np.testing.assert_allclose(a.beta_env, b.beta_env, rtol=1e-15)
            assert a.converged == b.converged
