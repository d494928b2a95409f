import numpy as np
import pytest

from occudet.data_store import load_dataset
from occudet.model_core import ParameterSet, log_likelihood
from occudet.simulator import (oracle_log_likelihood, sample_params,
                               simulate_dataset)


class TestSampleParams:
    def test_seed_reproducible(self):
        a = sample_params((3, 2, 2), seed=4)
        b = sample_params((3, 2, 2), seed=4)
        np.testing.assert_array_equal(a.beta_obs, b.beta_obs)
        np.testing.assert_array_equal(a.gamma, b.gamma)

    def test_zero_sigma_collapses_to_group_mean(self):
        mu = np.array([0.5, -1.0])
        params = sample_params((6, 1, 2), seed=5,
                               hyper=(mu, np.zeros(2)))
        np.testing.assert_allclose(params.beta_obs, np.tile(mu, (6, 1)),
                                   atol=1e-12)

    def test_group_mean_prior_sd_near_one(self):
        # mu entries are iid N(0,1); 10^4 of them have sd within 5% of 1
        params = sample_params((1, 1, 10_000), seed=6)
        assert abs(params.mu.std() - 1.0) < 0.05


class TestSimulateDataset:
    def test_perfect_detection_matches_presence(self):
        params = ParameterSet(beta_env=[[0.5]], gamma=[0.0],
                              beta_obs=[[700.0]], mu=np.zeros(1),
                              sigma=np.ones(1))
        sim = simulate_dataset(params, n_sites=200, visit_law=(2.0, 0.0), seed=7)
        s = sim.store.dense_matrix()[:, 0]
        y_rows = sim.truth_y[sim.data.site_of_checklist, 0]
        np.testing.assert_array_equal(s, y_rows)

    def test_zero_occupancy_zero_detections(self):
        params = ParameterSet(beta_env=[[0.0]], gamma=[-700.0],
                              beta_obs=[[0.0]], mu=np.zeros(1),
                              sigma=np.ones(1))
        sim = simulate_dataset(params, n_sites=100, visit_law=(3.0, 0.0), seed=8)
        assert sim.store.total_detections == 0
        assert sim.truth_y.sum() == 0

    def test_detection_frequency_matches_psi_p(self):
        # many single-visit sites at constant covariates: the per-checklist
        # detection frequency estimates psi * p
        params = ParameterSet(beta_env=np.empty((1, 0)), gamma=[0.3],
                              beta_obs=[[-0.4]], mu=np.zeros(1),
                              sigma=np.ones(1))
        n = 10_000
        sim = simulate_dataset(params, n_sites=n, visit_law=(1.0, 0.0), seed=9)
        from scipy.special import expit
        psi_p = expit(0.3) * expit(-0.4)
        freq = sim.store.total_detections / sim.data.n_checklists
        se = np.sqrt(psi_p * (1 - psi_p) / n)
        assert abs(freq - psi_p) < 3 * se

    def test_visit_skew_law(self):
        params = sample_params((1, 1, 1), seed=10)
        sim = simulate_dataset(params, n_sites=3000, visit_law=(3.0, 0.4),
                               seed=10)
        counts = np.bincount(sim.data.site_of_checklist, minlength=3000)
        assert counts.max() <= 500
        assert (counts == 1).mean() > 0.4  # non-tail sites visit once
        assert counts.max() > 20           # the tail is heavy

    def test_no_skew_mean_visits(self):
        params = sample_params((1, 1, 1), seed=11)
        sim = simulate_dataset(params, n_sites=4000, visit_law=(3.0, 0.0),
                               seed=11)
        counts = np.bincount(sim.data.site_of_checklist, minlength=4000)
        assert abs(counts.mean() - 3.0) < 0.15
        assert counts.min() >= 1

    def test_csv_roundtrip_through_loader(self, tmp_path):
        params = sample_params((3, 2, 2), seed=12, gamma_sd=1.0)
        sim = simulate_dataset(params, n_sites=30, visit_law=(2.0, 0.0), seed=12)
        sim.write_csv(tmp_path)
        sites, checklists, store = load_dataset(
            tmp_path / "sites.csv", tmp_path / "checklists.csv",
            tmp_path / "detections.csv", tmp_path / "species.csv")
        assert store.n_species == 3
        assert checklists.n_checklists == sim.data.n_checklists
        for a, b in zip(store.detections, sim.store.detections):
            np.testing.assert_array_equal(a, b)
        np.testing.assert_allclose(sites.env_raw, sim.env_design, rtol=1e-15)
        import pandas as pd
        truth = pd.read_csv(tmp_path / "truth_y.csv")
        assert len(truth) == 30 * 3


class TestOracle:
    def test_trivial_cases_match_fast_path(self):
        from helpers import manual_data
        params = ParameterSet(beta_env=np.empty((1, 0)), gamma=[0.0],
                              beta_obs=[[0.0]], mu=np.zeros(1),
                              sigma=np.ones(1))
        for detections, expected in [([[]], np.log(0.75)),
                                     ([[0]], np.log(0.25))]:
            data = manual_data(np.empty((1, 0)), np.ones((1, 1)), [0], detections)
            assert abs(oracle_log_likelihood(params, data) - expected) < 1e-12
            assert abs(log_likelihood(params, data) - expected) < 1e-12

    def test_detection_kills_absent_branch(self):
        # with >= 1 detection the absent branch is exactly zero, so the
        # oracle must equal the forced-presence product
        from helpers import manual_data
        params = ParameterSet(beta_env=np.empty((1, 0)), gamma=[0.7],
                              beta_obs=[[0.3]], mu=np.zeros(1),
                              sigma=np.ones(1))
        data = manual_data(np.empty((1, 0)), np.ones((3, 1)), [0, 0, 0], [[1]])
        from scipy.special import expit
        psi, p = expit(0.7), expit(0.3)
        forced = np.log(psi * (1 - p) * p * (1 - p))
        assert abs(oracle_log_likelihood(params, data) - forced) < 1e-12

    def test_rejects_large_instances(self):
        params = sample_params((1, 1, 1), seed=13)
        sim = simulate_dataset(params, n_sites=40, visit_law=(2.0, 0.0), seed=13)
        with pytest.raises(ValueError):
            oracle_log_likelihood(params, sim.data)
