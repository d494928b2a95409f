import numpy as np
import pytest
from helpers import (finite_difference_gradient, manual_data,
                     random_tiny_instance, relative_errors)

from occudet.errors import DimensionMismatch, DomainError
from occudet.model_core import (OccupancyPosterior,
                                ParameterLayout, ParameterSet,
                                detection_prob,
                                grad_log_posterior_unconstrained,
                                log_likelihood, log_likelihood_blocks,
                                log_posterior_unconstrained, log_prior,
                                occupancy_prob, read_parameter_csv,
                                write_parameter_csv)
from occudet.simulator import oracle_log_likelihood, sample_params

LOG2PI = np.log(2 * np.pi)


def single_block_params(**kw):
    base = dict(beta_env=np.zeros((1, 1)), gamma=np.zeros(1),
                beta_obs=np.zeros((1, 1)), mu=np.zeros(1), sigma=np.ones(1))
    base.update(kw)
    return ParameterSet(**base)


def tiny_data(site_of_checklist, detections, d_env=0, d_obs=1):
    k = len(site_of_checklist)
    n = max(site_of_checklist) + 1
    env = np.zeros((n, d_env)) if d_env else np.empty((n, 0))
    obs = np.ones((k, d_obs))
    return manual_data(env, obs, site_of_checklist, detections)


class TestOccupancyProb:
    def test_all_zero_gives_half(self):
        params = ParameterSet(beta_env=np.zeros((2, 3)), gamma=np.zeros(2),
                              beta_obs=np.zeros((2, 1)), mu=np.zeros(1),
                              sigma=np.ones(1))
        psi = occupancy_prob(params, np.random.default_rng(0).normal(size=(5, 3)))
        np.testing.assert_allclose(psi, 0.5, atol=1e-15)

    def test_group_intercept_arithmetic(self):
        # inverse-logit of the group detectability intercept and +/- 2 sd
        params = ParameterSet(beta_env=np.empty((3, 0)),
                              gamma=np.array([-1.83, -1.83 - 2 * 0.86,
                                              -1.83 + 2 * 0.86]),
                              beta_obs=np.zeros((3, 1)), mu=np.zeros(1),
                              sigma=np.ones(1))
        psi = occupancy_prob(params, np.empty((1, 0)))
        assert abs(psi[0, 0] - 0.138) <= 0.001
        assert abs(psi[0, 1] - 0.028) <= 0.001
        assert abs(psi[0, 2] - 0.473) <= 0.001

    def test_dimension_mismatch(self):
        params = single_block_params()
        with pytest.raises(DimensionMismatch):
            occupancy_prob(params, np.zeros((4, 3)))

    def test_detection_prob_shape(self):
        params = single_block_params()
        p = detection_prob(params, np.ones((7, 1)))
        assert p.shape == (7, 1)
        np.testing.assert_allclose(p, 0.5)


class TestLogLikelihood:
    def test_one_visit_no_detection(self):
        # (1 - psi) + psi (1 - p) = 0.75 at psi = p = 0.5
        data = tiny_data([0], [[]])
        value = log_likelihood(single_block_params(beta_env=np.empty((1, 0))), data)
        assert abs(value - np.log(0.75)) < 1e-12

    def test_one_visit_detected(self):
        data = tiny_data([0], [[0]])
        value = log_likelihood(single_block_params(beta_env=np.empty((1, 0))), data)
        assert abs(value - np.log(0.25)) < 1e-12

    def test_two_visits_one_detection(self):
        data = tiny_data([0, 0], [[0]])
        value = log_likelihood(single_block_params(beta_env=np.empty((1, 0))), data)
        assert abs(value - np.log(0.125)) < 1e-12

    def test_matches_oracle_on_random_tiny_instances(self):
        for seed in range(25):
            params, data = random_tiny_instance(seed)
            assert abs(log_likelihood(params, data)
                       - oracle_log_likelihood(params, data)) < 1e-10

    def test_blocks_sum_to_total(self):
        params, data = random_tiny_instance(123)
        blocks = log_likelihood_blocks(params, data)
        assert abs(blocks.sum() - log_likelihood(params, data)) < 1e-12

    def test_checklist_permutation_invariance(self):
        params, data = random_tiny_instance(7)
        rng = np.random.default_rng(0)
        # permute checklists within each site
        k = data.n_checklists
        perm = np.arange(k)
        for i in range(data.n_sites):
            rows = np.flatnonzero(data.site_of_checklist == i)
            perm[rows] = rng.permutation(rows)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(k)
        permuted = manual_data(
            data.env_design, data.obs_design[perm],
            data.site_of_checklist[perm],
            [sorted(inv[d]) for d in data.store.detections])
        assert abs(log_likelihood(params, permuted)
                   - log_likelihood(params, data)) < 1e-12

    def test_no_detection_monotone_in_psi(self):
        # single site, no detection, p > 0: larger psi must lower the value
        data = tiny_data([0, 0], [[]])
        values = []
        for g in np.linspace(-2, 2, 9):
            params = single_block_params(beta_env=np.empty((1, 0)),
                                         gamma=np.array([g]))
            values.append(log_likelihood(params, data))
        assert np.all(np.diff(values) < 0)

    def test_detected_site_equals_forced_presence(self):
        # with a detection the contribution is the presence branch exactly
        params, data = random_tiny_instance(31)
        blocks = log_likelihood_blocks(params, data)
        p = detection_prob(params, data.obs_design)
        psi = occupancy_prob(params, data.env_design)
        s = data.store.dense_matrix()
        for i in range(data.n_sites):
            rows = np.flatnonzero(data.site_of_checklist == i)
            for j in range(data.n_species):
                if s[rows, j].sum() == 0:
                    continue
                forced = np.log(psi[i, j]) + np.sum(
                    s[rows, j] * np.log(p[rows, j])
                    + (1 - s[rows, j]) * np.log(1 - p[rows, j]))
                assert abs(blocks[i, j] - forced) < 1e-10

    def test_sites_without_checklists_contribute_zero(self):
        params = single_block_params(beta_env=np.empty((2, 0)),
                                     gamma=np.array([0.3, -0.7]),
                                     beta_obs=np.full((2, 1), 0.2),
                                     mu=np.zeros(1), sigma=np.ones(1))
        data = manual_data(np.empty((3, 0)), np.ones((2, 1)), [0, 0],
                           [[0], []])
        blocks = log_likelihood_blocks(params, data)
        np.testing.assert_allclose(blocks[1:], 0.0, atol=1e-12)

    def test_finite_for_extreme_parameters(self):
        params, data = random_tiny_instance(55)
        params.beta_env[:] = 50.0
        params.gamma[:] = -120.0
        params.beta_obs[:] = 80.0
        assert np.isfinite(log_likelihood(params, data))

    def test_species_locality(self):
        # species j's likelihood gradient ignores other species' records
        seed = 77
        params, data = random_tiny_instance(seed, max_species=3)
        while data.n_species < 2:
            seed += 1
            params, data = random_tiny_instance(seed, max_species=3)
        post = OccupancyPosterior(data)
        theta = post.layout.pack(params)
        _, g1 = post.value_and_grad(theta[None])
        detections = [d.copy() for d in data.store.detections]
        detections[1] = np.empty(0, dtype=np.int64)  # erase species 1's records
        data2 = manual_data(data.env_design, data.obs_design,
                            data.site_of_checklist, detections,
                            data.store.species_names)
        post2 = OccupancyPosterior(data2)
        _, g2 = post2.value_and_grad(theta[None])
        sl = post.layout.slices()
        be1 = g1[0, sl["beta_env"]].reshape(data.n_species, -1)
        be2 = g2[0, sl["beta_env"]].reshape(data.n_species, -1)
        np.testing.assert_allclose(be1[0], be2[0], atol=1e-10)


class TestLogPrior:
    def test_closed_form_at_zero(self):
        expected = (-0.5 * LOG2PI) + (-np.log(10) - 0.5 * LOG2PI) \
            + (-0.5 * LOG2PI) + (-0.5 * LOG2PI) \
            + (np.log(2) - 0.5 * LOG2PI - 0.5)
        assert abs(log_prior(single_block_params()) - expected) < 1e-12

    def test_gamma_contribution(self):
        base = log_prior(single_block_params())
        shifted = log_prior(single_block_params(gamma=np.array([10.0])))
        assert abs((shifted - base) - (-0.5)) < 1e-12  # -0.5 (10/10)^2

    def test_sigma_locality(self):
        rng = np.random.default_rng(2)
        beta_obs = rng.normal(size=(3, 2))
        p1 = ParameterSet(beta_env=rng.normal(size=(3, 2)), gamma=rng.normal(size=3),
                          beta_obs=beta_obs, mu=np.array([0.1, -0.2]),
                          sigma=np.array([0.7, 1.3]))
        p2 = ParameterSet(beta_env=p1.beta_env, gamma=p1.gamma,
                          beta_obs=beta_obs, mu=p1.mu,
                          sigma=np.array([1.4, 1.3]))
        delta = log_prior(p2) - log_prior(p1)
        # same delta when unrelated blocks change
        p3 = ParameterSet(beta_env=rng.normal(size=(3, 2)),
                          gamma=rng.normal(size=3), beta_obs=beta_obs,
                          mu=p1.mu, sigma=p1.sigma)
        p4 = ParameterSet(beta_env=p3.beta_env, gamma=p3.gamma,
                          beta_obs=beta_obs, mu=p1.mu, sigma=p2.sigma)
        assert abs((log_prior(p4) - log_prior(p3)) - delta) < 1e-12

    def test_domain_error(self):
        with pytest.raises(DomainError):
            log_prior(single_block_params(sigma=np.array([-1.0])))


class TestUnconstrainedPosterior:
    def test_zeta_zero_matches_prior_plus_likelihood(self):
        params, data = random_tiny_instance(3)
        params.sigma[:] = 1.0
        layout = ParameterLayout(params.n_species, params.d_env, params.d_obs)
        theta = layout.pack(params)
        lp = log_posterior_unconstrained(theta, data, layout)
        assert abs(lp - (log_prior(params) + log_likelihood(params, data))) < 1e-10

    def test_zeta_shift_with_centered_beta_obs(self):
        # likelihood ignores sigma, so the shift is a pure prior/Jacobian
        # delta; with beta_obs at its column mean the r-coupling vanishes
        params, data = random_tiny_instance(9, d_obs=2)
        params.beta_obs[:] = params.mu  # r = 0
        layout = ParameterLayout(params.n_species, params.d_env, params.d_obs)
        theta = layout.pack(params)
        sl = layout.slices()
        shifted = theta.copy()
        shifted[sl["log_sigma"]] += np.log(2.0)
        delta = (log_posterior_unconstrained(shifted, data, layout)
                 - log_posterior_unconstrained(theta, data, layout))
        j = params.n_species
        zeta = np.log(params.sigma)
        pure = np.sum(-j * np.log(2.0)
                      - 0.5 * (np.exp(2 * (zeta + np.log(2))) - np.exp(2 * zeta))
                      + np.log(2.0))
        assert abs(delta - pure) < 1e-10

    def test_gradient_matches_finite_differences(self):
        params, data = random_tiny_instance(21)
        post = OccupancyPosterior(data)
        rng = np.random.default_rng(0)
        for _ in range(3):
            theta = rng.normal(size=post.dim) * 0.7
            grad = grad_log_posterior_unconstrained(theta, data, post.layout)
            fd = finite_difference_gradient(
                lambda t: log_posterior_unconstrained(t, data, post.layout),
                theta, h=1e-5)
            assert relative_errors(grad, fd).max() < 1e-6

    def test_zero_data_gradient_is_prior_gradient(self):
        layout = ParameterLayout(2, 1, 1)
        data = manual_data(np.ones((3, 1)), np.empty((0, 1)),
                           np.empty(0, dtype=np.int64), [[], []])
        rng = np.random.default_rng(4)
        theta = rng.normal(size=layout.size) * 0.5
        be, ga, bo, mu, ze = layout.split(theta[None])
        e2 = np.exp(-2 * ze)
        r = bo - mu[:, None, :]
        expected = layout.join(
            -be, -ga / 100.0, -r * e2[:, None, :],
            e2 * r.sum(axis=1) - mu,
            e2 * (r ** 2).sum(axis=1) - 2 - np.exp(2 * ze) + 1.0)[0]
        grad = grad_log_posterior_unconstrained(theta, data, layout)
        np.testing.assert_allclose(grad, expected, atol=1e-9)

    def test_hvp_symmetry_and_fd(self):
        params, data = random_tiny_instance(33)
        post = OccupancyPosterior(data)
        rng = np.random.default_rng(5)
        theta = rng.normal(size=post.dim) * 0.5
        hvp = post.hvp_operator(theta[None])
        u = rng.normal(size=post.dim)
        v = rng.normal(size=post.dim)
        hu = hvp(u[None])[0]
        hv = hvp(v[None])[0]
        assert abs(v @ hu - u @ hv) < 1e-8 * max(1.0, abs(v @ hu))
        h = 1e-6
        fd = (grad_log_posterior_unconstrained(theta + h * u, data, post.layout)
              - grad_log_posterior_unconstrained(theta - h * u, data, post.layout)) / (2 * h)
        assert relative_errors(hu, fd, small=1e-6).max() < 1e-5


class TestSiteSpeciesProbs:
    def test_values_strictly_inside_unit_interval(self):
        from occudet.model_core import site_species_probs
        params, data = random_tiny_instance(91)
        probs = site_species_probs(params, data)
        assert probs.psi.shape == (data.n_sites, data.n_species)
        assert probs.p.shape == (data.n_checklists, data.n_species)
        assert np.all((probs.psi > 0) & (probs.psi < 1))
        assert np.all((probs.p > 0) & (probs.p < 1))

    def test_everything_is_float64(self):
        params, data = random_tiny_instance(92)
        post = OccupancyPosterior(data)
        theta = np.zeros(post.dim, dtype=np.float64)
        val, grad = post.value_and_grad(theta[None])
        assert val.dtype == np.float64
        assert grad.dtype == np.float64
        assert data.env_design.dtype == np.float64
        assert data.obs_design.dtype == np.float64


class TestLayoutAndSerialization:
    def test_pack_unpack_bijection(self):
        params = sample_params((3, 2, 2), seed=8)
        layout = ParameterLayout(3, 2, 2)
        back = layout.unpack(layout.pack(params))
        np.testing.assert_allclose(back.beta_env, params.beta_env, atol=1e-15)
        np.testing.assert_allclose(back.sigma, params.sigma, rtol=1e-15)

    def test_layout_size(self):
        layout = ParameterLayout(4, 3, 2)
        assert layout.size == 4 * 3 + 4 + 4 * 2 + 2 + 2

    def test_csv_roundtrip(self, tmp_path):
        params = sample_params((2, 2, 3), seed=10)
        layout = ParameterLayout(2, 2, 3, ("a b", "c"), ("e1", "e2"),
                                 ("o1", "o2", "o3"))
        path = tmp_path / "params.csv"
        write_parameter_csv(params, path, layout)
        back, back_layout = read_parameter_csv(path)
        np.testing.assert_allclose(back.beta_obs, params.beta_obs, rtol=1e-15)
        np.testing.assert_allclose(back.sigma, params.sigma, rtol=1e-15)
        assert back_layout.species_names == layout.species_names

    def test_dimension_checks(self):
        with pytest.raises(DimensionMismatch):
            ParameterSet(beta_env=np.zeros((2, 1)), gamma=np.zeros(3),
                         beta_obs=np.zeros((2, 1)), mu=np.zeros(1),
                         sigma=np.ones(1))
