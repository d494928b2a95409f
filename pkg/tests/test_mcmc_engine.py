import numpy as np
import pytest

from occudet.errors import AllDivergent, NonFiniteGradient, TooFewDraws
from occudet.mcmc_engine import (ChainResult, HMCConfig, leapfrog, sample_mcmc,
                                 summarize_chains)
from occudet.model_core import OccupancyPosterior
from occudet.targets import DiagonalGaussianDensity


class PointMassCliff:
    """Log density that is finite only at the exact start point."""

    def __init__(self, dim):
        self.dim = dim

    def value(self, thetas):
        thetas = np.atleast_2d(thetas)
        ok = np.all(np.abs(thetas) < 1e-290, axis=1)
        return np.where(ok, 0.0, -np.inf)

    def value_and_grad(self, thetas):
        thetas = np.atleast_2d(thetas)
        return self.value(thetas), np.zeros_like(thetas)

    def hvp_operator(self, thetas):
        return lambda dirs: np.zeros_like(np.atleast_2d(dirs))


class TestSampler:
    def test_seed_determinism(self):
        target = DiagonalGaussianDensity(np.zeros(3), np.ones(3))
        cfg = HMCConfig(warmup_iters=100, sample_iters=100, chains=2, seed=5)
        a = sample_mcmc(target, cfg)
        b = sample_mcmc(target, cfg)
        assert a.draws.tobytes() == b.draws.tobytes()
        assert a.step_sizes.tolist() == b.step_sizes.tolist()

    def test_chains_have_distinct_streams(self):
        target = DiagonalGaussianDensity(np.zeros(2), np.ones(2))
        cfg = HMCConfig(warmup_iters=100, sample_iters=100, chains=2, seed=5)
        res = sample_mcmc(target, cfg)
        assert not np.allclose(res.draws[0], res.draws[1])

    def test_standard_normal_moments_small(self):
        target = DiagonalGaussianDensity(np.zeros(3), np.ones(3))
        res = sample_mcmc(target, HMCConfig(warmup_iters=300, sample_iters=1000,
                                            chains=2, seed=1))
        draws = res.stacked()
        assert np.all(np.abs(draws.mean(axis=0)) < 0.08)
        assert np.all(np.abs(draws.var(axis=0) - 1.0) < 0.15)
        assert res.divergence_count == 0
        assert 0.5 < res.accept_rate <= 1.0

    def test_nonfinite_start_raises(self):
        target = DiagonalGaussianDensity(np.zeros(2), np.ones(2))
        with pytest.raises(NonFiniteGradient):
            sample_mcmc(target, HMCConfig(warmup_iters=10, sample_iters=10,
                                          chains=1, seed=0),
                        initial=np.array([np.nan, 0.0]))

    def test_all_divergent_raises(self):
        with pytest.raises(AllDivergent):
            sample_mcmc(PointMassCliff(1),
                        HMCConfig(warmup_iters=10, sample_iters=10,
                                  chains=1, seed=0),
                        initial=np.zeros(1))

    def test_occupancy_posterior_runs(self, small_synthetic):
        model = OccupancyPosterior(small_synthetic.data)
        res = sample_mcmc(model, HMCConfig(warmup_iters=200, sample_iters=200,
                                           chains=1, seed=3))
        assert res.draws.shape == (1, 200, model.dim)
        assert np.all(np.isfinite(res.draws))
        assert res.param_names[0].startswith("beta_env")

    def test_draws_csv(self, tmp_path):
        target = DiagonalGaussianDensity(np.zeros(2), np.ones(2))
        res = sample_mcmc(target, HMCConfig(warmup_iters=50, sample_iters=20,
                                            chains=2, seed=9))
        path = tmp_path / "draws.csv"
        res.to_csv(path)
        import pandas as pd
        df = pd.read_csv(path, float_precision="round_trip")
        assert list(df.columns) == ["chain", "draw", "theta0", "theta1"]
        assert len(df) == 40
        np.testing.assert_allclose(
            df[df.chain == 1][["theta0", "theta1"]].to_numpy(), res.draws[1],
            rtol=1e-15)


class TestLeapfrog:
    def test_energy_error_scales_quadratically(self):
        # halving the step size must cut the Hamiltonian error ~4x
        prec = np.array([1.0, 4.0])
        target = DiagonalGaussianDensity(np.zeros(2), 1.0 / np.sqrt(prec))

        def vg(theta):
            v, g = target.value_and_grad(theta[None])
            return float(v[0]), g[0]

        inv_mass = np.ones(2)
        theta0 = np.array([1.0, 0.5])
        r0 = np.array([0.3, -0.7])

        def energy_error(eps, steps):
            theta, r = theta0.copy(), r0.copy()
            logp, grad = vg(theta)
            h0 = -logp + 0.5 * r @ (inv_mass * r)
            for _ in range(steps):
                theta, r, logp, grad = leapfrog(theta, r, grad, eps, inv_mass, vg)
            return abs((-logp + 0.5 * r @ (inv_mass * r)) - h0)

        e1 = energy_error(0.1, 64)
        e2 = energy_error(0.05, 128)
        assert e1 / e2 >= 3.5


class TestSummarize:
    def _result(self, draws):
        return ChainResult(draws=draws, accept_rate=1.0, divergence_count=0,
                           step_size=0.5, mass_diag=np.ones(draws.shape[2]))

    def test_constant_chains_nan_with_warning(self):
        draws = np.ones((2, 40, 1))
        with pytest.warns(UserWarning, match="constant"):
            table = summarize_chains(self._result(draws))
        assert np.isnan(table.rhat.iloc[0])

    def test_iid_normal_rhat_near_one(self):
        rng = np.random.default_rng(8)
        draws = rng.standard_normal((4, 500, 2))
        table = summarize_chains(self._result(draws))
        assert np.all(table.rhat.between(0.99, 1.01))
        assert np.all(table.ess_bulk >= 0.5 * 4 * 500)

    def test_disjoint_chains_large_rhat(self):
        rng = np.random.default_rng(9)
        draws = rng.standard_normal((2, 100, 1))
        draws[1] += 10.0
        table = summarize_chains(self._result(draws))
        assert table.rhat.iloc[0] > 1.5

    def test_too_few_draws(self):
        draws = np.random.default_rng(0).standard_normal((2, 6, 1))
        with pytest.raises(TooFewDraws):
            summarize_chains(self._result(draws))

    def test_mean_sd_columns(self):
        rng = np.random.default_rng(10)
        draws = 2.0 + 0.5 * rng.standard_normal((2, 400, 1))
        table = summarize_chains(self._result(draws))
        assert abs(table["mean"].iloc[0] - 2.0) < 0.05
        assert abs(table["sd"].iloc[0] - 0.5) < 0.05
