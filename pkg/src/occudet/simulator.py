"""Synthetic data generation from the generative model, plus oracles.

The generator draws parameters from the model's priors (with one
documented exception: species intercepts come from N(0, 2^2) rather than
the diffuse N(0, 10^2) fitting prior, because intercepts at +/-20 logits
produce all-present or all-absent species that are useless for testing),
simulates latent presence and per-visit detections, and can emit the same
CSV schema the loader consumes.

``oracle_log_likelihood`` evaluates the observed-data likelihood by plain
linear-space products on tiny instances; it is the reference the fast
log-scale implementation is tested against.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .data_store import ChecklistTable, DetectionStore, SiteTable
from .model_core import (OccupancyData, ParameterLayout, ParameterSet,
                         write_parameter_csv)

__all__ = [
    "CovariateLaw",
    "SimulatedDataset",
    "sample_params",
    "simulate_dataset",
    "oracle_log_likelihood",
]


@dataclass(frozen=True)
class CovariateLaw:
    """How covariates are drawn.

    Environmental covariates are iid standard normal except for
    ``env_indicators`` trailing 0/1 columns; detection covariates are iid
    standard normal with, by default, a leading constant intercept column
    (the intercept is one of the hierarchically pooled detection
    coefficients).
    """

    obs_intercept: bool = True
    env_indicators: int = 0


def sample_params(dims: tuple[int, int, int], seed: int = 0,
                  hyper: tuple[np.ndarray, np.ndarray] | None = None,
                  gamma_sd: float = 2.0) -> ParameterSet:
    """Draw a ParameterSet from the priors (or fixed hyperparameters).

    dims = (n_species, d_env, d_obs).  When ``hyper`` is given it fixes
    (mu, sigma) instead of drawing them; sigma = 0 is allowed there and
    collapses every species onto the group mean.
    """
    j, d_env, d_obs = dims
    rng = np.random.default_rng(seed)
    beta_env = rng.standard_normal((j, d_env))
    gamma = gamma_sd * rng.standard_normal(j)
    if hyper is not None:
        mu = np.asarray(hyper[0], dtype=float)
        sigma = np.asarray(hyper[1], dtype=float)
        if mu.shape != (d_obs,) or sigma.shape != (d_obs,):
            raise ValueError("hyper (mu, sigma) must have length d_obs")
    else:
        mu = rng.standard_normal(d_obs)
        sigma = np.abs(rng.standard_normal(d_obs))
    beta_obs = mu + sigma * rng.standard_normal((j, d_obs))
    return ParameterSet(beta_env=beta_env, gamma=gamma, beta_obs=beta_obs,
                        mu=mu, sigma=np.maximum(sigma, 1e-12))


def _draw_visits(n_sites: int, mean_visits: float, skew: float,
                 rng: np.random.Generator) -> np.ndarray:
    """Visit counts per site, >= 1.

    With skew = 0 every site draws 1 + Poisson(mean - 1).  With skew > 0,
    a site is heavy-tailed with probability ``skew`` and then draws from a
    power law with exponent 2 capped at 500 visits; the rest get a single
    visit.  This mimics checklist data where most sites are visited once
    but a few are visited hundreds of times.
    """
    if skew <= 0.0:
        return 1 + rng.poisson(max(mean_visits - 1.0, 0.0), size=n_sites)
    visits = np.ones(n_sites, dtype=np.int64)
    tail = rng.uniform(size=n_sites) < skew
    n_tail = int(tail.sum())
    if n_tail:
        visits[tail] = np.minimum(rng.zipf(2.0, size=n_tail), 500)
    return visits


@dataclass
class SimulatedDataset:
    """A complete synthetic dataset with its generating truth."""

    params: ParameterSet
    site_table: SiteTable
    checklist_table: ChecklistTable
    store: DetectionStore
    env_design: np.ndarray   # (N, D_env), as used to generate
    obs_design: np.ndarray   # (K, D_obs), intercept column included
    truth_y: np.ndarray      # (N, J) latent presence
    obs_columns: list[str] = field(default_factory=list)
    env_columns: list[str] = field(default_factory=list)

    @property
    def data(self) -> OccupancyData:
        return OccupancyData(self.env_design, self.obs_design, self.store)

    @property
    def layout(self) -> ParameterLayout:
        return ParameterLayout(
            self.store.n_species, self.env_design.shape[1],
            self.obs_design.shape[1],
            species_names=tuple(self.store.species_names),
            env_columns=tuple(self.env_columns),
            obs_columns=tuple(self.obs_columns))

    def write_csv(self, outdir) -> None:
        """Emit sites/checklists/detections/species plus truth files."""
        os.makedirs(outdir, exist_ok=True)
        n, k = self.site_table.n_sites, self.checklist_table.n_checklists
        with open(os.path.join(outdir, "sites.csv"), "w", encoding="utf-8") as fh:
            fh.write("site_id," + ",".join(self.site_table.columns) + "\n")
            for i in range(n):
                vals = ",".join(f"{v:.17g}" for v in self.site_table.env_raw[i])
                fh.write(f"{self.site_table.site_ids[i]},{vals}\n")
        with open(os.path.join(outdir, "checklists.csv"), "w", encoding="utf-8") as fh:
            fh.write("checklist_id,site_id," + ",".join(self.checklist_table.columns) + "\n")
            for i in range(k):
                sid = self.site_table.site_ids[self.checklist_table.site_index[i]]
                vals = ",".join(f"{v:.17g}" for v in self.checklist_table.obs_raw[i])
                fh.write(f"{self.checklist_table.checklist_ids[i]},{sid},{vals}\n")
        with open(os.path.join(outdir, "detections.csv"), "w", encoding="utf-8") as fh:
            fh.write("checklist_id,species,detected\n")
            for j, name in enumerate(self.store.species_names):
                for idx in self.store.detections[j]:
                    fh.write(f"{self.checklist_table.checklist_ids[idx]},{name},1\n")
        with open(os.path.join(outdir, "species.csv"), "w", encoding="utf-8") as fh:
            fh.write("species\n")
            for name in self.store.species_names:
                fh.write(name + "\n")
        with open(os.path.join(outdir, "truth_y.csv"), "w", encoding="utf-8") as fh:
            fh.write("site_id,species,y\n")
            for i in range(n):
                for j, name in enumerate(self.store.species_names):
                    fh.write(f"{self.site_table.site_ids[i]},{name},{int(self.truth_y[i, j])}\n")
        write_parameter_csv(self.params, os.path.join(outdir, "truth_params.csv"),
                            self.layout)


def simulate_dataset(params: ParameterSet, n_sites: int,
                     visit_law: tuple[float, float] = (3.0, 0.0),
                     covariate_law: CovariateLaw | None = None,
                     seed: int = 0) -> SimulatedDataset:
    """Simulate sites, visits, latent presence, and detections.

    Latent presence y ~ Bernoulli is drawn per (site, species) from the
    occupancy probabilities, then each visit records the species with its
    detection probability when present and never otherwise.  The true y
    is returned alongside for evaluation.
    """
    law = covariate_law or CovariateLaw()
    rng = np.random.default_rng(seed)
    j, d_env, d_obs = params.n_species, params.d_env, params.d_obs

    env = rng.standard_normal((n_sites, d_env))
    if law.env_indicators:
        if law.env_indicators > d_env:
            raise ValueError("more indicator columns than env columns")
        env[:, d_env - law.env_indicators:] = rng.integers(
            0, 2, size=(n_sites, law.env_indicators)).astype(float)

    mean_visits, skew = visit_law
    visits = _draw_visits(n_sites, mean_visits, skew, rng)
    site_of_checklist = np.repeat(np.arange(n_sites, dtype=np.int64), visits)
    k = int(visits.sum())

    if law.obs_intercept:
        if d_obs < 1:
            raise ValueError("obs intercept requires d_obs >= 1")
        obs_raw = rng.standard_normal((k, d_obs - 1))
        obs_design = np.column_stack([np.ones(k), obs_raw]) if d_obs > 1 \
            else np.ones((k, 1))
        obs_columns = ["(intercept)"] + [f"obs{d}" for d in range(1, d_obs)]
        raw_columns = [f"obs{d}" for d in range(1, d_obs)]
    else:
        obs_raw = rng.standard_normal((k, d_obs))
        obs_design = obs_raw
        obs_columns = [f"obs{d}" for d in range(d_obs)]
        raw_columns = list(obs_columns)

    psi = expit(env @ params.beta_env.T + params.gamma)
    y = (rng.uniform(size=(n_sites, j)) < psi).astype(np.int8)
    p = expit(obs_design @ params.beta_obs.T)
    s = (rng.uniform(size=(k, j)) < p) & (y[site_of_checklist] == 1)

    detections = [np.flatnonzero(s[:, jj]).astype(np.int64) for jj in range(j)]
    species_names = [f"sp{jj:03d}" for jj in range(j)]
    site_ids = [f"site{i:05d}" for i in range(n_sites)]
    checklist_ids = [f"cl{i:06d}" for i in range(k)]
    env_columns = [f"env{d}" for d in range(d_env)]

    store = DetectionStore(species_names=species_names, detections=detections,
                           site_of_checklist=site_of_checklist)
    site_table = SiteTable(site_ids=site_ids, columns=env_columns, env_raw=env)
    checklist_table = ChecklistTable(
        checklist_ids=checklist_ids, site_index=site_of_checklist,
        columns=raw_columns,
        obs_raw=obs_raw if law.obs_intercept else obs_design)
    return SimulatedDataset(
        params=params, site_table=site_table, checklist_table=checklist_table,
        store=store, env_design=env, obs_design=obs_design,
        truth_y=y.astype(float), obs_columns=obs_columns,
        env_columns=env_columns)


def oracle_log_likelihood(params: ParameterSet, data: OccupancyData) -> float:
    """Brute-force observed-data log likelihood on a tiny instance.

    Sums the two presence branches per (site, species) with linear-space
    products, exactly as the likelihood is defined, so it is valid only
    where those products stay well scaled (N <= 12, J <= 4, visits per
    site <= 6).
    """
    n, j = data.n_sites, data.n_species
    counts = np.bincount(data.site_of_checklist, minlength=n)
    if n > 12 or j > 4 or (counts.max(initial=0) > 6):
        raise ValueError("oracle restricted to N<=12, J<=4, K_i<=6")
    psi = expit(data.env_design @ params.beta_env.T + params.gamma)
    p = expit(data.obs_design @ params.beta_obs.T)
    s = data.store.dense_matrix()
    total = 0.0
    for i in range(n):
        rows = np.flatnonzero(data.site_of_checklist == i)
        for jj in range(j):
            sv = s[rows, jj]
            pv = p[rows, jj]
            absent = (1.0 - psi[i, jj]) * np.prod(1.0 - sv)
            present = psi[i, jj] * np.prod(pv ** sv * (1.0 - pv) ** (1.0 - sv))
            total += np.log(absent + present)
    return float(total)
