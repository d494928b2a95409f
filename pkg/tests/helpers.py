"""Shared test utilities: finite-difference oracles and dataset builders."""

from __future__ import annotations

import numpy as np

from occudet.data_store import DetectionStore
from occudet.model_core import OccupancyData


def finite_difference_gradient(f, x, h=1e-5):
    """Central finite differences of a scalar function, coordinate-wise."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def relative_errors(approx, exact, small=1e-8):
    """Per-coordinate relative error, absolute below the `small` floor."""
    approx = np.asarray(approx, dtype=float)
    exact = np.asarray(exact, dtype=float)
    denom = np.abs(exact)
    err = np.abs(approx - exact)
    rel = np.where(denom < small, err, err / np.maximum(denom, small))
    return rel


def finite_difference_hvp(grad_fn, x, vec, h=1e-4):
    """Central finite differences of a gradient along a direction."""
    x = np.asarray(x, dtype=float)
    vec = np.asarray(vec, dtype=float)
    scale = h / max(np.linalg.norm(vec), 1e-12)
    return (grad_fn(x + scale * vec) - grad_fn(x - scale * vec)) / (2.0 * scale)


def manual_data(env_design, obs_design, site_of_checklist, detections,
                species_names=None):
    """Build OccupancyData from raw pieces (detections: list of index lists)."""
    env_design = np.atleast_2d(np.asarray(env_design, dtype=float))
    obs_design = np.atleast_2d(np.asarray(obs_design, dtype=float))
    site_of_checklist = np.asarray(site_of_checklist, dtype=np.int64)
    names = species_names or [f"sp{j}" for j in range(len(detections))]
    store = DetectionStore(
        species_names=list(names),
        detections=[np.asarray(sorted(d), dtype=np.int64) for d in detections],
        site_of_checklist=site_of_checklist)
    return OccupancyData(env_design, obs_design, store)


def random_tiny_instance(seed, max_sites=10, max_species=3, max_visits=4,
                         d_env=None, d_obs=None):
    """A random tiny dataset plus random parameters, oracle-compatible."""
    from occudet.simulator import sample_params, simulate_dataset

    rng = np.random.default_rng(seed)
    j = int(rng.integers(1, max_species + 1))
    d_env = d_env if d_env is not None else int(rng.integers(1, 3))
    d_obs = d_obs if d_obs is not None else int(rng.integers(1, 3))
    n = int(rng.integers(1, max_sites + 1))
    params = sample_params((j, d_env, d_obs), seed=seed, gamma_sd=1.5)
    mean_visits = float(rng.uniform(1.0, max_visits - 1))
    sim = simulate_dataset(params, n_sites=n, visit_law=(mean_visits, 0.0),
                           seed=seed + 1)
    counts = np.bincount(sim.data.site_of_checklist, minlength=n)
    if counts.max(initial=0) > max_visits:
        return random_tiny_instance(seed + 10_000, max_sites, max_species,
                                    max_visits, d_env, d_obs)
    return params, sim.data
