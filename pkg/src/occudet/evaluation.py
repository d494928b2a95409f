"""Scoring predictions on held-out checklists and against expert rasters.

Per-checklist predictions marginalize occupancy per visit: the score for
a new checklist is the posterior expectation of psi * p, which is what a
freshly observed outcome is Bernoulli in.  AUC follows the Mann-Whitney
convention with ties counted half; log likelihoods clamp probabilities to
[1e-12, 1 - 1e-12] so overconfident fits stay finite.
"""

from __future__ import annotations

import warnings

import numpy as np
import pandas as pd
from scipy.special import expit
from scipy.stats import rankdata

from .errors import DegenerateLabels, DimensionMismatch
from .model_core import ParameterLayout, ParameterSet

__all__ = [
    "predict_checklist_prob",
    "psi_interval_maps",
    "auc",
    "mean_log_likelihood",
    "brier_vs_expert",
    "bootstrap_se",
    "eval_report",
]

PROB_CLAMP = 1e-12


def _draws_array(draws, layout: ParameterLayout | None) -> tuple[np.ndarray, ParameterLayout]:
    """Normalize posterior draws input to a (S, P) array plus layout."""
    if isinstance(draws, ParameterSet):
        if layout is None:
            layout = ParameterLayout(draws.n_species, draws.d_env, draws.d_obs)
        return layout.pack(draws)[None], layout
    arr = np.atleast_2d(np.asarray(draws, dtype=float))
    if layout is None:
        raise ValueError("a ParameterLayout is required for raw draw matrices")
    if arr.shape[1] != layout.size:
        raise DimensionMismatch(
            f"draws have {arr.shape[1]} columns, layout needs {layout.size}")
    return arr, layout


def predict_checklist_prob(draws, env_design: np.ndarray,
                           obs_design: np.ndarray, site_index: np.ndarray,
                           layout: ParameterLayout | None = None,
                           max_draws: int = 500) -> np.ndarray:
    """Monte-Carlo posterior mean of psi * p per (checklist, species).

    ``draws`` is either a (S, P) matrix of unconstrained posterior draws
    (with ``layout``) or a single ParameterSet (point prediction).  At
    most ``max_draws`` draws are used, evenly thinned.
    """
    arr, layout = _draws_array(draws, layout)
    if arr.shape[0] > max_draws:
        keep = np.linspace(0, arr.shape[0] - 1, max_draws).astype(int)
        arr = arr[keep]
    site_index = np.asarray(site_index, dtype=np.int64)
    k = obs_design.shape[0]
    acc = np.zeros((k, layout.n_species))
    for theta in arr:
        be, ga, bo, _, _ = layout.split(theta[None])
        psi = expit(env_design @ be[0].T + ga[0])
        p = expit(obs_design @ bo[0].T)
        acc += psi[site_index] * p
    return acc / arr.shape[0]


def psi_interval_maps(draws, env_design: np.ndarray,
                      layout: ParameterLayout | None = None,
                      levels: tuple[float, float] = (0.025, 0.975),
                      max_draws: int = 500) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-cell lower-quantile, mean, and upper-quantile occupancy surfaces.

    Quantiles interpolate linearly between order statistics.  A point
    posterior collapses all three surfaces onto the same map.
    """
    arr, layout = _draws_array(draws, layout)
    if arr.shape[0] > max_draws:
        keep = np.linspace(0, arr.shape[0] - 1, max_draws).astype(int)
        arr = arr[keep]
    n = env_design.shape[0]
    j = layout.n_species
    lo = np.empty((n, j))
    mean = np.empty((n, j))
    hi = np.empty((n, j))
    s = arr.shape[0]
    # species-by-species keeps the (draws, cells) slab small
    be_all, ga_all, _, _, _ = layout.split(arr)
    for jj in range(j):
        psi = expit(env_design @ be_all[:, jj, :].T + ga_all[:, jj])  # (N, S)
        mean[:, jj] = psi.mean(axis=1)
        if s == 1:
            lo[:, jj] = hi[:, jj] = psi[:, 0]
        else:
            lo[:, jj] = np.quantile(psi, levels[0], axis=1)
            hi[:, jj] = np.quantile(psi, levels[1], axis=1)
    return lo, mean, hi


def auc(scores, labels) -> float:
    """Probability a random positive outranks a random negative.

    Mann-Whitney U normalized; ties count one half.  Raises
    :class:`DegenerateLabels` without both classes present.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("AUC needs at least one positive and one negative")
    ranks = rankdata(scores)
    rank_sum = ranks[labels == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def mean_log_likelihood(probs, labels) -> float:
    """Mean log probability assigned to the observed binary outcomes."""
    probs = np.clip(np.asarray(probs, dtype=float), PROB_CLAMP, 1.0 - PROB_CLAMP)
    labels = np.asarray(labels, dtype=float)
    return float(np.mean(labels * np.log(probs) + (1.0 - labels) * np.log(1.0 - probs)))


def brier_vs_expert(psi_mean, expert) -> float:
    """Mean squared difference between predicted and expert presence."""
    psi_mean = np.asarray(psi_mean, dtype=float)
    expert = np.asarray(expert, dtype=float)
    if psi_mean.shape != expert.shape:
        raise DimensionMismatch("prediction and expert maps differ in cell count")
    if not np.all(np.isin(expert, (0.0, 1.0))):
        raise ValueError("expert map values must be 0 or 1")
    return float(np.mean((psi_mean - expert) ** 2))


def bootstrap_se(metric, scores, labels, n_boot: int = 1000, seed: int = 0) -> float:
    """Bootstrap standard error of ``metric(scores, labels)``.

    Resamples checklist indices with replacement.  Resamples on which the
    metric is undefined (degenerate labels) are skipped and counted; the
    result is NaN if none are valid, and a warning reports the skip count
    when more than half are.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    n = scores.shape[0]
    rng = np.random.default_rng(seed)
    values = []
    skipped = 0
    for _ in range(n_boot):
        idx = rng.integers(0, n, size=n)
        try:
            values.append(metric(scores[idx], labels[idx]))
        except DegenerateLabels:
            skipped += 1
    if skipped > n_boot // 2:
        warnings.warn(f"bootstrap skipped {skipped}/{n_boot} degenerate resamples",
                      stacklevel=2)
    if not values:
        return float("nan")
    arr = np.asarray(values, dtype=float)
    if len(values) == 1 or arr.min() == arr.max():
        return 0.0
    return float(np.std(arr, ddof=1))


def eval_report(probs: np.ndarray, labels: np.ndarray,
                species_names: list[str], n_boot: int = 1000,
                seed: int = 0) -> pd.DataFrame:
    """Per-species AUC / mean log likelihood with bootstrap AUC SEs.

    ``probs`` and ``labels`` are (checklists, species).  Species whose
    test labels are all one class get NaN AUC.  A final ``ALL`` row holds
    the dataset-level means (ignoring NaNs).
    """
    probs = np.atleast_2d(probs)
    labels = np.atleast_2d(labels)
    if probs.shape != labels.shape or probs.shape[1] != len(species_names):
        raise DimensionMismatch("probs, labels, and species names disagree")
    rows = []
    for j, name in enumerate(species_names):
        lab = labels[:, j]
        sc = probs[:, j]
        n_pos = int((lab == 1).sum())
        try:
            a = auc(sc, lab)
            se = bootstrap_se(auc, sc, lab, n_boot=n_boot, seed=seed + j)
        except DegenerateLabels:
            a, se = float("nan"), float("nan")
        rows.append({"species": name, "n_test_positives": n_pos,
                     "auc": a, "auc_se": se,
                     "mean_log_lik": mean_log_likelihood(sc, lab)})
    df = pd.DataFrame(rows)
    overall = {
        "species": "ALL",
        "n_test_positives": int(df.n_test_positives.sum()),
        "auc": float(np.nanmean(df.auc)) if not df.auc.isna().all() else float("nan"),
        "auc_se": float("nan"),
        "mean_log_lik": float(df.mean_log_lik.mean()),
    }
    return pd.concat([df, pd.DataFrame([overall])], ignore_index=True)
