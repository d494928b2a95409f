"""Model parameters, priors, and the occupancy-marginalized likelihood.

The model: species ``j`` is present at site ``i`` with probability
``psi_ij = sigmoid(x_i . beta_env_j + gamma_j)``; if present, each visit
``k`` detects it with probability ``p_ijk = sigmoid(x_ik . beta_obs_j)``;
false positives are excluded.  Summing the latent presence out of the
complete-data likelihood gives, per (site, species),

    (1 - psi) * [no detections]  +  psi * prod_k p^s (1-p)^(1-s)

which is evaluated on the log scale.  Detection slopes get a hierarchical
Gaussian prior with column-wise means ``mu_l`` and sds ``sigma_l``
(half-normal prior on the sds); environmental slopes are standard normal
and intercepts N(0, 10^2).

Everything here is plain float64 numpy.  Gradients and Hessian-vector
products are analytic, derived from the posterior presence weight

    w_ij = P(present | detection history)

which is 1 whenever a detection occurred and
``sigmoid(L1 - L0)`` otherwise (L0/L1 the log branch terms above).  All
derivative code is cross-checked against finite differences in the test
suite.

Evaluation cost is linear in checklists plus positive records: per-site
sums use a sparse indicator matrix and detections enter through sorted
index arrays, never through a padded sites-by-max-visits layout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.special import expit

from .data_store import DetectionStore
from .errors import DimensionMismatch, DomainError, NonFiniteResult

__all__ = [
    "ParameterSet",
    "ParameterLayout",
    "OccupancyData",
    "OccupancyPosterior",
    "LogDensityModel",
    "occupancy_prob",
    "detection_prob",
    "log_likelihood",
    "log_likelihood_blocks",
    "log_prior",
    "log_posterior_unconstrained",
    "grad_log_posterior_unconstrained",
    "write_parameter_csv",
    "read_parameter_csv",
]

LOG2PI = float(np.log(2.0 * np.pi))
GAMMA_PRIOR_SD = 10.0


def softplus(x: np.ndarray) -> np.ndarray:
    """log(1 + exp(x)), stable for large |x|."""
    out = np.abs(x)
    np.negative(out, out)
    np.exp(out, out)
    np.log1p(out, out)
    out += np.maximum(x, 0.0)
    return out


def log_sigmoid(x: np.ndarray) -> np.ndarray:
    """log(sigmoid(x)) = -softplus(-x)."""
    return -softplus(-x)


@dataclass
class ParameterSet:
    """All model parameters on their natural (constrained) scale."""

    beta_env: np.ndarray  # (J, D_env)
    gamma: np.ndarray     # (J,)
    beta_obs: np.ndarray  # (J, D_obs)
    mu: np.ndarray        # (D_obs,)
    sigma: np.ndarray     # (D_obs,), positive

    def __post_init__(self):
        self.beta_env = np.atleast_2d(np.asarray(self.beta_env, dtype=float))
        self.gamma = np.asarray(self.gamma, dtype=float)
        self.beta_obs = np.atleast_2d(np.asarray(self.beta_obs, dtype=float))
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        j = self.gamma.shape[0]
        if self.beta_env.shape[0] != j or self.beta_obs.shape[0] != j:
            raise DimensionMismatch(
                f"species dimension disagrees: gamma has {j}, beta_env "
                f"{self.beta_env.shape[0]}, beta_obs {self.beta_obs.shape[0]}")
        if self.mu.shape != (self.beta_obs.shape[1],) or self.sigma.shape != self.mu.shape:
            raise DimensionMismatch("mu/sigma must have one entry per detection column")

    @property
    def n_species(self) -> int:
        return self.gamma.shape[0]

    @property
    def d_env(self) -> int:
        return self.beta_env.shape[1]

    @property
    def d_obs(self) -> int:
        return self.beta_obs.shape[1]


@dataclass(frozen=True)
class ParameterLayout:
    """Flat ordering of the unconstrained parameter vector.

    Blocks in order: beta_env (species-major), gamma, beta_obs
    (species-major), mu, log_sigma.  ``log_sigma`` replaces sigma so the
    vector ranges over all of R^P.
    """

    n_species: int
    d_env: int
    d_obs: int
    species_names: tuple[str, ...] = ()
    env_columns: tuple[str, ...] = ()
    obs_columns: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.species_names:
            object.__setattr__(self, "species_names",
                               tuple(f"sp{j}" for j in range(self.n_species)))
        if not self.env_columns:
            object.__setattr__(self, "env_columns",
                               tuple(f"env{d}" for d in range(self.d_env)))
        if not self.obs_columns:
            object.__setattr__(self, "obs_columns",
                               tuple(f"obs{d}" for d in range(self.d_obs)))

    @property
    def size(self) -> int:
        j, de, do = self.n_species, self.d_env, self.d_obs
        return j * de + j + j * do + 2 * do

    def slices(self) -> dict[str, slice]:
        j, de, do = self.n_species, self.d_env, self.d_obs
        o = 0
        out = {}
        for name, width in (("beta_env", j * de), ("gamma", j),
                            ("beta_obs", j * do), ("mu", do), ("log_sigma", do)):
            out[name] = slice(o, o + width)
            o += width
        return out

    def split(self, theta: np.ndarray):
        """Views of a batched (M, P) vector as the five blocks."""
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        if theta.shape[1] != self.size:
            raise DimensionMismatch(
                f"flat vector has length {theta.shape[1]}, layout needs {self.size}")
        m = theta.shape[0]
        j, de, do = self.n_species, self.d_env, self.d_obs
        s = self.slices()
        return (theta[:, s["beta_env"]].reshape(m, j, de),
                theta[:, s["gamma"]],
                theta[:, s["beta_obs"]].reshape(m, j, do),
                theta[:, s["mu"]],
                theta[:, s["log_sigma"]])

    def join(self, beta_env, gamma, beta_obs, mu, log_sigma) -> np.ndarray:
        m = gamma.shape[0]
        return np.concatenate([
            beta_env.reshape(m, -1), gamma, beta_obs.reshape(m, -1),
            mu, log_sigma], axis=1)

    def pack(self, params: ParameterSet) -> np.ndarray:
        """Flatten a ParameterSet, mapping sigma to log(sigma)."""
        if np.any(params.sigma <= 0):
            raise DomainError("sigma must be positive to take its log")
        return self.join(params.beta_env[None], params.gamma[None],
                         params.beta_obs[None], params.mu[None],
                         np.log(params.sigma)[None])[0]

    def unpack(self, theta: np.ndarray) -> ParameterSet:
        be, ga, bo, mu, ze = self.split(theta)
        return ParameterSet(beta_env=be[0], gamma=ga[0], beta_obs=bo[0],
                            mu=mu[0], sigma=np.exp(ze[0]))

    def coords(self) -> list[tuple[str, str, str]]:
        """(block, species, column) labels for every flat index."""
        out = []
        for jname in self.species_names:
            out.extend(("beta_env", jname, c) for c in self.env_columns)
        out.extend(("gamma", jname, "") for jname in self.species_names)
        for jname in self.species_names:
            out.extend(("beta_obs", jname, c) for c in self.obs_columns)
        out.extend(("mu", "", c) for c in self.obs_columns)
        out.extend(("log_sigma", "", c) for c in self.obs_columns)
        return out

    @classmethod
    def from_data(cls, data: "OccupancyData", species_names=None,
                  env_columns=None, obs_columns=None) -> "ParameterLayout":
        return cls(
            n_species=data.n_species, d_env=data.d_env, d_obs=data.d_obs,
            species_names=tuple(species_names or data.store.species_names),
            env_columns=tuple(env_columns or ()),
            obs_columns=tuple(obs_columns or ()),
        )


class OccupancyData:
    """Design matrices plus the sparse detection record, pre-indexed.

    Immutable after construction; shared freely across threads.
    """

    def __init__(self, env_design: np.ndarray, obs_design: np.ndarray,
                 store: DetectionStore):
        self.env_design = np.ascontiguousarray(env_design, dtype=float)
        self.obs_design = np.ascontiguousarray(obs_design, dtype=float)
        self.store = store
        self.n_sites = self.env_design.shape[0]
        self.n_checklists = self.obs_design.shape[0]
        self.n_species = store.n_species
        self.d_env = self.env_design.shape[1]
        self.d_obs = self.obs_design.shape[1]

        soc = np.asarray(store.site_of_checklist, dtype=np.int64)
        if soc.shape[0] != self.n_checklists:
            raise DimensionMismatch(
                f"store covers {soc.shape[0]} checklists, design has {self.n_checklists}")
        if soc.size and (soc.min() < 0 or soc.max() >= self.n_sites):
            raise DimensionMismatch("site_of_checklist indexes beyond the site table")
        self.site_of_checklist = soc

        # site indicator for per-site sums over checklists
        self._site_mat = sp.csr_matrix(
            (np.ones(self.n_checklists),
             (soc, np.arange(self.n_checklists))),
            shape=(self.n_sites, self.n_checklists))

        # concatenated detection coordinates
        det_sp, det_cl = [], []
        for j, idx in enumerate(store.detections):
            det_sp.append(np.full(idx.size, j, dtype=np.int64))
            det_cl.append(idx)
        self.det_species = np.concatenate(det_sp) if det_sp else np.empty(0, dtype=np.int64)
        self.det_checklist = np.concatenate(det_cl) if det_cl else np.empty(0, dtype=np.int64)
        self.det_site = soc[self.det_checklist]
        self._det_lin = self.det_site * self.n_species + self.det_species

        self.detected = np.zeros((self.n_sites, self.n_species), dtype=bool)
        self.detected[self.det_site, self.det_species] = True

        # sum of detection-row covariates per species: the constant part
        # of the detection-slope gradient
        self.x_det_sum = np.zeros((self.n_species, self.d_obs))
        np.add.at(self.x_det_sum, self.det_species,
                  self.obs_design[self.det_checklist])

    def site_sum(self, x: np.ndarray) -> np.ndarray:
        """Sum a (M, K, J) array over checklists within each site."""
        m = x.shape[0]
        if m == 1 and self.n_species == 1:
            # single-column case (per-species MLE): bincount beats the
            # sparse matmul's dispatch overhead
            return np.bincount(self.site_of_checklist, weights=x[0, :, 0],
                               minlength=self.n_sites)[None, :, None]
        out = np.empty((m, self.n_sites, self.n_species))
        for i in range(m):
            out[i] = self._site_mat @ x[i]
        return out

    def detection_sum(self, b: np.ndarray) -> np.ndarray:
        """Sum b over the positive records of each (site, species)."""
        m = b.shape[0]
        out = np.zeros((m, self.n_sites * self.n_species))
        if self._det_lin.size:
            vals = b[:, self.det_checklist, self.det_species]
            for i in range(m):
                out[i] = np.bincount(self._det_lin, weights=vals[i],
                                     minlength=out.shape[1])
        return out.reshape(m, self.n_sites, self.n_species)


# ---------------------------------------------------------------------
# likelihood kernels (batched over a leading draw axis)
# ---------------------------------------------------------------------

_EINSUM_PATHS: dict = {}


def _einsum(subscripts, *operands):
    """np.einsum with the contraction path memoized per shape signature.

    Path planning costs more than the contraction itself for the small
    per-species operands in MLE fits.
    """
    key = (subscripts, tuple(op.shape for op in operands))
    path = _EINSUM_PATHS.get(key)
    if path is None:
        path = np.einsum_path(subscripts, *operands, optimize="optimal")[0]
        _EINSUM_PATHS[key] = path
    return np.einsum(subscripts, *operands, optimize=path)


def _predictors(data: OccupancyData, be, ga, bo):
    a = _einsum("nd,mjd->mnj", data.env_design, be) + ga[:, None, :]
    b = _einsum("kd,mjd->mkj", data.obs_design, bo)
    return a, b


def _lik_state(data: OccupancyData, be, ga, bo) -> dict:
    a, b = _predictors(data, be, ga, bo)
    psi = expit(a)
    p = expit(b)
    sp_a = softplus(a)
    l0 = -sp_a                                # log(1 - psi)
    l1 = (a - sp_a) + data.site_sum(-softplus(b)) + data.detection_sum(b)
    diff = l1 - l0
    det = data.detected[None]
    # logaddexp(l0, l1) = l0 + softplus(l1 - l0)
    ll = np.where(det, l1, l0 + softplus(diff))
    w = np.where(det, 1.0, expit(diff))       # P(present | history)
    return {"psi": psi, "p": p, "w": w, "ll": ll, "det": det}


def _lik_value(state) -> np.ndarray:
    return state["ll"].sum(axis=(1, 2))


def _lik_grad(data: OccupancyData, state):
    psi, p, w = state["psi"], state["p"], state["w"]
    g_a = w - psi
    gbe = _einsum("mnj,nd->mjd", g_a, data.env_design)
    gga = g_a.sum(axis=1)
    w_row = w[:, data.site_of_checklist, :]
    gbo = (_einsum("mkj,kd->mjd", -(w_row * p), data.obs_design)
           + data.x_det_sum[None])
    state["w_row"] = w_row
    return gbe, gga, gbo


def _hvp_precompute(data: OccupancyData, state) -> None:
    """Cache the direction-independent curvature factors in the state."""
    psi, p, w = state["psi"], state["p"], state["w"]
    if "w_row" not in state:
        state["w_row"] = w[:, data.site_of_checklist, :]
    state["psi_var"] = psi * (1.0 - psi)
    state["rank1_w"] = np.where(state["det"], 0.0, w * (1.0 - w))
    state["p_var_w"] = state["w_row"] * p * (1.0 - p)


def _lik_hvp(data: OccupancyData, state, dbe, dga, dbo):
    if "p_var_w" not in state:
        _hvp_precompute(data, state)
    p = state["p"]
    da = _einsum("nd,mjd->mnj", data.env_design, dbe) + dga[:, None, :]
    db = _einsum("kd,mjd->mkj", data.obs_design, dbo)
    t = state["rank1_w"] * (da - data.site_sum(p * db))
    hd_a = -state["psi_var"] * da + t
    hd_b = -state["p_var_w"] * db - p * t[:, data.site_of_checklist, :]
    hbe = _einsum("mnj,nd->mjd", hd_a, data.env_design)
    hga = hd_a.sum(axis=1)
    hbo = _einsum("mkj,kd->mjd", hd_b, data.obs_design)
    return hbe, hga, hbo


# ---------------------------------------------------------------------
# prior kernels (unconstrained scale; zeta = log sigma)
# ---------------------------------------------------------------------

def _prior_value(be, ga, bo, mu, zeta) -> np.ndarray:
    _, j, de = be.shape
    do = mu.shape[1]
    with np.errstate(over="ignore"):
        e2 = np.exp(-2.0 * zeta)
        s2 = np.exp(2.0 * zeta)
        r = bo - mu[:, None, :]
        lp = (-0.5 * (be ** 2).sum(axis=(1, 2)) - 0.5 * j * de * LOG2PI
              - (ga ** 2).sum(axis=1) / (2.0 * GAMMA_PRIOR_SD ** 2)
              - j * (np.log(GAMMA_PRIOR_SD) + 0.5 * LOG2PI)
              - 0.5 * (r ** 2 * e2[:, None, :]).sum(axis=(1, 2))
              - j * zeta.sum(axis=1) - 0.5 * j * do * LOG2PI
              - 0.5 * (mu ** 2).sum(axis=1) - 0.5 * do * LOG2PI
              + do * (np.log(2.0) - 0.5 * LOG2PI) - 0.5 * s2.sum(axis=1))
    return lp


def _prior_grad(be, ga, bo, mu, zeta):
    j = be.shape[1]
    with np.errstate(over="ignore"):
        e2 = np.exp(-2.0 * zeta)
        s2 = np.exp(2.0 * zeta)
        r = bo - mu[:, None, :]
        gbe = -be
        gga = -ga / GAMMA_PRIOR_SD ** 2
        gbo = -r * e2[:, None, :]
        gmu = e2 * r.sum(axis=1) - mu
        gz = e2 * (r ** 2).sum(axis=1) - j - s2
    return gbe, gga, gbo, gmu, gz


def _prior_hvp(be, ga, bo, mu, zeta, dbe, dga, dbo, dmu, dz):
    j = be.shape[1]
    with np.errstate(over="ignore"):
        e2 = np.exp(-2.0 * zeta)
        s2 = np.exp(2.0 * zeta)
        r = bo - mu[:, None, :]
        s1 = r.sum(axis=1)
        s2r = (r ** 2).sum(axis=1)
        hbe = -dbe
        hga = -dga / GAMMA_PRIOR_SD ** 2
        hbo = e2[:, None, :] * (-dbo + dmu[:, None, :] + 2.0 * r * dz[:, None, :])
        hmu = e2 * dbo.sum(axis=1) - (j * e2 + 1.0) * dmu - 2.0 * e2 * s1 * dz
        hz = (2.0 * e2 * (r * dbo).sum(axis=1) - 2.0 * e2 * s1 * dmu
              - (2.0 * e2 * s2r + 2.0 * s2) * dz)
    return hbe, hga, hbo, hmu, hz


# ---------------------------------------------------------------------
# public surface
# ---------------------------------------------------------------------

def occupancy_prob(params: ParameterSet, env_design: np.ndarray) -> np.ndarray:
    """Occupancy probabilities psi, shape (N, J)."""
    env_design = np.asarray(env_design, dtype=float)
    if env_design.shape[1] != params.d_env:
        raise DimensionMismatch(
            f"design has {env_design.shape[1]} columns, beta_env expects {params.d_env}")
    return expit(env_design @ params.beta_env.T + params.gamma)


def detection_prob(params: ParameterSet, obs_design: np.ndarray) -> np.ndarray:
    """Per-visit detection probabilities p, shape (K, J)."""
    obs_design = np.asarray(obs_design, dtype=float)
    if obs_design.shape[1] != params.d_obs:
        raise DimensionMismatch(
            f"design has {obs_design.shape[1]} columns, beta_obs expects {params.d_obs}")
    return expit(obs_design @ params.beta_obs.T)


@dataclass(frozen=True)
class SiteSpeciesProbs:
    """Occupancy and per-visit detection probabilities at one parameter point.

    ``psi`` is (sites, species); ``p`` is (checklists, species) over the
    flat checklist vector.  Values lie strictly inside (0, 1) for finite
    parameters.
    """

    psi: np.ndarray
    p: np.ndarray


def site_species_probs(params: ParameterSet, data: OccupancyData) -> SiteSpeciesProbs:
    """Evaluate psi and p for every (site, species) and (visit, species)."""
    return SiteSpeciesProbs(psi=occupancy_prob(params, data.env_design),
                            p=detection_prob(params, data.obs_design))


def _param_blocks(params: ParameterSet):
    return (params.beta_env[None], params.gamma[None], params.beta_obs[None])


_CHUNK = 2048
_SPECIES_LOOP_MIN_K = 2500


def _visit_sums_species_loop(data: OccupancyData, beta_obs: np.ndarray) -> np.ndarray:
    """Per-(site, species) sums of log(1-p) plus detection logits.

    One species at a time keeps every temporary a checklist-length vector
    that stays cache-resident even on very large datasets.
    """
    n, j = data.n_sites, data.n_species
    acc = np.empty((n, j))
    soc = data.site_of_checklist
    for jj in range(j):
        b = data.obs_design @ beta_obs[jj]
        neg_sp = softplus(b)
        np.negative(neg_sp, neg_sp)
        dets = data.store.detections[jj]
        if dets.size:
            neg_sp[dets] += b[dets]
        acc[:, jj] = np.bincount(soc, weights=neg_sp, minlength=n)
    return acc


def _visit_sums_chunked(data: OccupancyData, beta_obs: np.ndarray) -> np.ndarray:
    """Same sums via chunked all-species blocks; fastest on small data."""
    n, j, k = data.n_sites, data.n_species, data.n_checklists
    acc = np.zeros(n * j)
    cols = np.arange(j, dtype=np.int64)
    bo_t = beta_obs.T
    det_order = np.argsort(data.det_checklist, kind="stable")
    det_cl = data.det_checklist[det_order]
    det_sp = data.det_species[det_order]
    for k0 in range(0, k, _CHUNK):
        k1 = min(k0 + _CHUNK, k)
        b = data.obs_design[k0:k1] @ bo_t
        lin = (data.site_of_checklist[k0:k1, None] * j + cols).ravel()
        contrib = softplus(b)
        np.negative(contrib, contrib)
        lo, hi = np.searchsorted(det_cl, (k0, k1))
        if hi > lo:
            rows = det_cl[lo:hi] - k0
            contrib[rows, det_sp[lo:hi]] += b[rows, det_sp[lo:hi]]
        acc += np.bincount(lin, weights=contrib.ravel(), minlength=n * j)
    return acc.reshape(n, j)


def log_likelihood_blocks(params: ParameterSet, data: OccupancyData) -> np.ndarray:
    """Per-(site, species) log-likelihood contributions, shape (N, J).

    The per-visit sums stream over the checklists (species by species on
    large datasets, in all-species chunks on small ones) so evaluation is
    linear in checklists with cache-resident temporaries.  Both orderings
    produce the same sums up to float rounding and match the batched
    fitting kernel.
    """
    if params.d_env != data.d_env or params.d_obs != data.d_obs or \
            params.n_species != data.n_species:
        raise DimensionMismatch("parameter dimensions do not match the data")
    a = data.env_design @ params.beta_env.T + params.gamma
    sp_a = softplus(a)
    l0 = -sp_a
    log_psi = a - sp_a
    if data.n_checklists >= _SPECIES_LOOP_MIN_K and data.n_species > 1:
        acc = _visit_sums_species_loop(data, params.beta_obs)
    else:
        acc = _visit_sums_chunked(data, params.beta_obs)
    l1 = log_psi + acc
    diff = l1 - l0
    return np.where(data.detected, l1, l0 + softplus(diff))


def log_likelihood(params: ParameterSet, data: OccupancyData) -> float:
    """Observed-data log likelihood with presence summed out.

    Sites where a species was detected contribute the present-branch term
    directly; otherwise the two branches are combined with logaddexp.
    Sites with no checklists contribute zero.
    """
    value = float(log_likelihood_blocks(params, data).sum())
    if not np.isfinite(value):
        raise NonFiniteResult("log likelihood is not finite for finite parameters")
    return value


def log_prior(params: ParameterSet) -> float:
    """Log prior density at the parameters, normalization included."""
    if np.any(params.sigma <= 0):
        raise DomainError("sigma must be positive")
    zeta = np.log(params.sigma)
    lp = _prior_value(params.beta_env[None], params.gamma[None],
                      params.beta_obs[None], params.mu[None], zeta[None])[0]
    return float(lp)


class LogDensityModel(Protocol):
    """Batched differentiable log density; the engines' only contract."""

    dim: int

    def value(self, thetas: np.ndarray) -> np.ndarray: ...

    def value_and_grad(self, thetas: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...

    def hvp_operator(self, thetas: np.ndarray) -> Callable[[np.ndarray], np.ndarray]: ...


class OccupancyPosterior:
    """Unconstrained log posterior of the full hierarchical model.

    The vector layout is ``ParameterLayout``; sigma enters as
    ``log_sigma`` and the log-Jacobian ``sum(log_sigma)`` of that
    transform is included.  All methods are batched over a leading draw
    axis; gradients and Hessian-vector products are analytic.
    """

    def __init__(self, data: OccupancyData, layout: ParameterLayout | None = None):
        self.data = data
        self.layout = layout or ParameterLayout.from_data(data)
        self.dim = self.layout.size

    def _blocks(self, thetas):
        return self.layout.split(thetas)

    def value(self, thetas: np.ndarray) -> np.ndarray:
        be, ga, bo, mu, ze = self._blocks(thetas)
        lik = _lik_value(_lik_state(self.data, be, ga, bo))
        return lik + _prior_value(be, ga, bo, mu, ze) + ze.sum(axis=1)

    def value_and_grad(self, thetas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        be, ga, bo, mu, ze = self._blocks(thetas)
        state = _lik_state(self.data, be, ga, bo)
        val = (_lik_value(state) + _prior_value(be, ga, bo, mu, ze)
               + ze.sum(axis=1))
        lbe, lga, lbo = _lik_grad(self.data, state)
        pbe, pga, pbo, pmu, pz = _prior_grad(be, ga, bo, mu, ze)
        grad = self.layout.join(lbe + pbe, lga + pga, lbo + pbo, pmu, pz + 1.0)
        return val, grad

    def hvp_operator(self, thetas: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
        """Exact Hessian-vector products at fixed evaluation points.

        The likelihood Hessian at each point is the sum of diagonal
        curvature terms and one rank-one term per undetected
        (site, species) block, so products cost the same order as a
        gradient.  State is cached, making repeated products (as in CG)
        cheap.
        """
        be, ga, bo, mu, ze = self._blocks(thetas)
        state = _lik_state(self.data, be, ga, bo)
        layout = self.layout
        data = self.data

        def hvp(dirs: np.ndarray) -> np.ndarray:
            dbe, dga, dbo, dmu, dz = layout.split(dirs)
            lbe, lga, lbo = _lik_hvp(data, state, dbe, dga, dbo)
            pbe, pga, pbo, pmu, pz = _prior_hvp(be, ga, bo, mu, ze,
                                                dbe, dga, dbo, dmu, dz)
            return layout.join(lbe + pbe, lga + pga, lbo + pbo, pmu, pz)

        return hvp


def log_posterior_unconstrained(theta: np.ndarray, data: OccupancyData,
                                layout: ParameterLayout | None = None) -> float:
    """Log posterior at a flat unconstrained vector (sigma = exp(zeta))."""
    post = OccupancyPosterior(data, layout)
    return float(post.value(np.asarray(theta, dtype=float)[None])[0])


def grad_log_posterior_unconstrained(theta: np.ndarray, data: OccupancyData,
                                     layout: ParameterLayout | None = None) -> np.ndarray:
    """Exact gradient of :func:`log_posterior_unconstrained`."""
    post = OccupancyPosterior(data, layout)
    _, g = post.value_and_grad(np.asarray(theta, dtype=float)[None])
    return g[0]


# ---------------------------------------------------------------------
# checkpoint serialization
# ---------------------------------------------------------------------

def write_parameter_csv(params: ParameterSet, path,
                        layout: ParameterLayout | None = None) -> None:
    """Write a flat ``block,species,column,value`` CSV."""
    layout = layout or ParameterLayout(params.n_species, params.d_env, params.d_obs)
    rows = []
    for j, jname in enumerate(layout.species_names):
        for d, cname in enumerate(layout.env_columns):
            rows.append(("beta_env", jname, cname, params.beta_env[j, d]))
    for j, jname in enumerate(layout.species_names):
        rows.append(("gamma", jname, "", params.gamma[j]))
    for j, jname in enumerate(layout.species_names):
        for d, cname in enumerate(layout.obs_columns):
            rows.append(("beta_obs", jname, cname, params.beta_obs[j, d]))
    for d, cname in enumerate(layout.obs_columns):
        rows.append(("mu", "", cname, params.mu[d]))
    for d, cname in enumerate(layout.obs_columns):
        rows.append(("sigma", "", cname, params.sigma[d]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("block,species,column,value\n")
        for block, spn, col, val in rows:
            fh.write(f"{block},{spn},{col},{val:.17g}\n")


def read_parameter_csv(path) -> tuple[ParameterSet, ParameterLayout]:
    """Inverse of :func:`write_parameter_csv`."""
    df = pd.read_csv(path, dtype={"species": str, "column": str},
                     keep_default_na=False, float_precision="round_trip")
    species = list(dict.fromkeys(df.loc[df.block == "gamma", "species"]))
    env_cols = list(dict.fromkeys(df.loc[df.block == "beta_env", "column"]))
    obs_cols = list(dict.fromkeys(df.loc[df.block == "mu", "column"]))
    j, de, do = len(species), len(env_cols), len(obs_cols)
    sp_pos = {s: i for i, s in enumerate(species)}
    env_pos = {c: i for i, c in enumerate(env_cols)}
    obs_pos = {c: i for i, c in enumerate(obs_cols)}

    beta_env = np.zeros((j, de))
    gamma = np.zeros(j)
    beta_obs = np.zeros((j, do))
    mu = np.zeros(do)
    sigma = np.ones(do)
    for row in df.itertuples(index=False):
        if row.block == "beta_env":
            beta_env[sp_pos[row.species], env_pos[row.column]] = row.value
        elif row.block == "gamma":
            gamma[sp_pos[row.species]] = row.value
        elif row.block == "beta_obs":
            beta_obs[sp_pos[row.species], obs_pos[row.column]] = row.value
        elif row.block == "mu":
            mu[obs_pos[row.column]] = row.value
        elif row.block == "sigma":
            sigma[obs_pos[row.column]] = row.value
        else:
            raise ValueError(f"unknown parameter block {row.block!r}")
    params = ParameterSet(beta_env=beta_env, gamma=gamma, beta_obs=beta_obs,
                          mu=mu, sigma=sigma)
    layout = ParameterLayout(j, de, do, tuple(species), tuple(env_cols),
                             tuple(obs_cols))
    return params, layout
