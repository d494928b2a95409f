"""Adaptive Hamiltonian Monte Carlo (dynamic-trajectory, NUTS-style).

Trajectories grow by doubling until a U-turn or divergence; the next
state is chosen by *multinomial* sampling over the trajectory (progressive
within subtrees, biased toward the new subtree at the top level).  Warmup
adapts the step size by Nesterov dual averaging toward ``target_accept``
and a diagonal mass matrix from draw variances in doubling windows
(15% step-size-only, 75% windowed mass adaptation, 10% final step-size
polish).  A transition is flagged divergent when the Hamiltonian error
exceeds 1000.

Every chain draws from its own counter-based Philox stream keyed by
(seed, chain index), so runs are reproducible regardless of scheduling.
All arithmetic is float64.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import ndtri

from .errors import AllDivergent, NonFiniteGradient, TooFewDraws
from .model_core import LogDensityModel, OccupancyData, OccupancyPosterior

__all__ = [
    "HMCConfig",
    "ChainResult",
    "sample_mcmc",
    "summarize_chains",
    "leapfrog",
]

MAX_ENERGY_ERROR = 1000.0


@dataclass(frozen=True)
class HMCConfig:
    """Sampler settings; at least ~100 warmup iterations are recommended
    so the step-size and mass adaptation windows have something to work
    with."""

    warmup_iters: int = 1000
    sample_iters: int = 1000
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0
    chains: int = 2

    def __post_init__(self):
        if not (0.0 < self.target_accept < 1.0):
            raise ValueError("target_accept must be in (0, 1)")
        if min(self.warmup_iters, self.sample_iters, self.chains) < 1:
            raise ValueError("iteration and chain counts must be positive")


@dataclass
class ChainResult:
    draws: np.ndarray          # (chains, sample_iters, P)
    accept_rate: float
    divergence_count: int
    step_size: float           # mean of per-chain adapted step sizes
    mass_diag: np.ndarray      # mean diagonal mass (1 / adapted variance)
    step_sizes: np.ndarray = field(default_factory=lambda: np.empty(0))
    accept_rates: np.ndarray = field(default_factory=lambda: np.empty(0))
    param_names: list[str] = field(default_factory=list)

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    def stacked(self) -> np.ndarray:
        """All chains concatenated, shape (chains * sample_iters, P)."""
        return self.draws.reshape(-1, self.draws.shape[2])

    def to_csv(self, path) -> None:
        """One row per draw: ``chain,draw,<one column per parameter>``."""
        names = self.param_names or [f"theta{i}" for i in range(self.draws.shape[2])]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("chain,draw," + ",".join(names) + "\n")
            for c in range(self.draws.shape[0]):
                for s in range(self.draws.shape[1]):
                    vals = ",".join(f"{v:.17g}" for v in self.draws[c, s])
                    fh.write(f"{c},{s},{vals}\n")


def leapfrog(theta, r, grad, eps, inv_mass, value_and_grad):
    """One leapfrog step; returns (theta', r', logp', grad')."""
    r_half = r + 0.5 * eps * grad
    theta_new = theta + eps * inv_mass * r_half
    logp_new, grad_new = value_and_grad(theta_new)
    r_new = r_half + 0.5 * eps * grad_new
    return theta_new, r_new, logp_new, grad_new


def _kinetic(r, inv_mass) -> float:
    return 0.5 * float(r @ (inv_mass * r))


class _Tree:
    __slots__ = ("theta_minus", "r_minus", "grad_minus", "theta_plus",
                 "r_plus", "grad_plus", "proposal", "proposal_logp",
                 "proposal_grad", "log_weight", "stop", "divergent",
                 "alpha_sum", "n_leaves")

    def __init__(self, theta, r, grad, logp, log_weight, stop, divergent,
                 alpha_sum):
        self.theta_minus = self.theta_plus = self.proposal = theta
        self.r_minus = self.r_plus = r
        self.grad_minus = self.grad_plus = self.proposal_grad = grad
        self.proposal_logp = logp
        self.log_weight = log_weight
        self.stop = stop
        self.divergent = divergent
        self.alpha_sum = alpha_sum
        self.n_leaves = 1


def _uturn(theta_minus, theta_plus, r_minus, r_plus, inv_mass) -> bool:
    span = theta_plus - theta_minus
    return (span @ (inv_mass * r_minus)) < 0 or (span @ (inv_mass * r_plus)) < 0


def _build_tree(depth, theta, r, grad, direction, eps, inv_mass,
                lw0, value_and_grad, rng) -> _Tree:
    if depth == 0:
        theta1, r1, logp1, grad1 = leapfrog(theta, r, grad, direction * eps,
                                            inv_mass, value_and_grad)
        if np.isfinite(logp1) and np.all(np.isfinite(grad1)):
            lw = logp1 - _kinetic(r1, inv_mass)
        else:
            lw = -np.inf
        divergent = not np.isfinite(lw) or (lw0 - lw) > MAX_ENERGY_ERROR
        alpha = float(np.exp(min(0.0, lw - lw0))) if np.isfinite(lw) else 0.0
        return _Tree(theta1, r1, grad1, logp1, lw, divergent, divergent, alpha)

    first = _build_tree(depth - 1, theta, r, grad, direction, eps,
                        inv_mass, lw0, value_and_grad, rng)
    if first.stop:
        return first
    if direction > 0:
        edge = (first.theta_plus, first.r_plus, first.grad_plus)
    else:
        edge = (first.theta_minus, first.r_minus, first.grad_minus)
    second = _build_tree(depth - 1, *edge, direction,
                         eps, inv_mass, lw0, value_and_grad, rng)

    total = np.logaddexp(first.log_weight, second.log_weight)
    tree = first
    if np.isfinite(second.log_weight) and \
            np.log(rng.uniform()) < second.log_weight - total:
        tree.proposal = second.proposal
        tree.proposal_logp = second.proposal_logp
        tree.proposal_grad = second.proposal_grad
    if direction > 0:
        tree.theta_plus, tree.r_plus, tree.grad_plus = (
            second.theta_plus, second.r_plus, second.grad_plus)
    else:
        tree.theta_minus, tree.r_minus, tree.grad_minus = (
            second.theta_minus, second.r_minus, second.grad_minus)
    tree.log_weight = total
    tree.alpha_sum += second.alpha_sum
    tree.n_leaves += second.n_leaves
    tree.divergent = tree.divergent or second.divergent
    tree.stop = second.stop or _uturn(tree.theta_minus, tree.theta_plus,
                                      tree.r_minus, tree.r_plus, inv_mass)
    return tree


def _transition(theta, logp, grad, eps, inv_mass, max_depth, value_and_grad,
                rng):
    """One NUTS transition; returns (theta, logp, grad, accept_stat, divergent)."""
    r0 = rng.standard_normal(theta.shape[0]) / np.sqrt(inv_mass)
    lw0 = logp - _kinetic(r0, inv_mass)
    theta_minus = theta_plus = theta
    r_minus = r_plus = r0
    grad_minus = grad_plus = grad
    proposal, proposal_logp, proposal_grad = theta, logp, grad
    log_weight = lw0
    alpha_sum = 0.0
    n_leaves = 0
    divergent = False

    for depth in range(max_depth):
        direction = 1 if rng.uniform() < 0.5 else -1
        if direction > 0:
            sub = _build_tree(depth, theta_plus, r_plus, grad_plus,
                              direction, eps, inv_mass, lw0, value_and_grad, rng)
        else:
            sub = _build_tree(depth, theta_minus, r_minus, grad_minus,
                              direction, eps, inv_mass, lw0, value_and_grad, rng)
        alpha_sum += sub.alpha_sum
        n_leaves += sub.n_leaves
        divergent = divergent or sub.divergent
        if sub.stop:
            break
        # biased progressive sampling toward the new half of the trajectory
        if np.isfinite(sub.log_weight) and \
                np.log(rng.uniform()) < sub.log_weight - log_weight:
            proposal = sub.proposal
            proposal_logp = sub.proposal_logp
            proposal_grad = sub.proposal_grad
        log_weight = np.logaddexp(log_weight, sub.log_weight)
        if direction > 0:
            theta_plus, r_plus, grad_plus = sub.theta_plus, sub.r_plus, sub.grad_plus
        else:
            theta_minus, r_minus, grad_minus = (
                sub.theta_minus, sub.r_minus, sub.grad_minus)
        if _uturn(theta_minus, theta_plus, r_minus, r_plus, inv_mass):
            break

    accept_stat = alpha_sum / max(n_leaves, 1)
    return proposal, proposal_logp, proposal_grad, accept_stat, divergent


def _find_reasonable_eps(theta, logp, grad, inv_mass, value_and_grad, rng):
    """Crude doubling/halving search for a step size near 50% acceptance."""
    eps = 1.0
    r = rng.standard_normal(theta.shape[0]) / np.sqrt(inv_mass)
    lw0 = logp - _kinetic(r, inv_mass)
    _, r1, logp1, _ = leapfrog(theta, r, grad, eps, inv_mass, value_and_grad)
    lw1 = logp1 - _kinetic(r1, inv_mass) if np.isfinite(logp1) else -np.inf
    direction = 1.0 if (lw1 - lw0) > np.log(0.5) else -1.0
    for _ in range(60):
        if direction > 0 and (lw1 - lw0) <= np.log(0.5):
            break
        if direction < 0 and (lw1 - lw0) > np.log(0.5):
            break
        eps *= 2.0 ** direction
        _, r1, logp1, _ = leapfrog(theta, r, grad, eps, inv_mass, value_and_grad)
        lw1 = logp1 - _kinetic(r1, inv_mass) if np.isfinite(logp1) else -np.inf
    return eps


class _DualAveraging:
    """Nesterov dual averaging of log step size toward a target acceptance."""

    def __init__(self, eps0: float, target: float,
                 gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = np.log(10.0 * eps0)
        self.target = target
        self.gamma, self.t0, self.kappa = gamma, t0, kappa
        self.h_bar = 0.0
        self.log_eps_bar = 0.0
        self.count = 0
        self.log_eps = np.log(eps0)

    def update(self, accept_stat: float) -> float:
        self.count += 1
        frac = 1.0 / (self.count + self.t0)
        self.h_bar = (1 - frac) * self.h_bar + frac * (self.target - accept_stat)
        self.log_eps = self.mu - np.sqrt(self.count) / self.gamma * self.h_bar
        eta = self.count ** (-self.kappa)
        self.log_eps_bar = eta * self.log_eps + (1 - eta) * self.log_eps_bar
        return float(np.exp(self.log_eps))

    @property
    def adapted_eps(self) -> float:
        return float(np.exp(self.log_eps_bar))


def _mass_windows(warmup: int) -> tuple[int, int, list[int]]:
    """(init_buffer, term_start, window_end_iterations) for mass adaptation."""
    init_buffer = max(1, int(0.15 * warmup))
    term_buffer = max(1, int(0.10 * warmup))
    middle = warmup - init_buffer - term_buffer
    ends: list[int] = []
    if middle >= 20:
        size = 25
        pos = init_buffer
        while pos < init_buffer + middle:
            end = min(pos + size, init_buffer + middle)
            # absorb a too-small trailing window into the last one
            if (init_buffer + middle - end) < size * 2 or end == init_buffer + middle:
                end = init_buffer + middle
            ends.append(end)
            pos = end
            size *= 2
    return init_buffer, warmup - term_buffer, ends


def _run_chain(value_and_grad, dim, config: HMCConfig, chain: int,
               initial: np.ndarray | None):
    rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence(entropy=config.seed, spawn_key=(chain,))))
    if initial is not None:
        theta = np.asarray(initial, dtype=float).copy()
    else:
        theta = 0.1 * rng.standard_normal(dim)
    logp, grad = value_and_grad(theta)
    if not np.isfinite(logp) or not np.all(np.isfinite(grad)):
        raise NonFiniteGradient("log density or gradient not finite at the start point")

    inv_mass = np.ones(dim)
    eps = _find_reasonable_eps(theta, logp, grad, inv_mass, value_and_grad, rng)
    da = _DualAveraging(eps, config.target_accept)
    _, _, window_ends = _mass_windows(config.warmup_iters)
    window_draws: list[np.ndarray] = []
    next_window = 0

    for it in range(config.warmup_iters):
        theta, logp, grad, accept, _ = _transition(
            theta, logp, grad, eps, inv_mass, config.max_tree_depth,
            value_and_grad, rng)
        eps = da.update(accept)
        if next_window < len(window_ends):
            window_draws.append(theta)
            if it + 1 == window_ends[next_window]:
                draws = np.asarray(window_draws)
                if draws.shape[0] >= 2:
                    n = draws.shape[0]
                    var = draws.var(axis=0, ddof=1)
                    inv_mass = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
                    eps = _find_reasonable_eps(theta, logp, grad, inv_mass,
                                               value_and_grad, rng)
                    da = _DualAveraging(eps, config.target_accept)
                window_draws = []
                next_window += 1

    eps = da.adapted_eps
    draws = np.empty((config.sample_iters, dim))
    accepts = np.empty(config.sample_iters)
    divergences = 0
    for it in range(config.sample_iters):
        theta, logp, grad, accept, divergent = _transition(
            theta, logp, grad, eps, inv_mass, config.max_tree_depth,
            value_and_grad, rng)
        draws[it] = theta
        accepts[it] = accept
        divergences += int(divergent)
    return draws, float(accepts.mean()), divergences, eps, 1.0 / inv_mass


def sample_mcmc(data, config: HMCConfig = HMCConfig(),
                initial: np.ndarray | None = None) -> ChainResult:
    """Sample the unconstrained posterior (or any log-density model).

    ``data`` may be an :class:`OccupancyData` (sampled through its
    posterior) or any object with the batched log-density interface.
    Chains draw from independent counter-based streams, so scheduling
    them in any order (or concurrently) cannot change the result.
    Raises :class:`AllDivergent` when more than half of the post-warmup
    transitions diverge.
    """
    if isinstance(data, OccupancyData):
        model: LogDensityModel = OccupancyPosterior(data)
    else:
        model = data

    def value_and_grad(theta):
        v, g = model.value_and_grad(theta[None])
        return float(v[0]), g[0]

    dim = model.dim
    chain_draws, rates, steps, masses = [], [], [], []
    div_total = 0
    for chain in range(config.chains):
        draws, rate, div, eps, mass = _run_chain(value_and_grad, dim, config,
                                                 chain, initial)
        chain_draws.append(draws)
        rates.append(rate)
        steps.append(eps)
        masses.append(mass)
        div_total += div

    total_transitions = config.chains * config.sample_iters
    if div_total > 0.5 * total_transitions:
        raise AllDivergent(
            f"{div_total}/{total_transitions} post-warmup transitions diverged")

    layout = getattr(model, "layout", None)
    names = ([f"{b}.{s}.{c}" for b, s, c in layout.coords()]
             if layout is not None else [])
    return ChainResult(
        draws=np.asarray(chain_draws),
        accept_rate=float(np.mean(rates)),
        divergence_count=div_total,
        step_size=float(np.mean(steps)),
        mass_diag=np.mean(masses, axis=0),
        step_sizes=np.asarray(steps),
        accept_rates=np.asarray(rates),
        param_names=names,
    )


# ---------------------------------------------------------------------
# convergence diagnostics
# ---------------------------------------------------------------------

def _rank_normalize(x: np.ndarray) -> np.ndarray:
    """Map pooled draws to normal scores via average ranks."""
    from scipy.stats import rankdata
    flat = x.reshape(-1)
    ranks = rankdata(flat)
    z = ndtri((ranks - 3.0 / 8.0) / (flat.size + 0.25))
    return z.reshape(x.shape)


def _split_chains(draws: np.ndarray) -> np.ndarray:
    """(C, S) -> (2C, S//2), dropping an odd trailing draw."""
    c, s = draws.shape
    half = s // 2
    return np.concatenate([draws[:, :half], draws[:, half:2 * half]], axis=0)


def _rhat_ess_scalar(draws: np.ndarray) -> tuple[float, float]:
    """Split rank-normalized R-hat and bulk ESS for one parameter (C, S)."""
    split = _split_chains(draws)
    if np.allclose(split, split.reshape(-1)[0]):
        warnings.warn("constant draws: R-hat undefined", stacklevel=2)
        return np.nan, np.nan
    z = _rank_normalize(split)
    m, n = z.shape
    chain_means = z.mean(axis=1)
    w = z.var(axis=1, ddof=1).mean()
    b = n * chain_means.var(ddof=1)
    var_plus = (n - 1) / n * w + b / n
    rhat = float(np.sqrt(var_plus / w)) if w > 0 else np.nan

    # bulk ESS via FFT autocovariances, truncated at the first negative
    # pair sum of autocorrelations
    nfft = int(2 ** np.ceil(np.log2(2 * n)))
    centered = z - chain_means[:, None]
    f = np.fft.rfft(centered, nfft, axis=1)
    acov = np.fft.irfft(f * np.conj(f), nfft, axis=1)[:, :n].real / n
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    tau = 1.0  # rho_0 term
    prev_pair = np.inf
    t = 1
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair < 0:
            break
        pair = min(pair, prev_pair)  # enforce monotone decrease
        tau += 2.0 * pair
        prev_pair = pair
        t += 2
    ess = float(m * n / tau) if tau > 0 else np.nan
    return rhat, ess


def summarize_chains(result: ChainResult) -> pd.DataFrame:
    """Per-parameter mean, sd, split R-hat, and bulk ESS.

    Raises :class:`TooFewDraws` with fewer than 4 draws per split chain.
    """
    draws = result.draws
    _, s, p = draws.shape
    if s // 2 < 4:
        raise TooFewDraws(f"{s} draws per chain leaves fewer than 4 per split")
    stacked = result.stacked()
    rows = []
    names = result.param_names or [f"theta{i}" for i in range(p)]
    for i in range(p):
        rhat, ess = _rhat_ess_scalar(draws[:, :, i])
        rows.append({
            "parameter": names[i],
            "mean": stacked[:, i].mean(),
            "sd": stacked[:, i].std(ddof=1),
            "rhat": rhat,
            "ess_bulk": ess,
        })
    return pd.DataFrame(rows)
