"""Trust-region Newton-CG minimizer.

Standard algorithm (Nocedal & Wright, Alg. 4.1 with a Steihaug-Toint CG
subsolver): the quadratic model step is accepted when the actual/predicted
reduction ratio exceeds 0.15; the radius shrinks by 0.25 when the ratio
falls below 0.25 and doubles when it exceeds 0.75 with the step on the
boundary.  CG stops at the usual inexact-Newton forcing tolerance
``min(0.5, sqrt(|g|)) * |g|``.  Convergence is declared on the gradient
infinity norm, which makes stalls easy to detect.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NonFiniteObjective

__all__ = ["OptimResult", "trust_region_newton_cg"]


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    iterations: int
    converged: bool
    objective_trace: list[float] = field(default_factory=list)
    n_hvp: int = 0
    wall_time: float = 0.0
    message: str = ""


def _cg_steihaug(grad: np.ndarray, hvp: Callable[[np.ndarray], np.ndarray],
                 radius: float, g_norm: float) -> tuple[np.ndarray, bool, int]:
    """Approximately minimize the local quadratic model within the radius.

    Returns (step, hit_boundary, n_products).  Follows negative-curvature
    directions to the boundary.
    """
    p = np.zeros_like(grad)
    r = grad.copy()
    d = -r
    tol = min(0.5, np.sqrt(g_norm)) * g_norm
    n_prod = 0
    if g_norm < tol or g_norm == 0.0:
        return p, False, n_prod
    rr = r @ r
    for _ in range(grad.size + 10):
        hd = hvp(d)
        n_prod += 1
        dhd = d @ hd
        if dhd <= 0:
            tau = _boundary_step(p, d, radius)
            return p + tau * d, True, n_prod
        alpha = rr / dhd
        p_next = p + alpha * d
        if np.linalg.norm(p_next) >= radius:
            tau = _boundary_step(p, d, radius)
            return p + tau * d, True, n_prod
        p = p_next
        r = r + alpha * hd
        rr_next = r @ r
        if np.sqrt(rr_next) < tol:
            return p, False, n_prod
        d = -r + (rr_next / rr) * d
        rr = rr_next
    return p, False, n_prod


def _boundary_step(p: np.ndarray, d: np.ndarray, radius: float) -> float:
    """Positive tau with |p + tau d| = radius."""
    dd = d @ d
    pd = p @ d
    pp = p @ p
    disc = pd ** 2 + dd * (radius ** 2 - pp)
    return (-pd + np.sqrt(max(disc, 0.0))) / dd


def trust_region_newton_cg(
    x0: np.ndarray,
    value_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    make_hvp: Callable[[np.ndarray], Callable[[np.ndarray], np.ndarray]],
    gradient_tolerance: float = 1e-5,
    max_iterations: int = 500,
    initial_radius: float = 1.0,
    max_radius: float = 1e6,
) -> OptimResult:
    """Minimize with exact-Hessian trust-region Newton-CG.

    ``make_hvp(x)`` returns a Hessian-vector product closure valid at
    ``x``; it is called once per outer iteration so CG products can reuse
    cached state.  The objective trace records the value after every
    accepted step, so it is non-increasing by construction.
    """
    t0 = time.perf_counter()
    x = np.asarray(x0, dtype=float).copy()
    f, g = value_and_grad(x)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NonFiniteObjective("objective not finite at the initial point")
    radius = float(initial_radius)
    trace = [float(f)]
    n_hvp = 0
    converged = bool(np.max(np.abs(g)) < gradient_tolerance)
    it = 0
    while not converged and it < max_iterations:
        it += 1
        hvp = make_hvp(x)
        g_norm = float(np.linalg.norm(g))
        step, on_boundary, used = _cg_steihaug(g, hvp, radius, g_norm)
        n_hvp += used
        if not np.any(step):
            radius *= 0.25
            if radius < 1e-14:
                break
            continue
        predicted = -(g @ step) - 0.5 * (step @ hvp(step))
        n_hvp += 1
        f_new, g_new = value_and_grad(x + step)
        if np.isnan(f_new):
            raise NonFiniteObjective("objective became NaN during optimization")
        actual = f - f_new
        ratio = actual / predicted if predicted > 0 else -np.inf
        if ratio < 0.25:
            radius *= 0.25
        elif ratio > 0.75 and on_boundary:
            radius = min(2.0 * radius, max_radius)
        if ratio > 0.15 and np.isfinite(f_new):
            x = x + step
            f, g = f_new, g_new
            trace.append(float(f))
            converged = bool(np.max(np.abs(g)) < gradient_tolerance)
        if radius < 1e-14:
            break
    message = "converged" if converged else "max iterations or radius collapse"
    return OptimResult(x=x, fun=float(f), grad=g, iterations=it,
                       converged=converged, objective_trace=trace,
                       n_hvp=n_hvp, wall_time=time.perf_counter() - t0,
                       message=message)
