"""Analytic log densities used to verify the inference engines.

These implement the same batched interface as the occupancy posterior
(:class:`~occudet.model_core.LogDensityModel`), so the VI and MCMC
engines can be pointed at targets with known moments.
"""

from __future__ import annotations

import numpy as np

__all__ = ["FlatDensity", "DiagonalGaussianDensity", "FullGaussianDensity"]

LOG2PI = float(np.log(2.0 * np.pi))


class FlatDensity:
    """log p = 0 everywhere; isolates entropy terms in VI objectives."""

    def __init__(self, dim: int):
        self.dim = dim

    def value(self, thetas: np.ndarray) -> np.ndarray:
        return np.zeros(np.atleast_2d(thetas).shape[0])

    def value_and_grad(self, thetas: np.ndarray):
        thetas = np.atleast_2d(thetas)
        return np.zeros(thetas.shape[0]), np.zeros_like(thetas)

    def hvp_operator(self, thetas: np.ndarray):
        return lambda dirs: np.zeros_like(np.atleast_2d(dirs))


class DiagonalGaussianDensity:
    """Independent Gaussian coordinates with known mean and sd."""

    def __init__(self, mean: np.ndarray, sd: np.ndarray):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        self.sd = np.broadcast_to(np.asarray(sd, dtype=float), self.mean.shape).copy()
        if np.any(self.sd <= 0):
            raise ValueError("sd must be positive")
        self.dim = self.mean.shape[0]
        self._prec = 1.0 / self.sd ** 2
        self._lognorm = -0.5 * self.dim * LOG2PI - np.log(self.sd).sum()

    def value(self, thetas: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(thetas) - self.mean
        return self._lognorm - 0.5 * (z ** 2 * self._prec).sum(axis=1)

    def value_and_grad(self, thetas: np.ndarray):
        thetas = np.atleast_2d(thetas)
        z = thetas - self.mean
        return (self._lognorm - 0.5 * (z ** 2 * self._prec).sum(axis=1),
                -z * self._prec)

    def hvp_operator(self, thetas: np.ndarray):
        prec = self._prec

        def hvp(dirs: np.ndarray) -> np.ndarray:
            return -np.atleast_2d(dirs) * prec

        return hvp


class FullGaussianDensity:
    """Gaussian with an arbitrary covariance matrix."""

    def __init__(self, mean: np.ndarray, cov: np.ndarray):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.asarray(cov, dtype=float)
        self.dim = self.mean.shape[0]
        self.cov = cov
        self.precision = np.linalg.inv(cov)
        sign, logdet = np.linalg.slogdet(cov)
        if sign <= 0:
            raise ValueError("covariance must be positive definite")
        self._lognorm = -0.5 * (self.dim * LOG2PI + logdet)

    def value(self, thetas: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(thetas) - self.mean
        return self._lognorm - 0.5 * np.einsum("mi,ij,mj->m", z, self.precision, z)

    def value_and_grad(self, thetas: np.ndarray):
        thetas = np.atleast_2d(thetas)
        z = thetas - self.mean
        grad = -z @ self.precision
        return self._lognorm - 0.5 * (z * (z @ self.precision)).sum(axis=1), grad

    def hvp_operator(self, thetas: np.ndarray):
        precision = self.precision

        def hvp(dirs: np.ndarray) -> np.ndarray:
            return -np.atleast_2d(dirs) @ precision

        return hvp
