"""Independent brute-force oracles shared across tests.

Everything here recomputes expected values by a path disjoint from the
library's hot path: dense Kronecker materialization, direct Gaussian algebra,
per-observation accumulation.
"""

import functools

import numpy as np

from ha_array.model import CellStats, Layout


def kron_reversed(mats):
    """Kronecker product in reversed mode order (vec convention: mode 0 fastest)."""
    return functools.reduce(np.kron, list(mats)[::-1])


def dense_effect_moments(sigmas, gamma, kappa, rbar):
    """Mean and covariance of N((g*K^-1 + k I)^-1 k vec(rbar), (g*K^-1 + k I)^-1)."""
    kmat = kron_reversed(sigmas)
    prec = gamma * np.linalg.inv(kmat) + kappa * np.eye(kmat.shape[0])
    cov = np.linalg.inv(prec)
    mean = cov @ (kappa * np.ravel(rbar, order="F"))
    return mean, cov


def dense_effect_sample(sigmas, gamma, kappa, rbar, rng, size):
    """Dense-covariance sampler: mean + chol(cov) z, the slow reference path."""
    mean, cov = dense_effect_moments(sigmas, gamma, kappa, rbar)
    el = np.linalg.cholesky(cov)
    z = rng.standard_normal((size, mean.size))
    return mean + z @ el.T


def gaussian_posterior(prior_mean, prior_cov, obs, obs_cov):
    """Posterior of theta ~ N(prior) given obs ~ N(theta, obs_cov)."""
    pm = np.asarray(prior_mean, dtype=float)
    prec = np.linalg.inv(prior_cov) + np.linalg.inv(obs_cov)
    cov = np.linalg.inv(prec)
    mean = cov @ (np.linalg.solve(prior_cov, pm) + np.linalg.solve(obs_cov, obs))
    return mean, cov


def mean_mcse(draws):
    """Monte Carlo s.e. of the empirical mean of (near-)independent draws."""
    draws = np.asarray(draws, dtype=float)
    return draws.std(axis=0, ddof=1) / np.sqrt(draws.shape[0])


def cov_mcse(cov, n):
    """Asymptotic s.e. of empirical covariance entries under normality."""
    d = np.diag(cov)
    return np.sqrt((np.outer(d, d) + cov**2) / n)


def stats_from_obs(dims, obs, p=1):
    """CellStats from explicit per-cell observation lists.

    ``obs`` maps cell index tuples to lists of scalars (p = 1) or vectors.
    """
    layout = Layout(dims=tuple(dims), p=p)
    counts = np.zeros(layout.dims, dtype=int)
    sums = np.zeros(layout.dims + (p,))
    sumsq = np.zeros(layout.dims + (p, p))
    for idx, ys in obs.items():
        for y in ys:
            yv = np.atleast_1d(np.asarray(y, dtype=float))
            counts[idx] += 1
            sums[idx] += yv
            sumsq[idx] += np.outer(yv, yv)
    return CellStats(layout, counts, sums, sumsq)
