"""Empirical-Bayes hyperparameter defaults for the hierarchical-array model.

The defaults are unit-information style: the grand-mean and error-variance
priors are centered at the MLEs with roughly one observation's worth of
strength; each factor's covariance prior is centered so its expected trace
matches the OLS main-effect norm; each interaction's scale prior is centered
at the OLS norm ratio.  Incomplete designs inflate the squared norms of
effects whose OLS estimates are partially unavailable by
cells/(cells - missing).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import NotPositiveDefinite, chol_pd
from .model import (
    CellStats,
    EffectKey,
    Layout,
    all_effect_keys,
    anova_decompose,
    expand_effect,
)

NORM_FLOOR_RTOL = 1e-12


@dataclass
class HAHyper:
    """Hyperparameters for the hierarchical-array prior (and its SB variant).

    ``gamma_nu0``/``gamma_tau0_sq`` carry entries for *all* nonempty factor
    subsets; the hierarchical-array sampler only reads the interaction keys
    (main effects take their scale from the per-factor covariances), while
    the identity-covariance baseline reads the singleton keys too.
    """

    mu0: np.ndarray
    tau0_sq: np.ndarray
    nu0: float
    sigma0_sq: float
    eta_y0: float
    S_y0: np.ndarray
    eta0: dict[int, float]
    S0: dict[int, np.ndarray]
    gamma_nu0: dict[EffectKey, float]
    gamma_tau0_sq: dict[EffectKey, np.ndarray]

    def __post_init__(self):
        if np.any(self.tau0_sq <= 0) or self.sigma0_sq <= 0:
            raise ValueError("prior variances must be positive")
        for d, eta in self.eta0.items():
            m = self.S0[d].shape[0]
            if eta <= m + 1:
                raise ValueError(f"eta0[{d}]={eta} must exceed m+1={m + 1}")
        for key, tau in self.gamma_tau0_sq.items():
            if np.any(tau <= 0) or self.gamma_nu0[key] <= 0:
                raise ValueError(f"gamma hyperparameters for {key} must be positive")


def filled_ols_means(stats: CellStats, max_iter: int = 200, tol: float = 1e-12) -> np.ndarray:
    """Complete cell-means array, shape dims + (p,).

    Empty cells are filled by the fixed point of "predict from all
    lower-order terms", so the top-order interaction estimate is exactly zero
    there and lower-order OLS estimates use unweighted margins over the
    completed grid.
    """
    if stats.n_total == 0:
        raise ValueError("all cells are empty")
    layout = stats.layout
    obs = stats.means(fill=0.0)
    mask = stats.counts == 0
    if not mask.any():
        return obs
    top = tuple(range(layout.K))
    grand = stats.sums.sum(axis=tuple(range(layout.K))) / stats.n_total
    filled = obs.copy()
    filled[mask] = grand
    scale = max(1.0, float(np.max(np.abs(filled))))
    for _ in range(max_iter):
        arr = filled[..., 0] if layout.p == 1 else filled
        dec = anova_decompose(arr, layout)
        pred = arr - expand_effect(
            dec.effects[top], top, layout.dims, 0 if layout.p == 1 else 1
        )
        pred = pred[..., None] if layout.p == 1 else pred
        delta = float(np.max(np.abs(pred[mask] - filled[mask])))
        filled[mask] = pred[mask]
        if delta <= tol * scale:
            break
    return filled


def _missing_entries(stats: CellStats, key: EffectKey) -> int:
    """Entries of an effect whose OLS estimate is unavailable: zero marginal count."""
    other = tuple(d for d in range(stats.layout.K) if d not in key)
    marg = stats.counts.sum(axis=other) if other else stats.counts
    return int(np.count_nonzero(marg == 0))


def _sq_norms(effect: np.ndarray, p: int) -> np.ndarray:
    flat = effect.reshape(-1) if p == 1 else effect.reshape(-1, p)
    if p == 1:
        return np.array([math.fsum(x * x for x in flat)])
    return np.array([math.fsum(x * x for x in flat[:, r]) for r in range(p)])


def mle_error_covariance(stats: CellStats) -> np.ndarray:
    """Pooled within-cell residual covariance (MLE with the full-interaction model).

    Falls back to the total sample covariance when there are no residual
    degrees of freedom, and to a unit diagonal when even that degenerates.
    """
    p = stats.layout.p
    K = stats.layout.K
    nonempty = stats.layout.cells - stats.n_empty
    n = stats.n_total
    means = stats.means(fill=0.0).reshape(-1, p)
    w = stats.counts.reshape(-1).astype(float)
    within = stats.sumsq.sum(axis=tuple(range(K))) - np.einsum(
        "c,ci,cj->ij", w, means, means
    )
    df = n - nonempty
    cov = within / df if df > 0 else np.zeros((p, p))
    if df <= 0 or np.any(np.diag(cov) <= 0):
        grand = stats.sums.sum(axis=tuple(range(K))) / n
        total = stats.sumsq.sum(axis=tuple(range(K))) - n * np.outer(grand, grand)
        cov = total / max(n - 1, 1)
    if np.any(np.diag(cov) <= 0):
        cov = cov + np.eye(p)
    try:
        chol_pd(cov)
    except NotPositiveDefinite:
        cov = cov + (1e-8 * max(float(np.trace(cov)) / p, 1.0)) * np.eye(p)
    return cov


def default_hyperparameters(stats: CellStats) -> HAHyper:
    """Deterministic empirical-Bayes defaults computed from sufficient statistics."""
    layout = stats.layout
    if stats.n_total == 0:
        raise ValueError("all cells are empty")
    K, p = layout.K, layout.p
    filled = filled_ols_means(stats)
    dec = anova_decompose(filled[..., 0] if p == 1 else filled, layout)

    # Squared OLS norms per effect and response, inflated for missing entries.
    norms: dict[EffectKey, np.ndarray] = {}
    mean_sq = np.maximum(np.mean(filled**2, axis=tuple(range(K))), 1.0)
    floor = NORM_FLOOR_RTOL * mean_sq
    for key in all_effect_keys(K):
        raw = _sq_norms(dec.effects[key], p)
        missing = _missing_entries(stats, key)
        cells_key = int(np.prod([layout.dims[d] for d in key]))
        if missing:
            if missing >= cells_key:
                raise ValueError(f"effect {key} has no estimable entries")
            raw = raw * (cells_key / (cells_key - missing))
        norms[key] = np.maximum(raw, floor)

    sigma_hat = mle_error_covariance(stats)
    eta0: dict[int, float] = {}
    s0: dict[int, np.ndarray] = {}
    for d in range(K):
        m = layout.dims[d]
        s_scale = float(np.mean(norms[(d,)]))
        eta0[d] = float(m + 2)
        s0[d] = (s_scale / m) * np.eye(m)

    gamma_nu0: dict[EffectKey, float] = {}
    gamma_tau0: dict[EffectKey, np.ndarray] = {}
    for key in all_effect_keys(K):
        gamma_nu0[key] = 1.0
        if len(key) == 1:
            gamma_tau0[key] = norms[key] / layout.dims[key[0]]
        else:
            prod_main = np.prod([norms[(d,)] for d in key], axis=0)
            gamma_tau0[key] = np.maximum(prod_main, floor) / norms[key]

    mu0 = np.atleast_1d(np.asarray(dec.mu, dtype=float))
    tau0_sq = np.maximum(np.diag(sigma_hat).copy(), 1e-12)
    return HAHyper(
        mu0=mu0,
        tau0_sq=tau0_sq,
        nu0=1.0,
        sigma0_sq=float(sigma_hat[0, 0]),
        eta_y0=float(p + 2),
        S_y0=sigma_hat,
        eta0=eta0,
        S0=s0,
        gamma_nu0=gamma_nu0,
        gamma_tau0_sq=gamma_tau0,
    )
