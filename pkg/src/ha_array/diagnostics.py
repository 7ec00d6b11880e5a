"""Markov-chain and posterior diagnostics.

Conventions (the literature leaves them open, so they are pinned here):
effective sample size uses Geyer's initial-positive-sequence estimator,
clamped at 1.05x the series length; the two-window mean-equality z uses the
first 10% against the last 50% with Bartlett-window long-run variances;
degenerate (constant) series report ESS = length, z = 0, autocorrelation 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gibbs import Chain
from .model import Decomposition, EffectKey

ESS_CLAMP = 1.05


def _is_constant(x: np.ndarray) -> bool:
    return bool(np.all(x == x[0]))


def autocorr(series, lag: int) -> float:
    """Sample autocorrelation at ``lag``; 0 for constant series."""
    x = np.asarray(series, dtype=float)
    if lag < 0 or x.size < lag + 1:
        raise ValueError(f"need at least lag+1={lag + 1} points, got {x.size}")
    if _is_constant(x):
        return 0.0
    x = x - x.mean()
    denom = float(x @ x)
    if lag == 0:
        return 1.0
    return float(x[:-lag] @ x[lag:]) / denom


def _autocov(x: np.ndarray, max_lag: int) -> np.ndarray:
    n = x.size
    x = x - x.mean()
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    return np.fft.irfft(f * np.conj(f), nfft)[: max_lag + 1] / n


def ess(series) -> float:
    """Effective sample size via the initial-positive-sequence estimator."""
    x = np.asarray(series, dtype=float)
    n = x.size
    if n < 10:
        raise ValueError(f"series too short for ESS: {n} < 10")
    if _is_constant(x):
        return float(n)
    max_lag = n - 2
    acov = _autocov(x, max_lag)
    # Sum adjacent-pair autocovariances while the pair sums stay positive.
    tail = 0.0
    t = 1
    while t + 1 <= max_lag:
        pair = acov[t] + acov[t + 1]
        if pair <= 0:
            break
        tail += pair
        t += 2
    var_hat = acov[0] + 2.0 * tail
    out = n * acov[0] / var_hat
    return float(min(out, ESS_CLAMP * n))


def _long_run_variance(x: np.ndarray) -> float:
    """Bartlett-window spectral variance estimate at frequency zero."""
    n = x.size
    lags = max(1, int(np.sqrt(n)))
    acov = _autocov(x, min(lags, n - 1))
    weights = 1.0 - np.arange(1, len(acov)) / (lags + 1.0)
    return float(acov[0] + 2.0 * (weights @ acov[1:]))


def geweke_z(series, first: float = 0.1, last: float = 0.5) -> float:
    """Two-window mean-equality z-score (first 10% vs last 50%); 0 for constant series."""
    x = np.asarray(series, dtype=float)
    if x.size < 10:
        raise ValueError(f"series too short for the z diagnostic: {x.size} < 10")
    if _is_constant(x):
        return 0.0
    a = x[: max(2, int(first * x.size))]
    b = x[-max(2, int(last * x.size)) :]
    va = _long_run_variance(a) / a.size
    vb = _long_run_variance(b) / b.size
    denom = np.sqrt(max(va + vb, 1e-300))
    return float((a.mean() - b.mean()) / denom)


@dataclass
class IntervalReport:
    """Central posterior intervals per cell, optionally scored against truth."""

    level: float
    lower: np.ndarray
    upper: np.ndarray
    mean_width: float
    coverage: float | None = None
    covered: np.ndarray | None = None

    def __post_init__(self):
        if np.any(self.lower > self.upper):
            raise ValueError("interval lower bound above upper bound")


def interval_report(
    chains: "Chain | list[Chain]", level: float = 0.95, truth: np.ndarray | None = None
) -> IntervalReport:
    """Empirical central intervals for every cell mean, pooled across chains."""
    if isinstance(chains, Chain):
        chains = [chains]
    draws = np.concatenate([c.M for c in chains], axis=0)
    if draws.shape[0] < 1:
        raise ValueError("no recorded draws")
    alpha = (1.0 - level) / 2.0
    lower = np.quantile(draws, alpha, axis=0)
    upper = np.quantile(draws, 1.0 - alpha, axis=0)
    width = float(np.mean(upper - lower))
    coverage = covered = None
    if truth is not None:
        truth = np.asarray(truth, dtype=float)
        covered = (truth >= lower) & (truth <= upper)
        coverage = float(np.mean(covered))
    return IntervalReport(level, lower, upper, width, coverage, covered)


def effect_level_correlations(
    decs: "Decomposition | list[Decomposition]", d: int
) -> tuple[np.ndarray, np.ndarray]:
    """Correlations between a factor's levels across every coefficient involving it.

    Stacks the factor's main-effect column(s) and, for each two-way
    interaction containing the factor, the coefficients across the other
    factor's levels (and across responses and across the supplied estimates),
    into a levels x coefficients matrix; rows are then Pearson-correlated.
    Returns (m_d x m_d correlation matrix, zero-variance row flags); flagged
    rows get off-diagonal correlations of 0.
    """
    if isinstance(decs, Decomposition):
        decs = [decs]
    layout = decs[0].layout
    m = layout.dims[d]
    cols: list[np.ndarray] = []
    for dec in decs:
        for key in dec.keys():
            if d not in key or len(key) > 2:
                continue
            e = dec.effects[key]
            if len(key) == 2:
                e = np.moveaxis(e, key.index(d), 0)
            block = e.reshape(m, -1)
            cols.append(block)
    if not cols:
        raise ValueError(f"no main-effect or two-way coefficients involve factor {d}")
    mat = np.concatenate(cols, axis=1)
    if mat.shape[1] < 2:
        raise ValueError("need at least 2 coefficient columns to correlate levels")
    centered = mat - mat.mean(axis=1, keepdims=True)
    norms = np.sqrt(np.sum(centered**2, axis=1))
    flags = norms == 0
    safe = np.where(flags, 1.0, norms)
    c = (centered / safe[:, None]) @ (centered / safe[:, None]).T
    c[flags, :] = 0.0
    c[:, flags] = 0.0
    np.fill_diagonal(c, 1.0)
    return np.clip(c, -1.0, 1.0), flags


def cov_to_corr(s: np.ndarray) -> np.ndarray:
    d = np.sqrt(np.diag(s))
    c = s / np.outer(d, d)
    np.fill_diagonal(c, 1.0)
    return np.clip(c, -1.0, 1.0)


def posterior_correlation_matrices(
    chains: "Chain | list[Chain]",
) -> dict[int, np.ndarray]:
    """Posterior-mean correlation matrix per factor, averaged draw by draw."""
    if isinstance(chains, Chain):
        chains = [chains]
    if not chains or not chains[0].Sigma:
        raise ValueError("no factor-covariance draws recorded")
    out: dict[int, np.ndarray] = {}
    for d in sorted(chains[0].Sigma):
        draws = np.concatenate([c.Sigma[d] for c in chains], axis=0)
        acc = np.zeros(draws.shape[1:])
        for k in range(draws.shape[0]):
            acc += cov_to_corr(draws[k])
        out[d] = acc / draws.shape[0]
    return out


def posterior_summary(chains: "Chain | list[Chain]", level: float = 0.95):
    """(mean, sd, lower, upper) arrays over the cell-means draws."""
    if isinstance(chains, Chain):
        chains = [chains]
    draws = np.concatenate([c.M for c in chains], axis=0)
    alpha = (1.0 - level) / 2.0
    return (
        draws.mean(axis=0),
        draws.std(axis=0, ddof=1),
        np.quantile(draws, alpha, axis=0),
        np.quantile(draws, 1.0 - alpha, axis=0),
    )
