"""Comparator estimators and multivariate tests.

* ``sb_chain``: the standard-Bayes comparator -- the shared Gibbs sweep with
  factor covariances frozen at the identity and a sampled precision per
  effect, main effects included.
* ``additive_fits``: main-effects-only least squares (AOLS) and the additive
  Bayes chain (ASB).
* ``pillai_tests``: sequential (Type I) MANOVA tests with the standard
  approximate-F transform of the Pillai trace.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import f as f_dist

from .gibbs import Chain, ChainConfig, run_chain
from .model import CellStats, EmptyCellsError, Layout, all_effect_keys
from .priors import HAHyper


class RankDeficiencyError(ValueError):
    """The requested linear model is not estimable from the observed cells."""


@dataclass(frozen=True)
class PillaiRow:
    """One effect's test: Pillai trace, approximate F, dfs, p-value."""

    effect: str
    pillai: float
    approx_f: float
    num_df: int
    den_df: int
    p_value: float


def sb_chain(
    stats: CellStats, hyper: HAHyper, config: ChainConfig
) -> list[Chain]:
    """Identity-covariance baseline chains (full effect set)."""
    return run_chain(stats, hyper, config, mode="sb", method="sb")


def _contrast_rows(m: int) -> np.ndarray:
    """Sum-to-zero contrast coding: m levels -> m-1 columns, last level = -1."""
    c = np.zeros((m, m - 1))
    c[: m - 1] = np.eye(m - 1)
    c[m - 1] = -1.0
    return c


def _term_block(layout: Layout, key: tuple[int, ...]) -> np.ndarray:
    """Design columns for one effect over the full cell grid, shape (cells, prod(m_d - 1))."""
    cells = layout.cells
    block = np.ones((cells, 1))
    grid = np.indices(layout.dims).reshape(layout.K, -1).T  # cell index order: C-order
    for d in key:
        rows = _contrast_rows(layout.dims[d])[grid[:, d]]
        block = (block[:, :, None] * rows[:, None, :]).reshape(cells, -1)
    return block


def aols_cell_means(stats: CellStats) -> np.ndarray:
    """Weighted least squares fit of the main-effects (additive) model.

    Returns fitted cell means for the complete grid, shape dims (p = 1) or
    dims + (p,).  Raises :class:`RankDeficiencyError` when the additive model
    is not estimable from the observed cells.
    """
    layout = stats.layout
    keys = [(d,) for d in range(layout.K)]
    design = np.concatenate(
        [np.ones((layout.cells, 1))] + [_term_block(layout, k) for k in keys], axis=1
    )
    w = stats.counts.reshape(-1).astype(float)
    obs = w > 0
    x = design[obs]
    sums = stats.sums.reshape(-1, layout.p)[obs]
    a = x.T @ (x * w[obs][:, None])
    b = x.T @ sums
    if np.linalg.matrix_rank(a) < a.shape[0]:
        raise RankDeficiencyError(
            "additive model not estimable: some factor level has no observations"
        )
    beta = np.linalg.solve(a, b)
    fitted = design @ beta
    out = fitted.reshape(layout.dims + (layout.p,))
    return out[..., 0] if layout.p == 1 else out


def additive_fits(
    stats: CellStats, hyper: HAHyper, config: ChainConfig
) -> tuple[np.ndarray, list[Chain]]:
    """(AOLS fitted cell means, ASB chains restricted to main effects)."""
    aols = aols_cell_means(stats)
    keys = [(d,) for d in range(stats.layout.K)]
    asb = run_chain(stats, hyper, config, mode="sb", keys=keys, method="asb")
    return aols, asb


def _pillai_f(h: np.ndarray, e: np.ndarray, v_h: int, v_e: int, p: int) -> tuple[float, float, int, int, float]:
    v = float(np.trace(np.linalg.solve(h + e, h)))
    s = min(p, v_h)
    two_m = abs(v_h - p) - 1
    two_n = v_e - p - 1
    num_df = s * (two_m + s + 1)
    den_df = s * (two_n + s + 1)
    v = min(v, s - 1e-12)
    approx_f = (two_n + s + 1) / (two_m + s + 1) * v / (s - v)
    p_value = float(f_dist.sf(approx_f, num_df, den_df))
    return v, approx_f, int(num_df), int(den_df), p_value


def pillai_tests(stats: CellStats, keys=None) -> list[PillaiRow]:
    """Sequential MANOVA tests of every effect, in declared order.

    Hypothesis cross-product matrices come from Type I (sequential) fits of
    nested cell-mean models; the error matrix is the full-interaction
    residual.  For p = 1 the transform reduces to the classical F test.
    """
    layout = stats.layout
    if stats.n_empty:
        raise EmptyCellsError(stats.empty_cells())
    if keys is None:
        keys = all_effect_keys(layout.K)
    keys = [tuple(k) for k in keys]
    p = layout.p
    w = stats.counts.reshape(-1).astype(float)
    sums = stats.sums.reshape(-1, p)
    means = sums / w[:, None]
    s_yy = stats.sumsq.sum(axis=tuple(range(layout.K)))
    e_full = s_yy - np.einsum("c,ci,cj->ij", w, means, means)
    e_full = (e_full + e_full.T) / 2.0
    v_e = stats.n_total - layout.cells
    if v_e < p:
        raise ValueError(f"error df {v_e} below response dimension {p}")
    try:
        np.linalg.cholesky(e_full)
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular error cross-product matrix") from exc

    design = np.ones((layout.cells, 1))
    grand = sums.sum(axis=0) / stats.n_total
    resid_prev = s_yy - stats.n_total * np.outer(grand, grand)
    rows: list[PillaiRow] = []
    for key in keys:
        design = np.concatenate([design, _term_block(layout, key)], axis=1)
        a = design.T @ (design * w[:, None])
        b = design.T @ sums
        try:
            beta = np.linalg.solve(a, b)
        except np.linalg.LinAlgError as exc:
            raise RankDeficiencyError(f"model through {key} not estimable") from exc
        resid = s_yy - b.T @ beta
        h = resid_prev - resid
        h = (h + h.T) / 2.0
        resid_prev = resid
        v_h = int(np.prod([layout.dims[d] - 1 for d in key]))
        v, approx_f, num_df, den_df, p_value = _pillai_f(h, e_full, v_h, v_e, p)
        rows.append(
            PillaiRow(layout.effect_name(key), v, approx_f, num_df, den_df, p_value)
        )
    return rows
