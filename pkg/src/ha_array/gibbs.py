"""Gibbs sampler for cell-means arrays under the hierarchical-array prior.

The sweep order is fixed for reproducibility: balance-impute the cell means,
then the grand mean, then each effect (keys by increasing order, lexicographic
within order), then the error variance/covariance, then each factor covariance,
then each interaction scale.

Two prior modes share this code path:

* ``"ha"``: per-factor covariance matrices shared across every effect
  containing the factor, with one scale parameter per interaction (and per
  response when p > 1);
* ``"sb"``: factor covariances frozen at the identity with one sampled
  precision per effect (main effects included) -- the standard-Bayes
  comparator, obtained as the identity-covariance limit of the first mode.

Internally the state always carries a trailing response axis (length p, with
p = 1 for univariate models); the error variance is the 1x1 case of the
response covariance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from collections.abc import Sequence

import numpy as np

from . import __version__
from .arrays import mode_quadratic, multi_mode_product
from .linalg import (
    PDFactorization,
    chol_pd_jittered,
    sample_effect_kron,
    sample_gamma_dist,
    sample_inverse_wishart,
    sample_mvn_prec,
)
from .model import (
    CellStats,
    Decomposition,
    EffectKey,
    Layout,
    all_effect_keys,
    expand_effect,
)
from .priors import HAHyper
from .rng import RngStream

RECORD_ALL = frozenset({"M", "sigma", "Sigma", "gamma"})


@dataclass
class ChainConfig:
    """Run-length, seeding and recording options for one sampler run."""

    iterations: int = 11000
    burn_in: int = 1000
    thin: int = 10
    seed: int = 0
    chains: int = 1
    stream: int = 0
    augment: str = "auto"
    record: frozenset = RECORD_ALL
    n_jobs: int = 1

    def __post_init__(self):
        if self.burn_in >= self.iterations:
            raise ValueError("burn_in must be smaller than iterations")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if self.augment not in ("auto", "off"):
            raise ValueError("augment must be 'auto' or 'off'")
        unknown = set(self.record) - RECORD_ALL
        if unknown:
            raise ValueError(f"unknown record items {sorted(unknown)}")

    @property
    def n_draws(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


@dataclass
class HAState:
    """Current parameter values of one chain (unconstrained effects).

    ``effects[key]`` has shape ``tuple(m_d for d in key) + (p,)``; ``sigma_y``
    is the p x p error covariance (1x1 holds the error variance); ``Sigma[d]``
    the per-factor covariance; ``gamma[key]`` the per-response scale vector
    for each effect that carries one.
    """

    layout: Layout
    keys: tuple[EffectKey, ...]
    mode: str
    mu: np.ndarray
    effects: dict[EffectKey, np.ndarray]
    sigma_y: np.ndarray
    Sigma: dict[int, np.ndarray]
    gamma: dict[EffectKey, np.ndarray]
    _sigma_eigs: dict[int, tuple[np.ndarray, np.ndarray]] = field(
        default_factory=dict, repr=False
    )
    _sigma_facs: dict[int, PDFactorization] = field(default_factory=dict, repr=False)
    _sigma_y_fac: PDFactorization | None = field(default=None, repr=False)

    @property
    def p(self) -> int:
        return self.layout.p

    @property
    def sigma_sq(self) -> float:
        if self.p != 1:
            raise ValueError("sigma_sq is the p = 1 error variance; use sigma_y")
        return float(self.sigma_y[0, 0])

    def set_sigma_y(self, value: np.ndarray) -> None:
        self.sigma_y = np.atleast_2d(np.asarray(value, dtype=float))
        self._sigma_y_fac = None

    def sigma_y_fac(self) -> PDFactorization:
        if self._sigma_y_fac is None:
            self._sigma_y_fac = chol_pd_jittered(self.sigma_y)
        return self._sigma_y_fac

    def set_Sigma(self, d: int, value: np.ndarray) -> None:
        self.Sigma[d] = value
        self._sigma_eigs.pop(d, None)
        self._sigma_facs.pop(d, None)

    def sigma_eig(self, d: int) -> tuple[np.ndarray, np.ndarray]:
        if d not in self._sigma_eigs:
            w, u = np.linalg.eigh(self.Sigma[d])
            self._sigma_eigs[d] = (np.maximum(w, 1e-300), u)
        return self._sigma_eigs[d]

    def sigma_fac(self, d: int) -> PDFactorization:
        if d not in self._sigma_facs:
            self._sigma_facs[d] = chol_pd_jittered(self.Sigma[d])
        return self._sigma_facs[d]

    def cell_means(self) -> np.ndarray:
        """Cell-means array with trailing response axis, shape dims + (p,)."""
        out = np.zeros(self.layout.dims + (self.p,))
        out += self.mu
        for key, e in self.effects.items():
            out = out + expand_effect(e, key, self.layout.dims, 1)
        return out

    def decomposition(self) -> Decomposition:
        """Sum-to-zero decomposition of the current cell means (identifiable view)."""
        from .model import anova_decompose

        m = self.cell_means()
        return anova_decompose(m[..., 0] if self.p == 1 else m, self.layout)


def init_state(
    layout: Layout, keys: Sequence[EffectKey] | None = None, mode: str = "ha"
) -> HAState:
    """All effects zero, unit error variance, identity covariances, unit scales."""
    if mode not in ("ha", "sb"):
        raise ValueError("mode must be 'ha' or 'sb'")
    if keys is None:
        keys = all_effect_keys(layout.K)
    keys = tuple(sorted((tuple(k) for k in keys), key=lambda k: (len(k), k)))
    p = layout.p
    effects = {
        key: np.zeros(tuple(layout.dims[d] for d in key) + (p,)) for key in keys
    }
    gamma_keys = [k for k in keys if mode == "sb" or len(k) >= 2]
    return HAState(
        layout=layout,
        keys=keys,
        mode=mode,
        mu=np.zeros(p),
        effects=effects,
        sigma_y=np.eye(p),
        Sigma={d: np.eye(layout.dims[d]) for d in range(layout.K)},
        gamma={k: np.ones(p) for k in gamma_keys},
    )


def impute_balance(
    stats: CellStats, state: HAState, rng: np.random.Generator
) -> np.ndarray:
    """Balanced "full sample" cell means, shape dims + (p,).

    Cells already at the maximum count pass through untouched (no random
    draw consumed); a cell with n observed out of n_max gets its missing-part
    mean drawn from N(mu_cell, Sigma_y/(n_max - n)) and averaged back in.
    Empty cells are fully imputed from the current cell mean.
    """
    n_max = stats.n_max
    if n_max < 1:
        raise ValueError("no observations")
    counts = stats.counts
    deficit = n_max - counts
    obs = stats.means(fill=0.0)
    out = np.empty_like(obs)
    full = deficit == 0
    out[full] = obs[full]
    short = ~full
    k = int(np.count_nonzero(short))
    if k:
        mu_cell = state.cell_means()
        z = rng.standard_normal((k, state.p))
        el = state.sigma_y_fac().chol
        ym = mu_cell[short] + (z @ el.T) / np.sqrt(deficit[short])[:, None]
        out[short] = (
            counts[short][:, None] * obs[short] + deficit[short][:, None] * ym
        ) / n_max
    return out


def update_mu(
    state: HAState,
    ybar: np.ndarray,
    n_max: int,
    hyper: HAHyper,
    rng: np.random.Generator,
) -> None:
    """Conjugate normal update of the grand mean from balanced cell means."""
    layout = state.layout
    resid = ybar - state.cell_means() + state.mu
    rbar = resid.mean(axis=tuple(range(layout.K)))
    n_eff = n_max * layout.cells
    q = state.sigma_y_fac().inv()
    prec = np.diag(1.0 / hyper.tau0_sq) + n_eff * q
    h = hyper.mu0 / hyper.tau0_sq + n_eff * (q @ rbar)
    state.mu = sample_mvn_prec(h, prec, rng)


def update_effect(
    state: HAState,
    key: EffectKey,
    ybar: np.ndarray,
    n_max: int,
    rng: np.random.Generator,
) -> None:
    """Draw one effect array from its full conditional.

    Balanced path: the conditional precision is
    gamma * (kron of factor covariances)^{-1} + (n * prod of excluded dims /
    error variance) * I, sampled in the joint eigenbasis.  For p > 1 the
    response slices are exact Gibbs blocks: each slice conditions on the
    others through the error-covariance regression.
    """
    layout, p = state.layout, state.p
    e = state.effects[key]
    resid = ybar - state.cell_means() + expand_effect(e, key, layout.dims, 1)
    out_axes = tuple(d for d in range(layout.K) if d not in key)
    rbar = resid.mean(axis=out_axes) if out_axes else resid
    kappa0 = n_max * float(np.prod([layout.dims[d] for d in out_axes], initial=1.0))
    q = state.sigma_y_fac().inv()
    eigs = None if state.mode == "sb" else [state.sigma_eig(d) for d in key]
    gam = state.gamma.get(key)
    for r in range(p):
        z = rbar[..., r]
        if p > 1:
            for s in range(p):
                if s != r and q[r, s] != 0.0:
                    z = z + (q[r, s] / q[r, r]) * (rbar[..., s] - e[..., s])
        g = float(gam[r]) if gam is not None else 1.0
        e[..., r] = sample_effect_kron(z, eigs, g, kappa0 * q[r, r], rng)


def _residual_sscp(state: HAState, stats: CellStats) -> np.ndarray:
    """Observed-data residual cross-product matrix sum_cells sum_l (y - mu_cell)(..)^T."""
    p = state.p
    m = state.cell_means().reshape(-1, p)
    sums = stats.sums.reshape(-1, p)
    w = stats.counts.reshape(-1).astype(float)
    axes = tuple(range(state.layout.K))
    return (
        stats.sumsq.sum(axis=axes)
        - np.einsum("ci,cj->ij", sums, m)
        - np.einsum("ci,cj->ij", m, sums)
        + np.einsum("c,ci,cj->ij", w, m, m)
    )


def update_sigma2(
    state: HAState, stats: CellStats, hyper: HAHyper, rng: np.random.Generator
) -> None:
    """Inverse-gamma error-variance update (p = 1) from observed data."""
    if state.p != 1:
        raise ValueError("update_sigma2 requires p = 1")
    rss = float(_residual_sscp(state, stats)[0, 0])
    nu1 = hyper.nu0 + stats.n_total
    b = hyper.nu0 * hyper.sigma0_sq + rss
    draw = (b / 2.0) / rng.gamma(nu1 / 2.0, 1.0)
    state.set_sigma_y(np.array([[draw]]))


def update_Sigma_y(
    state: HAState, stats: CellStats, hyper: HAHyper, rng: np.random.Generator
) -> None:
    """Inverse-Wishart error-covariance update from observed data."""
    s1 = hyper.S_y0 + _residual_sscp(state, stats)
    s1 = (s1 + s1.T) / 2.0
    state.set_sigma_y(sample_inverse_wishart(hyper.eta_y0 + stats.n_total, s1, rng))


def update_Sigma(
    state: HAState, d: int, hyper: HAHyper, rng: np.random.Generator
) -> None:
    """Inverse-Wishart update of one factor's covariance.

    Degrees of freedom add p * prod(other dims in the key) per effect
    containing the factor; the scale accumulates the scale-weighted mode
    quadratic of every such effect.
    """
    layout, p = state.layout, state.p
    keys_d = [key for key in state.keys if d in key]
    df = hyper.eta0[d]
    s1 = hyper.S0[d].copy()
    eye_p = np.eye(p)
    for key in keys_d:
        df += p * float(np.prod([layout.dims[e] for e in key if e != d], initial=1.0))
        e_arr = state.effects[key]
        gam = state.gamma.get(key)
        scaled = e_arr if gam is None else e_arr * np.sqrt(gam)
        inv_others = [state.sigma_fac(f).inv() for f in key if f != d]
        if p == 1:
            s1 += mode_quadratic(scaled[..., 0], key.index(d), inv_others)
        else:
            s1 += mode_quadratic(scaled, key.index(d), inv_others + [eye_p])
    s1 = (s1 + s1.T) / 2.0
    state.set_Sigma(d, sample_inverse_wishart(df, s1, rng))


def update_gamma(
    state: HAState, key: EffectKey, hyper: HAHyper, rng: np.random.Generator
) -> None:
    """Gamma update of an effect's per-response scale(s)."""
    layout, p = state.layout, state.p
    e = state.effects[key]
    if state.mode == "sb":
        quad = np.einsum("cr,cr->r", e.reshape(-1, p), e.reshape(-1, p))
    else:
        invs = [state.sigma_fac(d).inv() for d in key]
        t = multi_mode_product(e, invs, range(len(key)))
        quad = np.einsum("cr,cr->r", e.reshape(-1, p), t.reshape(-1, p))
    cells_key = float(np.prod([layout.dims[d] for d in key]))
    nu1 = hyper.gamma_nu0[key] + cells_key
    tau1 = hyper.gamma_tau0_sq[key] + quad
    gam = state.gamma[key]
    for r in range(p):
        gam[r] = sample_gamma_dist(nu1 / 2.0, float(tau1[r]) / 2.0, rng)


def gibbs_sweep(
    state: HAState, stats: CellStats, hyper: HAHyper, rng: np.random.Generator
) -> None:
    """One systematic scan over every parameter, in the documented fixed order."""
    ybar = impute_balance(stats, state, rng)
    n_max = stats.n_max
    update_mu(state, ybar, n_max, hyper, rng)
    for key in state.keys:
        update_effect(state, key, ybar, n_max, rng)
    if state.p == 1:
        update_sigma2(state, stats, hyper, rng)
    else:
        update_Sigma_y(state, stats, hyper, rng)
    if state.mode == "ha":
        for d in sorted({d for key in state.keys for d in key}):
            update_Sigma(state, d, hyper, rng)
    for key in state.keys:
        if key in state.gamma:
            update_gamma(state, key, hyper, rng)


@dataclass
class Chain:
    """Thinned post-burn-in draws of one chain, with provenance."""

    layout: Layout
    method: str
    keys: tuple[EffectKey, ...]
    config: ChainConfig
    seed: int
    stream: int
    M: np.ndarray
    sigma: np.ndarray | None = None
    Sigma: dict[int, np.ndarray] = field(default_factory=dict)
    gamma: dict[EffectKey, np.ndarray] = field(default_factory=dict)
    build: str = __version__

    @property
    def n_draws(self) -> int:
        return self.M.shape[0]

    def posterior_mean(self) -> np.ndarray:
        return self.M.mean(axis=0)


def posterior_mean(chains: Sequence[Chain]) -> np.ndarray:
    """Pooled posterior mean of the cell-means array across chains."""
    return np.concatenate([c.M for c in chains], axis=0).mean(axis=0)


def _run_single_chain(
    stats: CellStats,
    hyper: HAHyper,
    config: ChainConfig,
    mode: str,
    keys: tuple[EffectKey, ...],
    stream: int,
    method: str,
) -> Chain:
    layout = stats.layout
    rng = RngStream(config.seed, stream).generator()
    state = init_state(layout, keys, mode)
    n_draws = config.n_draws
    p = layout.p
    rec = config.record
    m_draws = np.empty((n_draws,) + layout.dims + ((p,) if p > 1 else ()))
    sig_draws = np.empty((n_draws, p, p)) if "sigma" in rec else None
    big_draws = (
        {d: np.empty((n_draws, layout.dims[d], layout.dims[d])) for d in state.Sigma}
        if ("Sigma" in rec and mode == "ha")
        else {}
    )
    gam_draws = (
        {k: np.empty((n_draws, p)) for k in state.gamma} if "gamma" in rec else {}
    )
    kept = 0
    for it in range(1, config.iterations + 1):
        gibbs_sweep(state, stats, hyper, rng)
        if it > config.burn_in and (it - config.burn_in) % config.thin == 0:
            if kept >= n_draws:
                continue
            m = state.cell_means()
            m_draws[kept] = m[..., 0] if p == 1 else m
            if sig_draws is not None:
                sig_draws[kept] = state.sigma_y
            for d, arr in big_draws.items():
                arr[kept] = state.Sigma[d]
            for k, arr in gam_draws.items():
                arr[kept] = state.gamma[k]
            kept += 1
    return Chain(
        layout=layout,
        method=method,
        keys=keys,
        config=config,
        seed=config.seed,
        stream=stream,
        M=m_draws,
        sigma=sig_draws,
        Sigma=big_draws,
        gamma=gam_draws,
    )


def run_chain(
    stats: CellStats,
    hyper: HAHyper,
    config: ChainConfig,
    mode: str = "ha",
    keys: Sequence[EffectKey] | None = None,
    method: str | None = None,
) -> list[Chain]:
    """Run ``config.chains`` chains on distinct streams; returns one Chain each.

    Chains are reproducible individually: chain c always uses stream
    ``config.stream + c`` of ``config.seed`` regardless of scheduling.
    """
    if mode not in ("ha", "sb"):
        raise ValueError("mode must be 'ha' or 'sb'")
    if config.augment == "off" and stats.n_max != int(stats.counts.min()):
        raise ValueError("augment='off' requires balanced counts")
    if keys is None:
        keys = all_effect_keys(stats.layout.K)
    keys = tuple(sorted((tuple(k) for k in keys), key=lambda k: (len(k), k)))
    method = method or mode
    streams = [config.stream + c for c in range(config.chains)]
    if config.n_jobs != 1 and config.chains > 1:
        from joblib import Parallel, delayed

        return Parallel(n_jobs=config.n_jobs)(
            delayed(_run_single_chain)(stats, hyper, config, mode, keys, s, method)
            for s in streams
        )
    return [
        _run_single_chain(stats, hyper, config, mode, keys, s, method)
        for s in streams
    ]


@dataclass(frozen=True)
class TransformRecord:
    """How raw responses were mapped to model scale, for back-reporting."""

    power: float | None
    center: np.ndarray | None
    scale: np.ndarray | None


def manova_preprocess(
    y: np.ndarray, transform: str = "quarter-power", standardize: bool = True
) -> tuple[np.ndarray, TransformRecord]:
    """Quarter-power transform then per-response standardization.

    ``transform`` is "quarter-power" or "none"; negative responses are an
    error under the power transform, as is a zero-variance column under
    standardization.
    """
    y = np.asarray(y, dtype=float)
    flat = y.reshape(-1, y.shape[-1]) if y.ndim > 1 else y.reshape(-1, 1)
    power = None
    if transform == "quarter-power":
        if np.any(flat < 0):
            raise ValueError("negative response incompatible with the quarter-power transform")
        flat = flat**0.25
        power = 0.25
    elif transform != "none":
        raise ValueError(f"unknown transform {transform!r}")
    center = scale = None
    if standardize:
        center = flat.mean(axis=0)
        scale = flat.std(axis=0)
        if np.any(scale == 0):
            bad = [int(i) for i in np.flatnonzero(scale == 0)]
            raise ValueError(f"zero-variance response column(s) {bad}")
        flat = (flat - center) / scale
    out = flat.reshape(y.shape) if y.ndim > 1 else flat[:, 0]
    return out, TransformRecord(power=power, center=center, scale=scale)
