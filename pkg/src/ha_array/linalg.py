"""Positive-definite linear algebra and the distribution samplers used by the
Gibbs sweep.

Parametrization contracts (repo-wide):

* gamma draws use the *rate* convention: mean = shape/rate;
* ``sample_inverse_wishart(eta, S)`` has mean ``S / (eta - m - 1)``;
* ``sample_mvn_prec(h, P)`` draws from N(P^{-1} h, P^{-1}) given natural
  parameters.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from collections.abc import Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .arrays import mode_product

PIVOT_RTOL = 1e-12
JITTER_RTOL = 1e-8


class NotPositiveDefinite(Exception):
    """A symmetric matrix failed the positive-definiteness check."""


@dataclass
class PDFactorization:
    """Cholesky factorization of a positive-definite matrix.

    ``chol`` is lower triangular with ``chol @ chol.T == mat``.  The
    eigendecomposition is computed lazily when a sampler needs the
    eigenbasis fast path.
    """

    mat: np.ndarray
    chol: np.ndarray
    _eig: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)
    _inv: np.ndarray | None = field(default=None, repr=False)

    @property
    def order(self) -> int:
        return self.chol.shape[0]

    def eigh(self) -> tuple[np.ndarray, np.ndarray]:
        """(eigenvalues, orthonormal eigenvectors) of the source matrix."""
        if self._eig is None:
            w, u = np.linalg.eigh(self.mat)
            self._eig = (w, u)
        return self._eig

    def solve(self, b: np.ndarray) -> np.ndarray:
        y = solve_triangular(self.chol, b, lower=True, check_finite=False)
        return solve_triangular(self.chol.T, y, lower=False, check_finite=False)

    def inv(self) -> np.ndarray:
        if self._inv is None:
            self._inv = self.solve(np.eye(self.order))
        return self._inv


def chol_pd(s: np.ndarray) -> PDFactorization:
    """Cholesky of a symmetric matrix; raises :class:`NotPositiveDefinite`.

    Failure means a pivot fell at or below ``1e-12 * trace(S)/m``, signalling
    a degenerate scale update; callers apply the jitter policy.
    """
    s = np.asarray(s, dtype=float)
    m = s.shape[0]
    try:
        el = np.linalg.cholesky(s)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    tol = PIVOT_RTOL * max(np.trace(s), 0.0) / m
    if np.min(np.diag(el)) ** 2 <= tol:
        raise NotPositiveDefinite(f"pivot below threshold {tol:g}")
    return PDFactorization(s, el)


def chol_pd_jittered(s: np.ndarray) -> PDFactorization:
    """Jitter policy: on failure add 1e-8*trace/m to the diagonal once, then fail hard."""
    try:
        return chol_pd(s)
    except NotPositiveDefinite:
        s = np.asarray(s, dtype=float)
        m = s.shape[0]
        bump = JITTER_RTOL * max(np.trace(s), float(m) * np.finfo(float).tiny) / m
        return chol_pd(s + bump * np.eye(m))


def sample_mvn_prec(
    h: np.ndarray, prec: PDFactorization | np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Draw from N(P^{-1} h, P^{-1}), with P given as matrix or factorization."""
    if not isinstance(prec, PDFactorization):
        prec = chol_pd(np.asarray(prec, dtype=float))
    h = np.asarray(h, dtype=float)
    mean = prec.solve(h)
    z = rng.standard_normal(prec.order)
    return mean + solve_triangular(prec.chol.T, z, lower=False, check_finite=False)


def identity_eigs(dims: Sequence[int]) -> list[tuple[np.ndarray, np.ndarray]]:
    """Eigenpairs of identity prior factors, for the frozen-covariance path."""
    return [(np.ones(m), np.eye(m)) for m in dims]


def sample_effect_kron(
    rbar: np.ndarray,
    eigs: Sequence[tuple[np.ndarray, np.ndarray]] | None,
    gamma: float,
    kappa: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw from N((gamma*K^{-1} + kappa I)^{-1} kappa vec(rbar), (gamma*K^{-1} + kappa I)^{-1})
    where K is the Kronecker (separable) covariance with per-mode factors.

    ``eigs[d]`` is the eigendecomposition of mode ``d``'s covariance factor;
    ``None`` means all factors are the identity (no basis rotations).  Cost is
    O(prod(m) * sum(m)) via mode products in the joint eigenbasis, versus the
    dense O(prod(m)^3) solve.
    """
    rbar = np.asarray(rbar, dtype=float)
    if gamma <= 0 or kappa <= 0:
        raise ValueError("gamma and kappa must be positive")
    if eigs is None:
        prec = gamma + kappa
        return kappa * rbar / prec + rng.standard_normal(rbar.shape) / np.sqrt(prec)
    if len(eigs) != rbar.ndim:
        raise ValueError(f"need {rbar.ndim} eigenpairs, got {len(eigs)}")
    for d, (w, u) in enumerate(eigs):
        if u.shape != (rbar.shape[d], rbar.shape[d]) or w.shape != (rbar.shape[d],):
            raise ValueError(f"eigenpair for mode {d} does not match dim {rbar.shape[d]}")
    z = rbar
    for d, (_, u) in enumerate(eigs):
        z = mode_product(z, u.T, d)
    lam = functools.reduce(np.multiply.outer, [w for w, _ in eigs]).reshape(rbar.shape)
    prec = gamma / lam + kappa
    w = kappa * z / prec + rng.standard_normal(rbar.shape) / np.sqrt(prec)
    for d, (_, u) in enumerate(eigs):
        w = mode_product(w, u, d)
    return w


def sample_inverse_wishart(
    eta: float, s: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Inverse-Wishart draw with mean ``S / (eta - m - 1)``.

    Bartlett decomposition of the Wishart on S^{-1}: with S = L L^T and A the
    Bartlett factor, the draw is X^T X for X = A^{-1} L^T, positive definite
    by construction.  Draws under (eta, c*S) are exactly c times the draws
    under (eta, S) for the same stream state.
    """
    s = np.asarray(s, dtype=float)
    m = s.shape[0]
    if eta <= m - 1:
        raise ValueError(f"degrees of freedom {eta} must exceed m-1 = {m - 1}")
    el = chol_pd_jittered(s).chol
    a = np.zeros((m, m))
    a[np.diag_indices(m)] = np.sqrt(rng.chisquare(eta - np.arange(m)))
    if m > 1:
        a[np.tril_indices(m, -1)] = rng.standard_normal(m * (m - 1) // 2)
    x = solve_triangular(a, el.T, lower=True, check_finite=False)
    return x.T @ x


def sample_gamma_dist(shape: float, rate: float, rng: np.random.Generator) -> float:
    """Gamma draw in the rate convention: mean shape/rate, variance shape/rate^2."""
    if shape <= 0 or rate <= 0:
        raise ValueError("shape and rate must be positive")
    return float(rng.gamma(shape, 1.0 / rate))
