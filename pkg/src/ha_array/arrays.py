"""Dense multiway-array algebra: vectorization, matricization, Kronecker and
mode products.

Conventions (hard contracts, everything downstream depends on them):

* ``vectorize`` is column-major: the first index varies fastest.  With this
  ordering a separable covariance over ``vec(A)`` for an array with modes
  ``0..K-1`` reads ``S_{K-1} kron ... kron S_0``.
* ``matricize(A, d)`` has rows indexed by mode ``d`` and columns indexed by
  the remaining modes with *lower* mode numbers varying fastest (Kolda/Bader
  unfolding).
* Modes are 0-based, as numpy axes are.
"""

from __future__ import annotations

import functools
from collections.abc import Sequence

import numpy as np

# Dense Kronecker products are for small-instance oracles only; the sampler
# hot path must go through mode products.
MAX_DENSE_KRON_ORDER = 4096


def vectorize(a: np.ndarray) -> np.ndarray:
    """Flatten ``a`` column-major (first index fastest)."""
    return np.ravel(a, order="F")


def unvectorize(v: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`vectorize`."""
    return np.reshape(v, tuple(dims), order="F")


def matricize(a: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding: shape ``(a.shape[mode], prod(rest))``.

    Columns are ordered with lower-numbered remaining modes varying fastest.
    """
    a = np.asarray(a)
    if not 0 <= mode < a.ndim:
        raise ValueError(f"mode {mode} out of range for a {a.ndim}-way array")
    return np.reshape(np.moveaxis(a, mode, 0), (a.shape[mode], -1), order="F")


def unmatricize(mat: np.ndarray, mode: int, dims: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`matricize` for an array of shape ``dims``."""
    dims = tuple(dims)
    if not 0 <= mode < len(dims):
        raise ValueError(f"mode {mode} out of range for dims {dims}")
    rest = dims[:mode] + dims[mode + 1 :]
    a = np.reshape(np.asarray(mat), (dims[mode],) + rest, order="F")
    return np.moveaxis(a, 0, mode)


def kron_all(mats: Sequence[np.ndarray]) -> np.ndarray:
    """Kronecker product of ``mats`` in the listed order.

    Guarded to small instances (resulting order <= MAX_DENSE_KRON_ORDER);
    this is oracle/test machinery, never the sampler hot path.
    """
    mats = [np.asarray(m) for m in mats]
    order = int(np.prod([m.shape[0] for m in mats])) if mats else 1
    if order > MAX_DENSE_KRON_ORDER:
        raise ValueError(
            f"dense Kronecker of order {order} exceeds guard {MAX_DENSE_KRON_ORDER}"
        )
    return functools.reduce(np.kron, mats)


def mode_product(a: np.ndarray, mat: np.ndarray, mode: int) -> np.ndarray:
    """Multiply ``a`` along ``mode`` by ``mat``: result[..,i,..] = sum_j mat[i,j] a[..,j,..]."""
    a = np.asarray(a)
    mat = np.asarray(mat)
    if mat.shape[1] != a.shape[mode]:
        raise ValueError(
            f"mode-{mode} product: factor is {mat.shape}, array dim is {a.shape[mode]}"
        )
    out = np.tensordot(a, mat, axes=(mode, 1))
    return np.moveaxis(out, -1, mode)


def multi_mode_product(
    a: np.ndarray, mats: Sequence[np.ndarray], modes: Sequence[int] | None = None
) -> np.ndarray:
    """Successive mode products of ``a`` with ``mats`` along ``modes`` (default 0..len-1)."""
    if modes is None:
        modes = range(len(mats))
    out = np.asarray(a)
    for mode, mat in zip(modes, mats):
        out = mode_product(out, mat, mode)
    return out


def mode_quadratic(
    a: np.ndarray, mode: int, inv_factors: Sequence[np.ndarray]
) -> np.ndarray:
    """Quadratic form A_(d) (kron of ``inv_factors``, reversed mode order) A_(d)^T.

    ``inv_factors`` are the *pre-inverted* symmetric factors for the modes
    other than ``mode``, listed in increasing mode order.  Computed by
    successive mode products, never materializing the Kronecker product.
    """
    a = np.asarray(a)
    other = [d for d in range(a.ndim) if d != mode]
    if len(inv_factors) != len(other):
        raise ValueError(
            f"expected {len(other)} factors for a {a.ndim}-way array, got {len(inv_factors)}"
        )
    for d, f in zip(other, inv_factors):
        f = np.asarray(f)
        if f.shape != (a.shape[d], a.shape[d]):
            raise ValueError(f"factor for mode {d} has shape {f.shape}, need ({a.shape[d]},)*2")
    t = multi_mode_product(a, inv_factors, other)
    g = matricize(a, mode) @ matricize(t, mode).T
    return (g + g.T) / 2.0


def check_symmetric(s: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """Validate symmetry to relative tolerance and return the symmetrized matrix."""
    s = np.asarray(s, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {s.shape}")
    scale = max(1.0, float(np.max(np.abs(s))))
    if np.max(np.abs(s - s.T)) > rtol * scale:
        raise ValueError("matrix is not symmetric to tolerance")
    return (s + s.T) / 2.0
