"""Factorial layouts, sufficient statistics, and the ANOVA/MANOVA
decomposition of cell-means arrays.

The decomposition used for reporting and OLS comparisons is the classical
unweighted sum-to-zero one: every effect array sums to zero over each of its
own factor indices.  The Gibbs sampler works with unconstrained effects; all
cross-method comparisons happen on cell means or on decompositions of cell
means, which are identifiable.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from itertools import combinations
from collections.abc import Sequence

import numpy as np

EffectKey = tuple[int, ...]


class EmptyCellsError(ValueError):
    """A complete cell-mean estimate was demanded but some cells are empty."""

    def __init__(self, empty_cells: list[tuple[int, ...]]):
        self.empty_cells = empty_cells
        preview = ", ".join(map(str, empty_cells[:8]))
        more = "" if len(empty_cells) <= 8 else f" (+{len(empty_cells) - 8} more)"
        super().__init__(f"{len(empty_cells)} empty cell(s): {preview}{more}")


class CsvFormatError(ValueError):
    """A malformed row in a long-format CSV; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


@dataclass(frozen=True)
class Layout:
    """Shape of a cross-classified layout: K factors with dims (m_1..m_K), p responses."""

    dims: tuple[int, ...]
    p: int = 1
    factors: tuple[str, ...] = ()
    levels: tuple[tuple[str, ...], ...] = ()

    def __post_init__(self):
        dims = tuple(int(m) for m in self.dims)
        object.__setattr__(self, "dims", dims)
        if len(dims) < 1 or any(m < 1 for m in dims):
            raise ValueError(f"invalid dims {dims}")
        if self.p < 1:
            raise ValueError("p must be >= 1")
        factors = self.factors or tuple(f"f{d + 1}" for d in range(len(dims)))
        if len(factors) != len(dims):
            raise ValueError("factor name count does not match dims")
        object.__setattr__(self, "factors", tuple(factors))
        levels = self.levels or tuple(
            tuple(str(i + 1) for i in range(m)) for m in dims
        )
        if tuple(len(lv) for lv in levels) != dims:
            raise ValueError("level label counts do not match dims")
        object.__setattr__(self, "levels", tuple(tuple(lv) for lv in levels))

    @property
    def K(self) -> int:
        return len(self.dims)

    @property
    def cells(self) -> int:
        return int(np.prod(self.dims))

    def effect_name(self, key: EffectKey) -> str:
        return ":".join(self.factors[d] for d in key)


def all_effect_keys(K: int, max_order: int | None = None) -> list[EffectKey]:
    """All nonempty factor subsets, ordered by (order, lexicographic)."""
    top = K if max_order is None else max_order
    return [
        tuple(c) for r in range(1, top + 1) for c in combinations(range(K), r)
    ]


def normalize_key(key: Sequence[int], K: int) -> EffectKey:
    k = tuple(sorted(int(d) for d in key))
    if len(set(k)) != len(k) or not k or k[0] < 0 or k[-1] >= K:
        raise ValueError(f"invalid effect key {key} for K={K}")
    return k


def expand_effect(
    arr: np.ndarray, key: EffectKey, dims: Sequence[int], trailing: int = 0
) -> np.ndarray:
    """Broadcast view of an effect array against the full cell grid.

    ``arr`` has one axis per factor in ``key`` (plus ``trailing`` extra axes);
    the result has a (possibly size-1) axis for every factor, ready to add to
    a full ``dims``-shaped array.
    """
    shape = tuple(dims[d] if d in key else 1 for d in range(len(dims)))
    if trailing:
        shape = shape + arr.shape[arr.ndim - trailing :]
    return arr.reshape(shape)


@dataclass
class Decomposition:
    """Grand mean plus one sum-to-zero effect array per factor subset.

    For ``p == 1``, ``mu`` is a float and each effect has shape
    ``tuple(m_d for d in key)``; for ``p > 1``, ``mu`` is a (p,) vector and
    effects have a trailing response axis.
    """

    layout: Layout
    mu: float | np.ndarray
    effects: dict[EffectKey, np.ndarray] = field(default_factory=dict)

    def keys(self) -> list[EffectKey]:
        return sorted(self.effects, key=lambda k: (len(k), k))


def _marginal_means(m: np.ndarray, K: int) -> dict[EffectKey, np.ndarray]:
    means: dict[EffectKey, np.ndarray] = {}
    for r in range(K + 1):
        for t in combinations(range(K), r):
            drop = tuple(d for d in range(K) if d not in t)
            means[t] = m.mean(axis=drop) if drop else m.copy()
    return means


def anova_decompose(m: np.ndarray, layout: Layout | None = None) -> Decomposition:
    """Exact decomposition into grand mean + sum-to-zero effects.

    Effects are iterated unweighted marginal means (Moebius over factor
    subsets); ``cell_means`` reconstructs the input exactly.
    """
    m = np.asarray(m, dtype=float)
    if layout is None:
        layout = Layout(dims=m.shape)
    expected = layout.dims if layout.p == 1 else layout.dims + (layout.p,)
    if m.shape != expected:
        raise ValueError(f"array shape {m.shape} does not match layout {expected}")
    K = layout.K
    means = _marginal_means(m, K)
    mu = means[()]
    effects: dict[EffectKey, np.ndarray] = {}
    trailing = 0 if layout.p == 1 else 1
    for key in all_effect_keys(K):
        dims_key = tuple(layout.dims[d] for d in key)
        shape = dims_key + ((layout.p,) if trailing else ())
        e = np.zeros(shape)
        for r in range(len(key) + 1):
            for t in combinations(key, r):
                sign = 1.0 if (len(key) - len(t)) % 2 == 0 else -1.0
                sub = tuple(dims_key[i] if key[i] in t else 1 for i in range(len(key)))
                if trailing:
                    sub = sub + (layout.p,)
                e += sign * means[t].reshape(sub)
        effects[key] = e
    return Decomposition(layout, float(mu) if layout.p == 1 else mu, effects)


def cell_means(dec: Decomposition) -> np.ndarray:
    """Assemble the cell-means array: mu plus every effect at the cell's sub-index."""
    layout = dec.layout
    trailing = 0 if layout.p == 1 else 1
    shape = layout.dims + ((layout.p,) if trailing else ())
    out = np.zeros(shape)
    out += dec.mu
    for key, e in dec.effects.items():
        out = out + expand_effect(e, key, layout.dims, trailing)
    return out


def effect_magnitude(dec: Decomposition, key: EffectKey) -> float | np.ndarray:
    """Squared L2 norm of an effect divided by the product of its level counts.

    Accumulation uses ``math.fsum`` so magnitudes are exactly invariant under
    within-effect level permutations.  Returns a per-response vector when
    p > 1.
    """
    key = normalize_key(key, dec.layout.K)
    if key not in dec.effects:
        raise KeyError(f"effect {key} not in decomposition")
    e = dec.effects[key]
    cells = float(np.prod([dec.layout.dims[d] for d in key]))
    if dec.layout.p == 1:
        return math.fsum(x * x for x in e.ravel()) / cells
    flat = e.reshape(-1, dec.layout.p)
    return np.array(
        [math.fsum(x * x for x in flat[:, r]) / cells for r in range(dec.layout.p)]
    )


def ase(m_hat: np.ndarray, m: np.ndarray) -> float:
    """Average squared error: ||m_hat - m||^2 / number of entries."""
    m_hat = np.asarray(m_hat, dtype=float)
    m = np.asarray(m, dtype=float)
    if m_hat.shape != m.shape:
        raise ValueError(f"shape mismatch {m_hat.shape} vs {m.shape}")
    return float(np.mean((m_hat - m) ** 2))


@dataclass
class CellStats:
    """Per-cell sufficient statistics: counts, response sums, cross-product sums.

    ``counts`` has shape ``dims``; ``sums`` has shape ``dims + (p,)``;
    ``sumsq`` has shape ``dims + (p, p)`` (within-cell sum of y y^T).
    """

    layout: Layout
    counts: np.ndarray
    sums: np.ndarray
    sumsq: np.ndarray

    def __post_init__(self):
        dims, p = self.layout.dims, self.layout.p
        self.counts = np.asarray(self.counts)
        self.sums = np.asarray(self.sums, dtype=float)
        self.sumsq = np.asarray(self.sumsq, dtype=float)
        if self.counts.shape != dims:
            raise ValueError(f"counts shape {self.counts.shape} != dims {dims}")
        if self.sums.shape != dims + (p,):
            raise ValueError(f"sums shape {self.sums.shape} != {dims + (p,)}")
        if self.sumsq.shape != dims + (p, p):
            raise ValueError(f"sumsq shape {self.sumsq.shape} != {dims + (p, p)}")
        if np.any(self.counts < 0):
            raise ValueError("negative cell count")
        empty = self.counts == 0
        if np.any(np.abs(self.sums[empty]) > 0) or np.any(np.abs(self.sumsq[empty]) > 0):
            raise ValueError("nonzero sums in empty cells")

    @property
    def n_total(self) -> int:
        return int(self.counts.sum())

    @property
    def n_max(self) -> int:
        return int(self.counts.max())

    @property
    def n_empty(self) -> int:
        return int(np.count_nonzero(self.counts == 0))

    def empty_cells(self) -> list[tuple[int, ...]]:
        return [tuple(ix) for ix in np.argwhere(self.counts == 0)]

    def means(self, fill: float = np.nan) -> np.ndarray:
        """Observed per-cell mean vectors, shape dims + (p,); ``fill`` where empty."""
        counts = self.counts[..., None]
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(counts > 0, self.sums / np.maximum(counts, 1), fill)
        return out


def ols_cell_means(stats: CellStats, require_complete: bool = False) -> np.ndarray:
    """Full-interaction-model OLS estimate of the cell means: per-cell sample means.

    Empty cells come back NaN; ``require_complete=True`` raises
    :class:`EmptyCellsError` instead.
    """
    if require_complete and stats.n_empty:
        raise EmptyCellsError(stats.empty_cells())
    m = stats.means()
    return m[..., 0] if stats.layout.p == 1 else m


@dataclass(frozen=True)
class CsvSchema:
    """Column mapping for long-format CSV ingestion.

    ``levels`` optionally predeclares the level labels per factor (in order);
    with ``extend_levels=False`` an unseen label is an error, otherwise labels
    are appended in first-appearance order.
    """

    factors: tuple[str, ...]
    responses: tuple[str, ...]
    levels: tuple[tuple[str, ...], ...] | None = None
    extend_levels: bool = True


def read_long_rows(path, schema: CsvSchema) -> tuple[Layout, np.ndarray, np.ndarray]:
    """Parse a long-format CSV into (layout, cell indices (N, K), responses (N, p)).

    The file must be UTF-8 with a header row, string factor levels, and '.'
    decimal responses.  Malformed rows raise :class:`CsvFormatError` with the
    offending line number.
    """
    K = len(schema.factors)
    p = len(schema.responses)
    if K < 1 or p < 1:
        raise ValueError("schema needs at least one factor and one response column")
    label_maps: list[dict[str, int]] = []
    for d in range(K):
        preset = schema.levels[d] if schema.levels else ()
        label_maps.append({lab: i for i, lab in enumerate(preset)})

    indices: list[tuple[int, ...]] = []
    values: list[np.ndarray] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in (*schema.factors, *schema.responses):
            if col not in header:
                raise CsvFormatError(1, f"missing column {col!r}")
        for line, row in enumerate(reader, start=2):
            idx = []
            for d, col in enumerate(schema.factors):
                lab = row.get(col)
                if lab is None or lab == "":
                    raise CsvFormatError(line, f"missing factor value in column {col!r}")
                if lab not in label_maps[d]:
                    if not schema.extend_levels:
                        raise CsvFormatError(line, f"unknown level {lab!r} for {col!r}")
                    label_maps[d][lab] = len(label_maps[d])
                idx.append(label_maps[d][lab])
            y = np.empty(p)
            for r, col in enumerate(schema.responses):
                val = row.get(col)
                if val is None or val == "":
                    raise CsvFormatError(line, f"missing response value in column {col!r}")
                try:
                    y[r] = float(val)
                except ValueError:
                    raise CsvFormatError(
                        line, f"non-numeric response {val!r} in column {col!r}"
                    ) from None
            indices.append(tuple(idx))
            values.append(y)

    if not indices:
        raise CsvFormatError(2, "no data rows")
    dims = tuple(len(lm) for lm in label_maps)
    levels = tuple(tuple(lm.keys()) for lm in label_maps)
    layout = Layout(dims=dims, p=p, factors=schema.factors, levels=levels)
    return layout, np.array(indices, dtype=int), np.array(values)


def aggregate_rows(layout: Layout, indices: np.ndarray, y: np.ndarray) -> CellStats:
    """Fold per-observation rows into per-cell sufficient statistics."""
    dims, p = layout.dims, layout.p
    counts = np.zeros(dims, dtype=int)
    sums = np.zeros(dims + (p,))
    sumsq = np.zeros(dims + (p, p))
    y = y.reshape(-1, p)
    for row, yv in zip(indices, y):
        idx = tuple(row)
        counts[idx] += 1
        sums[idx] += yv
        sumsq[idx] += np.outer(yv, yv)
    return CellStats(layout, counts, sums, sumsq)


def ingest_long_csv(path, schema: CsvSchema) -> CellStats:
    """Accumulate exact counts/sums/cross-products from a long-format CSV."""
    layout, indices, y = read_long_rows(path, schema)
    return aggregate_rows(layout, indices, y)
