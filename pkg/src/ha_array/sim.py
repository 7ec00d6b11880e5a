"""Simulation regimes and the replicated comparative-study driver.

Four generators produce truth arrays: a binned random cubic rescaled to
calibrated effect magnitudes (order-consistent similarity patterns), its
within-effect level permutation (same magnitudes, no consistency), draws from
the identity-covariance prior itself, and a binned linear (exactly additive)
array.  ``run_study`` simulates unbalanced datasets from a truth array,
fits the requested estimators, and records squared-error, interval, and
Bayes-risk summaries as tidy rows.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from itertools import product as iter_product
from pathlib import Path

import numpy as np

from .baselines import aols_cell_means, sb_chain
from .diagnostics import interval_report
from .gibbs import Chain, ChainConfig, run_chain
from .model import (
    CellStats,
    Decomposition,
    Layout,
    all_effect_keys,
    anova_decompose,
    ase,
    cell_means,
    effect_magnitude,
    ols_cell_means,
)
from .priors import default_hyperparameters
from .rng import make_rng

REGIMES = ("order-consistent", "order-inconsistent", "sb-generated", "additive")
METHODS = ("ols", "sb", "ha", "aols", "asb")

# Calibration targets for the 15x7x3 truth arrays (squared effect norms over
# effect size): mains, two-ways, three-way for the cubic; mains for the
# additive array.
OC_TARGETS = {
    (0,): 5.267,
    (1,): 0.012,
    (2,): 0.004,
    (0, 1): 1.365,
    (0, 2): 1.312,
    (1, 2): 0.384,
    (0, 1, 2): 0.474,
}
ADDITIVE_TARGETS = {(0,): 3.0, (1,): 1.3, (2,): 0.3}
CALIBRATED_DIMS = (15, 7, 3)
REFERENCE_SEED = 20130


def _poly_grid(dims: tuple[int, ...], degree: int, rng: np.random.Generator) -> np.ndarray:
    """Random polynomial of total degree <= degree in len(dims) variables on [-1,1] grids."""
    grids = [np.linspace(-1.0, 1.0, m) for m in dims]
    K = len(dims)
    out = np.zeros(dims)
    for exps in iter_product(range(degree + 1), repeat=K):
        if sum(exps) > degree:
            continue
        coef = rng.standard_normal()
        term = coef
        for d, e in enumerate(exps):
            shape = [1] * K
            shape[d] = dims[d]
            term = term * (grids[d] ** e).reshape(shape)
        out = out + term
    return out


def _rescale_to_targets(
    m: np.ndarray, targets: dict[tuple[int, ...], float]
) -> np.ndarray | None:
    """Scale each effect so its magnitude hits the target; None if degenerate."""
    dec = anova_decompose(m)
    for key, target in targets.items():
        mag = effect_magnitude(dec, key)
        if mag <= 1e-12:
            return None
        dec.effects[key] = dec.effects[key] * math.sqrt(target / mag)
    for key in dec.keys():
        if key not in targets:
            dec.effects[key] = np.zeros_like(dec.effects[key])
    return cell_means(dec)


def gen_order_consistent(
    dims: tuple[int, ...] = CALIBRATED_DIMS,
    seed: int = REFERENCE_SEED,
    stream: int = 0,
    calibrated: bool = True,
    max_retries: int = 20,
) -> np.ndarray:
    """Truth array from a binned random cubic, rescaled to the calibrated magnitudes.

    Calibrated mode requires the 15x7x3 layout; free mode returns the raw
    binned cubic for any dims.
    """
    dims = tuple(dims)
    rng = make_rng(seed, stream)
    if not calibrated:
        return _poly_grid(dims, 3, rng)
    if dims != CALIBRATED_DIMS:
        raise ValueError(f"calibrated mode requires dims {CALIBRATED_DIMS}, got {dims}")
    for _ in range(max_retries):
        m = _rescale_to_targets(_poly_grid(dims, 3, rng), OC_TARGETS)
        if m is not None:
            return m
    raise RuntimeError("degenerate polynomial draws exhausted the retry budget")


def reference_means() -> np.ndarray:
    """The frozen calibrated truth array (pinned seed), shared by studies and tests."""
    return gen_order_consistent(CALIBRATED_DIMS, REFERENCE_SEED, calibrated=True)


def gen_order_inconsistent(
    m: np.ndarray,
    seed: int = 0,
    stream: int = 0,
    perms: dict[tuple[int, ...], list[np.ndarray]] | None = None,
) -> np.ndarray:
    """Permute each factor's levels independently within every effect.

    Magnitudes are preserved exactly; cell means are generally reshuffled
    beyond recognition.  ``perms`` overrides the random draws: one
    permutation per factor of each effect key.
    """
    rng = make_rng(seed, stream)
    dec = anova_decompose(np.asarray(m, dtype=float))
    out: dict[tuple[int, ...], np.ndarray] = {}
    for key in dec.keys():
        pk = (
            perms[key]
            if perms is not None
            else [rng.permutation(dec.layout.dims[d]) for d in key]
        )
        out[key] = dec.effects[key][np.ix_(*pk)]
    return cell_means(Decomposition(dec.layout, dec.mu, out))


def gen_sb_prior(
    dims: tuple[int, ...] = CALIBRATED_DIMS,
    nu: float = 4.0,
    tau_sq: float = 2.0,
    seed: int = 0,
    stream: int = 0,
) -> np.ndarray:
    """Truth array drawn from the identity-covariance prior.

    One precision per effect ~ gamma(nu/2, rate tau_sq/2); coefficients
    i.i.d. N(0, 1/precision); grand mean zero.
    """
    dims = tuple(dims)
    rng = make_rng(seed, stream)
    m = np.zeros(dims)
    for key in all_effect_keys(len(dims)):
        gam = rng.gamma(nu / 2.0, 2.0 / tau_sq)
        shape = tuple(dims[d] for d in key)
        e = rng.standard_normal(shape) / math.sqrt(gam)
        view = [None] * len(dims)
        for d in key:
            view[d] = slice(None)
        m = m + e[tuple(view)]
    return m


def gen_additive(
    dims: tuple[int, ...] = CALIBRATED_DIMS,
    seed: int = 0,
    stream: int = 0,
    targets: dict | None = None,
) -> np.ndarray:
    """Exactly additive truth array: binned linear function, mains rescaled to targets."""
    dims = tuple(dims)
    targets = dict(targets) if targets is not None else dict(ADDITIVE_TARGETS)
    rng = make_rng(seed, stream)
    for _ in range(20):
        m = _rescale_to_targets(_poly_grid(dims, 1, rng), targets)
        if m is not None:
            return m
    raise RuntimeError("degenerate linear draws exhausted the retry budget")


def allocate_unbalanced(
    n: int, dims: tuple[int, ...], rng: np.random.Generator
) -> np.ndarray:
    """One observation per cell, remainder multinomial-uniform; total exactly n."""
    dims = tuple(dims)
    cells = int(np.prod(dims))
    if n < cells:
        raise ValueError(f"need at least one observation per cell: {n} < {cells}")
    extra = rng.multinomial(n - cells, np.full(cells, 1.0 / cells))
    return (1 + extra).reshape(dims)


def simulate_dataset(
    m: np.ndarray,
    counts: np.ndarray,
    sigma: float | np.ndarray = 1.0,
    rng: np.random.Generator | None = None,
) -> CellStats:
    """Normal observations around the truth array, aggregated to sufficient statistics.

    ``sigma`` is the error s.d. (scalar) or, for p > 1, the p x p error
    covariance.
    """
    m = np.asarray(m, dtype=float)
    counts = np.asarray(counts)
    if rng is None:
        rng = make_rng(0)
    dims = counts.shape
    if m.shape == dims:
        p = 1
        m_flat = m.reshape(-1, 1)
    elif m.shape[:-1] == dims:
        p = m.shape[-1]
        m_flat = m.reshape(-1, p)
    else:
        raise ValueError(f"truth shape {m.shape} does not match counts {dims}")
    layout = Layout(dims=dims, p=p)
    cells = layout.cells
    flat_counts = counts.reshape(-1)
    n = int(flat_counts.sum())
    cell_of = np.repeat(np.arange(cells), flat_counts)
    y = m_flat[cell_of]
    if n:
        z = rng.standard_normal((n, p))
        sig = np.asarray(sigma, dtype=float)
        if sig.ndim == 0:
            if sig != 0.0:
                y = y + float(sig) * z
        else:
            y = y + z @ np.linalg.cholesky(sig).T
    sums = np.zeros((cells, p))
    np.add.at(sums, cell_of, y)
    sumsq = np.zeros((cells, p, p))
    np.add.at(sumsq, cell_of, y[:, :, None] * y[:, None, :])
    return CellStats(
        layout,
        flat_counts.reshape(dims),
        sums.reshape(dims + (p,)),
        sumsq.reshape(dims + (p, p)),
    )


@dataclass
class StudySpec:
    """One comparative study: regime, sizes, replicates, methods, chain settings."""

    regime: str
    dims: tuple[int, ...] = CALIBRATED_DIMS
    sample_sizes: tuple[int, ...] = (400, 1000)
    replicates: int = 20
    methods: tuple[str, ...] = ("ols", "sb", "ha")
    seed: int = 0
    sigma: float = 1.0
    iterations: int = 3000
    burn_in: int = 500
    thin: int = 5
    level: float = 0.95
    n_jobs: int = 1
    sb_nu: float = 4.0
    sb_tau_sq: float = 2.0

    def __post_init__(self):
        self.dims = tuple(int(x) for x in self.dims)
        self.sample_sizes = tuple(int(x) for x in self.sample_sizes)
        self.methods = tuple(self.methods)
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        cells = int(np.prod(self.dims))
        if any(n < cells for n in self.sample_sizes) and (
            "ols" in self.methods or "aols" in self.methods
        ):
            raise ValueError("every sample size must cover one observation per cell")

    @classmethod
    def from_config(cls, path) -> "StudySpec":
        """Parse a key=value config file ('#' comments allowed)."""
        kw: dict = {}
        for raw in Path(path).read_text(encoding="utf-8").splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"bad config line {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key in ("dims", "sample_sizes", "methods"):
                parts = [s.strip() for s in val.split(",") if s.strip()]
                kw[key] = tuple(int(s) for s in parts) if key != "methods" else tuple(parts)
            elif key in ("replicates", "seed", "iterations", "burn_in", "thin", "n_jobs"):
                kw[key] = int(val)
            elif key in ("sigma", "level", "sb_nu", "sb_tau_sq"):
                kw[key] = float(val)
            elif key == "regime":
                kw[key] = val
            else:
                raise ValueError(f"unknown config key {key!r}")
        if "regime" not in kw:
            raise ValueError("config must set regime")
        return cls(**kw)


@dataclass
class StudyReport:
    """Tidy metric rows plus aggregate summaries and runtimes."""

    spec: StudySpec
    rows: list[dict] = field(default_factory=list)
    runtimes: list[dict] = field(default_factory=list)

    def values(
        self, metric: str, method: str | None = None, n: int | None = None
    ) -> np.ndarray:
        out = [
            float(r["value"])
            for r in self.rows
            if r["metric"] == metric
            and (method is None or r["method"] == method)
            and (n is None or r["n"] == n)
            and r["replicate"] != ""
        ]
        return np.array(out)

    def aggregate(self, metric: str, method: str, n: int) -> float:
        for r in self.rows:
            if (
                r["replicate"] == ""
                and r["metric"] == metric
                and r["method"] == method
                and r["n"] == n
            ):
                return float(r["value"])
        raise KeyError((metric, method, n))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["regime", "n", "replicate", "method", "metric", "value"])
            for r in self.rows:
                writer.writerow(
                    [r["regime"], r["n"], r["replicate"], r["method"], r["metric"],
                     repr(float(r["value"]))]
                )

    def write_timings(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["regime", "n", "replicate", "method", "seconds"])
            for r in self.runtimes:
                writer.writerow(
                    [r["regime"], r["n"], r["replicate"], r["method"], f"{r['seconds']:.3f}"]
                )

    def summary_text(self) -> str:
        lines = [f"regime={self.spec.regime} replicates={self.spec.replicates}"]
        for n in self.spec.sample_sizes:
            for method in self.spec.methods:
                vals = self.values("ase", method=method, n=n)
                if vals.size == 0:
                    continue
                line = f"n={n:<6} {method:<5} mean ASE={np.nanmean(vals):.4f}"
                cov = self.values("coverage", method=method, n=n)
                wid = self.values("width", method=method, n=n)
                if cov.size:
                    line += f"  coverage={np.nanmean(cov):.3f} width={np.nanmean(wid):.3f}"
                lines.append(line)
            ratio_rows = [
                r for r in self.rows
                if r["replicate"] == "" and r["n"] == n and r["metric"] == "bayes_risk_ratio"
            ]
            for r in ratio_rows:
                lines.append(f"n={n:<6} risk ratio {r['method']}: {float(r['value']):.3f}")
        return "\n".join(lines) + "\n"


def _truth_for(spec: StudySpec, replicate: int, stream: int) -> np.ndarray:
    if spec.regime == "order-consistent":
        return gen_order_consistent(spec.dims, spec.seed, stream=1_000_000)
    if spec.regime == "order-inconsistent":
        base = gen_order_consistent(spec.dims, spec.seed, stream=1_000_000)
        return gen_order_inconsistent(base, spec.seed, stream=1_000_001)
    if spec.regime == "additive":
        return gen_additive(spec.dims, spec.seed, stream=1_000_000)
    return gen_sb_prior(spec.dims, spec.sb_nu, spec.sb_tau_sq, spec.seed, stream=stream)


def _per_effect_rows(
    truth_dec: Decomposition, m_hat: np.ndarray, base: dict
) -> list[dict]:
    hat_dec = anova_decompose(m_hat, truth_dec.layout)
    rows = [dict(base, metric="ase_mu", value=(hat_dec.mu - truth_dec.mu) ** 2)]
    for key in truth_dec.keys():
        rows.append(
            dict(
                base,
                metric="ase_" + ".".join(str(d) for d in key),
                value=ase(hat_dec.effects[key], truth_dec.effects[key]),
            )
        )
    return rows


def _fit_replicate(spec: StudySpec, n: int, replicate: int, stream_base: int):
    """All metric rows for one simulated dataset; failures yield NaN rows."""
    truth = _truth_for(spec, replicate, stream_base + 6)
    counts = allocate_unbalanced(n, spec.dims, make_rng(spec.seed, stream_base))
    stats = simulate_dataset(
        truth, counts, spec.sigma, make_rng(spec.seed, stream_base + 1)
    )
    truth_dec = anova_decompose(truth)
    rows: list[dict] = []
    times: list[dict] = []
    hyper = default_hyperparameters(stats)
    chain_streams = {"ha": 2, "sb": 3, "asb": 4}
    for method in METHODS:
        if method not in spec.methods:
            continue
        base = dict(regime=spec.regime, n=n, replicate=replicate, method=method)
        t0 = time.perf_counter()
        try:
            chains: list[Chain] | None = None
            if method == "ols":
                m_hat = ols_cell_means(stats, require_complete=True)
            elif method == "aols":
                m_hat = aols_cell_means(stats)
            else:
                cfg = _cfg(spec, stream_base + chain_streams[method])
                if method == "ha":
                    chains = run_chain(stats, hyper, cfg, mode="ha")
                elif method == "sb":
                    chains = sb_chain(stats, hyper, cfg)
                else:
                    keys = [(d,) for d in range(len(spec.dims))]
                    chains = run_chain(stats, hyper, cfg, mode="sb", keys=keys, method="asb")
                m_hat = chains[0].posterior_mean()
            rows.append(dict(base, metric="ase", value=ase(m_hat, truth)))
            rows.extend(_per_effect_rows(truth_dec, m_hat, base))
            if chains is not None:
                rep = interval_report(chains, spec.level, truth)
                rows.append(dict(base, metric="coverage", value=rep.coverage))
                rows.append(dict(base, metric="width", value=rep.mean_width))
        except Exception:  # noqa: BLE001 - replicate isolation is the contract
            rows.append(dict(base, metric="ase", value=float("nan")))
        times.append(dict(base, seconds=time.perf_counter() - t0))
    return rows, times


def _cfg(spec: StudySpec, stream: int) -> ChainConfig:
    return ChainConfig(
        iterations=spec.iterations,
        burn_in=spec.burn_in,
        thin=spec.thin,
        seed=spec.seed,
        chains=1,
        stream=stream,
        record=frozenset({"M", "sigma"}),
    )


def run_study(spec: StudySpec) -> StudyReport:
    """Generate/allocate/simulate/fit over every (n, replicate); assemble tidy rows.

    Replicates are independent streams and may run in parallel; row order is
    deterministic regardless of scheduling.
    """
    tasks = [
        (n, rep, 8 * (i_n * spec.replicates + rep))
        for i_n, n in enumerate(spec.sample_sizes)
        for rep in range(spec.replicates)
    ]
    if spec.n_jobs != 1 and len(tasks) > 1:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=spec.n_jobs)(
            delayed(_fit_replicate)(spec, n, rep, sb) for n, rep, sb in tasks
        )
    else:
        results = [_fit_replicate(spec, n, rep, sb) for n, rep, sb in tasks]
    report = StudyReport(spec=spec)
    for rows, times in results:
        report.rows.extend(rows)
        report.runtimes.extend(times)
    for n in spec.sample_sizes:
        means = {}
        for method in spec.methods:
            vals = report.values("ase", method=method, n=n)
            if vals.size:
                means[method] = float(np.nanmean(vals))
                report.rows.append(
                    dict(regime=spec.regime, n=n, replicate="", method=method,
                         metric="mean_ase", value=means[method])
                )
        if spec.regime == "sb-generated" and "sb" in means:
            for other in ("ols", "ha"):
                if other in means and means[other] > 0:
                    report.rows.append(
                        dict(regime=spec.regime, n=n, replicate="",
                             method=f"sb_vs_{other}",
                             metric="bayes_risk_ratio",
                             value=means["sb"] / means[other])
                    )
    return report
