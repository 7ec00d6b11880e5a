"""Command-line front door: fit real data, run simulation studies, diagnose chains.

All outputs are plain CSV plus key=value metadata so any plotting stack can
consume them.  Every command writes a RunManifest sufficient to reproduce the
run; rerunning with the same seed/config yields byte-identical chain files
and reports (wall-clock timings live only in the manifest and the separate
timings file).

Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import aols_cell_means, sb_chain
from .chainio import read_chain, scalar_series, write_chain
from .diagnostics import (
    autocorr,
    ess,
    geweke_z,
    interval_report,
    posterior_correlation_matrices,
    posterior_summary,
)
from .gibbs import ChainConfig, manova_preprocess, run_chain
from .model import (
    CsvFormatError,
    CsvSchema,
    aggregate_rows,
    ols_cell_means,
    read_long_rows,
)
from .priors import default_hyperparameters
from .sim import REGIMES, StudySpec, run_study

USAGE_ERROR = 2
RUNTIME_ERROR = 1


class UsageError(ValueError):
    """Bad flags, config, or unreadable inputs; exits with code 2."""


@dataclass
class RunManifest:
    """Everything needed to reproduce a run, written atomically at run end."""

    command: str
    config_hash: str
    seed: int
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    version: str = __version__

    def write(self, path: Path) -> None:
        lines = [
            f"command={self.command}",
            f"config_hash={self.config_hash}",
            f"seed={self.seed}",
            f"version={self.version}",
        ]
        lines += [f"input={p}" for p in self.inputs]
        lines += [f"output={p}" for p in self.outputs]
        lines += [f"timing_{k}={v:.3f}" for k, v in self.timings.items()]
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
        os.replace(tmp, path)


def _threads_cap(requested: int) -> int:
    cap = os.environ.get("HA_ARRAY_THREADS")
    if cap:
        try:
            return max(1, min(requested, int(cap)))
        except ValueError as exc:
            raise UsageError(f"HA_ARRAY_THREADS={cap!r} is not an integer") from exc
    return max(1, requested)


def _config_hash(parts: list[str]) -> str:
    h = hashlib.sha256()
    for part in parts:
        h.update(part.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()[:16]


def _read_kv_config(path: Path) -> dict[str, str]:
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    out: dict[str, str] = {}
    for raw in path.read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"bad config line {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(x: float) -> str:
    return repr(float(x))


def cmd_fit(args: argparse.Namespace) -> int:
    t_start = time.perf_counter()
    data_path = Path(args.data)
    if not data_path.exists():
        raise UsageError(f"data file not found: {data_path}")
    cfg_map = _read_kv_config(Path(args.config))
    for need in ("factors", "responses"):
        if need not in cfg_map:
            raise UsageError(f"config must set {need}=col1,col2,...")
    schema = CsvSchema(
        factors=tuple(s.strip() for s in cfg_map["factors"].split(",") if s.strip()),
        responses=tuple(s.strip() for s in cfg_map["responses"].split(",") if s.strip()),
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    try:
        layout, indices, y = read_long_rows(data_path, schema)
    except CsvFormatError as exc:
        raise UsageError(str(exc)) from exc
    if args.transform != "none" or args.standardize:
        y, _ = manova_preprocess(
            y, transform=args.transform, standardize=args.standardize
        )
    stats = aggregate_rows(layout, indices, y)
    hyper = default_hyperparameters(stats)
    outputs: list[str] = []
    timings: dict[str, float] = {}

    summary_path = out_dir / "posterior_summary.csv"
    idx_grid = np.indices(layout.dims).reshape(layout.K, -1).T
    cell_labels = [
        [layout.levels[d][ix[d]] for d in range(layout.K)] for ix in idx_grid
    ]

    def _summary_rows(mean, sd=None, lo=None, hi=None):
        mean2 = mean.reshape(-1, layout.p) if layout.p > 1 else mean.reshape(-1, 1)
        rows = []
        for c, ix in enumerate(idx_grid):
            for r in range(layout.p):
                row = list(cell_labels[c]) + [r]
                row.append(_fmt(mean2[c, r]))
                for extra in (sd, lo, hi):
                    if extra is None:
                        row.append("")
                    else:
                        e2 = extra.reshape(-1, layout.p) if layout.p > 1 else extra.reshape(-1, 1)
                        row.append(_fmt(e2[c, r]))
                rows.append(row)
        return rows

    header = list(layout.factors) + ["response", "mean", "sd", "lower", "upper"]
    method = args.method
    t0 = time.perf_counter()
    if method in ("ols", "aols"):
        m_hat = (
            ols_cell_means(stats) if method == "ols" else aols_cell_means(stats)
        )
        _write_csv(summary_path, header, _summary_rows(m_hat))
        outputs.append(str(summary_path))
    else:
        config = ChainConfig(
            iterations=args.iterations,
            burn_in=args.burn_in,
            thin=args.thin,
            seed=args.seed,
            chains=args.chains,
            n_jobs=_threads_cap(args.chains),
        )
        if method == "ha":
            chains = run_chain(stats, hyper, config, mode="ha")
        elif method == "sb":
            chains = sb_chain(stats, hyper, config)
        else:
            keys = [(d,) for d in range(layout.K)]
            chains = run_chain(stats, hyper, config, mode="sb", keys=keys, method="asb")
        timings["sampling"] = time.perf_counter() - t0
        for chain in chains:
            cpath = out_dir / f"chain_{method}_{chain.stream}.csv"
            write_chain(chain, cpath)
            outputs += [str(cpath), str(cpath) + ".meta"]
        mean, sd, lo, hi = posterior_summary(chains, level=args.level)
        _write_csv(summary_path, header, _summary_rows(mean, sd, lo, hi))
        outputs.append(str(summary_path))
        if method == "ha":
            cors = posterior_correlation_matrices(chains)
            for d, c in cors.items():
                cpath = out_dir / f"correlations_{layout.factors[d]}.csv"
                labels = list(layout.levels[d])
                _write_csv(
                    cpath,
                    ["level"] + labels,
                    [[labels[i]] + [_fmt(x) for x in c[i]] for i in range(c.shape[0])],
                )
                outputs.append(str(cpath))
        diag_path = out_dir / "diagnostics.csv"
        _write_csv(
            diag_path,
            ["chain", "series", "ess", "geweke_z", "flag_z", "autocorr_lag10"],
            _diagnostic_rows(chains, lag=10),
        )
        outputs.append(str(diag_path))

    timings["total"] = time.perf_counter() - t_start
    manifest = RunManifest(
        command="fit",
        config_hash=_config_hash(
            [Path(args.config).read_text(encoding="utf-8"), method,
             str(args.iterations), str(args.burn_in), str(args.thin),
             str(args.seed), str(args.chains), args.transform, str(args.standardize)]
        ),
        seed=args.seed,
        inputs=[str(data_path), str(args.config)],
        outputs=outputs,
        timings=timings,
    )
    manifest.write(out_dir / "manifest.txt")
    return 0


def _diagnostic_rows(chains, lag: int):
    rows = []
    for chain in chains:
        series = scalar_series(chain)
        for name, x in series.items():
            if name.startswith("Sigma_") or name.startswith("gamma_"):
                continue
            if x.size < 10:
                rows.append([chain.stream, name, "", "", "", ""])
                continue
            z = geweke_z(x)
            rows.append(
                [
                    chain.stream,
                    name,
                    _fmt(ess(x)),
                    _fmt(z),
                    int(abs(z) > 2.0),
                    _fmt(autocorr(x, lag)) if x.size > lag else "",
                ]
            )
    return rows


def cmd_simulate(args: argparse.Namespace) -> int:
    t_start = time.perf_counter()
    if args.config:
        try:
            spec = StudySpec.from_config(args.config)
        except (OSError, ValueError) as exc:
            raise UsageError(str(exc)) from exc
    else:
        if not args.regime:
            raise UsageError("either --config or --regime is required")
        spec = StudySpec(regime=args.regime)
    overrides = {}
    if args.regime:
        overrides["regime"] = args.regime
    if args.replicates is not None:
        overrides["replicates"] = args.replicates
    if args.n:
        overrides["sample_sizes"] = tuple(args.n)
    if args.methods:
        overrides["methods"] = tuple(args.methods.split(","))
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        from dataclasses import replace as dc_replace

        try:
            spec = dc_replace(spec, **overrides)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    spec.n_jobs = _threads_cap(spec.n_jobs if spec.n_jobs != 1 else args.jobs)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = run_study(spec)
    report_path = out_dir / "report.csv"
    report.write_csv(report_path)
    summary_path = out_dir / "summary.txt"
    summary_path.write_text(report.summary_text(), encoding="utf-8")
    timings_path = out_dir / "timings.csv"
    report.write_timings(timings_path)
    manifest = RunManifest(
        command="simulate",
        config_hash=_config_hash([repr(spec)]),
        seed=spec.seed,
        inputs=[str(args.config)] if args.config else [],
        outputs=[str(report_path), str(summary_path)],
        timings={"total": time.perf_counter() - t_start},
    )
    manifest.write(out_dir / "manifest.txt")
    return 0


def cmd_diagnose(args: argparse.Namespace) -> int:
    rows = []
    for chain_file in args.chain:
        path = Path(chain_file)
        if not path.exists():
            raise UsageError(f"chain file not found: {path}")
        chain = read_chain(path)
        series = scalar_series(chain)
        for name, x in series.items():
            z = geweke_z(x)
            rows.append(
                [
                    str(path.name),
                    name,
                    _fmt(ess(x)),
                    _fmt(z),
                    int(abs(z) > 2.0),
                    _fmt(autocorr(x, args.lag)) if x.size > args.lag else "",
                ]
            )
    header = ["chain", "series", "ess", "geweke_z", "flag_z", f"autocorr_lag{args.lag}"]
    if args.out:
        _write_csv(Path(args.out), header, rows)
    else:
        writer = csv.writer(sys.stdout)
        writer.writerow(header)
        writer.writerows(rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ha-array",
        description="Cell-means estimation for cross-classified data: "
        "hierarchical-array Gibbs sampling, baselines, diagnostics, studies.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="cmd", required=True)

    fit = sub.add_parser("fit", help="fit a long-format CSV dataset")
    fit.add_argument("--data", required=True, help="long-format CSV file")
    fit.add_argument("--config", required=True, help="key=value column mapping")
    fit.add_argument("--out-dir", required=True)
    fit.add_argument(
        "--method", default="ha", choices=["ha", "sb", "aols", "asb", "ols"]
    )
    fit.add_argument("--iterations", type=int, default=11000)
    fit.add_argument("--burn-in", type=int, default=1000)
    fit.add_argument("--thin", type=int, default=10)
    fit.add_argument("--chains", type=int, default=1)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--level", type=float, default=0.95)
    fit.add_argument(
        "--transform", default="none", choices=["none", "quarter-power"]
    )
    fit.add_argument("--standardize", action="store_true")
    fit.set_defaults(func=cmd_fit)

    simv = sub.add_parser("simulate", help="run a replicated comparative study")
    simv.add_argument("--config", help="StudySpec key=value file")
    simv.add_argument("--regime", choices=list(REGIMES), default=None)
    simv.add_argument("--replicates", type=int, default=None)
    simv.add_argument("--n", type=int, nargs="*", default=None)
    simv.add_argument("--methods", default=None, help="comma list, e.g. ols,sb,ha")
    simv.add_argument("--seed", type=int, default=None)
    simv.add_argument("--jobs", type=int, default=1)
    simv.add_argument("--out-dir", required=True)
    simv.set_defaults(func=cmd_simulate)

    diag = sub.add_parser("diagnose", help="convergence diagnostics for chain files")
    diag.add_argument("--chain", nargs="+", required=True)
    diag.add_argument("--lag", type=int, default=10)
    diag.add_argument("--out", default=None)
    diag.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
