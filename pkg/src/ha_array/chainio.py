"""Columnar chain files: one CSV row per recorded draw plus a key=value sidecar.

Column order: flattened cell means in column-major vec order, then the error
variance/covariance entries, then each factor covariance row-major, then the
scale parameters.  Floats are written with ``repr`` (shortest round-trip), so
identical draws serialize to identical bytes.
"""

from __future__ import annotations

import csv
import os
from pathlib import Path

import numpy as np

from .gibbs import Chain, ChainConfig
from .model import EffectKey, Layout


def _fmt(x: float) -> str:
    return repr(float(x))


def chain_columns(chain: Chain) -> list[str]:
    layout = chain.layout
    p = layout.p
    cols = [f"M_{i}" for i in range(layout.cells * p)]
    if chain.sigma is not None:
        if p == 1:
            cols.append("sigma_sq")
        else:
            cols += [f"Sigma_y_{i}_{j}" for i in range(p) for j in range(p)]
    for d in sorted(chain.Sigma):
        m = layout.dims[d]
        cols += [f"Sigma_{layout.factors[d]}_{i}_{j}" for i in range(m) for j in range(m)]
    for key in sorted(chain.gamma, key=lambda k: (len(k), k)):
        name = layout.effect_name(key).replace(":", ".")
        if p == 1:
            cols.append(f"gamma_{name}")
        else:
            cols += [f"gamma_{name}_r{r}" for r in range(p)]
    return cols


def _row_matrix(chain: Chain) -> np.ndarray:
    layout = chain.layout
    n = chain.n_draws
    blocks = [chain.M.reshape(n, -1, order="F")]
    if chain.sigma is not None:
        blocks.append(chain.sigma.reshape(n, -1))
    for d in sorted(chain.Sigma):
        blocks.append(chain.Sigma[d].reshape(n, -1))
    for key in sorted(chain.gamma, key=lambda k: (len(k), k)):
        blocks.append(chain.gamma[key].reshape(n, -1))
    return np.concatenate(blocks, axis=1)


def write_chain(chain: Chain, path: str | os.PathLike) -> None:
    """Write the draw matrix as CSV and the provenance sidecar next to it."""
    path = Path(path)
    cols = chain_columns(chain)
    rows = _row_matrix(chain)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])
    os.replace(tmp, path)
    meta = metadata_lines(chain)
    mpath = metadata_path(path)
    with open(mpath.with_suffix(mpath.suffix + ".tmp"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(meta) + "\n")
    os.replace(mpath.with_suffix(mpath.suffix + ".tmp"), mpath)


def metadata_path(path: str | os.PathLike) -> Path:
    path = Path(path)
    return path.with_suffix(path.suffix + ".meta")


def metadata_lines(chain: Chain) -> list[str]:
    layout = chain.layout
    cfg = chain.config
    return [
        f"method={chain.method}",
        f"seed={chain.seed}",
        f"stream={chain.stream}",
        f"iterations={cfg.iterations}",
        f"burn_in={cfg.burn_in}",
        f"thin={cfg.thin}",
        f"draws={chain.n_draws}",
        f"dims={','.join(map(str, layout.dims))}",
        f"p={layout.p}",
        f"factors={','.join(layout.factors)}",
        f"keys={';'.join(','.join(map(str, k)) for k in chain.keys)}",
        f"build={chain.build}",
    ]


def _parse_meta(path: Path) -> dict[str, str]:
    meta: dict[str, str] = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        k, _, v = line.partition("=")
        meta[k.strip()] = v.strip()
    return meta


def read_chain(path: str | os.PathLike) -> Chain:
    """Reconstruct a Chain from a chain CSV and its sidecar."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    mpath = metadata_path(path)
    if not mpath.exists():
        raise FileNotFoundError(mpath)
    meta = _parse_meta(mpath)
    dims = tuple(int(x) for x in meta["dims"].split(","))
    p = int(meta["p"])
    factors = tuple(meta["factors"].split(","))
    layout = Layout(dims=dims, p=p, factors=factors)
    keys: tuple[EffectKey, ...] = tuple(
        tuple(int(x) for x in part.split(",")) for part in meta["keys"].split(";") if part
    )
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(x) for x in row] for row in reader])
    if data.size == 0:
        raise ValueError(f"chain file {path} has no draws")
    n = data.shape[0]
    idx = {name: i for i, name in enumerate(header)}
    ncell = layout.cells * p
    m = data[:, :ncell].reshape((n,) + dims + ((p,) if p > 1 else ()), order="F")
    sigma = None
    if "sigma_sq" in idx:
        sigma = data[:, idx["sigma_sq"]].reshape(n, 1, 1)
    elif f"Sigma_y_0_0" in idx:
        j = idx["Sigma_y_0_0"]
        sigma = data[:, j : j + p * p].reshape(n, p, p)
    big: dict[int, np.ndarray] = {}
    for d in range(layout.K):
        name = f"Sigma_{factors[d]}_0_0"
        if name in idx:
            j = idx[name]
            md = dims[d]
            big[d] = data[:, j : j + md * md].reshape(n, md, md)
    gam: dict[EffectKey, np.ndarray] = {}
    for key in keys:
        name = layout.effect_name(key).replace(":", ".")
        first = f"gamma_{name}" if p == 1 else f"gamma_{name}_r0"
        if first in idx:
            j = idx[first]
            gam[key] = data[:, j : j + p].reshape(n, p)
    cfg = ChainConfig(
        iterations=int(meta["iterations"]),
        burn_in=int(meta["burn_in"]),
        thin=int(meta["thin"]),
        seed=int(meta["seed"]),
    )
    return Chain(
        layout=layout,
        method=meta.get("method", "ha"),
        keys=keys,
        config=cfg,
        seed=int(meta["seed"]),
        stream=int(meta["stream"]),
        M=m,
        sigma=sigma,
        Sigma=big,
        gamma=gam,
        build=meta.get("build", "unknown"),
    )


def scalar_series(chain: Chain) -> dict[str, np.ndarray]:
    """Every recorded scalar series by column name, in file column order."""
    cols = chain_columns(chain)
    rows = _row_matrix(chain)
    return {name: rows[:, i] for i, name in enumerate(cols)}
