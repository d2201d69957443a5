"""Full-frame reconstruction from scattered observations, and scoring."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from . import gp
from .fields import Grid, ScalarField2D

METHODS = ("gp", "idw", "nearest")
REPORT_COLUMNS = ("method", "n_obs", "frac_sampled", "rmse", "psnr", "seed")


@dataclass
class ReconReport:
    method: str
    rmse: float
    psnr: float
    frac_sampled: float
    n_obs: int
    seed: int | None = None

    def row(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in REPORT_COLUMNS}


def _as_arrays(observations):
    """Accept Observation objects or a (positions, values) pair."""
    if isinstance(observations, tuple) and len(observations) == 2:
        pos, val = observations
        return np.asarray(pos, dtype=float).reshape(-1, 2), np.asarray(val, dtype=float).ravel()
    obs = list(observations)
    pos = np.array([o.pos_nominal for o in obs], dtype=float).reshape(-1, 2)
    val = np.array([o.value for o in obs], dtype=float)
    return pos, val


def idw(points, values, queries, power: float = 2.0, eps: float = 1e-9) -> np.ndarray:
    """Shepard interpolation with weights ``1 / (d**power + eps)``.

    Queries that coincide with observations return the mean of the coincident
    values exactly.
    """
    out = np.empty(len(queries))
    for start in range(0, len(queries), 2048):
        q = queries[start:start + 2048]
        d = cdist(q, points)
        w = 1.0 / (d**power + eps)
        est = (w @ values) / w.sum(axis=1)
        hit = d == 0
        rows = hit.any(axis=1)
        if rows.any():
            est[rows] = (hit[rows] @ values) / hit[rows].sum(axis=1)
        out[start:start + 2048] = est
    return out


def nearest(points, values, queries) -> np.ndarray:
    # lexicographic (x, y) order first so argmin's first-hit rule breaks ties
    order = np.lexsort((points[:, 1], points[:, 0]))
    points, values = points[order], values[order]
    out = np.empty(len(queries))
    for start in range(0, len(queries), 2048):
        d = cdist(queries[start:start + 2048], points, "sqeuclidean")
        out[start:start + 2048] = values[np.argmin(d, axis=1)]
    return out


def reconstruct(observations, grid: Grid, method: str = "gp", **params) -> ScalarField2D:
    """Estimate the field at every pixel centre of ``grid``.

    gp params: ``family``, ``config`` (gp.FitConfig) or a pre-built ``model``.
    idw params: ``power``, ``eps``.
    """
    pos, val = _as_arrays(observations)
    if len(val) == 0:
        raise ValueError("reconstruction needs at least one observation")
    if isinstance(grid, ScalarField2D):
        grid = grid.grid
    q = grid.centers()
    if method == "gp":
        model = params.pop("model", None)
        if model is None:
            model = gp.fit(pos, val, params.pop("family", "rbf"), params.pop("config", None))
        field = gp.posterior(model, grid).mean
    elif method == "idw":
        field = ScalarField2D.on(grid, idw(pos, val, q, params.pop("power", 2.0), params.pop("eps", 1e-9)))
    elif method == "nearest":
        field = ScalarField2D.on(grid, nearest(pos, val, q))
    else:
        raise ValueError(f"unknown reconstruction method {method!r}")
    if params:
        raise TypeError(f"unexpected parameters for {method}: {sorted(params)}")
    return field


def metrics(recon: ScalarField2D, truth: ScalarField2D, observations=(), method: str = "",
            seed: int | None = None) -> ReconReport:
    if recon.values.shape != truth.values.shape:
        raise ValueError(f"shape mismatch: {recon.values.shape} vs {truth.values.shape}")
    err = recon.values - truth.values
    rmse = float(np.sqrt(np.mean(err * err)))
    span = float(truth.values.max() - truth.values.min())
    if span == 0:
        psnr = math.inf
    elif rmse == 0:
        psnr = math.inf
    else:
        psnr = 20 * math.log10(span / rmse)
    pos, _ = _as_arrays(observations) if len(observations) else (np.zeros((0, 2)), None)
    g = truth.grid
    pixels = {g.to_pixel(p) for p in pos}
    return ReconReport(method, rmse, psnr, len(pixels) / (g.width * g.height), len(pos), seed)


def append_csv(reports, path) -> Path:
    """Append report rows to ``path``, writing the header when the file is new."""
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        if new:
            writer.writeheader()
        for rep in reports:
            writer.writerow(rep.row())
    return path
