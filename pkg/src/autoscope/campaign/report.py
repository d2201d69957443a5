"""Figures and CSV summaries for a finished run directory."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib
import numpy as np
from matplotlib.figure import Figure

from ..fields import to_pgm_bytes
from .records import replay

_SVG_META = {"Date": None}


def _save(fig: Figure, path: Path) -> Path:
    with matplotlib.rc_context({"svg.hashsalt": "autoscope", "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata=_SVG_META)
    return path


def _write_csv(path: Path, rows: list[dict]) -> Path:
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return path


def _flatten(d: dict, prefix: str = "") -> list[dict]:
    rows = []
    for k in sorted(d):
        v = d[k]
        if isinstance(v, dict):
            rows += _flatten(v, f"{prefix}{k}.")
        else:
            rows.append({"key": f"{prefix}{k}", "value": v})
    return rows


def _budget_series(record) -> dict[str, list[tuple[float, float]]]:
    """label -> [(n_obs, rmse)], medians over seeds for benchmark runs."""
    if "bench" in record.curves:
        groups = defaultdict(list)
        for row in record.curves["bench"]:
            groups[(row["arm"], row["n_obs"])].append(row["rmse"])
        series = defaultdict(list)
        for (arm, n), vals in sorted(groups.items()):
            series[arm].append((n, float(np.median(vals))))
        return dict(series)
    if record.reports:
        return {"gp posterior": [(r.n_obs, r.rmse) for r in record.reports]}
    return {}


def _learning_series(rows: list[dict]) -> tuple[str, np.ndarray, np.ndarray]:
    x_key = "episode" if "episode" in rows[0] else "batch"
    y_key = "return" if "return" in rows[0] else "mean_return"
    x = np.array([r[x_key] for r in rows], dtype=float)
    y = np.array([r[y_key] for r in rows], dtype=float)
    return x_key, x, y


def _overlay(truth: np.ndarray, sampled: np.ndarray) -> np.ndarray:
    lo, hi = float(truth.min()), float(truth.max())
    base = (truth - lo) / (hi - lo) if hi > lo else np.zeros_like(truth)
    return np.where(sampled > 0, 1.0, 0.8 * base)


def make_report(run_dir, out_dir=None) -> list[Path]:
    """Write CSV summaries and SVG/PGM figures for the run stored in ``run_dir``."""
    run_dir = Path(run_dir)
    record = replay(run_dir)
    out = Path(out_dir) if out_dir else run_dir / "report"
    out.mkdir(parents=True, exist_ok=True)
    made = []

    summary = _flatten({"status": record.status, **record.summary})
    if record.ledger.entries:
        summary += _flatten({"ledger_seconds": record.ledger.totals()})
    made.append(_write_csv(out / "summary.csv", summary))

    series = _budget_series(record)
    if series:
        rows = [{"series": name, "n_obs": n, "rmse": e} for name, pts in series.items() for n, e in pts]
        made.append(_write_csv(out / "rmse_vs_budget.csv", rows))
        fig = Figure(figsize=(5, 3.5))
        ax = fig.add_subplot()
        for name, pts in series.items():
            n, e = zip(*pts)
            ax.plot(n, e, marker="o", ms=3, label=name)
        ax.set_xlabel("measurements")
        ax.set_ylabel("reconstruction RMSE")
        ax.legend()
        fig.tight_layout()
        made.append(_save(fig, out / "rmse_vs_budget.svg"))

    if "learning" in record.curves:
        x_key, x, y = _learning_series(record.curves["learning"])
        win = max(1, len(y) // 50)
        smooth = np.convolve(y, np.ones(win) / win, mode="valid")
        fig = Figure(figsize=(5, 3.5))
        ax = fig.add_subplot()
        ax.plot(x, y, lw=0.5, alpha=0.4, label="raw")
        ax.plot(x[win - 1:], smooth, lw=1.5, label=f"moving mean ({win})")
        ax.set_xlabel(x_key)
        ax.set_ylabel("discounted return")
        ax.legend()
        fig.tight_layout()
        made.append(_save(fig, out / "learning_curve.svg"))

    if "truth" in record.fields and "sampled" in record.fields:
        truth = record.fields["truth"]
        img = _overlay(truth.values, record.fields["sampled"].values)
        path = out / "sampled_overlay.pgm"
        path.write_bytes(to_pgm_bytes(img))
        made.append(path)
        fig = Figure(figsize=(4.5, 4.5))
        ax = fig.add_subplot()
        ex, ey = truth.extent
        ax.imshow(truth.values, cmap="gray", origin="upper", extent=(0, ex, ey, 0))
        pts = np.array([o.pos_nominal for o in record.observations])
        if len(pts):
            ax.scatter(pts[:, 0], pts[:, 1], s=4, c="tab:red")
        ax.set_xlabel("x (nm)")
        ax.set_ylabel("y (nm)")
        fig.tight_layout()
        made.append(_save(fig, out / "sampled_overlay.svg"))
    return made
