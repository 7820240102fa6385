"""Plot data: survival bands and histograms of predicted median survival time.

Only CSV files are produced; rendering is left to external tools.
"""
from __future__ import annotations

import csv
import warnings
from pathlib import Path
from typing import Optional

import numpy as np

from ..coxcore import BaselineHazard, TimeGrid
from ..probmodels import RiskModel, predict_survival_band


def _write_rows(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def emit_plot_data(
    model: RiskModel,
    base: BaselineHazard,
    X,
    index: int,
    out_dir,
    prefix: Optional[str] = None,
    n: int = 1000,
    level: float = 0.9,
    seed: int = 0,
    bins: int = 30,
    grid: Optional[TimeGrid] = None,
):
    """Write ``<prefix>_band.csv`` (time, mean, lo, hi) and ``<prefix>_hist.csv``
    (bin_left_edge, count) for row ``index`` of ``X``; returns both paths."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if not 0 <= index < X.shape[0]:
        raise IndexError(f"individual index {index} out of range 0..{X.shape[0] - 1}")
    if model.head_kind != "cox":
        raise ValueError("plot data needs a Cox-head model")
    if not model.samples_predictive:
        warnings.warn(f"{model.backend} is a point model; the band collapses onto the mean", stacklevel=2)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prefix = prefix or f"{model.backend}_{index}"
    mean, lo, hi, draws = predict_survival_band(model, base, X[index], n=n, level=level, seed=seed, grid=grid)
    band = out_dir / f"{prefix}_band.csv"
    _write_rows(
        band,
        ["time", "mean", "lo", "hi"],
        ([repr(float(t)), repr(float(m)), repr(float(a)), repr(float(b))] for t, m, a, b in zip(mean.times, mean.values, lo.values, hi.values)),
    )
    counts, edges = np.histogram(draws.times, bins=bins)
    hist = out_dir / f"{prefix}_hist.csv"
    _write_rows(hist, ["bin_left_edge", "count"], ([repr(float(e)), int(c)] for e, c in zip(edges[:-1], counts)))
    return band, hist
