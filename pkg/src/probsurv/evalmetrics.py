"""Discrimination, error and calibration metrics for censored predictions."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .coxcore import CurveSet, TimeGrid, as_curveset, kaplan_meier


class MetricError(ValueError):
    pass


# --------------------------------------------------------------------------
# chi-square tail probability


def _lower_gamma_series(a: float, x: float) -> float:
    term = 1.0 / a
    total = term
    n = 0
    while True:
        n += 1
        term *= x / (a + n)
        total += term
        if abs(term) < abs(total) * 1e-16 or n > 10000:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _upper_gamma_cf(a: float, x: float) -> float:
    """Modified Lentz evaluation of the continued fraction for Q(a, x)."""
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def regularized_upper_gamma(a: float, x: float) -> float:
    """Q(a, x) = Gamma(a, x) / Gamma(a)."""
    if a <= 0:
        raise ValueError("shape must be positive")
    if x <= 0:
        return 1.0
    if x < a + 1.0:
        return max(0.0, 1.0 - _lower_gamma_series(a, x))
    return min(1.0, _upper_gamma_cf(a, x))


def chi_square_p(statistic: float, dof: int) -> float:
    """Upper-tail probability of the chi-square distribution."""
    if statistic < 0 or dof < 1:
        raise ValueError("need statistic >= 0 and dof >= 1")
    return regularized_upper_gamma(dof / 2.0, statistic / 2.0)


@dataclass(frozen=True)
class ChiSquareResult:
    statistic: float
    dof: int
    p_value: float

    @classmethod
    def from_counts(cls, observed, expected, dof: int) -> "ChiSquareResult":
        observed = np.asarray(observed, dtype=np.float64)
        expected = np.asarray(expected, dtype=np.float64)
        stat = float(np.sum((observed - expected) ** 2 / expected))
        return cls(stat, dof, chi_square_p(stat, dof))


# --------------------------------------------------------------------------
# discrimination and error


def concordance_td(curves, times, events) -> float:
    """Antolini's time-dependent concordance.

    Comparable pairs have ``y_i < y_j`` with ``δ_i = 1``; a pair is concordant
    when ``S(y_i | x_i) < S(y_i | x_j)``, and ties in predicted survival count
    one half.
    """
    cs = as_curveset(curves)
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events)
    if len(cs) != times.shape[0]:
        raise MetricError("one curve per record is required")
    col = cs.grid.index(times)
    conc, comp = kernels.concordance_counts(times, events, col, cs.values)
    if comp == 0:
        raise MetricError("no comparable pairs")
    return float(conc / comp)


def _censoring_km(times, events):
    return kaplan_meier(times, 1 - (np.asarray(events) > 0).astype(np.int64))


def integrated_brier(curves, times, events, grid=None, ipcw: bool = False) -> float:
    """Mean over grid times of the Brier score.

    Default: censored records drop out once their censoring time is reached
    and each time's score averages the records still under observation.
    ``ipcw=True`` uses Graf's inverse-probability-of-censoring weights.
    """
    cs = as_curveset(curves)
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events) > 0
    grid_t = (grid.times if isinstance(grid, TimeGrid) else np.asarray(grid if grid is not None else cs.times, dtype=np.float64))
    if grid_t.size == 0:
        raise MetricError("empty evaluation grid")
    S = cs.on(grid_t)
    alive = times[:, None] > grid_t[None, :]
    if ipcw:
        G = _censoring_km(times, events)
        g_at_t = G(grid_t)
        k_left = np.searchsorted(G.times, times, side="left") - 1
        g_left = np.where(k_left >= 0, G.values[np.maximum(k_left, 0)], 1.0)
        died = (~alive) & events[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            w_dead = np.where(died, 1.0 / g_left[:, None], 0.0)
            w_alive = np.where(alive, 1.0 / g_at_t[None, :], 0.0)
        terms = S**2 * w_dead + (1.0 - S) ** 2 * w_alive
        scores = terms.mean(axis=0)
        return float(np.mean(scores[np.isfinite(scores)]))
    observed = alive | events[:, None]
    sq = np.where(observed, (S - alive) ** 2, 0.0)
    counts = observed.sum(axis=0)
    keep = counts > 0
    if not np.any(keep):
        raise MetricError("no records under observation on the grid")
    return float(np.mean(sq.sum(axis=0)[keep] / counts[keep]))


def mae_hinge(pred_times, times, events) -> float:
    pred = np.asarray(pred_times, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events) > 0
    err = np.where(events, np.abs(pred - times), np.maximum(times - pred, 0.0))
    return float(err.mean())


def _km_tables(times, events):
    uniq, inv = np.unique(times, return_inverse=True)
    removed = np.bincount(inv, minlength=uniq.size).astype(np.float64)
    deaths = np.bincount(inv, weights=events.astype(np.float64), minlength=uniq.size)
    at_risk = times.size - np.concatenate(([0.0], np.cumsum(removed)[:-1]))
    return uniq, inv, deaths, at_risk


def _rmst(uniq, deaths, at_risk):
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(at_risk > 0, 1.0 - deaths / at_risk, 1.0)
    surv = np.cumprod(factor)
    return uniq[0] + float(np.sum(surv[:-1] * np.diff(uniq)))


def pseudo_observations(times, events, idx=None) -> np.ndarray:
    """Jackknife pseudo-values of the restricted mean survival time.

    The restriction horizon is the largest observed time of the full sample.
    """
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events) > 0
    n = times.size
    if n < 2:
        raise MetricError("pseudo-observations need at least two records")
    if not events.any():
        raise MetricError("Kaplan-Meier is degenerate without events")
    uniq, inv, deaths, at_risk = _km_tables(times, events)
    theta = _rmst(uniq, deaths, at_risk)
    idx = np.arange(n) if idx is None else np.asarray(idx, dtype=np.int64)
    out = np.empty(idx.size)
    for m, i in enumerate(idx):
        k = inv[i]
        r = at_risk.copy()
        r[: k + 1] -= 1.0
        d = deaths.copy()
        if events[i]:
            d[k] -= 1.0
        out[m] = n * theta - (n - 1) * _rmst(uniq, d, r)
    return out


def mae_pseudo_obs(pred_times, times, events) -> float:
    """MAE against observed event times, with censored targets replaced by
    jackknife pseudo-observations of the Kaplan-Meier restricted mean."""
    pred = np.asarray(pred_times, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events) > 0
    target = times.copy()
    cens = np.flatnonzero(~events)
    if cens.size:
        target[cens] = pseudo_observations(times, events, cens)
    elif times.size < 1:
        raise MetricError("no records")
    return float(np.mean(np.abs(pred - target)))


# --------------------------------------------------------------------------
# calibration


def decile_groups(probs) -> np.ndarray:
    """Group index 0..9 by the deciles of ``probs``; tied values share a group."""
    probs = np.asarray(probs, dtype=np.float64)
    edges = np.quantile(probs, np.arange(1, 10) / 10.0)
    return np.searchsorted(edges, probs, side="left")


def ici(event_probs, times, events, t_star: Optional[float] = None) -> float:
    """Mass-weighted mean |predicted - observed| over decile groups.

    The observed event proportion of a group is ``1 - KM_group(t*)``.
    """
    p = np.asarray(event_probs, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events)
    if p.size == 0:
        raise MetricError("no predictions")
    if t_star is None:
        t_star = float(np.median(times))
    groups = decile_groups(p)
    total = 0.0
    for g in np.unique(groups):
        m = groups == g
        observed = 1.0 - float(kaplan_meier(times[m], events[m])(t_star))
        total += m.mean() * abs(p[m].mean() - observed)
    return float(total)


def d_calibration(curves, times, events, n_bins: int = 10) -> ChiSquareResult:
    """Uniformity test of S(y_i | x_i) across ``n_bins`` equal bins.

    ``curves`` may also be a vector holding S(y_i | x_i) directly.

    A censored record at survival level s spreads unit mass uniformly over
    [0, s]: its own bin gets (s - lower edge) / s, every lower bin 1/(n_bins s).
    """
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events) > 0
    n = times.size
    if n < n_bins:
        raise MetricError(f"need at least {n_bins} records")
    s = curves if isinstance(curves, np.ndarray) and curves.ndim == 1 else as_curveset(curves).at(times)
    s = np.clip(np.asarray(s, dtype=np.float64), 0.0, 1.0)
    width = 1.0 / n_bins
    b = np.minimum((s * n_bins).astype(np.int64), n_bins - 1)
    counts = np.bincount(b[events], minlength=n_bins).astype(np.float64)
    cs_s = s[~events]
    cb = b[~events]
    pos = cs_s > 0
    zero = ~pos
    counts[0] += zero.sum()
    s_p, b_p = cs_s[pos], cb[pos]
    own = (s_p - b_p * width) / s_p
    np.add.at(counts, b_p, own)
    below = width / s_p
    # bins strictly below each record's own bin receive width / s
    add = np.zeros(n_bins + 1)
    np.add.at(add, np.zeros_like(b_p), below)
    np.add.at(add, b_p, -below)
    counts += np.cumsum(add)[:n_bins]
    return ChiSquareResult.from_counts(counts, np.full(n_bins, n / n_bins), n_bins - 1)


DEFAULT_LEVELS = tuple(np.round(np.arange(1, 10) / 10.0, 10))


def coverage_counts(time_draws, times, levels=DEFAULT_LEVELS):
    """Number of true times inside each equal-tailed CrI level."""
    draws = np.asarray(time_draws, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    out = []
    for lvl in levels:
        lo, hi = np.quantile(draws, [(1.0 - lvl) / 2.0, (1.0 + lvl) / 2.0], axis=0)
        out.append(int(np.count_nonzero((times >= lo) & (times <= hi))))
    return np.asarray(out)


def c_calibration(time_draws, times, events, levels=DEFAULT_LEVELS, min_draws: int = 50) -> ChiSquareResult:
    """Coverage test of credible intervals on uncensored records.

    ``time_draws`` has shape ``(n_draws, N)``.  Observed coverage counts at each
    level are compared with ``level * n`` by Pearson's statistic with
    ``len(levels)`` degrees of freedom.
    """
    draws = np.asarray(time_draws, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events) > 0
    if draws.ndim != 2 or draws.shape[1] != times.size:
        raise MetricError("time_draws must have shape (n_draws, N)")
    if draws.shape[0] < min_draws:
        raise MetricError(f"need at least {min_draws} draws per individual")
    if not events.any():
        raise MetricError("C-calibration needs uncensored records")
    obs = coverage_counts(draws[:, events], times[events], levels)
    expected = np.asarray(levels) * events.sum()
    return ChiSquareResult.from_counts(obs, expected, len(levels))


# --------------------------------------------------------------------------
# report


@dataclass
class MetricReport:
    ci_td: float
    ibs: float
    mae_hinge: float
    mae_po: float
    ici: float
    dcal_p: float
    ccal_p: Optional[float] = None

    COLUMNS = ("ci_td", "mae_hinge", "mae_po", "ibs", "ici", "dcal_p", "ccal_p")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.COLUMNS}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def csv_row(self) -> list:
        return ["" if getattr(self, k) is None else repr(float(getattr(self, k))) for k in self.COLUMNS]


def evaluation_grid(train_event_times, test_times) -> TimeGrid:
    """Training event times that fall inside the test follow-up window."""
    t = np.asarray(train_event_times, dtype=np.float64)
    test_times = np.asarray(test_times, dtype=np.float64)
    t = t[(t >= test_times.min()) & (t < test_times.max())]
    if t.size == 0:
        t = np.asarray([float(np.median(test_times))])
    return TimeGrid(np.unique(t))


def compute_report(
    curves: CurveSet,
    pred_times,
    times,
    events,
    brier_grid=None,
    time_draws=None,
    t_star: Optional[float] = None,
    n_bins: int = 10,
) -> MetricReport:
    """Every metric for one model on one split.

    ``curves`` are the (predictive-mean) survival curves, ``pred_times`` their
    median survival times, ``time_draws`` optional ``(n_draws, N)`` samples of
    predicted survival time for C-calibration.
    """
    times = np.asarray(times, dtype=np.float64)
    if t_star is None:
        t_star = float(np.median(times))
    probs = 1.0 - curves.on(np.array([t_star]))[:, 0]
    return MetricReport(
        ci_td=concordance_td(curves, times, events),
        ibs=integrated_brier(curves, times, events, brier_grid),
        mae_hinge=mae_hinge(pred_times, times, events),
        mae_po=mae_pseudo_obs(pred_times, times, events),
        ici=ici(probs, times, events, t_star),
        dcal_p=d_calibration(curves, times, events, n_bins).p_value,
        ccal_p=None if time_draws is None else c_calibration(time_draws, times, events).p_value,
    )


def reports_to_csv(rows: Sequence[tuple]) -> str:
    """``rows`` = [(model name, MetricReport)], rendered in table column order."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", *MetricReport.COLUMNS])
    for name, rep in rows:
        w.writerow([name, *rep.csv_row()])
    return buf.getvalue()
