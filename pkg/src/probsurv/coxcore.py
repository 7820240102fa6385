"""Cox partial likelihood, Breslow baseline, Kaplan-Meier and survival curves."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import kernels


class CoxError(ValueError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        if t.ndim != 1 or t.size == 0:
            raise ValueError("time grid must be a nonempty vector")
        if t[0] < 0 or np.any(np.diff(t) <= 0):
            raise ValueError("time grid must be nonnegative and strictly increasing")
        object.__setattr__(self, "times", t)

    def __len__(self):
        return self.times.shape[0]

    def index(self, t) -> np.ndarray:
        """Column of the step value in force at ``t`` (-1 before the grid)."""
        return np.searchsorted(self.times, np.asarray(t, dtype=np.float64), side="right") - 1


@dataclass(frozen=True)
class SurvivalCurve:
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.grid.times.shape:
            raise ValueError("curve values must match the grid")
        if np.any(v < -1e-12) or np.any(v > 1 + 1e-12) or np.any(np.diff(v) > 1e-12):
            raise ValueError("survival values must lie in [0, 1] and be non-increasing")
        object.__setattr__(self, "values", v)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def __call__(self, t):
        """Right-continuous step evaluation; 1 before the first grid time."""
        k = self.grid.index(t)
        return np.where(k >= 0, self.values[np.maximum(k, 0)], 1.0)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "survival"])
            for t, s in zip(self.times, self.values):
                w.writerow([repr(float(t)), repr(float(s))])


@dataclass(frozen=True)
class CurveSet:
    """Survival curves of many individuals on one shared grid: ``values[i, k]``."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        if v.shape[1] != len(self.grid):
            raise ValueError("curve matrix width must match the grid")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, i) -> SurvivalCurve:
        return SurvivalCurve(self.grid, self.values[i])

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @classmethod
    def from_curves(cls, curves: Sequence[SurvivalCurve]) -> "CurveSet":
        curves = list(curves)
        grid = curves[0].grid
        if any(not np.array_equal(c.times, grid.times) for c in curves):
            union = TimeGrid(np.unique(np.concatenate([c.times for c in curves])))
            return cls(union, np.vstack([c(union.times) for c in curves]))
        return cls(grid, np.vstack([c.values for c in curves]))

    def at(self, t) -> np.ndarray:
        """S_i(t_i) for per-individual times ``t`` (length N)."""
        k = self.grid.index(t)
        rows = np.arange(len(self))
        return np.where(k >= 0, self.values[rows, np.maximum(k, 0)], 1.0)

    def on(self, t) -> np.ndarray:
        """Every curve evaluated at common times ``t``: shape (N, len(t))."""
        k = self.grid.index(t)
        vals = self.values[:, np.maximum(k, 0)]
        return np.where(k[None, :] >= 0, vals, 1.0)


def as_curveset(curves) -> CurveSet:
    if isinstance(curves, CurveSet):
        return curves
    return CurveSet.from_curves(curves)


def _check_inputs(risk, times, events):
    risk = np.asarray(risk, dtype=np.float64).ravel()
    times = np.asarray(times, dtype=np.float64).ravel()
    events = np.asarray(events).ravel()
    if not (risk.shape == times.shape == events.shape):
        raise CoxError("risk, times and events must have equal length")
    if not np.all(np.isfinite(risk)):
        raise CoxError("non-finite risk score")
    if not np.any(events > 0):
        raise CoxError("partial likelihood needs at least one event")
    return risk, times, events


def partial_log_likelihood(risk, times, events) -> float:
    """Cox partial log-likelihood with Breslow handling of tied event times."""
    return kernels.cox_loglik_grad(*_check_inputs(risk, times, events))[0]


def plm_gradient(risk, times, events) -> np.ndarray:
    """Gradient of :func:`partial_log_likelihood` w.r.t. each risk score."""
    return kernels.cox_loglik_grad(*_check_inputs(risk, times, events))[1]


def partial_log_likelihood_and_gradient(risk, times, events):
    return kernels.cox_loglik_grad(*_check_inputs(risk, times, events))


@dataclass(frozen=True)
class BaselineHazard:
    event_times: np.ndarray
    cumulative_hazard: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.cumulative_hazard) < 0):
            raise ValueError("cumulative hazard must be nondecreasing")

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.event_times)

    def __call__(self, t):
        """H_0(t) as a right-continuous step function, 0 before the first event."""
        k = np.searchsorted(self.event_times, np.asarray(t, dtype=np.float64), side="right") - 1
        return np.where(k >= 0, self.cumulative_hazard[np.maximum(k, 0)], 0.0)

    def survival(self, t):
        return np.exp(-self(t))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "cumulative_hazard"])
            for t, h in zip(self.event_times, self.cumulative_hazard):
                w.writerow([repr(float(t)), repr(float(h))])

    @classmethod
    def from_csv(cls, path) -> "BaselineHazard":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        return cls(np.array([float(r[0]) for r in rows]), np.array([float(r[1]) for r in rows]))


def breslow_baseline(risk, times, events) -> BaselineHazard:
    """Breslow cumulative baseline hazard: sum of d_k / sum_{R_k} exp(f_j)."""
    risk, times, events = _check_inputs(risk, times, events)
    ut, inc = kernels.breslow_increments(risk, times, events)
    return BaselineHazard(ut, np.cumsum(inc))


def nelson_aalen(times, events) -> BaselineHazard:
    times = np.asarray(times, dtype=np.float64)
    return breslow_baseline(np.zeros_like(times), times, events)


def survival_curve(risk: float, base: BaselineHazard, grid: Optional[TimeGrid] = None) -> SurvivalCurve:
    """S(t | x) = exp(-H_0(t) exp(risk)) on ``grid`` (default: baseline event times)."""
    grid = grid or base.grid
    with np.errstate(over="ignore"):
        vals = np.exp(-base(grid.times) * np.exp(float(risk)))
    return SurvivalCurve(grid, vals)


def survival_curves(risks, base: BaselineHazard, grid: Optional[TimeGrid] = None) -> CurveSet:
    grid = grid or base.grid
    risks = np.asarray(risks, dtype=np.float64).ravel()
    with np.errstate(over="ignore"):
        vals = np.exp(-np.outer(np.exp(risks), base(grid.times)))
    return CurveSet(grid, vals)


def kaplan_meier(times, events) -> SurvivalCurve:
    """Product-limit estimate on the distinct observed times."""
    times = np.asarray(times, dtype=np.float64).ravel()
    events = np.asarray(events).ravel()
    if times.size == 0:
        raise CoxError("Kaplan-Meier needs at least one record")
    uniq, inv = np.unique(times, return_inverse=True)
    removed = np.bincount(inv, minlength=uniq.size)
    deaths = np.bincount(inv, weights=(events > 0).astype(np.float64), minlength=uniq.size)
    at_risk = times.size - np.concatenate(([0], np.cumsum(removed)[:-1]))
    surv = np.cumprod(1.0 - deaths / at_risk)
    return SurvivalCurve(TimeGrid(uniq), np.clip(surv, 0.0, 1.0))


def median_survival_time(curve: SurvivalCurve) -> float:
    """First crossing of 0.5, linearly interpolated between grid points.

    The curve is anchored at (0, 1) when the grid starts after 0.  If it never
    reaches 0.5 the tail is extended with the hazard of the last interval
    (falling back to the average hazard over the curve).
    """
    t = curve.times
    s = curve.values
    if t[0] > 0:
        t = np.concatenate(([0.0], t))
        s = np.concatenate(([1.0], s))
    below = np.flatnonzero(s <= 0.5)
    if below.size:
        k = below[0]
        if k == 0 or s[k] == 0.5:
            return float(t[k])
        t0, t1, s0, s1 = t[k - 1], t[k], s[k - 1], s[k]
        return float(t0 + (s0 - 0.5) * (t1 - t0) / (s0 - s1))
    s_end = s[-1]
    t_end = t[-1]
    hazard = 0.0
    if t.size >= 2 and s[-2] > 0 and s_end > 0:
        hazard = (np.log(s[-2]) - np.log(s_end)) / (t[-1] - t[-2])
    if hazard <= 0 and t_end > 0:
        hazard = -np.log(s_end) / t_end
    if hazard <= 0:
        return float(t_end)
    return float(t_end + (np.log(s_end) - np.log(0.5)) / hazard)


def median_survival_times(curves: CurveSet) -> np.ndarray:
    """Vectorised :func:`median_survival_time` over a curve set."""
    t = curves.times
    S = curves.values
    if t[0] > 0:
        t = np.concatenate(([0.0], t))
        S = np.hstack([np.ones((S.shape[0], 1)), S])
    n = S.shape[0]
    out = np.empty(n)
    hit = S <= 0.5
    crossed = hit.any(axis=1)
    k = np.argmax(hit, axis=1)
    rows = np.flatnonzero(crossed)
    kk = k[rows]
    exact = (kk == 0) | (S[rows, kk] == 0.5)
    out[rows[exact]] = t[kk[exact]]
    r2, k2 = rows[~exact], kk[~exact]
    s0, s1 = S[r2, k2 - 1], S[r2, k2]
    out[r2] = t[k2 - 1] + (s0 - 0.5) * (t[k2] - t[k2 - 1]) / (s0 - s1)
    for i in np.flatnonzero(~crossed):
        out[i] = median_survival_time(SurvivalCurve(TimeGrid(t), S[i]))
    return out
