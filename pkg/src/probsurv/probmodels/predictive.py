"""Posterior-predictive sampling, survival bands and credible intervals."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import ndtr

from ..coxcore import BaselineHazard, CurveSet, SurvivalCurve, TimeGrid, median_survival_times, survival_curves
from .models import MCDModel, RiskModel


class UntrainedModelError(RuntimeError):
    pass


@dataclass
class PredictiveDraws:
    risk_samples: np.ndarray
    curves: Optional[CurveSet] = None
    times: Optional[np.ndarray] = None
    seed: Optional[int] = None

    @property
    def n(self) -> int:
        return self.risk_samples.shape[0]


@dataclass(frozen=True)
class CredibleInterval:
    level: float
    lower: float
    upper: float


def credible_interval(samples, level: float = 0.9) -> CredibleInterval:
    """Equal-tailed interval from linear-interpolation sample quantiles."""
    samples = np.asarray(samples, dtype=np.float64).ravel()
    if samples.size == 0:
        raise ValueError("credible interval needs samples")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    lo, hi = np.quantile(samples, [(1.0 - level) / 2.0, (1.0 + level) / 2.0])
    return CredibleInterval(level, float(lo), float(hi))


def credible_bounds(draws, level: float, axis: int = 0):
    """Vectorised equal-tailed bounds along ``axis``."""
    lo, hi = np.quantile(np.asarray(draws, dtype=np.float64), [(1.0 - level) / 2.0, (1.0 + level) / 2.0], axis=axis)
    return lo, hi


def _check_trained(model):
    if not getattr(model, "trained", False):
        raise UntrainedModelError("model has not been trained")


def sample_risks(model: RiskModel, X, n: int, rng) -> np.ndarray:
    """Risk draws for each row of ``X``: shape ``(n, N)``."""
    _check_trained(model)
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return model.sample_risk(np.atleast_2d(X), n, rng)


def predict_risk_draws(model: RiskModel, x, n: int = 100, seed: int = 0) -> PredictiveDraws:
    """``n`` posterior-predictive risk scores for a single individual."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    return PredictiveDraws(sample_risks(model, x, n, seed)[:, 0], seed=seed)


def predictive_curves(risk_draws, base: BaselineHazard, grid: Optional[TimeGrid] = None):
    """Map an ``(n, N)`` array of risk draws to survival values ``(n, N, K)``."""
    grid = grid or base.grid
    H = base(grid.times)
    with np.errstate(over="ignore"):
        return grid, np.exp(-np.exp(np.asarray(risk_draws))[..., None] * H)


def mean_curves(model: RiskModel, X, base: BaselineHazard, n: int, seed, grid: Optional[TimeGrid] = None):
    """Predictive-mean survival curves and per-draw risks for each row of ``X``.

    Point models skip sampling.  Returns ``(CurveSet, risk_draws or None)``.
    """
    grid = grid or base.grid
    if not model.samples_predictive:
        return survival_curves(model.risk(X), base, grid), None
    draws = sample_risks(model, X, n, seed)
    H = base(grid.times)
    total = np.zeros((draws.shape[1], len(grid)))
    with np.errstate(over="ignore"):
        for r in draws:
            total += np.exp(-np.outer(np.exp(r), H))
    return CurveSet(grid, total / n), draws


def _exact_mean(values):
    """Pointwise mean that is bit-exact where every draw agrees."""
    mean = values.mean(axis=0)
    const = np.ptp(values, axis=0) == 0
    mean[const] = values[0][const]
    return mean


def predict_survival_band(
    model: RiskModel,
    base: BaselineHazard,
    x,
    n: int = 1000,
    level: float = 0.9,
    seed: int = 0,
    grid: Optional[TimeGrid] = None,
):
    """Mean survival curve with a pointwise equal-tailed band.

    Returns ``(mean, lower, upper, draws)``; ``draws.times`` holds the median
    survival time of every sampled curve.  The band is widened to contain the
    mean where a skewed draw distribution would put the mean outside it.
    """
    grid = grid or base.grid
    draws = predict_risk_draws(model, x, n, seed)
    _, S = predictive_curves(draws.risk_samples[:, None], base, grid)
    S = S[:, 0, :]
    mean = np.clip(_exact_mean(S), 0.0, 1.0)
    lo, hi = credible_bounds(S, level, axis=0)
    lo = np.minimum(lo, mean)
    hi = np.maximum(hi, mean)
    curves = CurveSet(grid, S)
    draws.curves = curves
    draws.times = median_survival_times(curves)
    return SurvivalCurve(grid, mean), SurvivalCurve(grid, lo), SurvivalCurve(grid, hi), draws


def predict_time_draws(model: RiskModel, X, n: int, seed, base: Optional[BaselineHazard] = None) -> np.ndarray:
    """Predicted survival-time draws ``(n, N)``.

    Cox heads: median survival time of each sampled curve.  Gaussian heads:
    a draw from the per-sample output Gaussian (scaled back to time units),
    with the dropout precision ``tau`` adding variance for MCD models.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    X = np.atleast_2d(X)
    if model.head_kind == "gaussian":
        out = model.sample_outputs(X, n, rng)
        mu, sigma = out[:, :, 0], np.exp(out[:, :, 1])
        var = sigma**2
        if isinstance(model, MCDModel):
            var = var + 1.0 / model.mcd.tau
        y = mu + np.sqrt(var) * rng.standard_normal(mu.shape)
        return np.maximum(y, 0.0) * model.objective.time_scale
    if base is None:
        raise ValueError("Cox models need a baseline hazard to produce times")
    draws = sample_risks(model, X, n, rng)
    return np.vstack([median_survival_times(survival_curves(r, base)) for r in draws])


def gaussian_survival(model: RiskModel, X, grid: TimeGrid) -> CurveSet:
    """S(t|x) = 1 - Phi((t - mu) / sigma) for Gaussian-head models."""
    out = model.outputs(np.atleast_2d(X))
    mu, sigma = out[:, 0], np.exp(out[:, 1])
    t = grid.times / model.objective.time_scale
    return CurveSet(grid, ndtr((mu[:, None] - t[None, :]) / sigma[:, None]))


def count_parameters(model: RiskModel) -> int:
    """Trainable scalars: VI counts means and rhos; frozen RFF draws excluded."""
    return int(model.n_params())


__all__ = [
    "CredibleInterval",
    "PredictiveDraws",
    "UntrainedModelError",
    "count_parameters",
    "credible_bounds",
    "credible_interval",
    "gaussian_survival",
    "mean_curves",
    "predict_risk_draws",
    "predict_survival_band",
    "predict_time_draws",
    "predictive_curves",
    "sample_risks",
]
