"""Per-batch training losses on network outputs.

Each objective maps raw outputs ``(n, k)`` to ``(loss, dloss/doutputs)``
with the loss averaged over the batch.
"""
from __future__ import annotations

import numpy as np
from scipy.special import log_ndtr

from ..coxcore import partial_log_likelihood_and_gradient

_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


class CoxObjective:
    """Negative Cox partial log-likelihood over the batch's own risk sets."""

    name = "cox"
    n_outputs = 1

    def __call__(self, outputs, times, events):
        n = outputs.shape[0]
        ll, g = partial_log_likelihood_and_gradient(outputs[:, 0], times, events)
        return -ll / n, (-g / n)[:, None]


class GaussianTimeObjective:
    """Censored Gaussian NLL on survival time; outputs are (mean, log sigma).

    Times are divided by ``time_scale`` before the likelihood is applied.
    Censored records contribute ``-log P(T > c)``.
    """

    name = "gaussian"
    n_outputs = 2

    def __init__(self, time_scale: float = 1.0):
        self.time_scale = float(time_scale)

    def __call__(self, outputs, times, events):
        n = outputs.shape[0]
        mu = outputs[:, 0]
        log_sigma = outputs[:, 1]
        sigma = np.exp(log_sigma)
        y = np.asarray(times, dtype=np.float64) / self.time_scale
        ev = np.asarray(events) > 0
        z = (y - mu) / sigma
        loss = np.where(ev, log_sigma + 0.5 * z * z + _HALF_LOG_2PI, 0.0)
        g_mu = np.where(ev, -z / sigma, 0.0)
        g_ls = np.where(ev, 1.0 - z * z, 0.0)
        # censored: -log Phi(-z)
        zc = -z[~ev]
        loss[~ev] = -log_ndtr(zc)
        mills = np.exp(-0.5 * zc * zc - _HALF_LOG_2PI - log_ndtr(zc))
        g_mu[~ev] = -mills / sigma[~ev]
        g_ls[~ev] = -mills * (-zc)
        grad = np.stack([g_mu, g_ls], axis=1) / n
        return float(loss.sum() / n), grad


def make_objective(head: str, times=None):
    if head == "cox":
        return CoxObjective()
    if head == "gaussian":
        scale = float(np.mean(times)) if times is not None else 1.0
        return GaussianTimeObjective(scale if scale > 0 else 1.0)
    raise ValueError(f"unknown head {head!r}")
