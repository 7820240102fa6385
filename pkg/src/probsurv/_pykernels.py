"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature.
Inputs to the ``*_sorted`` kernels must already be sorted by time
(ascending, stable); the public wrappers in :mod:`probsurv.kernels` do that.
"""
import numpy as np


def cox_loglik_grad_sorted(risk, times, events):
    """Breslow-tie partial log-likelihood and its gradient on sorted data."""
    if risk.shape[0] == 0:
        return 0.0, np.zeros(0)
    m = risk.max()
    w = np.exp(risk - m)
    suffix = np.cumsum(w[::-1])[::-1]
    starts = np.searchsorted(times, times, side="left")
    ends = np.searchsorted(times, times, side="right") - 1
    riskset = suffix[starts]
    ev = events > 0
    loglik = float(np.sum(risk[ev] - m - np.log(riskset[ev])))
    step = np.where(ev, 1.0 / riskset, 0.0)
    cum = np.cumsum(step)
    grad = events.astype(np.float64) - w * cum[ends]
    return loglik, grad


def breslow_sorted(risk, times, events):
    """Distinct event times and Breslow hazard increments on sorted data."""
    m = risk.max()
    w = np.exp(risk - m)
    suffix = np.cumsum(w[::-1])[::-1]
    ev = events > 0
    uniq, d = np.unique(times[ev], return_counts=True)
    starts = np.searchsorted(times, uniq, side="left")
    inc = d * np.exp(-m) / suffix[starts]
    return uniq.astype(np.float64), inc.astype(np.float64)


def concordance_counts(times, events, col, surv):
    """Antolini pair counts.

    ``col[i]`` is the column of ``surv`` holding S(times[i]); -1 means the
    time precedes the grid, where every curve equals 1.
    """
    conc = 0.0
    comp = 0
    for i in np.flatnonzero(events > 0):
        later = times > times[i]
        n_later = int(later.sum())
        if n_later == 0:
            continue
        comp += n_later
        k = col[i]
        if k < 0:
            conc += 0.5 * n_later
            continue
        own = surv[i, k]
        others = surv[later, k]
        conc += float(np.count_nonzero(others > own)) + 0.5 * float(np.count_nonzero(others == own))
    return conc, comp
