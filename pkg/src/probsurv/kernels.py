"""Kernel dispatch: compiled extension when available, numpy otherwise.

Set ``PROBSURV_PURE=1`` to force the numpy fallback.
"""
import os

import numpy as np

from . import _pykernels

_impl = _pykernels
BACKEND = "python"
if os.environ.get("PROBSURV_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on build
        _impl = _pykernels


def available_backends():
    out = {"python": _pykernels}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:  # pragma: no cover
        pass
    return out


def _sorted_inputs(risk, times, events):
    risk = np.ascontiguousarray(risk, dtype=np.float64)
    times = np.ascontiguousarray(times, dtype=np.float64)
    events = np.ascontiguousarray(events, dtype=np.float64)
    order = np.argsort(times, kind="stable")
    return order, risk[order], times[order], events[order]


def cox_loglik_grad(risk, times, events, impl=None):
    """Partial log-likelihood and gradient in the caller's record order."""
    impl = impl or _impl
    order, r, t, e = _sorted_inputs(risk, times, events)
    loglik, g_sorted = impl.cox_loglik_grad_sorted(r, t, e)
    grad = np.empty_like(g_sorted)
    grad[order] = g_sorted
    return float(loglik), grad


def breslow_increments(risk, times, events, impl=None):
    impl = impl or _impl
    _, r, t, e = _sorted_inputs(risk, times, events)
    return impl.breslow_sorted(r, t, e)


def concordance_counts(times, events, col, surv, impl=None):
    impl = impl or _impl
    return impl.concordance_counts(
        np.ascontiguousarray(times, dtype=np.float64),
        np.ascontiguousarray(events, dtype=np.float64),
        np.ascontiguousarray(col, dtype=np.int64),
        np.ascontiguousarray(surv, dtype=np.float64),
    )
