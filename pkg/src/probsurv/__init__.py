"""Probabilistic neural survival analysis under the Cox proportional-hazards model.

Subpackages: :mod:`dataio` (loading, preprocessing, splits, synthetic cohorts),
:mod:`tensorcore` (MLP, backprop, Adam), :mod:`coxcore` (partial likelihood,
Breslow, Kaplan-Meier, survival curves), :mod:`probmodels` (MLP, MC dropout,
variational and SNGP risk models), :mod:`evalmetrics` and :mod:`benchcli`.
"""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
