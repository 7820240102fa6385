"""Grid / random hyperparameter search scored by validation concordance."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from ..dataio import preprocess_split, stratified_split
from ..evalmetrics import concordance_td
from ..coxcore import TimeGrid
from .config import ConfigError, ExperimentConfig, ModelSpec
from .runner import _Stage, derived_seed, fit_baseline, load_dataset, predict, train_model

DEFAULT_GRID = {"learning_rate": [1e-4, 1e-3, 1e-2], "l2": [1e-4, 1e-3], "batch_size": [32, 128]}
# union of the two dropout-rate sets in circulation (0.1/0.2/0.5 and 0.25/0.5)
DROPOUT_RATES = [0.1, 0.2, 0.25, 0.5]


@dataclass(frozen=True)
class Trial:
    order: int  # position in the full grid enumeration
    params: dict
    ci_td: float
    val_loss: float


def grid_points(grid: Mapping[str, Sequence]) -> List[dict]:
    """Cartesian product in key order, then value order."""
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ConfigError("search grid is empty")
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def choose_points(points: List[dict], n_configs: int, seed: int) -> List[int]:
    """All points if they fit the budget, else a seeded sample (kept in grid order)."""
    if len(points) <= n_configs:
        return list(range(len(points)))
    rng = np.random.default_rng(seed)
    return sorted(rng.choice(len(points), size=n_configs, replace=False).tolist())


def default_grid(spec: ModelSpec) -> Dict[str, list]:
    grid = {k: list(v) for k, v in DEFAULT_GRID.items()}
    if spec.kind == "mcd":
        grid["dropout"] = list(DROPOUT_RATES)
    return grid


def select_best(trials: Sequence[Trial]) -> Trial:
    """Highest CI_td, then lower validation loss, then earlier grid order."""
    if not trials:
        raise ConfigError("no trials to select from")
    return min(trials, key=lambda t: (-t.ci_td, t.val_loss, t.order))


def hyper_search(
    cfg: ExperimentConfig,
    grid: Optional[Dict[str, Dict[str, Sequence]]] = None,
    seed: Optional[int] = None,
    n_configs: Optional[int] = None,
):
    """Tune each model listed in ``grid`` on the validation split.

    Without an explicit grid (argument or the config's ``search.grid``) every
    model is tuned over :func:`default_grid`.

    Returns ``(best ModelSpec per model name, trials per model name)``.
    """
    if grid is None:
        grid = cfg.search.get("grid") or {m.name: default_grid(m) for m in cfg.models}
    n_configs = n_configs or int(cfg.search.get("n_configs", 10))
    seed = cfg.seed if seed is None else seed
    if not grid:
        raise ConfigError("search grid is empty")
    with _Stage("load"):
        ds, _ = load_dataset(cfg)
    with _Stage("split"):
        split, _, _ = preprocess_split(stratified_split(ds, cfg.fractions, cfg.split_seed))
    train, valid = split.train, split.valid
    if len(valid) == 0:
        raise ConfigError("validation split is empty")
    best, trials = {}, {}
    for name, model_grid in grid.items():
        base_spec = cfg.model(name)
        unknown = set(model_grid) - set(ModelSpec.__dataclass_fields__) - {"name", "kind"}
        if unknown:
            raise ConfigError(f"unknown search parameter(s) for {name}: {sorted(unknown)}")
        points = grid_points(model_grid)
        rows = []
        for k in choose_points(points, n_configs, seed):
            spec = replace(base_spec, **points[k])
            with _Stage(f"search:{name}:{k}"):
                rows.append(_score(spec, train, valid, cfg.n_posterior_samples, k, points[k]))
        trials[name] = rows
        best[name] = replace(base_spec, **select_best(rows).params)
    return best, trials


def _score(spec: ModelSpec, train, valid, n: int, order: int, params: dict) -> Trial:
    model = train_model(spec, train, valid, n)
    base = fit_baseline(model, train)
    grid = base.grid if base is not None else TimeGrid(np.unique(train.time[train.event > 0]))
    curves, _, _ = predict(model, base, valid.X, grid, n, derived_seed(spec.seed, 2))
    ci = concordance_td(curves, valid.time, valid.event)
    val_loss = min(h[2] for h in model.history)
    return Trial(order, dict(params), float(ci), float(val_loss))
