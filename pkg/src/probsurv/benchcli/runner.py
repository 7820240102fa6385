"""End-to-end experiment: data, split, training, evaluation and file output."""
from __future__ import annotations

import json
import shutil
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np
from scipy.special import ndtr

from ..coxcore import BaselineHazard, CurveSet, TimeGrid, breslow_baseline, median_survival_times, survival_curves
from ..dataio import Dataset, load_csv, preprocess_split, stratified_split, synth_generate, write_csv
from ..evalmetrics import MetricReport, compute_report, evaluation_grid, reports_to_csv
from ..probmodels import (
    RiskModel,
    count_parameters,
    mean_curves,
    predict_time_draws,
    save_model,
    train_mcd,
    train_mlp,
    train_sngp,
    train_vi,
)
from .config import ExperimentConfig, ModelSpec, resolve_output_dir
from .plots import emit_plot_data

MANIFEST = "manifest.json"


class ExperimentError(RuntimeError):
    """A stage of the experiment failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, typ, exc, tb):
        if exc is not None and not isinstance(exc, ExperimentError):
            raise ExperimentError(self.name, exc) from exc
        return False


@dataclass
class RunManifest:
    config_hash: str
    seeds: dict
    train_seconds: Dict[str, float]
    n_params: Dict[str, int]
    metrics: Dict[str, dict]
    files: list
    root: Optional[Path] = None
    models: Dict[str, dict] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "seeds": self.seeds,
            "train_seconds": self.train_seconds,
            "n_params": self.n_params,
            "metrics": self.metrics,
            "models": self.models,
            "files": self.files,
            "config": self.config,
        }

    @classmethod
    def load(cls, path) -> "RunManifest":
        path = Path(path)
        with open(path) as fh:
            doc = json.load(fh)
        return cls(root=path.parent, **doc)


def derived_seed(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *tags]))


def load_dataset(cfg: ExperimentConfig):
    """Returns ``(Dataset, GroundTruth or None)``."""
    if cfg.dataset.kind == "synth":
        return synth_generate(cfg.dataset.synth_config())
    return load_csv(cfg.dataset.params["path"], cfg.dataset.csv_schema()), None


def train_model(spec: ModelSpec, train: Dataset, valid: Dataset, n_samples: int = 100) -> RiskModel:
    tc = spec.train_config()
    if spec.kind == "mlp":
        return train_mlp(train, valid, spec.hidden, tc, spec.head)
    if spec.kind == "mcd":
        return train_mcd(train, valid, spec.hidden, tc, spec.mcd_config(n_samples), spec.head)
    if spec.kind == "vi":
        return train_vi(train, valid, spec.hidden, tc, spec.prior_std, spec.head)
    return train_sngp(train, valid, spec.hidden, tc, spec.sngp_config())


def fit_baseline(model: RiskModel, train: Dataset) -> Optional[BaselineHazard]:
    if model.head_kind != "cox":
        return None
    return breslow_baseline(model.risk(train.X), train.time, train.event)


def predict(model: RiskModel, base: Optional[BaselineHazard], X, grid: TimeGrid, n: int, rng):
    """Predictive-mean curves, their median times and per-draw time samples."""
    if base is not None:
        curves, draws = mean_curves(model, X, base, n, rng, grid)
        time_draws = None
        if draws is not None:
            time_draws = np.vstack([median_survival_times(survival_curves(r, base)) for r in draws])
        return curves, median_survival_times(curves), time_draws
    t = grid.times / model.objective.time_scale
    out = model.sample_outputs(np.atleast_2d(X), n if model.samples_predictive else 1, rng)
    S = np.mean([ndtr((o[:, 0:1] - t[None, :]) / np.exp(o[:, 1:2])) for o in out], axis=0)
    curves = CurveSet(grid, S)
    time_draws = predict_time_draws(model, X, n, rng) if model.samples_predictive else None
    return curves, median_survival_times(curves), time_draws


def evaluate_model(model, base, train: Dataset, split: Dataset, n: int, seed: int) -> MetricReport:
    grid = base.grid if base is not None else TimeGrid(np.unique(train.time[train.event > 0]))
    curves, pred_times, time_draws = predict(model, base, split.X, grid, n, derived_seed(seed, 1))
    brier_grid = evaluation_grid(train.time[train.event > 0], split.time)
    return compute_report(curves, pred_times, split.time, split.event, brier_grid, time_draws)


def _prepare_output(final: Path) -> Path:
    if final.exists() and not (final / MANIFEST).exists():
        raise FileExistsError(f"{final} exists and is not a previous run directory")
    final.parent.mkdir(parents=True, exist_ok=True)
    return Path(tempfile.mkdtemp(prefix=f".{final.name}-", dir=final.parent))


def run_experiment(cfg: ExperimentConfig, out: Optional[str] = None, plot_index: int = 0) -> RunManifest:
    """Run every configured model and write results under the output directory.

    Outputs are staged in a sibling temporary directory and moved into place
    only after every file is written, so a failure leaves nothing behind.
    """
    final = resolve_output_dir(cfg, out)
    with _Stage("output"):
        tmp = _prepare_output(final)
    try:
        manifest = _run(cfg, tmp, plot_index)
        with _Stage("finalize"):
            if final.exists():
                shutil.rmtree(final)
            tmp.rename(final)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    manifest.root = final
    return manifest


def _run(cfg: ExperimentConfig, root: Path, plot_index: int) -> RunManifest:
    with _Stage("load"):
        ds, truth = load_dataset(cfg)
    with _Stage("split"):
        split = stratified_split(ds, cfg.fractions, cfg.split_seed)
    with _Stage("preprocess"):
        split, _, _ = preprocess_split(split)
    train, valid, test = split.train, split.valid, split.test

    files = []

    def rel(p: Path) -> str:
        files.append(str(p.relative_to(root)))
        return files[-1]

    with _Stage("write:data"):
        (root / "data").mkdir()
        write_csv(test, root / "data" / "test_preprocessed.csv")
        rel(root / "data" / "test_preprocessed.csv")
        if truth is not None:
            truth.subset(split.indices[2]).write_csv(root / "data" / "test_truth.csv")
            rel(root / "data" / "test_truth.csv")
    (root / "models").mkdir()
    (root / "baselines").mkdir()
    (root / "plots").mkdir()

    reports, seconds, n_params, details = [], {}, {}, {}
    for spec in cfg.models:
        with _Stage(f"train:{spec.name}"):
            t0 = time.perf_counter()
            model = train_model(spec, train, valid, cfg.n_posterior_samples)
            base = fit_baseline(model, train)
            seconds[spec.name] = time.perf_counter() - t0
        with _Stage(f"evaluate:{spec.name}"):
            report = evaluate_model(model, base, train, test, cfg.n_posterior_samples, spec.seed)
        with _Stage(f"write:{spec.name}"):
            save_model(model, root / "models" / f"{spec.name}.json")
            entry = {"kind": spec.kind, "checkpoint": rel(root / "models" / f"{spec.name}.json")}
            if base is not None:
                base.to_csv(root / "baselines" / f"{spec.name}.csv")
                entry["baseline"] = rel(root / "baselines" / f"{spec.name}.csv")
                if model.samples_predictive:
                    band, hist = emit_plot_data(
                        model, base, test.X, plot_index, root / "plots", f"{spec.name}_{plot_index}",
                        n=cfg.n_plot_samples, seed=spec.seed,
                    )
                    entry["plots"] = [rel(band), rel(hist)]
        reports.append((spec.name, report))
        n_params[spec.name] = count_parameters(model)
        details[spec.name] = {**entry, "best_epoch": model.best_epoch, "epochs_run": len(model.history), "seed": spec.seed}

    with _Stage("write:metrics"):
        (root / "metrics.csv").write_text(reports_to_csv(reports))
        rel(root / "metrics.csv")
        metrics = {name: rep.to_dict() for name, rep in reports}
        (root / "metrics.json").write_text(json.dumps(metrics, indent=2) + "\n")
        rel(root / "metrics.json")
        manifest = RunManifest(
            config_hash=cfg.config_hash(),
            seeds={"split": cfg.split_seed, "dataset": cfg.dataset.params.get("seed"), "models": {m.name: m.seed for m in cfg.models}},
            train_seconds=seconds,
            n_params=n_params,
            metrics=metrics,
            files=list(files),
            models=details,
            config=cfg.to_dict(),
        )
        (root / MANIFEST).write_text(json.dumps(manifest.to_dict(), indent=2) + "\n")
    return manifest
