"""Experiment runner: configuration, training across backends, reports and plot data."""
from .config import (
    OUTPUT_ROOT_ENV,
    PRESETS,
    ConfigError,
    DatasetSpec,
    ExperimentConfig,
    ModelSpec,
    config_from_dict,
    load_config,
    resolve_output_dir,
)
from .plots import emit_plot_data
from .runner import ExperimentError, RunManifest, evaluate_model, run_experiment, train_model
from .search import Trial, hyper_search, select_best
