"""Experiment configuration: JSON schema, validation and hyperparameter presets.

Schema (unknown keys are rejected at every level)::

    {
      "name": "demo",                      # run directory name
      "seed": 0,                           # default for every seed below
      "dataset": {"kind": "synth", "n": 500, "d": 3, "true_weights": [1, -1, 0.5],
                  "baseline_rate": 0.1, "censor_rate_target": 0.3}
              or {"kind": "csv", "path": "cohort.csv", "time": "time", "event": "event",
                  "covariates": null, "categorical": []},
      "split": {"fractions": [0.7, 0.1, 0.2], "seed": 0},
      "models": ["mlp", "mcd@0.1", {"kind": "vi", "preset": "support", "hidden": [64]}],
      "n_posterior_samples": 100,
      "n_plot_samples": 1000,
      "output_dir": null,
      "search": {"n_configs": 10, "grid": {"mlp": {"learning_rate": [0.001, 0.0001]}}}
    }
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from ..dataio import CsvSchema, SynthConfig
from ..probmodels import MCDConfig, SNGPConfig
from ..tensorcore import TrainConfig

MODEL_KINDS = ("mlp", "mcd", "vi", "sngp")
HEADS = ("cox", "gaussian")
OUTPUT_ROOT_ENV = "PROBSURV_OUTPUT_ROOT"

# Selected hyperparameters per cohort; "decay" is Adam weight decay.
PRESETS: Dict[str, dict] = {
    "metabric": dict(optimizer="adam", decay=0.0, activation="relu", batch_size=32, hidden=[64, 128], learning_rate=1e-5, l2=1e-3, dropout=0.25),
    "seer": dict(optimizer="adam", decay=0.0, activation="relu", batch_size=32, hidden=[64], learning_rate=1e-3, l2=1e-3, dropout=0.25),
    "support": dict(optimizer="adam", decay=1e-3, activation="relu", batch_size=32, hidden=[128], learning_rate=1e-3, l2=1e-3, dropout=0.25),
    "mimic-iv": dict(optimizer="adam", decay=1e-4, activation="relu", batch_size=128, hidden=[32], learning_rate=1e-4, l2=1e-3, dropout=0.5),
}


class ConfigError(ValueError):
    pass


def _reject_unknown(doc: dict, allowed, where: str):
    extra = sorted(set(doc) - set(allowed))
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(extra)}")


@dataclass(frozen=True)
class ModelSpec:
    name: str
    kind: str
    hidden: Tuple[int, ...] = (32,)
    optimizer: str = "adam"
    decay: float = 0.0
    activation: str = "relu"
    batch_size: int = 32
    learning_rate: float = 1e-3
    l2: float = 1e-3
    dropout: float = 0.1
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0
    head: str = "cox"
    prior_std: float = 1.0
    n_features: int = 128
    ridge: float = 1.0
    lengthscale: float = 1.0
    reset_precision_each_epoch: bool = False

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.head not in HEADS:
            raise ConfigError(f"unknown head {self.head!r}")
        if self.kind == "sngp" and self.head != "cox":
            raise ConfigError("sngp supports the cox head only")
        if self.activation != "relu":
            raise ConfigError("only the relu activation is supported")
        if any(int(w) < 1 for w in self.hidden):
            raise ConfigError("hidden widths must be positive")
        if self.kind == "sngp" and not self.hidden:
            raise ConfigError("sngp needs at least one hidden layer")
        if self.prior_std <= 0:
            raise ConfigError("prior_std must be positive")
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))
        # delegate the remaining range checks to the component configs
        try:
            self.train_config()
            if self.kind == "mcd":
                self.mcd_config(1)
            if self.kind == "sngp":
                self.sngp_config()
        except ValueError as exc:
            raise ConfigError(f"model {self.name}: {exc}") from exc

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            optimizer=self.optimizer,
            learning_rate=self.learning_rate,
            weight_decay=self.decay,
            l2_lambda=self.l2,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            seed=self.seed,
        )

    def mcd_config(self, n_samples: int) -> MCDConfig:
        return MCDConfig(p_drop=self.dropout, n_samples=n_samples)

    def sngp_config(self) -> SNGPConfig:
        return SNGPConfig(
            n_features=self.n_features,
            ridge=self.ridge,
            lengthscale=self.lengthscale,
            reset_precision_each_epoch=self.reset_precision_each_epoch,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


MODEL_KEYS = tuple(ModelSpec.__dataclass_fields__) + ("preset",)


def parse_model(entry, default_seed: int) -> ModelSpec:
    """A model entry is either a shorthand string (``"mlp"``, ``"mcd@0.2"``)
    or an object with a ``kind`` and optional ``preset``."""
    if isinstance(entry, str):
        entry = {"kind": entry}
    if not isinstance(entry, dict):
        raise ConfigError("model entries must be strings or objects")
    _reject_unknown(entry, MODEL_KEYS, "model")
    entry = dict(entry)
    kind = entry.pop("kind", None)
    if not isinstance(kind, str):
        raise ConfigError("model entry needs a kind")
    name = entry.pop("name", kind)
    fields = {}
    preset = entry.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        fields.update(PRESETS[preset])
    if "@" in kind:
        kind, _, p = kind.partition("@")
        if kind != "mcd":
            raise ConfigError("only mcd accepts an @rate suffix")
        try:
            fields["dropout"] = float(p)
        except ValueError:
            raise ConfigError(f"bad dropout rate in {name!r}") from None
    fields.update(entry)
    fields.setdefault("seed", default_seed)
    try:
        return ModelSpec(name=name, kind=kind, **fields)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


SYNTH_KEYS = ("kind", "n", "d", "true_weights", "baseline_rate", "censor_rate_target", "seed")
CSV_KEYS = ("kind", "path", "time", "event", "covariates", "categorical")


@dataclass(frozen=True)
class DatasetSpec:
    kind: str
    params: dict

    def synth_config(self) -> SynthConfig:
        p = {k: v for k, v in self.params.items() if k != "kind"}
        return SynthConfig(**p)

    def csv_schema(self) -> CsvSchema:
        return CsvSchema(
            time=self.params.get("time", "time"),
            event=self.params.get("event", "event"),
            covariates=self.params.get("covariates"),
            categorical=tuple(self.params.get("categorical", ())),
        )


def parse_dataset(doc, default_seed: int, base_dir: Optional[Path]) -> DatasetSpec:
    if not isinstance(doc, dict) or "kind" not in doc:
        raise ConfigError("dataset must be an object with a kind")
    doc = dict(doc)
    if doc["kind"] == "synth":
        _reject_unknown(doc, SYNTH_KEYS, "dataset")
        doc.setdefault("seed", default_seed)
        spec = DatasetSpec("synth", doc)
        try:
            spec.synth_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"dataset: {exc}") from exc
        return spec
    if doc["kind"] == "csv":
        _reject_unknown(doc, CSV_KEYS, "dataset")
        if "path" not in doc:
            raise ConfigError("csv dataset needs a path")
        path = Path(doc["path"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        doc["path"] = str(path)
        return DatasetSpec("csv", doc)
    raise ConfigError(f"unknown dataset kind {doc['kind']!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    dataset: DatasetSpec
    models: Tuple[ModelSpec, ...]
    seed: int = 0
    split_seed: int = 0
    fractions: Tuple[float, float, float] = (0.7, 0.1, 0.2)
    n_posterior_samples: int = 100
    n_plot_samples: int = 1000
    output_dir: Optional[str] = None
    search: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.models:
            raise ConfigError("at least one model is required")
        names = [m.name for m in self.models]
        if len(set(names)) != len(names):
            raise ConfigError("model names must be unique")
        if self.n_posterior_samples < 1 or self.n_plot_samples < 1:
            raise ConfigError("sample counts must be positive")
        if len(self.fractions) != 3 or any(f <= 0 for f in self.fractions):
            raise ConfigError("split fractions must be three positive numbers")

    def model(self, name: str) -> ModelSpec:
        for m in self.models:
            if m.name == name:
                return m
        raise ConfigError(f"no model named {name!r}")

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Same experiment with every seed replaced by ``seed``."""
        ds = self.dataset
        if ds.kind == "synth":
            ds = DatasetSpec("synth", {**ds.params, "seed": seed})
        return replace(self, seed=seed, split_seed=seed, dataset=ds, models=tuple(replace(m, seed=seed) for m in self.models))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "dataset": dict(self.dataset.params),
            "split": {"fractions": list(self.fractions), "seed": self.split_seed},
            "models": [m.to_dict() for m in self.models],
            "n_posterior_samples": self.n_posterior_samples,
            "n_plot_samples": self.n_plot_samples,
            "output_dir": self.output_dir,
            "search": self.search,
        }

    def config_hash(self) -> str:
        """Digest of the resolved configuration, output location excluded."""
        doc = self.to_dict()
        doc.pop("output_dir")
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


TOP_KEYS = ("name", "seed", "dataset", "split", "models", "n_posterior_samples", "n_plot_samples", "output_dir", "search")


def config_from_dict(doc: dict, base_dir: Optional[Path] = None) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    _reject_unknown(doc, TOP_KEYS, "configuration")
    seed = int(doc.get("seed", 0))
    split = doc.get("split", {})
    _reject_unknown(split, ("fractions", "seed"), "split")
    search = doc.get("search", {})
    _reject_unknown(search, ("n_configs", "grid"), "search")
    models = doc.get("models")
    if not isinstance(models, list):
        raise ConfigError("models must be a list")
    return ExperimentConfig(
        name=str(doc.get("name", "experiment")),
        dataset=parse_dataset(doc.get("dataset"), seed, base_dir),
        models=tuple(parse_model(m, seed) for m in models),
        seed=seed,
        split_seed=int(split.get("seed", seed)),
        fractions=tuple(float(f) for f in split.get("fractions", (0.7, 0.1, 0.2))),
        n_posterior_samples=int(doc.get("n_posterior_samples", 100)),
        n_plot_samples=int(doc.get("n_plot_samples", 1000)),
        output_dir=doc.get("output_dir"),
        search=search,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(doc, path.parent)


def resolve_output_dir(cfg: ExperimentConfig, out: Optional[str] = None) -> Path:
    """``--out`` wins, then the config's output_dir, then $PROBSURV_OUTPUT_ROOT/<name>."""
    if out:
        return Path(out)
    if cfg.output_dir:
        return Path(cfg.output_dir)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "probsurv-runs")) / cfg.name


def model_names(cfg: ExperimentConfig) -> List[str]:
    return [m.name for m in cfg.models]
