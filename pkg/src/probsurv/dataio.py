"""Survival datasets: CSV ingestion, preprocessing, splitting, synthetic cohorts.

A :class:`Dataset` is column oriented.  Real covariates are stored as floats
with ``nan`` marking a missing cell.  Categorical covariates are stored as
integer level codes (also as floats, ``nan`` when missing) into a per-column
vocabulary kept in ``levels``.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

REAL = "real"
CATEGORICAL = "categorical"
INDICATOR = "indicator"  # one-hot output column, excluded from z-scoring


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class SurvivalRecord:
    time: float
    event: int
    covariates: tuple


@dataclass
class Dataset:
    time: np.ndarray
    event: np.ndarray
    X: np.ndarray
    feature_names: list
    feature_kinds: list
    levels: dict = field(default_factory=dict)

    def __post_init__(self):
        self.time = np.asarray(self.time, dtype=np.float64)
        self.event = np.asarray(self.event, dtype=np.int64)
        self.X = np.asarray(self.X, dtype=np.float64).reshape(len(self.time), -1)
        if self.X.shape[1] != len(self.feature_names) or len(self.feature_names) != len(self.feature_kinds):
            raise DataError("covariate width does not match feature names/kinds")
        if self.time.shape[0] < 1:
            raise DataError("dataset must contain at least one record")
        if np.any(~np.isfinite(self.time)) or np.any(self.time < 0):
            raise DataError("observed times must be finite and nonnegative")
        if np.any((self.event != 0) & (self.event != 1)):
            raise DataError("invalid event indicator")

    def __len__(self):
        return self.time.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def censoring_rate(self) -> float:
        return float(1.0 - self.event.mean())

    def records(self):
        for t, e, x in zip(self.time, self.event, self.X):
            yield SurvivalRecord(float(t), int(e), tuple(float(v) for v in x))

    @classmethod
    def from_records(cls, records: Sequence[SurvivalRecord], feature_names=None, feature_kinds=None):
        records = list(records)
        if not records:
            raise DataError("dataset must contain at least one record")
        d = len(records[0].covariates)
        if any(len(r.covariates) != d for r in records):
            raise DataError("covariate length differs across records")
        names = list(feature_names) if feature_names is not None else [f"x{j + 1}" for j in range(d)]
        kinds = list(feature_kinds) if feature_kinds is not None else [REAL] * d
        return cls(
            time=[r.time for r in records],
            event=[r.event for r in records],
            X=np.array([r.covariates for r in records], dtype=np.float64).reshape(len(records), d),
            feature_names=names,
            feature_kinds=kinds,
        )

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return replace(self, time=self.time[idx], event=self.event[idx], X=self.X[idx])

    def require_events(self):
        if not np.any(self.event == 1):
            raise DataError("at least one observed event is required")
        return self


@dataclass
class CsvSchema:
    time: str
    event: str
    covariates: Optional[list] = None  # None: every remaining column
    categorical: tuple = ()


def _parse_float(s, what, line):
    try:
        return float(s)
    except ValueError:
        raise DataError(f"non-numeric {what} {s!r} on line {line}") from None


def load_csv(path, schema: CsvSchema) -> Dataset:
    """Read a survival CSV.  Empty covariate cells load as missing."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("empty CSV file") from None
        rows = list(reader)
    covs = schema.covariates
    if covs is None:
        covs = [c for c in header if c not in (schema.time, schema.event)]
    missing = [c for c in [schema.time, schema.event, *covs] if c not in header]
    if missing:
        raise DataError(f"header/schema mismatch: missing columns {missing}")
    unknown_cat = set(schema.categorical) - set(covs)
    if unknown_cat:
        raise DataError(f"categorical columns not among covariates: {sorted(unknown_cat)}")
    pos = {c: header.index(c) for c in header}
    kinds = [CATEGORICAL if c in schema.categorical else REAL for c in covs]

    times, events, raw = [], [], []
    for lineno, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"line {lineno}: expected {len(header)} cells, got {len(row)}")
        times.append(_parse_float(row[pos[schema.time]], "time", lineno))
        ev = row[pos[schema.event]].strip()
        if ev not in ("0", "1"):
            raise DataError(f"invalid event indicator {ev!r} on line {lineno}")
        events.append(int(ev))
        raw.append([row[pos[c]] for c in covs])
    if not times:
        raise DataError("CSV contains no data rows")

    X = np.full((len(times), len(covs)), np.nan)
    levels = {}
    for j, (name, kind) in enumerate(zip(covs, kinds)):
        col = [r[j] for r in raw]
        if kind == CATEGORICAL:
            vocab = sorted({v for v in col if v != ""})
            levels[name] = vocab
            code = {v: i for i, v in enumerate(vocab)}
            X[:, j] = [code[v] if v != "" else np.nan for v in col]
        else:
            X[:, j] = [np.nan if v == "" else _parse_float(v, f"value in column {name!r}", i + 2) for i, v in enumerate(col)]
    return Dataset(times, events, X, list(covs), kinds, levels)


def _fmt(v: float) -> str:
    return repr(float(v))


def write_csv(ds: Dataset, path, time_col="time", event_col="event") -> CsvSchema:
    """Write ``ds`` so that :func:`load_csv` with the returned schema restores it."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([time_col, event_col, *ds.feature_names])
        for i in range(len(ds)):
            cells = []
            for j, (name, kind) in enumerate(zip(ds.feature_names, ds.feature_kinds)):
                v = ds.X[i, j]
                if np.isnan(v):
                    cells.append("")
                elif kind == CATEGORICAL:
                    cells.append(ds.levels[name][int(v)])
                else:
                    cells.append(_fmt(v))
            w.writerow([_fmt(ds.time[i]), str(int(ds.event[i])), *cells])
    cats = tuple(n for n, k in zip(ds.feature_names, ds.feature_kinds) if k == CATEGORICAL)
    return CsvSchema(time_col, event_col, list(ds.feature_names), cats)


def missing_mask(ds: Dataset) -> np.ndarray:
    return np.isnan(ds.X)


def impute(ds: Dataset, reference: Optional[Dataset] = None) -> Dataset:
    """Fill missing cells: column mean for real columns, mode for categorical.

    Statistics come from ``reference`` (default ``ds``) so that validation and
    test splits can be filled with training-split values.
    """
    ref = ds if reference is None else reference
    X = ds.X.copy()
    for j, kind in enumerate(ds.feature_kinds):
        observed = ref.X[:, j][~np.isnan(ref.X[:, j])]
        if observed.size == 0:
            raise DataError(f"column {ds.feature_names[j]!r} is entirely missing")
        if kind == CATEGORICAL:
            codes, counts = np.unique(observed, return_counts=True)
            fill = codes[np.argmax(counts)]  # ties resolve to the lowest level code
        else:
            fill = observed.mean()
        X[np.isnan(X[:, j]), j] = fill
    return replace(ds, X=X)


@dataclass
class OneHotEncoder:
    """Categorical vocabularies learned from one split."""

    columns: dict  # categorical column name -> list of level codes seen

    @classmethod
    def fit(cls, ds: Dataset) -> "OneHotEncoder":
        cols = {}
        for j, (name, kind) in enumerate(zip(ds.feature_names, ds.feature_kinds)):
            if kind == CATEGORICAL:
                vals = ds.X[:, j][~np.isnan(ds.X[:, j])]
                cols[name] = [int(v) for v in np.unique(vals)]
        return cls(cols)

    def transform(self, ds: Dataset) -> Dataset:
        blocks, names, kinds = [], [], []
        for j, (name, kind) in enumerate(zip(ds.feature_names, ds.feature_kinds)):
            col = ds.X[:, [j]]
            if kind != CATEGORICAL:
                blocks.append(col)
                names.append(name)
                kinds.append(kind)
                continue
            seen = self.columns.get(name, [])
            vocab = ds.levels.get(name, [])
            for code in seen:
                blocks.append((col == code).astype(np.float64))
                label = vocab[code] if code < len(vocab) else str(code)
                names.append(f"{name}={label}")
                kinds.append(INDICATOR)
        X = np.hstack(blocks) if blocks else np.zeros((len(ds), 0))
        levels = {k: v for k, v in ds.levels.items() if k not in self.columns}
        return replace(ds, X=X, feature_names=names, feature_kinds=kinds, levels=levels)


def one_hot(ds: Dataset, encoder: Optional[OneHotEncoder] = None) -> Dataset:
    """Expand categorical columns into indicator columns.

    Levels absent from the encoder's fitting split encode as all zeros.
    """
    return (encoder or OneHotEncoder.fit(ds)).transform(ds)


@dataclass
class Scaler:
    columns: np.ndarray  # indices of the scaled columns
    mean: np.ndarray
    std: np.ndarray  # zero for constant columns

    def apply(self, ds: Dataset) -> Dataset:
        X = ds.X.copy()
        for j, mu, sd in zip(self.columns, self.mean, self.std):
            X[:, j] = 0.0 if sd == 0 else (X[:, j] - mu) / sd
        return replace(ds, X=X)


def standardize(ds: Dataset, scaler: Optional[Scaler] = None):
    """Z-score the real-valued columns with sample (n-1) standard deviation.

    Returns the scaled dataset and the scaler; pass the scaler back in to
    transform another split with the same statistics.
    """
    if scaler is None:
        cols = np.array([j for j, k in enumerate(ds.feature_kinds) if k == REAL], dtype=np.int64)
        sub = ds.X[:, cols]
        if np.isnan(sub).any():
            raise DataError("standardize requires imputed data")
        mean = sub.mean(axis=0) if len(ds) else np.zeros(len(cols))
        if len(ds) > 1:
            std = sub.std(axis=0, ddof=1)
        else:
            std = np.zeros(len(cols))
        std = np.where(std > 1e-12 * np.maximum(1.0, np.abs(mean)), std, 0.0)
        scaler = Scaler(cols, mean, std)
    return scaler.apply(ds), scaler


@dataclass
class SplitSet:
    train: Dataset
    valid: Dataset
    test: Dataset
    seed: int
    indices: tuple = ()


def _apportion(total: int, weights: Sequence[float]) -> np.ndarray:
    """Largest-remainder integer apportionment of ``total``."""
    w = np.asarray(weights, dtype=np.float64)
    quota = total * w / w.sum()
    base = np.floor(quota).astype(np.int64)
    rem = total - base.sum()
    order = np.argsort(-(quota - base), kind="stable")
    base[order[:rem]] += 1
    return base


def _interleave(counts: Sequence[int]) -> np.ndarray:
    """Label sequence with ``counts[k]`` copies of k, evenly spread."""
    pos, labels = [], []
    for k, c in enumerate(counts):
        pos.extend((np.arange(c) + 0.5) / c if c else [])
        labels.extend([k] * c)
    order = np.lexsort((np.asarray(labels), np.asarray(pos)))
    return np.asarray(labels, dtype=np.int64)[order]


def stratification_key(ds: Dataset) -> np.ndarray:
    """Event flag crossed with the quartile of observed time (0..7)."""
    edges = np.quantile(ds.time, [0.25, 0.5, 0.75])
    quart = np.searchsorted(edges, ds.time, side="right")
    return ds.event * 4 + quart


def stratified_split(ds: Dataset, fractions=(0.7, 0.1, 0.2), seed: int = 0) -> SplitSet:
    """Train/valid/test split preserving censoring rate and time distribution.

    Split sizes and per-split censored counts are fixed first by
    largest-remainder apportionment; within each event class records are
    ordered by time quartile (shuffled inside a quartile) and dealt to splits
    along an evenly interleaved label sequence.
    """
    n = len(ds)
    if n < 10:
        raise DataError(f"need at least 10 records to split, got {n}")
    n_events = int(ds.event.sum())
    if n_events == 0 or n_events == n:
        raise DataError("stratified split requires both events and censored records")
    rng = np.random.default_rng(seed)
    sizes = _apportion(n, fractions)
    n_cens = n - n_events
    cens = _apportion(n_cens, sizes)
    cens = np.minimum(cens, sizes)
    evs = sizes - cens
    if np.any(evs < 1):
        raise DataError("dataset too small to place an event in every split")

    key = stratification_key(ds)
    assign = np.empty(n, dtype=np.int64)
    for flag, quotas in ((0, cens), (1, evs)):
        members = np.flatnonzero(ds.event == flag)
        jitter = rng.permutation(members.shape[0])
        ordered = members[np.lexsort((jitter, key[members]))]
        assign[ordered] = _interleave(quotas)
    parts = tuple(np.flatnonzero(assign == k) for k in range(3))
    return SplitSet(ds.subset(parts[0]), ds.subset(parts[1]), ds.subset(parts[2]), seed, parts)


@dataclass
class SynthConfig:
    n: int
    d: int
    true_weights: Sequence[float]
    baseline_rate: float = 0.1
    censor_rate_target: float = 0.3
    seed: int = 0

    def __post_init__(self):
        self.true_weights = np.asarray(self.true_weights, dtype=np.float64)
        if self.n < 2:
            raise DataError("synthetic cohort needs n >= 2")
        if self.baseline_rate <= 0:
            raise DataError("baseline_rate must be positive")
        if self.true_weights.shape != (self.d,):
            raise DataError("true_weights must have length d")
        if not 0.0 <= self.censor_rate_target < 1.0:
            raise DataError("censor_rate_target must lie in [0, 1)")


@dataclass
class GroundTruth:
    """Oracle quantities for a synthetic cohort (exponential PH model)."""

    event_time: np.ndarray
    censor_time: np.ndarray
    linear_predictor: np.ndarray
    baseline_rate: float

    @property
    def hazard_rate(self) -> np.ndarray:
        return self.baseline_rate * np.exp(self.linear_predictor)

    def survival(self, t, idx=None) -> np.ndarray:
        """True S(t | x_i); ``t`` broadcasts against the selected records."""
        rate = self.hazard_rate if idx is None else self.hazard_rate[idx]
        t = np.asarray(t, dtype=np.float64)
        if t.ndim == 1 and rate.ndim == 1 and t.shape != rate.shape:
            return np.exp(-np.outer(rate, t))
        return np.exp(-rate * t)

    def subset(self, idx) -> "GroundTruth":
        return GroundTruth(self.event_time[idx], self.censor_time[idx], self.linear_predictor[idx], self.baseline_rate)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["record_id", "true_event_time", "true_linear_predictor"])
            for i, (t, lp) in enumerate(zip(self.event_time, self.linear_predictor)):
                w.writerow([i, _fmt(t), _fmt(lp)])


def expected_censoring(rates: np.ndarray, horizon: float) -> float:
    """Mean P(C < T) for T ~ Exp(rate), C ~ Uniform(0, horizon)."""
    x = rates * horizon
    return float(np.mean(-np.expm1(-x) / x))


def synth_generate(cfg: SynthConfig):
    """Exponential proportional-hazards cohort with uniform censoring.

    The uniform censoring horizon is solved on the drawn hazards so the
    expected censored fraction equals ``cfg.censor_rate_target``.
    """
    rng = np.random.default_rng(cfg.seed)
    X = rng.standard_normal((cfg.n, cfg.d))
    lp = X @ cfg.true_weights
    rate = cfg.baseline_rate * np.exp(lp)
    T = rng.exponential(1.0 / rate)
    if cfg.censor_rate_target == 0.0:
        C = np.full(cfg.n, np.inf)
    else:
        target = cfg.censor_rate_target
        lo, hi = 1e-12 / rate.max(), 1.0 / rate.min()
        while expected_censoring(rate, hi) > target:
            hi *= 2.0
        while expected_censoring(rate, lo) < target:
            lo /= 2.0
        horizon = brentq(lambda h: expected_censoring(rate, h) - target, lo, hi, xtol=1e-14, rtol=1e-12)
        C = rng.uniform(0.0, horizon, cfg.n)
    time = np.minimum(T, C)
    event = (T <= C).astype(np.int64)
    names = [f"x{j + 1}" for j in range(cfg.d)]
    ds = Dataset(time, event, X, names, [REAL] * cfg.d)
    return ds, GroundTruth(T, C, lp, cfg.baseline_rate)


def preprocess_split(split: SplitSet):
    """Impute, one-hot and z-score every split using training statistics."""
    train = impute(split.train)
    valid = impute(split.valid, reference=split.train)
    test = impute(split.test, reference=split.train)
    enc = OneHotEncoder.fit(train)
    train, valid, test = enc.transform(train), enc.transform(valid), enc.transform(test)
    train, scaler = standardize(train)
    valid, _ = standardize(valid, scaler)
    test, _ = standardize(test, scaler)
    return SplitSet(train, valid, test, split.seed, split.indices), scaler, enc
