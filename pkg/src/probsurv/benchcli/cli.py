"""Command line: ``probsurv run|search|plot``."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from ..coxcore import BaselineHazard
from ..dataio import CsvSchema, load_csv
from ..probmodels import load_model
from .config import OUTPUT_ROOT_ENV, ConfigError, config_from_dict, load_config, resolve_output_dir
from .plots import emit_plot_data
from .runner import ExperimentError, RunManifest, run_experiment
from .search import hyper_search


def _load(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    manifest = run_experiment(cfg, args.out)
    print(f"wrote {manifest.root / 'manifest.json'}")
    print((manifest.root / "metrics.csv").read_text(), end="")
    return 0


def cmd_search(args) -> int:
    cfg = _load(args)
    best, trials = hyper_search(cfg, seed=args.seed)
    out = resolve_output_dir(cfg, args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "best": {name: spec.to_dict() for name, spec in best.items()},
        "trials": {name: [t.__dict__ for t in rows] for name, rows in trials.items()},
    }
    (out / "search.json").write_text(json.dumps(doc, indent=2) + "\n")
    tuned = replace(cfg, models=tuple(best.get(m.name, m) for m in cfg.models), search={}, output_dir=None)
    (out / "best_config.json").write_text(json.dumps(tuned.to_dict(), indent=2) + "\n")
    for name, spec in best.items():
        print(f"{name}: " + ", ".join(f"{k}={getattr(spec, k)}" for k in cfg.search.get("grid", {}).get(name, {})))
    print(f"wrote {out / 'search.json'}")
    return 0


def cmd_plot(args) -> int:
    manifest = RunManifest.load(args.manifest)
    if args.model not in manifest.models:
        raise ConfigError(f"no model named {args.model!r} in {args.manifest}")
    entry = manifest.models[args.model]
    if "baseline" not in entry:
        raise ConfigError(f"{args.model} has no baseline hazard; plot data needs a Cox-head model")
    cfg = config_from_dict(manifest.config)
    root = manifest.root
    model = load_model(root / entry["checkpoint"])
    base = BaselineHazard.from_csv(root / entry["baseline"])
    test_csv = root / "data" / "test_preprocessed.csv"
    with open(test_csv) as fh:
        header = fh.readline().strip().split(",")
    test = load_csv(test_csv, CsvSchema("time", "event", [h for h in header if h not in ("time", "event")]))
    seed = args.seed if args.seed is not None else entry["seed"]
    out = Path(args.out) if args.out else root / "plots"
    band, hist = emit_plot_data(model, base, test.X, args.index, out, f"{args.model}_{args.index}", n=cfg.n_plot_samples, seed=seed)
    print(band)
    print(hist)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="probsurv",
        description="Probabilistic neural survival experiments.",
        epilog=f"Default output root: ${OUTPUT_ROOT_ENV} (else ./probsurv-runs).",
    )
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="train and evaluate every configured model")
    run.add_argument("config")
    search = sub.add_parser("search", help="hyperparameter search on the validation split")
    search.add_argument("config")
    plot = sub.add_parser("plot", help="survival band and median-time histogram for one test individual")
    plot.add_argument("manifest")
    plot.add_argument("--model", required=True)
    plot.add_argument("--index", type=int, required=True)
    for sp in (run, search, plot):
        sp.add_argument("--seed", type=int, default=None, help="override every seed")
        sp.add_argument("--out", default=None, help="output directory")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"run": cmd_run, "search": cmd_search, "plot": cmd_plot}[args.command]
    try:
        return handler(args)
    except (ConfigError, ExperimentError, FileNotFoundError, FileExistsError, IndexError, ValueError) as exc:
        print(f"probsurv {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
