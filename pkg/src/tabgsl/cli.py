"""Command-line interface: train, sweep, search, eval, export.

Every command reads datasets from CSV + JSON schema files, writes its
outputs only under --out, and records enough in the run manifest to
reproduce all numeric outputs bitwise from the same inputs and seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import DataError, SplitIndices, TabularDataset, load_dataset, preprocess, \
    stratified_split
from .evaluation import MetricResult, multi_trial, primary_metric
from .export import export_embeddings, export_graph
from .graph import WeightedAdjacency
from .seeding import SEED_RULE, derive_seed
from .training import (
    ConfigError,
    TrainConfig,
    TrainedModel,
    TrainingDiverged,
    random_search,
    train,
)

SPLIT_RATIOS = (0.70, 0.15, 0.15)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad flags, which matches EXIT_CONFIG
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tabgsl",
        description="Learn an instance graph from a tabular dataset and train a GCN on it.",
    )
    parser.add_argument("--version", action="version", version=f"tabgsl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    train_p = sub.add_parser("train", help="train one model and write report + checkpoint")
    _add_data_args(train_p)
    train_p.add_argument("--config", required=True, help="JSON file mirroring TrainConfig")
    train_p.add_argument("--out", required=True, help="output directory")
    train_p.add_argument(
        "--strategy", choices=("end2end", "two-stage", "pt-ft"), default=None,
        help="override the config strategy",
    )
    train_p.add_argument("--seed", type=int, default=None, help="override the config seed")
    train_p.set_defaults(handler=cmd_train)

    sweep_p = sub.add_parser("sweep", help="sensitivity sweep over tau or k")
    _add_data_args(sweep_p)
    sweep_p.add_argument("--config", required=True)
    sweep_p.add_argument("--out", required=True)
    sweep_p.add_argument("--param", choices=("tau", "k"), required=True)
    sweep_p.add_argument("--values", required=True, help="comma-separated values")
    sweep_p.add_argument("--trials", type=int, default=5)
    sweep_p.add_argument("--seed", type=int, default=None)
    sweep_p.set_defaults(handler=cmd_sweep)

    search_p = sub.add_parser("search", help="random hyperparameter search")
    _add_data_args(search_p)
    search_p.add_argument("--config", default=None, help="base config for non-searched fields")
    search_p.add_argument("--out", required=True)
    search_p.add_argument("--budget", type=int, required=True)
    search_p.add_argument("--seed", type=int, default=None)
    search_p.set_defaults(handler=cmd_search)

    eval_p = sub.add_parser("eval", help="recompute metrics from a checkpoint")
    _add_data_args(eval_p)
    eval_p.add_argument("--checkpoint", required=True)
    eval_p.add_argument("--out", default=None, help="optional directory for metrics.json")
    eval_p.set_defaults(handler=cmd_eval)

    export_p = sub.add_parser("export", help="export learned graph or embeddings")
    _add_data_args(export_p)
    export_p.add_argument("--checkpoint", required=True)
    export_p.add_argument("--what", choices=("graph", "embeddings"), required=True)
    export_p.add_argument("--order", choices=("by_class", "natural"), default="natural")
    export_p.add_argument("--out", required=True)
    export_p.set_defaults(handler=cmd_export)
    return parser


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="CSV dataset with header row")
    p.add_argument("--schema", required=True, help="JSON column schema")


def _load_config(path: str | None, strategy: str | None, seed: int | None) -> TrainConfig:
    if path is None:
        cfg = TrainConfig()
    else:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise DataError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg = TrainConfig.from_dict(raw)
    if strategy is not None:
        cfg = dataclasses.replace(cfg, strategy=strategy.replace("-", "_"))
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    cfg.validate()
    return cfg


def _prepare_dataset(args, seed: int) -> tuple[TabularDataset, SplitIndices]:
    raw = load_dataset(args.data, args.schema)
    split = stratified_split(raw, SPLIT_RATIOS, seed=derive_seed(seed, "split"))
    ds, _ = preprocess(raw, split)
    return ds, split


def _sha256(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(args, out_dir: Path, cfg: TrainConfig, artifacts: dict[str, str]) -> None:
    root = cfg.seed
    manifest = {
        "tool": "tabgsl",
        "version": __version__,
        "command": " ".join(sys.argv),
        "config": dataclasses.asdict(cfg),
        "data_path": str(args.data),
        "data_sha256": _sha256(args.data),
        "schema_path": str(args.schema),
        "schema_sha256": _sha256(args.schema),
        "seed_rule": SEED_RULE,
        "seeds": {
            "root": root,
            "split": derive_seed(root, "split"),
            "anchor": derive_seed(root, "anchor"),
            "init": derive_seed(root, "init"),
            "epoch_label": "epoch-<n>",
        },
        "artifacts": artifacts,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")


def cmd_train(args) -> int:
    cfg = _load_config(args.config, args.strategy, args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ds, split = _prepare_dataset(args, cfg.seed)
    artifacts = {"report": "report.json", "checkpoint": "model.pt", "manifest": "manifest.json"}
    _write_manifest(args, out_dir, cfg, artifacts)

    try:
        model, report = train(ds, split, cfg)
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        if exc.report is not None:
            (out_dir / "report.json").write_text(
                json.dumps(exc.report.to_dict(), indent=2), encoding="utf-8"
            )
        return EXIT_DIVERGED

    report.graph_snapshot = artifacts["checkpoint"]
    model.save(out_dir / artifacts["checkpoint"])
    (out_dir / artifacts["report"]).write_text(
        json.dumps(report.to_dict(), indent=2), encoding="utf-8"
    )
    best = report.epochs[report.best_epoch]
    print(
        f"{cfg.strategy}: best epoch {report.best_epoch} "
        f"val {best.val_metric:.4f} test {report.metric_name} {report.test_metric:.4f}"
    )
    return EXIT_OK


def _parse_values(raw: str, param: str) -> list[float]:
    values: list[float] = []
    for token in raw.split(","):
        token = token.strip()
        if not token:
            continue
        try:
            value = int(token) if param == "k" else float(token)
        except ValueError:
            raise ConfigError(f"--values entry {token!r} is not a number") from None
        values.append(value)
    if not values:
        raise ConfigError("--values is empty")
    deduped = list(dict.fromkeys(values))
    if len(deduped) != len(values):
        print("warning: duplicate sweep values removed", file=sys.stderr)
    return deduped


def _workers() -> int:
    raw = os.environ.get("TABGSL_NUM_WORKERS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _sweep_one(task) -> dict:
    ds, split, cfg, trials, value = task
    result = multi_trial(ds, split, cfg, trials)
    return {"value": value, **result.to_dict()}


def cmd_sweep(args) -> int:
    cfg = _load_config(args.config, None, args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    values = _parse_values(args.values, args.param)
    ds, split = _prepare_dataset(args, cfg.seed)

    tasks = []
    for value in values:
        if args.param == "tau":
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"tau value {value} outside [0, 1]")
            trial_cfg = dataclasses.replace(cfg, tau=float(value))
        else:
            if not 1 <= int(value) <= ds.n - 1:
                raise ConfigError(f"k value {value} outside [1, {ds.n - 1}]")
            trial_cfg = dataclasses.replace(cfg, knn_k=int(value))
        tasks.append((ds, split, trial_cfg, args.trials, value))

    _write_manifest(args, out_dir, cfg, {"sweep": "sweep.csv", "manifest": "manifest.json"})
    rows = _fan_out(_sweep_one, tasks)

    out_path = out_dir / "sweep.csv"
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("value,mean,std,trials\n")
        for row in rows:
            fh.write(f"{row['value']:g},{row['mean']:.9g},{row['std']:.9g},"
                     f"{len(row['scores'])}\n")
    print(f"wrote {out_path}")
    return EXIT_OK


def _search_one(task) -> dict:
    ds, split, base, seed, index = task
    _, leaderboard = _search_trial(ds, split, base, seed, index)
    return leaderboard


def _search_trial(ds, split, base, seed, index):
    # Single-trial slice of random_search keeps trial i identical across budgets.
    from .training import sample_config

    rng = np.random.default_rng(derive_seed(seed, f"search-trial-{index}"))
    cfg = sample_config(rng, base, seed=derive_seed(seed, f"search-run-{index}"))
    row = {"trial": index, "config": dataclasses.asdict(cfg)}
    try:
        _, report = train(ds, split, cfg)
        best_record = report.epochs[report.best_epoch]
        row["val_metric"] = best_record.val_metric
        row["test_metric"] = report.test_metric
        row["error"] = None
    except TrainingDiverged as exc:
        row["val_metric"] = None
        row["test_metric"] = None
        row["error"] = str(exc)
    return cfg, row


def cmd_search(args) -> int:
    base = _load_config(args.config, None, None)
    seed = args.seed if args.seed is not None else base.seed
    if args.budget < 1:
        raise ConfigError("--budget must be at least 1")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ds, split = _prepare_dataset(args, seed)
    _write_manifest(args, out_dir, base,
                    {"leaderboard": "leaderboard.csv", "manifest": "manifest.json"})

    workers = _workers()
    if workers == 1:
        _, leaderboard = random_search(ds, split, args.budget, seed, base)
    else:
        tasks = [(ds, split, base, seed, i) for i in range(args.budget)]
        rows = _fan_out(_search_one, tasks)
        leaderboard = sorted(
            rows,
            key=lambda r: (-(r["val_metric"] if r["val_metric"] is not None else -np.inf),
                           r["trial"]),
        )

    config_fields = sorted(leaderboard[0]["config"])
    out_path = out_dir / "leaderboard.csv"
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("rank,trial,val_metric,test_metric,error,"
                 + ",".join(config_fields) + "\n")
        for rank, row in enumerate(leaderboard):
            val = "" if row["val_metric"] is None else f"{row['val_metric']:.9g}"
            test = "" if row["test_metric"] is None else f"{row['test_metric']:.9g}"
            err = row["error"] or ""
            cfg_cells = ",".join(str(row["config"][f]) for f in config_fields)
            fh.write(f"{rank},{row['trial']},{val},{test},{err},{cfg_cells}\n")
    print(f"wrote {out_path}")
    return EXIT_OK


def _fan_out(fn, tasks):
    workers = _workers()
    if workers == 1 or len(tasks) == 1:
        return [fn(task) for task in tasks]
    import multiprocessing as mp

    ctx = mp.get_context("spawn")
    with ctx.Pool(processes=min(workers, len(tasks))) as pool:
        return pool.map(fn, tasks)


def _load_checkpoint(path: str) -> TrainedModel:
    if not Path(path).exists():
        raise DataError(f"checkpoint not found: {path}")
    return TrainedModel.load(path)


def cmd_eval(args) -> int:
    model = _load_checkpoint(args.checkpoint)
    raw = load_dataset(args.data, args.schema)
    model.split.validate(raw.n)
    ds, _ = preprocess(raw, model.split)
    probs = model.predict_probabilities(ds)
    preds = probs.argmax(axis=1)
    metrics = {
        "format": "tabgsl-export v1",
        "metric_name": model.metric_name,
        "train_metric": primary_metric(ds.y[model.split.train], preds[model.split.train],
                                       ds.class_count),
        "valid_metric": primary_metric(ds.y[model.split.valid], preds[model.split.valid],
                                       ds.class_count),
        "test_metric": primary_metric(ds.y[model.split.test], preds[model.split.test],
                                      ds.class_count),
    }
    text = json.dumps(metrics, indent=2)
    print(text)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "metrics.json").write_text(text, encoding="utf-8")
    return EXIT_OK


def cmd_export(args) -> int:
    model = _load_checkpoint(args.checkpoint)
    raw = load_dataset(args.data, args.schema)
    model.split.validate(raw.n)
    ds, _ = preprocess(raw, model.split)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.what == "graph":
        preds = model.predict_probabilities(ds).argmax(axis=1)
        adjacency = WeightedAdjacency(model.learner_w, "knn")
        paths = export_graph(adjacency, ds.y, args.order, out_dir / "graph", y_pred=preds)
        for path in paths.values():
            print(f"wrote {path}")
    else:
        h = model.embeddings(ds).numpy()
        path = export_embeddings(h, ds.y, out_dir / "embeddings.tsv")
        print(f"wrote {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
