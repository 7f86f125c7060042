"""Command-line entry point: generate / train / score / evaluate.

The primary interface is a JSON config file; `--set key.path=value` overrides
individual keys, so the shipped profile files stay verbatim. Exit codes:
0 success, 1 usage or config error, 2 data error, 3 internal error.

Only the standard library is imported at module level: `main` reads the
`threads` key and pins the BLAS threading environment variables before any
numpy-importing module loads, which is what makes `threads=1` plus
`deterministic=true` an enforceable reproducibility configuration.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional

from .errors import CheckpointError, DataError, UsageError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

# Hyperparameter profiles for the two reference workloads; "custom" starts
# from the library defaults. Augment probabilities are in operator order:
# perturb, replace, node swap, edge swap.
PROFILES = {
    "tracelog-like": {
        "model": {"learning_rate": 1e-4, "hidden_dim": 300, "rep_dim": 300,
                  "num_layers": 2, "ssl_weight": 0.001, "batch_size": 8,
                  "reg_lambda": 1e-4},
        "augment": {"enabled": True, "p_perturb": 0.84, "p_replace": 0.13,
                    "p_node_swap": 0.1, "p_edge_swap": 0.17},
    },
    "flowgraph-like": {
        "model": {"learning_rate": 0.01, "hidden_dim": 32, "rep_dim": 32,
                  "num_layers": 2, "ssl_weight": 0.21, "batch_size": 25,
                  "reg_lambda": 1e-4},
        "augment": {"enabled": True, "p_perturb": 0.0, "p_replace": 0.39,
                    "p_node_swap": 0.52, "p_edge_swap": 0.0},
    },
    "custom": {"model": {}, "augment": {}},
}

TOP_LEVEL_KEYS = {"profile", "seed", "threads", "deterministic", "output_dir",
                  "dataset", "checkpoint", "split", "generate", "model",
                  "augment", "evaluate"}

DEFAULT_GENERATE = {
    "num_graphs": 600,
    "anomaly_fraction": 100 / 600,
    "num_node_types": 8,
    "num_edge_types": 4,
    "feature_dim": 7,
    "mean_nodes": 30,
    "mean_edges": 66,
    "anomaly_kind": "pair_shift",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse default exits 2; we reserve 2 for data
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="hrgad",
                     description="Heterogeneous-graph anomaly detection workflows.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, doc in (("generate", "synthesize a labeled benchmark dataset"),
                      ("train", "train a detector and write the best checkpoint"),
                      ("score", "score every graph in a dataset"),
                      ("evaluate", "compute AUC/AP report with figures")):
        p = sub.add_parser(name, help=doc)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (dotted path, JSON value)")
    return parser


def _load_raw(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return raw


def _apply_overrides(raw: dict, overrides: list[str]) -> None:
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, text = item.split("=", 1)
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text  # bare strings allowed without quoting
        node = raw
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise UsageError(f"--set path {key!r} crosses a non-object value")
        node[parts[-1]] = value


def _check_keys(section: dict, allowed: set, prefix: str) -> None:
    for key in section:
        if key not in allowed:
            raise UsageError(f"invalid config field '{prefix}{key}'")


def _setup_threads(raw: dict) -> None:
    threads = raw.get("threads", 1)
    if not isinstance(threads, int) or threads < 1:
        raise UsageError("invalid config field 'threads' (need integer >= 1)")
    if raw.get("deterministic", True) and threads != 1:
        raise UsageError("deterministic mode requires threads=1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(threads)


def _out_dir(raw: dict) -> str:
    path = raw.get("output_dir", "out")
    os.makedirs(path, exist_ok=True)
    return path


def _dataset_path(raw: dict) -> str:
    return raw.get("dataset", os.path.join(raw.get("output_dir", "out"),
                                           "dataset.jsonl"))


def _checkpoint_path(raw: dict) -> str:
    return raw.get("checkpoint", os.path.join(raw.get("output_dir", "out"),
                                              "model.ckpt"))


def _build_model_config(raw: dict):
    import dataclasses

    from .augment import AugmentConfig
    from .layers import ModelConfig

    profile = raw.get("profile", "custom")
    if profile not in PROFILES:
        raise UsageError(
            f"unknown profile {profile!r} (choose from {sorted(PROFILES)})")
    model = dict(PROFILES[profile]["model"])
    aug = dict(PROFILES[profile]["augment"])
    model.update(raw.get("model", {}))
    aug.update(raw.get("augment", {}))
    model["seed"] = raw.get("seed", model.get("seed", 0))

    _check_keys(model, {f.name for f in dataclasses.fields(ModelConfig)} - {"augment"},
                "model.")
    _check_keys(aug, {f.name for f in dataclasses.fields(AugmentConfig)}, "augment.")
    try:
        return ModelConfig(**model, augment=AugmentConfig(**aug))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid model config: {exc}") from exc


def _split_fractions(raw: dict) -> tuple[float, float]:
    section = raw.get("split", {})
    _check_keys(section, {"train_frac", "val_frac"}, "split.")
    return float(section.get("train_frac", 0.6)), float(section.get("val_frac", 0.15))


def _load_dataset(path: str):
    from .dataio import load_jsonl

    if not os.path.exists(path):
        raise DataError(f"dataset missing: {path}")
    return load_jsonl(path)


# -- commands ------------------------------------------------------------------


def cmd_generate(raw: dict) -> int:
    from .dataio import GeneratorConfig, generate, save_jsonl
    from .hetgraph import GraphSchema

    section = dict(DEFAULT_GENERATE)
    section.update(raw.get("generate", {}))
    _check_keys(section, set(DEFAULT_GENERATE) | {"seed"}, "generate.")
    try:
        schema = GraphSchema(num_node_types=int(section["num_node_types"]),
                             num_edge_types=int(section["num_edge_types"]),
                             feature_dim=int(section["feature_dim"]))
        config = GeneratorConfig(
            num_graphs=int(section["num_graphs"]),
            anomaly_fraction=float(section["anomaly_fraction"]),
            schema=schema,
            mean_nodes=int(section["mean_nodes"]),
            mean_edges=int(section["mean_edges"]),
            anomaly_kind=str(section["anomaly_kind"]),
            seed=int(section.get("seed", raw.get("seed", 0))),
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid generate config: {exc}") from exc

    dataset = generate(config)
    path = _dataset_path(raw)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    save_jsonl(dataset, path)
    n_anom = sum(1 for g in dataset.graphs if g.label == 1)
    print(f"wrote {len(dataset.graphs)} graphs ({n_anom} anomalous) to {path}")
    return EXIT_OK


def cmd_train(raw: dict) -> int:
    from .dataio import split
    from .hetgraph import type_histograms
    from .train import fit, save_checkpoint

    config = _build_model_config(raw)
    dataset = _load_dataset(_dataset_path(raw))
    train_frac, val_frac = _split_fractions(raw)
    try:
        dataset = split(dataset, train_frac, val_frac, config.seed)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    train_graphs = dataset.part("train")
    val_graphs = dataset.part("val")
    if not train_graphs:
        raise DataError("training split is empty (check split fractions)")
    try:
        histograms = type_histograms(train_graphs)
    except ValueError as exc:
        raise DataError(f"cannot build type histograms: {exc}") from exc

    out_dir = _out_dir(raw)
    log_path = os.path.join(out_dir, "train_log.jsonl")
    state, history = fit(train_graphs, val_graphs, histograms, config,
                         dataset.schema, log=print)
    with open(log_path, "w", encoding="utf-8") as fh:
        for row in history:
            fh.write(json.dumps(row) + "\n")

    ckpt_path = _checkpoint_path(raw)
    parent = os.path.dirname(ckpt_path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    save_checkpoint(state, ckpt_path)
    print(f"best val metric {state.best_val_metric:.6f} (epoch {state.epoch}); "
          f"checkpoint {ckpt_path}; log {log_path}")
    return EXIT_OK


def _load_state_and_data(raw: dict):
    from .train import load_checkpoint

    state = load_checkpoint(_checkpoint_path(raw))
    dataset = _load_dataset(_dataset_path(raw))
    if dataset.schema != state.params.schema:
        raise DataError(
            f"dataset schema {dataset.schema} does not match checkpoint schema "
            f"{state.params.schema}"
        )
    return state, dataset


def cmd_score(raw: dict) -> int:
    import dataclasses

    from .metrics import score_graphs

    state, dataset = _load_state_and_data(raw)
    scored = score_graphs(state, dataset.graphs, state.params.config)
    out_dir = _out_dir(raw)
    path = os.path.join(out_dir, "scores.jsonl")
    with open(path, "w", encoding="utf-8") as fh:
        for record in scored:
            fh.write(json.dumps(dataclasses.asdict(record)) + "\n")
    print(f"scored {len(scored)} graphs -> {path}")
    return EXIT_OK


def cmd_evaluate(raw: dict) -> int:
    from .dataio import split
    from .figures import render_figures
    from .metrics import evaluate, write_report

    section = raw.get("evaluate", {})
    _check_keys(section, {"part"}, "evaluate.")
    part = section.get("part", "test")
    if part not in ("all", "train", "val", "test"):
        raise UsageError(f"invalid config field 'evaluate.part' (got {part!r})")

    state, dataset = _load_state_and_data(raw)
    if part == "all":
        graphs = list(dataset.graphs)
    else:
        train_frac, val_frac = _split_fractions(raw)
        try:
            graphs = split(dataset, train_frac, val_frac,
                           state.params.config.seed).part(part)
        except ValueError as exc:
            raise DataError(str(exc)) from exc
    if not graphs:
        raise DataError(f"evaluate: the {part!r} part is empty")
    unlabeled = [g.graph_id for g in graphs if g.label is None]
    if unlabeled:
        raise DataError(f"labels required: graph {unlabeled[0]!r} is unlabeled")

    try:
        report = evaluate(state, graphs, state.params.config)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    out_dir = _out_dir(raw)
    json_path = os.path.join(out_dir, "report.json")
    csv_path = os.path.join(out_dir, "scores.csv")
    write_report(report, json_path, csv_path)
    figure_paths = render_figures(report, out_dir)
    print(f"auc {report.auc:.6f}  ap {report.ap:.6f}")
    print(f"report {json_path}; scores {csv_path}; "
          f"figures {', '.join(figure_paths)}")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train,
            "score": cmd_score, "evaluate": cmd_evaluate}


def main(argv: Optional[list[str]] = None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        raw = _load_raw(args.config)
        _check_keys(raw, TOP_LEVEL_KEYS, "")
        _apply_overrides(raw, args.set)
        _check_keys(raw, TOP_LEVEL_KEYS, "")
        _setup_threads(raw)
        return COMMANDS[args.command](raw)
    except UsageError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # internal invariant violations
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
