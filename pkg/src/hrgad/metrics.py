"""Ranking-quality metrics (AUC, average precision) and the evaluation report.

Tie handling is explicit so runs are gateable: AUC follows the Mann-Whitney
convention (ties contribute half), average precision ranks by score descending
with ties broken by stable input order. Both are exact rank computations, not
trapezoid approximations.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .hetgraph import HeteroGraph
from .layers import ModelConfig, model_forward
from .numerics import Tape
from .objective import ScoredGraph, anomaly_score
from .train import TrainState, ssl_active


@dataclass(frozen=True)
class EvalReport:
    """Metrics plus the exact per-graph records they were computed from."""

    auc: float
    ap: float
    scored: tuple[ScoredGraph, ...]
    labels: tuple[int, ...]
    timings: dict


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks, ties sharing the mean rank of their run."""
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores))
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Probability a random positive outranks a random negative; ties count half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("auc: scores and labels must be equal-length 1-D")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc undefined: labels contain a single class")
    ranks = _average_ranks(s)
    rank_sum = float(np.sum(ranks[y == 1]))
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def average_precision(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Sum of precision@k weighted by recall increments over the descending
    ranking; ties keep stable input order."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("average_precision: scores and labels must be equal-length 1-D")
    n_pos = int(np.sum(y == 1))
    if n_pos == 0:
        raise ValueError("average_precision undefined: no positive labels")
    order = np.argsort(-s, kind="stable")
    tp = 0
    total = 0.0
    for k, idx in enumerate(order, start=1):
        if y[idx] == 1:
            tp += 1
            total += (tp / k) * (1.0 / n_pos)
    return total


def score_graphs(state: TrainState, graphs: Sequence[HeteroGraph],
                 config: ModelConfig) -> list[ScoredGraph]:
    """Forward every graph and apply the composite scoring rule."""
    alpha = config.ssl_weight if ssl_active(config) else 0.0
    out = []
    for g in graphs:
        tape = Tape()
        emb, prob = model_forward(g, state.params, config, tape)
        out.append(anomaly_score(g.graph_id, tape.value(emb),
                                 float(tape.value(prob)[0]), state.svdd, alpha))
    return out


def evaluate(state: TrainState, graphs: Sequence[HeteroGraph],
             config: ModelConfig) -> EvalReport:
    """Score labeled graphs, compute AUC/AP, record wall-clock timings.

    Timings (mean train-batch seconds from the state, mean per-graph inference
    seconds measured here) are environment-dependent and excluded from any
    determinism comparison.
    """
    for g in graphs:
        if g.label is None:
            raise ValueError(f"evaluate: graph {g.graph_id!r} has no label")
    t0 = time.perf_counter()
    scored = score_graphs(state, graphs, config)
    infer_seconds = (time.perf_counter() - t0) / max(1, len(graphs))
    labels = tuple(int(g.label) for g in graphs)
    values = [r.score for r in scored]
    batch_seconds = (state.batch_seconds_total / state.batch_count
                     if state.batch_count else 0.0)
    return EvalReport(
        auc=auc(values, labels),
        ap=average_precision(values, labels),
        scored=tuple(scored),
        labels=labels,
        timings={"train_batch_seconds": batch_seconds,
                 "per_graph_inference_seconds": infer_seconds},
    )


def report_dict(report: EvalReport) -> dict:
    """JSON form of the report; record order matches the input graphs."""
    return {
        "auc": report.auc,
        "ap": report.ap,
        "graphs": [{**asdict(r), "label": lab}
                   for r, lab in zip(report.scored, report.labels)],
        "timings": dict(report.timings),
    }


def write_report(report: EvalReport, json_path: str, csv_path: str) -> None:
    """Emit the JSON document and the per-graph CSV."""
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(report_dict(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["graph_id", "label", "svdd_distance", "ssl_prob", "score"])
        for r, lab in zip(report.scored, report.labels):
            writer.writerow([r.graph_id, lab, repr(r.svdd_distance),
                             repr(r.ssl_prob), repr(r.score)])
