"""Evaluation figures rendered to PNG files next to the delimited output.

Pure file output (Agg backend, no display). Curves are exact step plots from
the same per-graph records the metrics are computed from, so figures and
numbers cannot drift apart.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import EvalReport


def _roc_points(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(-scores, kind="stable")
    y = labels[order]
    n_pos = max(1, int(y.sum()))
    n_neg = max(1, int(len(y) - y.sum()))
    tpr = np.concatenate([[0.0], np.cumsum(y == 1) / n_pos])
    fpr = np.concatenate([[0.0], np.cumsum(y == 0) / n_neg])
    return fpr, tpr


def _pr_points(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(-scores, kind="stable")
    y = labels[order]
    n_pos = max(1, int(y.sum()))
    tp = np.cumsum(y == 1)
    k = np.arange(1, len(y) + 1)
    return tp / n_pos, tp / k


def render_figures(report: EvalReport, out_dir: str) -> list[str]:
    """Write roc.png, pr.png, and score_hist.png; returns the paths."""
    scores = np.asarray([r.score for r in report.scored])
    labels = np.asarray(report.labels)
    paths = []

    fig, ax = plt.subplots(figsize=(5, 4))
    fpr, tpr = _roc_points(scores, labels)
    ax.plot(fpr, tpr, drawstyle="steps-post", color="tab:blue")
    ax.plot([0, 1], [0, 1], ls="--", lw=0.8, color="gray")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title(f"ROC (AUC = {report.auc:.4f})")
    fig.tight_layout()
    path = os.path.join(out_dir, "roc.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)

    fig, ax = plt.subplots(figsize=(5, 4))
    recall, precision = _pr_points(scores, labels)
    ax.plot(recall, precision, drawstyle="steps-post", color="tab:orange")
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_ylim(0.0, 1.05)
    ax.set_title(f"Precision-recall (AP = {report.ap:.4f})")
    fig.tight_layout()
    path = os.path.join(out_dir, "pr.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)

    fig, ax = plt.subplots(figsize=(5, 4))
    bins = np.histogram_bin_edges(scores, bins=30)
    ax.hist(scores[labels == 0], bins=bins, alpha=0.6, label="normal",
            color="tab:blue")
    ax.hist(scores[labels == 1], bins=bins, alpha=0.6, label="anomalous",
            color="tab:red")
    ax.set_xlabel("anomaly score")
    ax.set_ylabel("count")
    ax.set_title("Score distribution")
    ax.legend()
    fig.tight_layout()
    path = os.path.join(out_dir, "score_hist.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)

    return paths
