"""One-class objective, self-supervised cross-entropy, and the composite score.

The one-class term pulls graph embeddings toward a fixed hypersphere center c
(the mean embedding of the very first training batch, frozen thereafter) with
a Frobenius penalty on every weight matrix. The self-supervised term is binary
cross-entropy separating originals (y=0) from their augmented partners (y=1).
The anomaly score is squared center distance, multiplied by the predicted
abnormality probability when the self-supervised branch is active.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .layers import ModelParams
from .numerics import Tape


@dataclass
class SvddState:
    """The hypersphere center; once frozen it never moves within a run."""

    center: np.ndarray
    frozen: bool = False


@dataclass(frozen=True)
class ScoredGraph:
    """Per-graph scoring record: distance, abnormality probability, final score."""

    graph_id: str
    svdd_distance: float
    ssl_prob: float
    score: float


def compute_center(embeddings: Sequence[np.ndarray]) -> SvddState:
    """Frozen center = elementwise mean of the first batch's embeddings."""
    if len(embeddings) == 0:
        raise ValueError("compute_center: empty batch")
    return SvddState(center=np.mean(np.stack(embeddings), axis=0), frozen=True)


def svdd_loss(tape: Tape, embeddings: Sequence[int], state: SvddState,
              params: ModelParams, reg_lambda: float) -> int:
    """(1/n) sum ||phi(G_i) - c||^2 + (lambda/2) sum ||W||_F^2 over weight matrices.

    Bias vectors stay out of the penalty (penalizing them aggravates the
    one-class collapse pathology). Returns a scalar record id.
    """
    if not state.frozen:
        raise ValueError("svdd_loss: center must be frozen first")
    if not embeddings:
        raise ValueError("svdd_loss: empty embedding list")
    c = tape.const(state.center)
    dists = [tape.sq_distance(e, c) for e in embeddings]
    loss = tape.mean(dists)
    if reg_lambda > 0.0:
        reg = None
        for w in params.weight_matrices():
            term = tape.frob_norm_sq(tape.param(w))
            reg = term if reg is None else tape.add(reg, term)
        loss = tape.add(loss, tape.scale(reg, reg_lambda / 2.0))
    return loss


def ssl_loss(tape: Tape, probs_original: Sequence[int], probs_augmented: Sequence[int]) -> int:
    """Binary cross-entropy over the pooled set; originals y=0, augmented y=1.

    Probabilities are the model's phi_2 outputs (already clamped into
    [1e-7, 1 - 1e-7] by the forward pass); a value outside (0, 1) is a caller
    bug and raises. N = total count across both lists.
    """
    if len(probs_original) + len(probs_augmented) == 0:
        raise ValueError("ssl_loss: no graphs")
    for rid in list(probs_original) + list(probs_augmented):
        v = float(np.asarray(tape.value(rid)).reshape(()))
        if not 0.0 < v < 1.0:
            raise ValueError(f"ssl_loss: probability {v} outside (0, 1); clamp sigmoid output")
    terms = []
    for rid in probs_original:  # y=0: log(1 - p)
        one_minus = tape.add(tape.const(np.ones_like(tape.value(rid))), tape.scale(rid, -1.0))
        terms.append(tape.log(one_minus))
    for rid in probs_augmented:  # y=1: log(p)
        terms.append(tape.log(rid))
    return tape.scale(tape.mean(terms), -1.0)


def joint_loss(tape: Tape, svdd: int, ssl: int, alpha: float) -> int:
    """svdd + alpha * ssl; the regularizer already lives inside svdd_loss."""
    if alpha < 0:
        raise ValueError("joint_loss: alpha must be >= 0")
    return tape.add(svdd, tape.scale(ssl, alpha))


def anomaly_score(graph_id: str, embedding: np.ndarray, ssl_prob: float,
                  state: SvddState, alpha: float) -> ScoredGraph:
    """Composite score: ||phi_1 - c||^2 * phi_2, or bare distance when alpha = 0.

    With the self-supervised branch disabled its probability is untrained
    noise, so the score falls back to the pure one-class distance (the
    baseline scoring rule).
    """
    if not state.frozen:
        raise ValueError("anomaly_score: center must be frozen")
    d = embedding - state.center
    dist = float(np.dot(d, d))
    score = dist * float(ssl_prob) if alpha > 0 else dist
    return ScoredGraph(graph_id=graph_id, svdd_distance=dist,
                       ssl_prob=float(ssl_prob), score=score)
