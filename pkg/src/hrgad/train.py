"""Training loop, optimizer, validation-based model selection, checkpoints.

Each training iteration is three steps: the one-class distance loss on the
original graphs (the hypersphere center freezing on the very first batch of
the run), the self-supervised discrimination loss against 1:1 augmented
partners when that branch is active, and the weighted sum of the two. All
randomness flows through named substreams of the run seed, so a fixed seed in
single-threaded mode reproduces checkpoints bitwise.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .augment import AugmentConfig, augment, graph_stream
from .errors import CheckpointError
from .hetgraph import GraphSchema, HeteroGraph, TypeHistograms
from .layers import ModelConfig, ModelParams, init_params, model_forward
from .numerics import Tape
from .objective import SvddState, compute_center, joint_loss, ssl_loss, svdd_loss

PURPOSE_TRAIN_AUG = 0
PURPOSE_VAL_AUG = 1
PURPOSE_SHUFFLE = 2

CHECKPOINT_MAGIC = b"HRGADCP1"
CHECKPOINT_VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def ssl_active(config: ModelConfig) -> bool:
    """The self-supervised branch runs only when weighted in and enabled."""
    return config.ssl_weight > 0.0 and config.augment.enabled


@dataclass
class TrainState:
    """Single-writer mutable training state.

    The rng stream state is implicit: every stream is a pure function of
    (config.seed, purpose, epoch, graph_id), so (params.config, epoch)
    determine it. Optimizer moments are keyed by parameter name and are not
    persisted in checkpoints.
    """

    params: ModelParams
    svdd: SvddState
    moments: dict = field(default_factory=dict)
    step: int = 0
    epoch: int = 0
    best_val_metric: float = float("-inf")
    batch_seconds_total: float = 0.0
    batch_count: int = 0


def init_state(schema: GraphSchema, config: ModelConfig) -> TrainState:
    params = init_params(schema, config)
    center = np.zeros(config.rep_dim)
    return TrainState(params=params, svdd=SvddState(center=center, frozen=False))


# -- optimizer -----------------------------------------------------------------


def optimizer_step(state: TrainState, learning_rate: float) -> None:
    """One adaptive-moment (or plain SGD) update; gradients are zeroed after."""
    params = state.params.all_params()
    if state.params.config.optimizer == "sgd":
        for p in params:
            p.value -= learning_rate * p.grad
            p.zero_grad()
        state.step += 1
        return

    state.step += 1
    t = state.step
    bc1 = 1.0 - ADAM_BETA1 ** t
    bc2 = 1.0 - ADAM_BETA2 ** t
    for p in params:
        if p.name not in state.moments:
            state.moments[p.name] = (np.zeros_like(p.value), np.zeros_like(p.value))
        m, v = state.moments[p.name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * p.grad
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (p.grad * p.grad)
        p.value -= learning_rate * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
        p.zero_grad()


# -- epoch loop ----------------------------------------------------------------


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def train_epoch(state: TrainState, graphs: Sequence[HeteroGraph],
                histograms: TypeHistograms, config: ModelConfig) -> dict:
    """Run one epoch over shuffled batches; returns mean svdd/ssl/joint losses."""
    if not graphs:
        raise ValueError("train_epoch: empty training set")
    shuffle = graph_stream(config.seed, PURPOSE_SHUFFLE, state.epoch, "")
    totals = {"svdd": 0.0, "ssl": 0.0, "joint": 0.0}
    n_total = len(graphs)

    for b, batch_idx in enumerate(_batches(n_total, config.batch_size, shuffle)):
        t0 = time.perf_counter()
        batch = [graphs[int(i)] for i in batch_idx]
        tape = Tape()
        embs, probs = [], []
        for g in batch:
            e, p = model_forward(g, state.params, config, tape)
            embs.append(e)
            probs.append(p)

        if not state.svdd.frozen or (config.recompute_center and b == 0):
            state.svdd = compute_center([tape.value(e) for e in embs])

        svdd_rid = svdd_loss(tape, embs, state.svdd, state.params, config.reg_lambda)
        if ssl_active(config):
            partners = [
                augment(g, histograms, config.augment,
                        graph_stream(config.seed, PURPOSE_TRAIN_AUG, state.epoch, g.graph_id))
                for g in batch
            ]
            aug_probs = [model_forward(a, state.params, config, tape)[1] for a in partners]
            ssl_rid = ssl_loss(tape, probs, aug_probs)
            loss_rid = joint_loss(tape, svdd_rid, ssl_rid, config.ssl_weight)
            ssl_val = float(tape.value(ssl_rid))
        else:
            loss_rid = svdd_rid
            ssl_val = 0.0

        svdd_val = float(tape.value(svdd_rid))
        joint_val = float(tape.value(loss_rid))
        tape.backward(loss_rid)
        optimizer_step(state, config.learning_rate)

        w = len(batch)
        totals["svdd"] += svdd_val * w
        totals["ssl"] += ssl_val * w
        totals["joint"] += joint_val * w
        state.batch_seconds_total += time.perf_counter() - t0
        state.batch_count += 1

    state.epoch += 1
    return {k: v / n_total for k, v in totals.items()}


def validate(state: TrainState, graphs: Sequence[HeteroGraph],
             histograms: TypeHistograms, config: ModelConfig) -> dict:
    """Composite selection metric: (-mean svdd distance) + discrimination accuracy.

    Originals count as correctly classified when phi_2 <= 0.5 and augmented
    partners when phi_2 > 0.5, so an untrained constant 0.5 head scores
    exactly 0.5 on the balanced pairing. Partners come from a fixed epoch-0
    substream, making the metric comparable across epochs. With the
    self-supervised branch inactive the accuracy term is pinned at the
    uninformative 0.5.
    """
    if not graphs:
        raise ValueError("validate: empty validation set")
    tape = Tape()
    dists = []
    correct = 0
    paired = 0
    for g in graphs:
        e, p = model_forward(g, state.params, config, tape)
        d = tape.value(e) - state.svdd.center
        dists.append(float(np.dot(d, d)))
        if ssl_active(config):
            partner = augment(g, histograms, config.augment,
                              graph_stream(config.seed, PURPOSE_VAL_AUG, 0, g.graph_id))
            _, ap = model_forward(partner, state.params, config, tape)
            correct += int(float(tape.value(p)[0]) <= 0.5)
            correct += int(float(tape.value(ap)[0]) > 0.5)
            paired += 2
    accuracy = correct / paired if paired else 0.5
    mean_dist = float(np.mean(dists))
    return {"metric": -mean_dist + accuracy, "mean_distance": mean_dist,
            "accuracy": accuracy}


# -- full run ------------------------------------------------------------------


def _snapshot(state: TrainState) -> tuple:
    values = [p.value.copy() for p in state.params.all_params()]
    return values, state.svdd.center.copy(), state.epoch


def _restore(state: TrainState, snap: tuple) -> None:
    values, center, epoch = snap
    for p, v in zip(state.params.all_params(), values):
        p.value = v.copy()
    state.svdd = SvddState(center=center.copy(), frozen=True)
    state.epoch = epoch


def fit(train_graphs: Sequence[HeteroGraph], val_graphs: Sequence[HeteroGraph],
        histograms: TypeHistograms, config: ModelConfig, schema: GraphSchema,
        log: Optional[Callable[[str], None]] = None) -> tuple[TrainState, list[dict]]:
    """Train with early stopping; returns the best-validation state and history.

    Selection uses the validate() composite; without a validation set the
    negative mean joint loss stands in. Stops after `patience` epochs without
    improvement or at `max_epochs`.
    """
    if not train_graphs:
        raise ValueError("fit: empty training set")
    state = init_state(schema, config)
    history: list[dict] = []
    best: Optional[tuple] = None
    best_metric = float("-inf")
    stale = 0
    for _ in range(config.max_epochs):
        t0 = time.perf_counter()
        losses = train_epoch(state, train_graphs, histograms, config)
        row = {"epoch": state.epoch, **losses}
        if val_graphs:
            v = validate(state, val_graphs, histograms, config)
            row.update(val_metric=v["metric"], val_distance=v["mean_distance"],
                       val_accuracy=v["accuracy"])
            metric = v["metric"]
        else:
            metric = -losses["joint"]
            row.update(val_metric=metric)
        row["seconds"] = time.perf_counter() - t0
        history.append(row)
        if log is not None:
            parts = [f"epoch {row['epoch']:3d}", f"joint {row['joint']:.6f}",
                     f"svdd {row['svdd']:.6f}", f"ssl {row['ssl']:.6f}",
                     f"val {row['val_metric']:.6f}"]
            log("  ".join(parts))
        if metric > best_metric:
            best_metric = metric
            best = _snapshot(state)
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    if best is not None:
        _restore(state, best)
    state.best_val_metric = best_metric
    return state, history


# -- checkpoints ---------------------------------------------------------------


def _manifest(state: TrainState) -> dict:
    s = state.params.schema
    entries = [{"name": p.name, "shape": list(p.value.shape)}
               for p in state.params.all_params()]
    entries.append({"name": "svdd.center", "shape": list(state.svdd.center.shape)})
    return {
        "format_version": CHECKPOINT_VERSION,
        "schema": {"num_node_types": s.num_node_types,
                   "num_edge_types": s.num_edge_types,
                   "feature_dim": s.feature_dim},
        "model": asdict(state.params.config),
        "epoch": state.epoch,
        "entries": entries,
    }


def save_checkpoint(state: TrainState, path: str) -> None:
    """Versioned container: magic, manifest length, JSON manifest, then the
    float64 little-endian row-major payload of every entry in manifest order."""
    if not state.svdd.frozen:
        raise ValueError("save_checkpoint: center not frozen (train at least one batch)")
    manifest = json.dumps(_manifest(state), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for p in state.params.all_params():
            fh.write(np.ascontiguousarray(p.value, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(state.svdd.center, dtype="<f8").tobytes())


def load_checkpoint(path: str, into: Optional[ModelParams] = None) -> TrainState:
    """Read a checkpoint; forward outputs of the result are bitwise-identical.

    With `into` given, payloads load into that existing parameter bank and
    every entry's shape is checked against it (a config changed since saving
    surfaces as a shape mismatch naming the parameter). Otherwise the model is
    rebuilt from the manifest's config snapshot. Optimizer moments are not
    persisted; a loaded state starts them fresh.
    """
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < 16 or blob[:7] != CHECKPOINT_MAGIC[:7]:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if blob[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(
            f"{path}: version mismatch (found tag {blob[:8]!r}, "
            f"expected {CHECKPOINT_MAGIC!r})"
        )
    (mlen,) = struct.unpack_from("<Q", blob, 8)
    try:
        manifest = json.loads(blob[16:16 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest: {exc}") from exc
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: version mismatch (format_version "
            f"{manifest.get('format_version')!r}, expected {CHECKPOINT_VERSION})"
        )

    try:
        schema = GraphSchema(**manifest["schema"])
        model_dict = dict(manifest["model"])
        model_dict["augment"] = AugmentConfig(**model_dict["augment"])
        config = ModelConfig(**model_dict)
        entries = manifest["entries"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest: {exc}") from exc

    params = into if into is not None else init_params(schema, config)
    by_name = {p.name: p for p in params.all_params()}

    offset = 16 + mlen
    center: Optional[np.ndarray] = None
    seen = set()
    for entry in entries:
        name = entry["name"]
        shape = tuple(int(d) for d in entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
        chunk = blob[offset:offset + nbytes]
        if len(chunk) < nbytes:
            raise CheckpointError(f"{path}: truncated payload at entry {name!r}")
        value = np.frombuffer(chunk, dtype="<f8").reshape(shape).astype(np.float64)
        offset += nbytes
        if name == "svdd.center":
            center = value
            continue
        if name not in by_name:
            raise CheckpointError(f"{path}: unknown parameter {name!r} in checkpoint")
        p = by_name[name]
        if p.value.shape != shape:
            raise CheckpointError(
                f"{path}: shape mismatch for parameter {name!r}: checkpoint has "
                f"{shape}, model expects {p.value.shape}"
            )
        p.value = value
        seen.add(name)
    if offset != len(blob):
        raise CheckpointError(f"{path}: trailing bytes after last entry")
    missing = sorted(set(by_name) - seen)
    if missing:
        raise CheckpointError(f"{path}: checkpoint missing parameters {missing}")
    if center is None:
        raise CheckpointError(f"{path}: checkpoint missing svdd.center")

    return TrainState(params=params, svdd=SvddState(center=center, frozen=True),
                      epoch=int(manifest["epoch"]))
