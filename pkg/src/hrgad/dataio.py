"""Serialization (`hrgad-v1` JSONL), dataset splits, and the synthetic generator.

The generator is the acceptance vehicle standing in for unavailable corpora.
Normal graphs draw node types from a fixed skewed categorical and edges from a
fixed "normal" distribution over (src_type, dst_type, edge_type) triples, both
deterministic functions of the schema. Anomalies are distribution shifts:
pair_shift rewires a fraction of edges onto type pairs disjoint from the
normal support (relational anomalies in the spirit of the problem setting),
edge_type_shift permutes the edge-type marginal, feature_shift offsets one
node type's feature mean by three noise scales. Every graph has its own
counter-based random stream, so generation is order-independent and
bit-reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import DataError
from .hetgraph import GraphSchema, HeteroGraph, validate

FORMAT_NAME = "hrgad-v1"
ANOMALY_KINDS = ("pair_shift", "edge_type_shift", "feature_shift", "pair_feature_mix")

# Fraction of edges resampled onto the shifted pair distribution in anomalies.
PAIR_SHIFT_FRACTION = 0.3
# Separation of per-type feature means, in noise scales: small enough that a
# node's type is barely readable from its features alone.
TYPE_MEAN_SCALE = 0.25
FEATURE_SHIFT_SIGMAS = 3.0


@dataclass(frozen=True)
class Dataset:
    """Graphs plus their schema and an optional train/val/test assignment."""

    schema: GraphSchema
    graphs: tuple[HeteroGraph, ...]
    split_assignment: Optional[dict[str, str]] = None

    def part(self, name: str) -> list[HeteroGraph]:
        if self.split_assignment is None:
            raise ValueError("dataset has no split assignment")
        return [g for g in self.graphs if self.split_assignment[g.graph_id] == name]


@dataclass(frozen=True)
class GeneratorConfig:
    num_graphs: int
    anomaly_fraction: float
    schema: GraphSchema
    mean_nodes: int = 30
    mean_edges: int = 66
    anomaly_kind: str = "pair_shift"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_graphs < 1:
            raise ValueError("num_graphs must be >= 1")
        if not 0.0 <= self.anomaly_fraction <= 1.0:
            raise ValueError("anomaly_fraction must be in [0, 1]")
        if self.mean_nodes < 1:
            raise ValueError("mean_nodes must be >= 1")
        if self.mean_edges < self.mean_nodes - 1:
            raise ValueError("mean_edges must be >= mean_nodes - 1")
        if self.anomaly_kind not in ANOMALY_KINDS:
            raise ValueError(f"anomaly_kind must be one of {ANOMALY_KINDS}")


# -- serialization ------------------------------------------------------------


def save_jsonl(dataset: Dataset, path: str) -> None:
    """Write the `hrgad-v1` JSONL form; floats round-trip bit-exactly."""
    s = dataset.schema
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({
            "format": FORMAT_NAME,
            "num_node_types": s.num_node_types,
            "num_edge_types": s.num_edge_types,
            "feature_dim": s.feature_dim,
        }) + "\n")
        for g in dataset.graphs:
            fh.write(json.dumps({
                "id": g.graph_id,
                "label": g.label,
                "node_types": list(g.node_types),
                "node_features": g.node_features.tolist(),
                "edges": [[src, dst, et] for (src, dst), et in zip(g.edges, g.edge_types)],
            }) + "\n")


def load_jsonl(path: str) -> Dataset:
    """Parse and validate a `hrgad-v1` JSONL file; errors name the line/graph."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from exc

    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        raise DataError(f"{path}: missing schema record (empty file)")
    try:
        head = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:1: malformed JSON: {exc}") from exc
    if not isinstance(head, dict) or head.get("format") != FORMAT_NAME:
        raise DataError(f"{path}:1: missing schema record (expected format={FORMAT_NAME!r})")
    try:
        schema = GraphSchema(
            num_node_types=int(head["num_node_types"]),
            num_edge_types=int(head["num_edge_types"]),
            feature_dim=int(head["feature_dim"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}:1: bad schema record: {exc}") from exc

    graphs: list[HeteroGraph] = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: malformed JSON: {exc}") from exc
        try:
            edges = tuple((int(e[0]), int(e[1])) for e in rec["edges"])
            edge_types = tuple(int(e[2]) for e in rec["edges"])
            label = rec.get("label")
            g = HeteroGraph(
                graph_id=str(rec["id"]),
                node_types=tuple(int(t) for t in rec["node_types"]),
                node_features=np.asarray(rec["node_features"], dtype=np.float64).reshape(
                    len(rec["node_types"]), -1
                ) if rec["node_types"] else np.zeros((0, schema.feature_dim)),
                edges=edges,
                edge_types=edge_types,
                label=None if label is None else int(label),
            )
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise DataError(f"{path}:{lineno}: bad graph record: {exc}") from exc
        violations = validate(g, schema)
        if violations:
            raise DataError(
                f"{path}:{lineno}: graph {g.graph_id!r} invalid: {'; '.join(violations)}"
            )
        graphs.append(g)
    return Dataset(schema=schema, graphs=tuple(graphs))


# -- splits ---------------------------------------------------------------------


def split(dataset: Dataset, train_frac: float, val_frac: float, seed: int) -> Dataset:
    """Assign train/val from the normal population only; anomalies all go to test.

    Fractions apply to the normal count (rounded); unlabeled graphs count as
    normal (the unsupervised setting trains on unlabeled data). Deterministic
    given the seed; the three parts partition the graph ids.
    """
    if train_frac < 0 or val_frac < 0:
        raise ValueError("split fractions must be nonnegative")
    if train_frac + val_frac > 1.0 + 1e-12:
        raise ValueError(f"split fractions sum to {train_frac + val_frac} > 1")
    normal_ids = [g.graph_id for g in dataset.graphs if g.label in (0, None)]
    if not normal_ids:
        raise ValueError("split: dataset has no normal graphs")

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    order = rng.permutation(len(normal_ids))
    n_train = int(round(train_frac * len(normal_ids)))
    n_val = int(round(val_frac * len(normal_ids)))
    assignment = {g.graph_id: "test" for g in dataset.graphs}
    for pos in order[:n_train]:
        assignment[normal_ids[pos]] = "train"
    for pos in order[n_train:n_train + n_val]:
        assignment[normal_ids[pos]] = "val"
    return replace(dataset, split_assignment=assignment)


# -- synthetic generator ------------------------------------------------------------


def _node_type_weights(T: int) -> np.ndarray:
    w = np.arange(T, 0, -1, dtype=np.float64)  # fixed skew: common types first
    return w / w.sum()


def _offset_classes(T: int) -> tuple[list[int], list[int]]:
    """Normal and shifted destination offsets (disjoint mod T, 0 excluded)."""
    normal: list[int] = []
    for o in (1, 3):
        if o % T != 0 and (o % T) not in normal:
            normal.append(o % T)
    shifted: list[int] = []
    for o in [2, 5] + list(range(4, T)):
        m = o % T
        if m != 0 and m not in normal and m not in shifted:
            shifted.append(m)
        if len(shifted) == len(normal):
            break
    return normal, shifted


def _triple_distribution(schema: GraphSchema, offsets: Sequence[int]) -> dict:
    """Fixed categorical over triples: pairs (t, t+offset) weighted by source
    popularity, each offset class carrying its own two edge types."""
    T, E = schema.num_node_types, schema.num_edge_types
    src_w = _node_type_weights(T)
    class_w = [0.6, 0.4]
    et_split = [0.7, 0.3]
    weights: dict[tuple[int, int, int], float] = {}
    for t in range(T):
        for j, off in enumerate(offsets):
            pair_w = src_w[t] * class_w[j % 2]
            for s, base_et in enumerate((2 * j, 2 * j + 1)):
                key = (t, (t + off) % T, base_et % E)
                weights[key] = weights.get(key, 0.0) + pair_w * et_split[s]
    total = sum(weights.values())
    return {k: v / total for k, v in sorted(weights.items())}


def normal_triple_distribution(schema: GraphSchema) -> dict:
    """The configured triple categorical that normal graphs sample edges from."""
    normal, _ = _offset_classes(schema.num_node_types)
    return _triple_distribution(schema, normal)


def shifted_triple_distribution(schema: GraphSchema) -> dict:
    """The disjoint-pair categorical that pair_shift anomalies resample from."""
    normal, shifted = _offset_classes(schema.num_node_types)
    if not shifted:
        raise ValueError(
            f"pair_shift needs a disjoint offset class; {schema.num_node_types} node types "
            "leave none free"
        )
    return _triple_distribution(schema, shifted)


def _type_means(schema: GraphSchema) -> np.ndarray:
    """Weakly separated per-type feature means (TYPE_MEAN_SCALE noise scales)."""
    T, d = schema.num_node_types, schema.feature_dim
    means = np.zeros((T, d))
    for t in range(T):
        means[t, t % d] = TYPE_MEAN_SCALE
    return means


def _sample_edges(rng: np.random.Generator, dist: dict, count: int) -> list[tuple[int, int, int]]:
    keys = list(dist)  # already canonically sorted
    probs = np.asarray([dist[k] for k in keys])
    probs = probs / probs.sum()
    picks = rng.choice(len(keys), size=count, p=probs)
    return [keys[int(i)] for i in picks]


def _build_graph(index: int, cfg: GeneratorConfig, kind: Optional[str]) -> HeteroGraph:
    """kind None = normal; otherwise one of the pure anomaly kinds."""
    schema = cfg.schema
    T, E, d = schema.num_node_types, schema.num_edge_types, schema.feature_dim
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(
        (cfg.seed & 0xFFFFFFFFFFFFFFFF, index)
    )))

    n = max(T, int(rng.poisson(cfg.mean_nodes)))
    # First T nodes cover every type so any sampled triple has endpoints.
    tail = rng.choice(T, size=n - T, p=_node_type_weights(T)) if n > T else []
    node_types = tuple(range(T)) + tuple(int(t) for t in tail)

    m = max(1, int(rng.poisson(cfg.mean_edges)))
    triples = _sample_edges(rng, normal_triple_distribution(schema), m)

    if kind == "pair_shift":
        k = int(round(PAIR_SHIFT_FRACTION * m))
        if k > 0:
            slots = rng.choice(m, size=k, replace=False)
            shifted = _sample_edges(rng, shifted_triple_distribution(schema), k)
            for slot, new in zip(slots, shifted):
                triples[int(slot)] = new
    elif kind == "edge_type_shift":
        triples = [(ts, td, (te + 1) % E) for ts, td, te in triples]

    by_type: dict[int, np.ndarray] = {}
    arr_types = np.asarray(node_types)
    for t in range(T):
        by_type[t] = np.flatnonzero(arr_types == t)
    edges = []
    edge_types = []
    for ts, td, te in triples:
        src = int(by_type[ts][rng.integers(len(by_type[ts]))])
        dst = int(by_type[td][rng.integers(len(by_type[td]))])
        edges.append((src, dst))
        edge_types.append(te)

    means = _type_means(schema)
    if kind == "feature_shift":
        means = means.copy()
        means[0] += FEATURE_SHIFT_SIGMAS
    feats = means[arr_types] + rng.standard_normal((n, d))

    return HeteroGraph(
        graph_id=f"g{index:05d}",
        node_types=node_types,
        node_features=feats,
        edges=tuple(edges),
        edge_types=tuple(edge_types),
        label=0 if kind is None else 1,
    )


def generate(config: GeneratorConfig) -> Dataset:
    """Produce num_graphs graphs; the last round(fraction * num) are anomalous."""
    n_anom = int(round(config.anomaly_fraction * config.num_graphs))
    first_anom = config.num_graphs - n_anom
    if n_anom > 0 and config.anomaly_kind in ("pair_shift", "pair_feature_mix"):
        shifted_triple_distribution(config.schema)  # fail fast if infeasible
    graphs = []
    for i in range(config.num_graphs):
        if i < first_anom:
            kind = None
        elif config.anomaly_kind == "pair_feature_mix":
            kind = "pair_shift" if (i - first_anom) % 2 == 0 else "feature_shift"
        else:
            kind = config.anomaly_kind
        graphs.append(_build_graph(i, config, kind))
    return Dataset(schema=config.schema, graphs=tuple(graphs))
