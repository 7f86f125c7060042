"""In-memory model for attributed heterogeneous graphs.

A graph carries typed nodes with feature vectors and typed directed edges.
Edges are directed src -> dst and messages flow along them, so the
"neighbourhood" of a node means its incoming edges. Duplicate edges are
legal and contribute independently to degrees and aggregation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class GraphSchema:
    """Type universe shared by a dataset: |T_V|, |T_E| and the attribute width."""

    num_node_types: int
    num_edge_types: int
    feature_dim: int

    def __post_init__(self) -> None:
        if self.num_node_types < 1 or self.num_edge_types < 1 or self.feature_dim < 1:
            raise ValueError(
                "schema counts must be >= 1, got "
                f"({self.num_node_types}, {self.num_edge_types}, {self.feature_dim})"
            )


@dataclass(frozen=True)
class HeteroGraph:
    """One attributed heterogeneous graph.

    node_types[i] is the type id of node i, node_features[i] its attribute row.
    edges[e] = (src, dst) with edge_types[e] the edge's type id. label is 0
    (normal), 1 (anomalous) or None (unlabeled); it is only read at evaluation.
    """

    graph_id: str
    node_types: tuple[int, ...]
    node_features: np.ndarray  # (node_count, feature_dim) float64
    edges: tuple[tuple[int, int], ...]
    edge_types: tuple[int, ...]
    label: Optional[int] = None

    @property
    def node_count(self) -> int:
        return len(self.node_types)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def __post_init__(self) -> None:
        # Features are stored as an immutable float64 matrix.
        feats = np.ascontiguousarray(self.node_features, dtype=np.float64)
        feats.setflags(write=False)
        object.__setattr__(self, "node_features", feats)
        object.__setattr__(self, "node_types", tuple(int(t) for t in self.node_types))
        object.__setattr__(
            self, "edges", tuple((int(s), int(d)) for s, d in self.edges)
        )
        object.__setattr__(self, "edge_types", tuple(int(t) for t in self.edge_types))


def validate(graph: HeteroGraph, schema: GraphSchema) -> list[str]:
    """Return every schema violation as a human-readable string; empty = valid.

    Violations are data, not failures: callers decide whether to raise.
    """
    out: list[str] = []
    n = graph.node_count

    if graph.node_features.ndim != 2 or graph.node_features.shape[0] != n:
        out.append(
            f"feature matrix has {graph.node_features.shape[0] if graph.node_features.ndim == 2 else '?'}"
            f" rows, expected node_count={n}"
        )
    elif graph.node_features.shape[1] != schema.feature_dim:
        out.append(
            f"feature dim {graph.node_features.shape[1]} != schema feature_dim {schema.feature_dim}"
        )

    for i, t in enumerate(graph.node_types):
        if not 0 <= t < schema.num_node_types:
            out.append(f"node {i}: type id {t} outside [0, {schema.num_node_types})")

    if len(graph.edge_types) != len(graph.edges):
        out.append(
            f"edge_types length {len(graph.edge_types)} != edges length {len(graph.edges)}"
        )

    for e, (src, dst) in enumerate(graph.edges):
        if not 0 <= src < n:
            out.append(f"edge {e}: src index {src} outside [0, {n})")
        if not 0 <= dst < n:
            out.append(f"edge {e}: dst index {dst} outside [0, {n})")
    for e, t in enumerate(graph.edge_types[: len(graph.edges)]):
        if not 0 <= t < schema.num_edge_types:
            out.append(f"edge {e}: type id {t} outside [0, {schema.num_edge_types})")

    if graph.label not in (None, 0, 1):
        out.append(f"label {graph.label!r} not in {{0, 1, None}}")
    return out


def degrees(graph: HeteroGraph) -> np.ndarray:
    """Per-node degree: incoming edge count + 1 for the implicit self-loop.

    Duplicate edges count independently. The +1 makes the self term of the
    aggregation set N(i) | {i} well-defined and keeps every degree positive.
    """
    deg = np.ones(graph.node_count, dtype=np.float64)
    for _, dst in graph.edges:
        deg[dst] += 1.0
    return deg


def neighbors(graph: HeteroGraph, i: int) -> list[tuple[int, int]]:
    """Incoming neighbors of node i as (source index, edge type), insertion order.

    Excludes the implicit self-loop. Raises IndexError for an out-of-range node.
    """
    if not 0 <= i < graph.node_count:
        raise IndexError(f"node index {i} outside [0, {graph.node_count})")
    return [
        (src, et)
        for (src, dst), et in zip(graph.edges, graph.edge_types)
        if dst == i
    ]


@dataclass(frozen=True)
class TypeHistograms:
    """Empirical edge-type structure of a corpus, pooled over all edges.

    pair_probs is P(src_type, dst_type), edge_type_probs is P(edge_type) and
    triple_probs the joint P(src_type, dst_type, edge_type). Each map sums to 1.
    """

    pair_probs: dict[tuple[int, int], float]
    edge_type_probs: dict[int, float]
    triple_probs: dict[tuple[int, int, int], float]


def type_histograms(graphs: Iterable[HeteroGraph]) -> TypeHistograms:
    """Pool (src_type, dst_type, edge_type) frequencies over all edges of all graphs."""
    triple_counts: dict[tuple[int, int, int], int] = {}
    total = 0
    for g in graphs:
        for (src, dst), et in zip(g.edges, g.edge_types):
            key = (g.node_types[src], g.node_types[dst], et)
            triple_counts[key] = triple_counts.get(key, 0) + 1
            total += 1
    if total == 0:
        raise ValueError("cannot build type histograms from an empty edge set")

    pair: dict[tuple[int, int], float] = {}
    etype: dict[int, float] = {}
    triple: dict[tuple[int, int, int], float] = {}
    for (ts, td, te), c in triple_counts.items():
        p = c / total
        triple[(ts, td, te)] = p
        pair[(ts, td)] = pair.get((ts, td), 0.0) + p
        etype[te] = etype.get(te, 0.0) + p
    return TypeHistograms(pair_probs=pair, edge_type_probs=etype, triple_probs=triple)
