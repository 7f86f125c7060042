"""Distribution-aware graph corruption operators for the self-supervised branch.

Four operators, composable in a fixed order: edge perturbation (paired
remove/add realizing a sparse adjacency XOR), edge replacement (adds rare
type-triples, removes from crowded ones, edge count preserved), node-type swap
and edge-type swap. All draw from caller-supplied seeded streams, so identical
(graph, config, seed) reproduce bitwise-identical outputs; per-graph streams
derive from (run seed, purpose, epoch, graph id) and may run concurrently.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, replace

import numpy as np

from .hetgraph import HeteroGraph, TypeHistograms


@dataclass(frozen=True)
class AugmentConfig:
    """Intensities of the four operators; all proportions in [0, 1]."""

    p_perturb: float = 0.0
    p_replace: float = 0.0
    p_node_swap: float = 0.0
    p_edge_swap: float = 0.0
    enabled: bool = False

    def __post_init__(self) -> None:
        for name in ("p_perturb", "p_replace", "p_node_swap", "p_edge_swap"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")


def graph_stream(seed: int, purpose: int, epoch: int, graph_id: str) -> np.random.Generator:
    """Deterministic per-graph substream of the run seed.

    purpose separates independent uses (0 = train augmentation, 1 = val
    augmentation); the graph id enters through a stable CRC so streams do not
    depend on iteration order.
    """
    key = zlib.crc32(graph_id.encode("utf-8"))
    ss = np.random.SeedSequence((seed & 0xFFFFFFFFFFFFFFFF, purpose, epoch, key))
    return np.random.Generator(np.random.PCG64(ss))


def _nodes_by_type(graph: HeteroGraph) -> dict[int, np.ndarray]:
    by_type: dict[int, list[int]] = {}
    for i, t in enumerate(graph.node_types):
        by_type.setdefault(t, []).append(i)
    return {t: np.asarray(v, dtype=np.intp) for t, v in by_type.items()}


def _weighted_pick(rng: np.random.Generator, keys: list, probs: np.ndarray):
    probs = probs / probs.sum()
    return keys[int(rng.choice(len(keys), p=probs))]


def edge_perturb(graph: HeteroGraph, histograms: TypeHistograms, p: float,
                 rng: np.random.Generator) -> HeteroGraph:
    """Sparse adjacency XOR: remove k = round(p*|E|) edges, add up to k new ones.

    Each addition samples endpoint types from the corpus pair distribution and
    the edge type independently from the edge-type marginal, then concrete
    endpoints uniformly within the sampled types. A directed cell occupied in
    the original graph (XOR can flip a cell once, so removal does not free it)
    or by an earlier addition forces a resample; after 100 attempts the
    addition is skipped. Nodes and features are untouched.
    """
    k = int(round(p * graph.edge_count))
    if k == 0:
        return graph

    removed = set(int(i) for i in rng.choice(graph.edge_count, size=k, replace=False))
    kept = [e for i, e in enumerate(zip(graph.edges, graph.edge_types)) if i not in removed]

    blocked = {(s, d) for s, d in graph.edges}
    by_type = _nodes_by_type(graph)
    pair_keys = sorted(histograms.pair_probs)
    pair_probs = np.asarray([histograms.pair_probs[key] for key in pair_keys])
    et_keys = sorted(histograms.edge_type_probs)
    et_probs = np.asarray([histograms.edge_type_probs[key] for key in et_keys])

    added: list[tuple[tuple[int, int], int]] = []
    for _ in range(k):
        for _attempt in range(100):
            ts, td = _weighted_pick(rng, pair_keys, pair_probs)
            te = _weighted_pick(rng, et_keys, et_probs)
            src_pool = by_type.get(ts)
            dst_pool = by_type.get(td)
            if src_pool is None or dst_pool is None:
                continue  # sampled a type this graph does not carry
            src = int(src_pool[rng.integers(len(src_pool))])
            dst = int(dst_pool[rng.integers(len(dst_pool))])
            if (src, dst) in blocked:
                continue
            blocked.add((src, dst))
            added.append(((src, dst), te))
            break

    new_edges = tuple(e for e, _ in kept) + tuple(e for e, _ in added)
    new_types = tuple(t for _, t in kept) + tuple(t for _, t in added)
    return replace(graph, edges=new_edges, edge_types=new_types)


def edge_replace(graph: HeteroGraph, histograms: TypeHistograms, p: float,
                 rng: np.random.Generator) -> HeteroGraph:
    """Swap k = round(p*|E|) edges toward infrequent type-triples, |E| preserved.

    Additions sample a (src_type, dst_type, edge_type) bucket with probability
    proportional to 1/P(bucket) over buckets with nonzero corpus prior whose
    endpoint types exist in this graph; endpoints are uniform within types.
    Removals repeatedly take one uniform edge from the currently most-populated
    bucket of the original edge set (ties to the smallest bucket key).
    """
    if graph.edge_count == 0:
        raise ValueError("edge_replace: graph has no edges")
    k = int(round(p * graph.edge_count))
    if k == 0:
        return graph

    by_type = _nodes_by_type(graph)
    feasible = sorted(
        key for key, prob in histograms.triple_probs.items()
        if prob > 0.0 and key[0] in by_type and key[1] in by_type
    )
    if not feasible:
        return graph
    inv = np.asarray([1.0 / histograms.triple_probs[key] for key in feasible])

    added: list[tuple[tuple[int, int], int]] = []
    for _ in range(k):
        ts, td, te = _weighted_pick(rng, feasible, inv)
        src = int(by_type[ts][rng.integers(len(by_type[ts]))])
        dst = int(by_type[td][rng.integers(len(by_type[td]))])
        added.append(((src, dst), te))

    # Removal pass over the original edges only.
    bucket_of = [
        (graph.node_types[s], graph.node_types[d], te)
        for (s, d), te in zip(graph.edges, graph.edge_types)
    ]
    remaining: dict[tuple[int, int, int], list[int]] = {}
    for i, b in enumerate(bucket_of):
        remaining.setdefault(b, []).append(i)
    removed: set[int] = set()
    for _ in range(k):
        top = max(sorted(remaining), key=lambda b: len(remaining[b]))
        pool = remaining[top]
        pick = pool.pop(int(rng.integers(len(pool))))
        removed.add(pick)
        if not pool:
            del remaining[top]

    kept = [e for i, e in enumerate(zip(graph.edges, graph.edge_types)) if i not in removed]
    new_edges = tuple(e for e, _ in kept) + tuple(e for e, _ in added)
    new_types = tuple(t for _, t in kept) + tuple(t for _, t in added)
    return replace(graph, edges=new_edges, edge_types=new_types)


def swap_node_types(graph: HeteroGraph, p: float, rng: np.random.Generator) -> HeteroGraph:
    """Swap type labels a<->b for ceil(p*|V_a|) and ceil(p*|V_b|) random nodes.

    The unordered pair (a, b) is uniform among type pairs both present in the
    graph. Nodes, edges and features are untouched (labels only).
    """
    by_type = _nodes_by_type(graph)
    present = sorted(by_type)
    if len(present) < 2:
        raise ValueError("swap_node_types: fewer than 2 node types present")
    pairs = [(a, b) for i, a in enumerate(present) for b in present[i + 1:]]
    a, b = pairs[int(rng.integers(len(pairs)))]

    new_types = list(graph.node_types)
    for src_t, dst_t in ((a, b), (b, a)):
        pool = by_type[src_t]
        n_swap = int(np.ceil(p * len(pool)))
        if n_swap == 0:
            continue
        chosen = rng.choice(len(pool), size=n_swap, replace=False)
        for i in chosen:
            new_types[int(pool[int(i)])] = dst_t
    return replace(graph, node_types=tuple(new_types))


def swap_edge_types(graph: HeteroGraph, p: float, rng: np.random.Generator) -> HeteroGraph:
    """Mirror of swap_node_types over edge-type labels."""
    by_type: dict[int, list[int]] = {}
    for i, t in enumerate(graph.edge_types):
        by_type.setdefault(t, []).append(i)
    present = sorted(by_type)
    if len(present) < 2:
        raise ValueError("swap_edge_types: fewer than 2 edge types present")
    pairs = [(a, b) for i, a in enumerate(present) for b in present[i + 1:]]
    a, b = pairs[int(rng.integers(len(pairs)))]

    new_types = list(graph.edge_types)
    for src_t, dst_t in ((a, b), (b, a)):
        pool = by_type[src_t]
        n_swap = int(np.ceil(p * len(pool)))
        if n_swap == 0:
            continue
        chosen = rng.choice(len(pool), size=n_swap, replace=False)
        for i in chosen:
            new_types[pool[int(i)]] = dst_t
    return replace(graph, edge_types=tuple(new_types))


def augment(graph: HeteroGraph, histograms: TypeHistograms, config: AugmentConfig,
            rng: np.random.Generator) -> HeteroGraph:
    """Compose the four operators in fixed order: perturb, replace, node swap, edge swap.

    Operators whose precondition fails on the current intermediate graph
    (no edges, fewer than two types present) are skipped silently; the output
    always validates against the input schema.
    """
    if not config.enabled:
        raise ValueError("augment called with config.enabled=False")
    g = edge_perturb(graph, histograms, config.p_perturb, rng)
    if g.edge_count >= 1:
        g = edge_replace(g, histograms, config.p_replace, rng)
    if len(set(g.node_types)) >= 2:
        g = swap_node_types(g, config.p_node_swap, rng)
    if len(set(g.edge_types)) >= 2:
        g = swap_edge_types(g, config.p_edge_swap, rng)
    return g
