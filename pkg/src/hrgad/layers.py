"""Graph-convolution variants and the model trunk.

Every variant is one aggregation rule over incoming messages, normalized by
1/(sqrt(deg_dst) * sqrt(deg_src)) with deg = in-degree + 1:

- gcn:        one shared transform, self-loop folded into the aggregation
- hetgcn:     messages bucketed by source node type
- hrgcn_sdr:  messages bucketed by the ordered (source type, dest type) pair
- hrgcn_er:   messages bucketed by edge type
- hrgcn_r2:   messages bucketed by the (source type, dest type, edge type)
              triple; by default the edge-type transform composes on top of
              the pair transform, independent per-triple matrices behind
              ModelConfig.independent_triples

Typed variants transform each bucket's sum with that bucket's matrix, lay the
results out in a fixed canonical slot order (absent buckets are zero), and mix
the concatenation down to hidden width through mix_weight, adding a transformed
self term and a bias before the relu. The mix never materializes the concat:
each populated slot multiplies its own row-block of mix_weight and the block
products are summed in canonical order, which is the same linear map.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .augment import AugmentConfig
from .hetgraph import GraphSchema, HeteroGraph, degrees
from .numerics import Param, ShapeError, Tape

VARIANTS = ("gcn", "hetgcn", "hrgcn_er", "hrgcn_sdr", "hrgcn_r2")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and training hyperparameters.

    The full model is variant hrgcn_r2 with augmentation enabled; variant
    and augmentation toggle independently (ablation flags).
    """

    variant: str = "hrgcn_r2"
    hidden_dim: int = 32
    num_layers: int = 2
    rep_dim: int = 32
    ssl_weight: float = 0.0  # alpha
    reg_lambda: float = 0.0  # lambda
    learning_rate: float = 1e-3
    batch_size: int = 8
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    independent_triples: bool = False
    optimizer: str = "adam"
    max_epochs: int = 100
    patience: int = 10
    recompute_center: bool = False

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if min(self.hidden_dim, self.num_layers, self.rep_dim, self.batch_size) < 1:
            raise ValueError("hidden_dim, num_layers, rep_dim, batch_size must be >= 1")
        if self.ssl_weight < 0 or self.reg_lambda < 0 or self.learning_rate <= 0:
            raise ValueError("ssl_weight, reg_lambda must be >= 0 and learning_rate > 0")


def bucket_order(schema: GraphSchema, variant: str, independent_triples: bool = False):
    """Canonical concat order of bucket keys for a variant.

    Pairs ascend by (src_type, dst_type); triple buckets ascend by
    (edge_type, src_type, dst_type). The order fixes each bucket's slot
    position independently of any particular graph.
    """
    T, E = schema.num_node_types, schema.num_edge_types
    if variant == "hetgcn":
        return list(range(T))
    if variant == "hrgcn_sdr":
        return [(ts, td) for ts in range(T) for td in range(T)]
    if variant == "hrgcn_er":
        return list(range(E))
    if variant == "hrgcn_r2":
        return [(ts, td, te) for te in range(E) for ts in range(T) for td in range(T)]
    raise ValueError(f"variant {variant!r} has no buckets")


@dataclass
class LayerParams:
    """One layer's weight bank; only the fields the variant uses are populated."""

    node: dict[int, Param] = field(default_factory=dict)  # hetgcn
    pair: dict[tuple[int, int], Param] = field(default_factory=dict)  # sdr, r2 composed
    edge: dict[int, Param] = field(default_factory=dict)  # er, r2 composed
    triple: dict[tuple[int, int, int], Param] = field(default_factory=dict)  # r2 independent
    shared: Optional[Param] = None  # gcn
    self_w: Optional[Param] = None
    mix: Optional[Param] = None
    bias: Param = None  # type: ignore[assignment]


@dataclass
class ModelParams:
    """All trainable tensors: per-layer banks plus the two heads."""

    schema: GraphSchema
    config: ModelConfig
    layers: list[LayerParams]
    svdd_head: Param
    ssl_head_w: Param
    ssl_head_b: Param

    def all_params(self) -> list[Param]:
        """Every Param in a fixed construction order (optimizer/checkpoint order)."""
        out: list[Param] = []
        for lp in self.layers:
            out.extend(lp.node[k] for k in sorted(lp.node))
            out.extend(lp.pair[k] for k in sorted(lp.pair))
            out.extend(lp.edge[k] for k in sorted(lp.edge))
            out.extend(lp.triple[k] for k in sorted(lp.triple))
            if lp.shared is not None:
                out.append(lp.shared)
            if lp.self_w is not None:
                out.append(lp.self_w)
            if lp.mix is not None:
                out.append(lp.mix)
            out.append(lp.bias)
        out.extend([self.svdd_head, self.ssl_head_w, self.ssl_head_b])
        return out

    def weight_matrices(self) -> list[Param]:
        """Weights entering the Frobenius penalty: everything except bias vectors."""
        return [p for p in self.all_params() if not p.name.endswith("bias")]


def init_params(schema: GraphSchema, config: ModelConfig, seed: Optional[int] = None) -> ModelParams:
    """Allocate every bank fully (no lazy slots) with seeded uniform init.

    Weights draw from +-sqrt(6 / (fan_in + fan_out)); biases start at zero.
    The parameter set depends only on (schema, config), never on which type
    pairs a particular graph contains.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(
        config.seed if seed is None else seed
    )))
    h, K, T, E = config.hidden_dim, config.num_layers, schema.num_node_types, schema.num_edge_types
    variant = config.variant

    def glorot(name: str, fan_in: int, fan_out: int, shape: tuple[int, ...] = None) -> Param:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return Param(name, rng.uniform(-bound, bound, size=shape or (fan_in, fan_out)))

    layers: list[LayerParams] = []
    for k in range(1, K + 1):
        d_in = schema.feature_dim if k == 1 else h
        lp = LayerParams()
        if variant == "gcn":
            lp.shared = glorot(f"layer{k}.shared", d_in, h)
        else:
            if variant == "hetgcn":
                lp.node = {t: glorot(f"layer{k}.node.{t}", d_in, h) for t in range(T)}
            elif variant == "hrgcn_sdr":
                lp.pair = {
                    (ts, td): glorot(f"layer{k}.pair.{ts}-{td}", d_in, h)
                    for ts in range(T) for td in range(T)
                }
            elif variant == "hrgcn_er":
                lp.edge = {te: glorot(f"layer{k}.edge.{te}", d_in, h) for te in range(E)}
            elif variant == "hrgcn_r2":
                if config.independent_triples:
                    lp.triple = {
                        (ts, td, te): glorot(f"layer{k}.triple.{ts}-{td}-{te}", d_in, h)
                        for ts in range(T) for td in range(T) for te in range(E)
                    }
                else:
                    lp.pair = {
                        (ts, td): glorot(f"layer{k}.pair.{ts}-{td}", d_in, h)
                        for ts in range(T) for td in range(T)
                    }
                    lp.edge = {te: glorot(f"layer{k}.edge.{te}", h, h) for te in range(E)}
            n_slots = len(bucket_order(schema, variant, config.independent_triples))
            lp.self_w = glorot(f"layer{k}.self", d_in, h)
            lp.mix = glorot(f"layer{k}.mix", n_slots * h, h)
        lp.bias = Param(f"layer{k}.bias", np.zeros(h))
        layers.append(lp)

    svdd_head = glorot("svdd_head", h, config.rep_dim)
    ssl_head_w = glorot("ssl_head.weight", h, 1)
    ssl_head_b = Param("ssl_head.bias", np.zeros(1))
    return ModelParams(schema, config, layers, svdd_head, ssl_head_w, ssl_head_b)


# -- per-edge bucket grouping ----------------------------------------------------


def _edge_key(variant: str, ts: int, td: int, te: int):
    if variant == "hetgcn":
        return ts
    if variant == "hrgcn_sdr":
        return (ts, td)
    if variant == "hrgcn_er":
        return te
    return (ts, td, te)  # hrgcn_r2


def _group_edges(graph: HeteroGraph, variant: str, deg: np.ndarray):
    """Bucket key -> (src indices, dst indices, normalization coefs), edge order kept."""
    groups: dict = {}
    for (src, dst), te in zip(graph.edges, graph.edge_types):
        key = _edge_key(variant, graph.node_types[src], graph.node_types[dst], te)
        groups.setdefault(key, ([], [], []))
        s, d, c = groups[key]
        s.append(src)
        d.append(dst)
        c.append(1.0 / (np.sqrt(deg[dst]) * np.sqrt(deg[src])))
    return {
        k: (np.asarray(s, dtype=np.intp), np.asarray(d, dtype=np.intp), np.asarray(c))
        for k, (s, d, c) in groups.items()
    }


def _bucket_transform(tape: Tape, lp: LayerParams, variant: str,
                      independent: bool, key, agg: int) -> int:
    """Apply the bucket's own transform phi to an aggregated message block."""
    if variant == "hetgcn":
        return tape.matmul(agg, tape.param(lp.node[key]))
    if variant == "hrgcn_sdr":
        return tape.matmul(agg, tape.param(lp.pair[key]))
    if variant == "hrgcn_er":
        return tape.matmul(agg, tape.param(lp.edge[key]))
    ts, td, te = key
    if independent:
        return tape.matmul(agg, tape.param(lp.triple[key]))
    # composed form: edge-type transform applied on top of the pair transform
    paired = tape.matmul(agg, tape.param(lp.pair[(ts, td)]))
    return tape.matmul(paired, tape.param(lp.edge[te]))


def _typed_layer(graph: HeteroGraph, x: int, params: ModelParams, k: int,
                 tape: Tape, variant: str, premix: Optional[dict] = None) -> int:
    """Shared body of the typed variants; k is 1-based.

    premix, when given, collects the inspection view of the layer:
    premix["slots"][key] for every canonical bucket (zeros when absent),
    premix["self"] and premix["bias"]. These are the pre-mixing quantities
    the masking and degeneracy properties quantify over.
    """
    lp = params.layers[k - 1]
    schema = params.schema
    h = params.config.hidden_dim
    N = graph.node_count
    deg = degrees(graph)
    independent = params.config.independent_triples
    order = bucket_order(schema, variant, independent)
    groups = _group_edges(graph, variant, deg)

    slots: list[int] = []
    positions: list[int] = []
    for pos, key in enumerate(order):
        if key not in groups:
            if premix is not None:
                premix.setdefault("slots", {})[key] = np.zeros((N, h))
            continue
        src, dst, coef = groups[key]
        agg = tape.edge_aggregate(x, src, dst, coef, N)
        slot = _bucket_transform(tape, lp, variant, independent, key, agg)
        if premix is not None:
            premix.setdefault("slots", {})[key] = tape.value(slot).copy()
        slots.append(slot)
        positions.append(pos)

    # Self term: the j = i element of the aggregation set, normalized by
    # 1/deg(i) (= the self-loop's own pair normalization) and given its own
    # transform instead of a typed bucket.
    idx = np.arange(N, dtype=np.intp)
    self_in = tape.edge_aggregate(x, idx, idx, 1.0 / deg, N)
    self_h = tape.matmul(self_in, tape.param(lp.self_w))
    if premix is not None:
        premix["self"] = tape.value(self_h).copy()
        premix["bias"] = lp.bias.value.copy()

    # Mixing: concatenated present slots times the matching block rows of the
    # mix weight. Absent buckets contribute exactly zero, so their blocks are
    # skipped rather than multiplied against zeros.
    if slots:
        stacked = tape.concat_cols(slots)
        row_index = np.concatenate(
            [np.arange(p * h, (p + 1) * h, dtype=np.intp) for p in positions])
        blocks = tape.gather_rows(tape.param(lp.mix), row_index)
        total = tape.add(self_h, tape.matmul(stacked, blocks))
    else:
        total = self_h
    total = tape.add(total, tape.param(lp.bias))
    return tape.relu(total)


# -- public layer ops ---------------------------------------------------------------


def gcn_layer(graph: HeteroGraph, x: int, params: ModelParams, k: int, tape: Tape) -> int:
    """Plain GCN aggregation: x_i' = sum over N(i)|{i} of normalized w^T x_j, + b.

    Linear (no activation); model_forward adds the hidden relu between layers.
    Self-loop coefficient is 1/deg(i) exactly (not sqrt(d)*sqrt(d), which
    differs in the last ulp).
    """
    lp = params.layers[k - 1]
    N = graph.node_count
    deg = degrees(graph)
    src = np.fromiter((s for s, _ in graph.edges), dtype=np.intp, count=len(graph.edges))
    dst = np.fromiter((d for _, d in graph.edges), dtype=np.intp, count=len(graph.edges))
    coef = 1.0 / (np.sqrt(deg[dst]) * np.sqrt(deg[src])) if len(graph.edges) else np.zeros(0)
    idx = np.arange(N, dtype=np.intp)
    src = np.concatenate([src, idx])
    dst = np.concatenate([dst, idx])
    coef = np.concatenate([coef, 1.0 / deg])
    agg = tape.edge_aggregate(x, src, dst, coef, N)
    out = tape.matmul(agg, tape.param(lp.shared))
    return tape.add(out, tape.param(lp.bias))


def hetgcn_layer(graph: HeteroGraph, x: int, params: ModelParams, k: int,
                 tape: Tape, premix: Optional[dict] = None) -> int:
    """Messages grouped by source node type, per-type transforms, mix + relu."""
    return _typed_layer(graph, x, params, k, tape, "hetgcn", premix)


def hrgcn_sdr_layer(graph: HeteroGraph, x: int, params: ModelParams, k: int,
                    tape: Tape, premix: Optional[dict] = None) -> int:
    """Messages bucketed by the ordered (source type, dest type) pair."""
    return _typed_layer(graph, x, params, k, tape, "hrgcn_sdr", premix)


def hrgcn_er_layer(graph: HeteroGraph, x: int, params: ModelParams, k: int,
                   tape: Tape, pairs_enabled: bool = False,
                   premix: Optional[dict] = None) -> int:
    """Edge-type buckets (pairs_enabled=False) or full triples (pairs_enabled=True)."""
    return _typed_layer(graph, x, params, k, tape,
                        "hrgcn_r2" if pairs_enabled else "hrgcn_er", premix)


def readout(tape: Tape, x: int) -> int:
    """Elementwise max over node rows; argmax recorded for gradient routing."""
    if tape.value(x).shape[0] < 1:
        raise ValueError("readout: empty graph")
    return tape.rowmax(x)


def layer_apply(graph: HeteroGraph, x: int, params: ModelParams, k: int,
                tape: Tape, premix: Optional[dict] = None) -> int:
    """Apply layer k of the configured variant, including the hidden relu."""
    variant = params.config.variant
    if variant == "gcn":
        return tape.relu(gcn_layer(graph, x, params, k, tape))
    if variant == "hetgcn":
        return hetgcn_layer(graph, x, params, k, tape, premix)
    if variant == "hrgcn_sdr":
        return hrgcn_sdr_layer(graph, x, params, k, tape, premix)
    if variant == "hrgcn_er":
        return hrgcn_er_layer(graph, x, params, k, tape, False, premix)
    return hrgcn_er_layer(graph, x, params, k, tape, True, premix)


def model_forward(graph: HeteroGraph, params: ModelParams, config: ModelConfig,
                  tape: Tape) -> tuple[int, int]:
    """K layers of the configured variant, max readout, then the two heads.

    Returns record ids (svdd_embedding, ssl_prob): the rep_dim embedding read
    by the one-class objective and the sigmoid probability of "augmented",
    clamped into [1e-7, 1 - 1e-7] so downstream logs stay finite.
    """
    if graph.node_count < 1:
        raise ValueError("model_forward: empty graph")
    if graph.node_features.shape[1] != params.schema.feature_dim:
        raise ShapeError(
            f"model_forward: graph feature dim {graph.node_features.shape[1]} "
            f"!= schema feature dim {params.schema.feature_dim}"
        )
    x = tape.const(graph.node_features)
    for k in range(1, config.num_layers + 1):
        x = layer_apply(graph, x, params, k, tape)
    pooled = readout(tape, x)
    emb = tape.matmul(pooled, tape.param(params.svdd_head))
    logit = tape.add(tape.matmul(pooled, tape.param(params.ssl_head_w)),
                     tape.param(params.ssl_head_b))
    prob = tape.clip(tape.sigmoid(logit), 1e-7, 1.0 - 1e-7)
    return emb, prob


def premix_parts(graph: HeteroGraph, params: ModelParams, k: int = 1,
                 x_value: Optional[np.ndarray] = None) -> dict:
    """Inspection view of layer k's pre-mixing quantities on a throwaway tape.

    Returns {"slots": {bucket key -> (N, h) array, zeros when absent},
    "self": (N, h) array, "bias": (h,)}. The degeneracy property compares
    sum(slots) + self + bias against the gcn_layer output; the masking
    property checks individual slots bitwise.
    """
    tape = Tape()
    x = tape.const(graph.node_features if x_value is None else x_value)
    premix: dict = {}
    layer_apply(graph, x, params, k, tape, premix)
    return premix
