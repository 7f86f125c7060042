import numpy as np
import pytest

from hrgad.hetgraph import (GraphSchema, HeteroGraph, degrees, neighbors,
                            type_histograms, validate)
from oracles import permute_graph, random_graph


def test_g3_validates_clean(g3, schema2):
    assert validate(g3, schema2) == []


def test_validate_names_each_violation(schema2):
    g = HeteroGraph(
        graph_id="bad",
        node_types=(0, 5),
        node_features=np.zeros((2, 3)),
        edges=((0, 7), (1, 0)),
        edge_types=(9,),
        label=2,
    )
    report = validate(g, schema2)
    joined = "\n".join(report)
    assert "node 1" in joined and "type id 5" in joined
    assert "dst index 7" in joined
    assert "edge_types length 1" in joined
    assert "feature dim 3" in joined
    assert "label 2" in joined


def test_validate_feature_row_count(schema2):
    g = HeteroGraph("rows", (0, 1), np.zeros((3, 2)), (), ())
    report = validate(g, schema2)
    assert any("rows" in v and "node_count=2" in v for v in report)


def test_validate_edge_type_range(schema2):
    g = HeteroGraph("et", (0,), np.zeros((1, 2)), ((0, 0),), (3,))
    assert any("type id 3" in v for v in validate(g, schema2))


def test_degrees_g3(g3):
    assert degrees(g3).tolist() == [1.0, 3.0, 1.0]


def test_degrees_count_duplicate_edges(g3):
    doubled = HeteroGraph(
        graph_id="g3dup",
        node_types=g3.node_types,
        node_features=g3.node_features,
        edges=g3.edges + ((0, 1),),
        edge_types=g3.edge_types + (0,),
    )
    assert degrees(doubled).tolist() == [1.0, 4.0, 1.0]


def test_neighbors_g3(g3):
    assert neighbors(g3, 1) == [(0, 0), (2, 1)]
    assert neighbors(g3, 0) == []
    assert neighbors(g3, 2) == []


def test_neighbors_index_error(g3):
    with pytest.raises(IndexError):
        neighbors(g3, 3)
    with pytest.raises(IndexError):
        neighbors(g3, -1)


def test_degrees_permutation_equivariant():
    rng = np.random.default_rng(7)
    schema = GraphSchema(3, 2, 4)
    for _ in range(25):
        g = random_graph(rng, schema, max_nodes=12, min_nodes=2)
        perm = rng.permutation(g.node_count)
        d = degrees(g)
        dp = degrees(permute_graph(g, perm))
        assert np.array_equal(dp[perm], d)


def test_type_histograms_g3(g3):
    h = type_histograms([g3])
    assert h.pair_probs == {(0, 1): 1.0}
    assert h.edge_type_probs == {0: 0.5, 1: 0.5}
    assert h.triple_probs == {(0, 1, 0): 0.5, (0, 1, 1): 0.5}


def test_type_histograms_empty_corpus_raises(schema2):
    lone = HeteroGraph("lone", (0,), np.zeros((1, 2)), (), ())
    with pytest.raises(ValueError):
        type_histograms([lone])


def test_type_histograms_marginals_consistent():
    rng = np.random.default_rng(11)
    schema = GraphSchema(4, 3, 2)
    graphs = [random_graph(rng, schema, max_nodes=15, min_nodes=2, min_edges=1,
                           graph_id=f"h{i}") for i in range(10)]
    h = type_histograms(graphs)
    assert abs(sum(h.triple_probs.values()) - 1.0) <= 1e-9
    for (ts, td), p in h.pair_probs.items():
        total = sum(v for (a, b, _), v in h.triple_probs.items() if (a, b) == (ts, td))
        assert abs(total - p) <= 1e-9
    for te, p in h.edge_type_probs.items():
        total = sum(v for (_, _, e), v in h.triple_probs.items() if e == te)
        assert abs(total - p) <= 1e-9


def test_type_histograms_pool_across_graphs(g3):
    other = HeteroGraph("g1", (1, 1), np.zeros((2, 2)), ((0, 1), (1, 0)), (0, 0))
    h = type_histograms([g3, other])
    assert h.triple_probs[(1, 1, 0)] == pytest.approx(0.5)
    assert h.edge_type_probs[0] == pytest.approx(0.75)


def test_features_are_immutable(g3):
    with pytest.raises((ValueError, RuntimeError)):
        g3.node_features[0, 0] = 9.0
