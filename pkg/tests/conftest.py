import numpy as np
import pytest

from hrgad.hetgraph import GraphSchema, HeteroGraph


@pytest.fixture
def schema2() -> GraphSchema:
    return GraphSchema(num_node_types=2, num_edge_types=2, feature_dim=2)


@pytest.fixture
def g3() -> HeteroGraph:
    """Three nodes (types A, B, A) with two typed edges converging on node 1."""
    return HeteroGraph(
        graph_id="g3",
        node_types=(0, 1, 0),
        node_features=np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]),
        edges=((0, 1), (2, 1)),
        edge_types=(0, 1),
        label=0,
    )
