import numpy as np
import pytest

from xgbd.graphs import Dataset, Graph, parse_tu_dataset

DATA_ROOT = "data"


def make_graph(n, edges, label=0, feat_dim=3, seed=None):
    """Small helper: features are seeded noise (or ones when seed is None)."""
    if seed is None:
        feats = np.ones((n, feat_dim))
    else:
        feats = np.random.default_rng(seed).normal(size=(n, feat_dim))
    return Graph(num_nodes=n, edges=tuple(edges), node_features=feats, label=label)


def random_graph(rng, n, feat_dim=3, p=0.5, label=None):
    pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
    edges = tuple(e for e, keep in zip(pairs, rng.random(len(pairs)) < p) if keep)
    return Graph(
        num_nodes=n,
        edges=edges,
        node_features=rng.normal(size=(n, feat_dim)),
        label=int(rng.integers(0, 2)) if label is None else label,
    )


@pytest.fixture
def triangle():
    return make_graph(3, [(0, 1), (1, 2), (0, 2)])


@pytest.fixture
def path4():
    return make_graph(4, [(0, 1), (1, 2), (2, 3)])


@pytest.fixture(scope="session")
def mutag():
    return parse_tu_dataset(f"{DATA_ROOT}/MUTAG", "MUTAG")


def motif_dataset(n_per_class=5):
    """Separable toy task: triangle-with-tail (class 1) vs plain path (class 0).

    Degree-bucket features, like the real pipeline uses for unlabeled graphs.
    """
    from xgbd.graphs import degree_bucket_features

    def build(n, edges, label):
        skeleton = Graph(num_nodes=n, edges=tuple(edges),
                         node_features=np.zeros((n, 0)), label=label)
        feats = degree_bucket_features([skeleton.degree(v) for v in range(n)])
        return Graph(num_nodes=n, edges=skeleton.edges, node_features=feats,
                     label=label)

    graphs = []
    for k in range(n_per_class):
        n = 5 + k % 3
        graphs.append(build(n, [(i, i + 1) for i in range(n - 1)], 0))
    for k in range(n_per_class):
        n = 5 + k % 3
        edges = [(0, 1), (1, 2), (0, 2)] + [(i, i + 1) for i in range(2, n - 1)]
        graphs.append(build(n, edges, 1))
    return Dataset(graphs=tuple(graphs), num_classes=2, feature_dim=11,
                   name="motif")


@pytest.fixture
def toy_dataset():
    return motif_dataset()
