import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xgbd.graphs import (
    Graph,
    TuLexicalError,
    TuMissingFileError,
    TuStructuralError,
    articulation_points,
    connected_components,
    degree_bucket_features,
    erdos_renyi,
    induced_subgraph,
    is_connected,
    neighbor_set,
    one_hot_features,
    parse_tu_dataset,
    subset_is_connected,
    write_tu_dataset,
)

from conftest import make_graph, random_graph


# --- Graph container ----------------------------------------------------------


def test_graph_canonicalizes_edges():
    g = make_graph(3, [(2, 0), (0, 2), (1, 0)])
    assert g.edges == ((0, 1), (0, 2))


def test_graph_rejects_self_loop():
    with pytest.raises(ValueError, match="self-loop"):
        make_graph(3, [(1, 1)])


def test_graph_rejects_out_of_range_edge():
    with pytest.raises(ValueError, match="out of range"):
        make_graph(3, [(0, 3)])


def test_graph_rejects_bad_feature_shape():
    with pytest.raises(ValueError, match="node_features"):
        Graph(num_nodes=3, edges=(), node_features=np.ones((2, 4)))


def test_features_read_only(triangle):
    with pytest.raises(ValueError):
        triangle.node_features[0, 0] = 5.0


# --- feature encodings ----------------------------------------------------------


def test_one_hot_basic():
    assert one_hot_features([0, 2], 3).tolist() == [[1, 0, 0], [0, 0, 1]]


def test_one_hot_empty():
    out = one_hot_features([], 3)
    assert out.shape == (0, 3)


def test_one_hot_out_of_range():
    with pytest.raises(ValueError):
        one_hot_features([3], 3)


def test_mutag_node_label_vocab_is_7(mutag):
    # independent count straight from the raw file
    raw = {int(l) for l in open("data/MUTAG/MUTAG_node_labels.txt") if l.strip()}
    assert len(raw) == 7
    assert mutag.feature_dim == 7


def test_degree_buckets_cap():
    out = degree_bucket_features([0, 3, 10, 25])
    assert out.shape == (4, 11)
    assert out[2].tolist() == out[3].tolist()  # both land in the open bucket


# --- induced subgraph -----------------------------------------------------------


def test_induced_identity(triangle):
    sub = induced_subgraph(triangle, range(3))
    assert sub.edges == triangle.edges
    assert np.array_equal(sub.node_features, triangle.node_features)


def test_induced_triangle_pair(triangle):
    sub = induced_subgraph(triangle, {0, 1})
    assert sub.num_nodes == 2
    assert sub.edges == ((0, 1),)


def test_induced_path_endpoints(path4):
    sub = induced_subgraph(path4, {0, 3})
    assert sub.num_nodes == 2
    assert sub.edges == ()


def test_induced_preserves_ascending_order():
    g = make_graph(5, [(0, 4), (1, 4)], seed=3)
    sub = induced_subgraph(g, {4, 0})
    assert np.array_equal(sub.node_features[0], g.node_features[0])
    assert np.array_equal(sub.node_features[1], g.node_features[4])


def test_induced_empty_set_errors(triangle):
    with pytest.raises(ValueError):
        induced_subgraph(triangle, set())


@given(st.integers(0, 2**31 - 1), st.integers(2, 9))
@settings(max_examples=60, deadline=None)
def test_induced_full_set_preserves_edge_count(seed, n):
    g = random_graph(np.random.default_rng(seed), n)
    assert induced_subgraph(g, range(n)).num_edges == g.num_edges


# --- neighbor sets ---------------------------------------------------------------


def test_neighbor_path_center():
    g = make_graph(3, [(0, 1), (1, 2)])
    assert neighbor_set(g, {1}) == {0, 2}


def test_neighbor_isolated():
    g = make_graph(1, [])
    assert neighbor_set(g, {0}) == frozenset()


def test_neighbor_triangle_pair(triangle):
    assert neighbor_set(triangle, {0, 1}) == {0, 1, 2}


@given(st.integers(0, 2**31 - 1), st.integers(2, 8))
@settings(max_examples=60, deadline=None)
def test_neighbor_monotone(seed, n):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n)
    t = set(rng.choice(n, size=rng.integers(1, n + 1), replace=False).tolist())
    s = set(list(t)[: max(1, len(t) // 2)])
    assert neighbor_set(g, s) <= neighbor_set(g, t)


# --- connectivity helpers ---------------------------------------------------------


def test_components_split():
    g = make_graph(5, [(0, 1), (2, 3)])
    assert connected_components(g) == [(0, 1), (2, 3), (4,)]


def test_subset_connectivity(path4):
    assert subset_is_connected(path4, {0, 1, 2})
    assert not subset_is_connected(path4, {0, 2})


@given(st.integers(0, 2**31 - 1), st.integers(2, 9))
@settings(max_examples=60, deadline=None)
def test_articulation_points_match_bruteforce(seed, n):
    g = random_graph(np.random.default_rng(seed), n, p=0.4)
    comps = connected_components(g)
    comp = max(comps, key=len)
    if len(comp) < 2:
        return
    cuts = articulation_points(g, comp)
    for v in comp:
        rest = set(comp) - {v}
        stays_connected = subset_is_connected(g, rest)
        assert (v in cuts) == (not stays_connected)


# --- Erdos-Renyi generator ---------------------------------------------------------


def test_er_full_density():
    assert erdos_renyi(3, 1.0, 0).num_edges == 3


def test_er_zero_density():
    assert erdos_renyi(4, 0.0, 0).num_edges == 0


def test_er_too_small():
    with pytest.raises(ValueError):
        erdos_renyi(1, 0.5, 0)


def test_er_deterministic():
    assert erdos_renyi(6, 0.5, 42).edges == erdos_renyi(6, 0.5, 42).edges


def test_er_mean_edges_and_per_edge_frequency():
    # Monte-Carlo oracle: n=4, d=0.8 -> expected edge count 6 * 0.8 = 4.8
    d = 0.8
    counts = np.zeros(10_000)
    freq = {}
    for s in range(10_000):
        g = erdos_renyi(4, d, s)
        counts[s] = g.num_edges
        for e in g.edges:
            freq[e] = freq.get(e, 0) + 1
    assert abs(counts.mean() - 4.8) < 0.1
    assert len(freq) == 6
    for e, c in freq.items():
        assert abs(c / 10_000 - d) < 0.02, e


# --- TU parsing -----------------------------------------------------------------


def write_fixture(tmp_path, name, a_lines, indicator, labels, node_labels=None):
    (tmp_path / f"{name}_A.txt").write_text("".join(a_lines))
    (tmp_path / f"{name}_graph_indicator.txt").write_text(
        "".join(f"{i}\n" for i in indicator))
    (tmp_path / f"{name}_graph_labels.txt").write_text(
        "".join(f"{l}\n" for l in labels))
    if node_labels is not None:
        (tmp_path / f"{name}_node_labels.txt").write_text(
            "".join(f"{l}\n" for l in node_labels))


def test_parse_triangle_fixture(tmp_path):
    # one triangle listed as 6 directed lines
    lines = ["1, 2\n", "2, 1\n", "2, 3\n", "3, 2\n", "1, 3\n", "3, 1\n"]
    write_fixture(tmp_path, "tri", lines, [1, 1, 1], [5], [0, 1, 0])
    ds = parse_tu_dataset(tmp_path, "tri")
    assert len(ds) == 1
    assert ds.graphs[0].num_edges == 3
    assert ds.num_classes == 1
    assert ds.parse_warnings == 0


def test_parse_tolerates_crlf_and_padding(tmp_path):
    lines = ["1, 2 \r\n", " 2,1\r\n"]
    write_fixture(tmp_path, "x", lines, [1, 1], [0])
    ds = parse_tu_dataset(tmp_path, "x")
    assert ds.graphs[0].edges == ((0, 1),)


def test_parse_one_directional_edge_warns(tmp_path):
    write_fixture(tmp_path, "x", ["1, 2\n"], [1, 1], [0])
    ds = parse_tu_dataset(tmp_path, "x")
    assert ds.graphs[0].edges == ((0, 1),)
    assert ds.parse_warnings == 1


def test_parse_missing_file(tmp_path):
    write_fixture(tmp_path, "x", ["1, 2\n", "2, 1\n"], [1, 1], [0])
    (tmp_path / "x_graph_labels.txt").unlink()
    with pytest.raises(TuMissingFileError, match="x_graph_labels.txt"):
        parse_tu_dataset(tmp_path, "x")


def test_parse_unknown_node_in_edge(tmp_path):
    write_fixture(tmp_path, "x", ["1, 9\n"], [1, 1], [0])
    with pytest.raises(TuStructuralError, match="9"):
        parse_tu_dataset(tmp_path, "x")


def test_parse_non_integer_token_names_line(tmp_path):
    write_fixture(tmp_path, "x", ["1, 2\n", "2, oops\n"], [1, 1], [0])
    with pytest.raises(TuLexicalError, match="x_A.txt:2"):
        parse_tu_dataset(tmp_path, "x")


def test_parse_cross_graph_edge(tmp_path):
    write_fixture(tmp_path, "x", ["1, 2\n", "2, 1\n", "2, 3\n", "3, 2\n"],
                  [1, 1, 2], [0, 1])
    with pytest.raises(TuStructuralError, match="crosses"):
        parse_tu_dataset(tmp_path, "x")


def test_parse_degree_features_without_node_labels(tmp_path):
    write_fixture(tmp_path, "x", ["1, 2\n", "2, 1\n", "2, 3\n", "3, 2\n"],
                  [1, 1, 1], [0])
    ds = parse_tu_dataset(tmp_path, "x")
    assert ds.feature_dim == 11
    assert ds.graphs[0].node_features[1, 2] == 1.0  # middle node has degree 2


def test_mutag_statistics(mutag):
    assert len(mutag) == 188
    assert mutag.num_classes == 2
    assert abs(mutag.mean_num_nodes - 17.93) < 0.01
    mean_edges = np.mean([g.num_edges for g in mutag.graphs])
    assert abs(mean_edges - 19.79) < 0.01


def test_enzymes_statistics():
    ds = parse_tu_dataset("data/ENZYMES", "ENZYMES")
    assert len(ds) == 600
    assert ds.num_classes == 6
    assert abs(ds.mean_num_nodes - 32.63) < 0.01


# --- round-trip ------------------------------------------------------------------


def _normalized(path):
    text = path.read_text()
    return [line.replace(" ", "").replace("\t", "") for line in text.strip().splitlines()]


def test_mutag_round_trip_semantic_and_bytes(tmp_path, mutag):
    write_tu_dataset(mutag, tmp_path)
    again = parse_tu_dataset(tmp_path, "MUTAG")
    assert len(again) == len(mutag)
    for a, b in zip(mutag.graphs, again.graphs):
        assert a == b
    for suffix in ("A", "graph_indicator", "graph_labels", "node_labels"):
        from pathlib import Path
        orig = Path(f"data/MUTAG/MUTAG_{suffix}.txt")
        new = tmp_path / f"MUTAG_{suffix}.txt"
        assert _normalized(orig) == _normalized(new), suffix


def test_round_trip_without_memo(tmp_path, mutag):
    # a modified dataset loses the memo but still round-trips semantically
    ds = mutag.with_graphs(mutag.graphs)
    assert ds.source_edge_lines is None
    write_tu_dataset(ds, tmp_path, "M2")
    again = parse_tu_dataset(tmp_path, "M2")
    for a, b in zip(ds.graphs, again.graphs):
        assert a == b
