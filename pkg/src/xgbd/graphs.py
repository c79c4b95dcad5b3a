"""Graph containers, TU-format text datasets, and basic graph operations.

The TU text format stores a whole dataset in parallel files:

    <name>_A.txt                one directed edge "i, j" per line, 1-based
                                global node ids (undirected edges normally
                                appear in both directions)
    <name>_graph_indicator.txt  one 1-based graph id per node line
    <name>_graph_labels.txt     one integer label per graph
    <name>_node_labels.txt      one integer label per node (optional)

Graphs are exposed with 0-based per-graph node ids, deduplicated undirected
edges, dense 0-based class labels, and a node feature matrix (one-hot node
labels when the label file exists, degree buckets otherwise).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np

# Degree features use buckets 0..DEGREE_BUCKET_CAP, the last one open-ended.
DEGREE_BUCKET_CAP = 10


class TuFormatError(ValueError):
    """Malformed or inconsistent TU-format dataset files."""


class TuMissingFileError(TuFormatError):
    """A mandatory dataset file is absent."""


class TuLexicalError(TuFormatError):
    """A token that should be an integer is not; message carries file:line."""


class TuStructuralError(TuFormatError):
    """Files are individually readable but mutually inconsistent."""


@dataclass(frozen=True)
class Graph:
    """An undirected graph with per-node features and a class label.

    ``edges`` holds each undirected edge once as an ``(u, v)`` pair with
    ``u < v``; the constructor canonicalizes whatever ordering it is given.
    Instances are immutable and safe to share across workers.
    """

    num_nodes: int
    edges: tuple[tuple[int, int], ...]
    node_features: np.ndarray
    label: int = 0

    def __post_init__(self):
        canon = set()
        for u, v in self.edges:
            if u == v:
                raise ValueError(f"self-loop on node {u}")
            if not (0 <= u < self.num_nodes and 0 <= v < self.num_nodes):
                raise ValueError(f"edge ({u}, {v}) out of range for {self.num_nodes} nodes")
            canon.add((min(u, v), max(u, v)))
        object.__setattr__(self, "edges", tuple(sorted(canon)))
        feats = np.array(self.node_features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != self.num_nodes:
            raise ValueError(
                f"node_features must be ({self.num_nodes}, m), got {feats.shape}"
            )
        feats.setflags(write=False)
        object.__setattr__(self, "node_features", feats)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def feature_dim(self) -> int:
        return self.node_features.shape[1]

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        """Sorted neighbor list per node."""
        adj: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for u, v in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        return tuple(tuple(sorted(a)) for a in adj)

    @cached_property
    def adjacency(self) -> np.ndarray:
        """Dense symmetric 0/1 adjacency matrix (float64, read-only)."""
        a = np.zeros((self.num_nodes, self.num_nodes))
        for u, v in self.edges:
            a[u, v] = 1.0
            a[v, u] = 1.0
        a.setflags(write=False)
        return a

    def degree(self, v: int) -> int:
        return len(self.neighbors[v])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.num_nodes == other.num_nodes
            and self.edges == other.edges
            and self.label == other.label
            and self.node_features.shape == other.node_features.shape
            and np.array_equal(self.node_features, other.node_features)
        )

    def __hash__(self) -> int:
        return hash((self.num_nodes, self.edges, self.label))


@dataclass(frozen=True, eq=False)
class Dataset:
    """An ordered collection of graphs sharing one feature encoding.

    ``label_values`` / ``node_label_values`` keep the original file tokens
    behind the dense 0-based ids so a parsed dataset can be re-serialized
    verbatim. ``source_edge_lines`` memorizes the directed edge lines of the
    source ``_A.txt`` (global 1-based ids, file order) for the same purpose;
    it is dropped whenever graphs are modified.
    """

    graphs: tuple[Graph, ...]
    num_classes: int
    feature_dim: int
    name: str = ""
    label_values: tuple[int, ...] | None = None
    node_label_values: tuple[int, ...] | None = None
    parse_warnings: int = 0
    source_edge_lines: tuple[tuple[int, int], ...] | None = field(
        default=None, repr=False
    )

    def __post_init__(self):
        object.__setattr__(self, "graphs", tuple(self.graphs))
        for i, g in enumerate(self.graphs):
            if g.feature_dim != self.feature_dim:
                raise ValueError(
                    f"graph {i} has feature dim {g.feature_dim}, expected {self.feature_dim}"
                )
            if not (0 <= g.label < self.num_classes):
                raise ValueError(f"graph {i} label {g.label} outside [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.graphs)

    def __getitem__(self, i: int) -> Graph:
        return self.graphs[i]

    def with_graphs(self, graphs: Iterable[Graph]) -> "Dataset":
        """Copy of this dataset with replaced graphs (serialization memo dropped)."""
        return replace(self, graphs=tuple(graphs), parse_warnings=0, source_edge_lines=None)

    @property
    def mean_num_nodes(self) -> float:
        return float(np.mean([g.num_nodes for g in self.graphs]))


def one_hot_features(node_labels: Iterable[int], vocab_size: int) -> np.ndarray:
    """Row i is the indicator vector of node i's label; shape (n, vocab_size)."""
    labels = np.asarray(list(node_labels), dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= vocab_size):
        raise ValueError(f"node label outside [0, {vocab_size})")
    out = np.zeros((len(labels), vocab_size))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def degree_bucket_features(degrees: Iterable[int], cap: int = DEGREE_BUCKET_CAP) -> np.ndarray:
    """One-hot of min(degree, cap); width cap + 1. Used when node labels are absent."""
    return one_hot_features([min(d, cap) for d in degrees], cap + 1)


def induced_subgraph(g: Graph, node_set: Iterable[int]) -> Graph:
    """Subgraph on ``node_set``, renumbered compactly in ascending original-id order."""
    members = sorted(set(node_set))
    if not members:
        raise ValueError("cannot take the induced subgraph of an empty node set")
    if members[0] < 0 or members[-1] >= g.num_nodes:
        raise ValueError(f"node ids {members} invalid for graph with {g.num_nodes} nodes")
    local = {orig: i for i, orig in enumerate(members)}
    edges = tuple(
        (local[u], local[v]) for u, v in g.edges if u in local and v in local
    )
    return Graph(
        num_nodes=len(members),
        edges=edges,
        node_features=g.node_features[members],
        label=g.label,
    )


def neighbor_set(g: Graph, node_set: Iterable[int]) -> frozenset[int]:
    """Union of the neighbors of the members (members included when adjacent)."""
    out: set[int] = set()
    for v in node_set:
        if not (0 <= v < g.num_nodes):
            raise ValueError(f"node id {v} invalid for graph with {g.num_nodes} nodes")
        out.update(g.neighbors[v])
    return frozenset(out)


def connected_components(g: Graph) -> list[tuple[int, ...]]:
    """Connected components as sorted id tuples, ordered by smallest member."""
    seen: set[int] = set()
    comps = []
    for start in range(g.num_nodes):
        if start in seen:
            continue
        stack = [start]
        comp = {start}
        while stack:
            v = stack.pop()
            for u in g.neighbors[v]:
                if u not in comp:
                    comp.add(u)
                    stack.append(u)
        seen |= comp
        comps.append(tuple(sorted(comp)))
    return comps


def subset_is_connected(g: Graph, node_set: Iterable[int]) -> bool:
    """True when the induced subgraph on ``node_set`` is connected (and nonempty)."""
    members = set(node_set)
    if not members:
        return False
    start = next(iter(members))
    stack = [start]
    seen = {start}
    while stack:
        v = stack.pop()
        for u in g.neighbors[v]:
            if u in members and u not in seen:
                seen.add(u)
                stack.append(u)
    return seen == members


def is_connected(g: Graph) -> bool:
    return g.num_nodes > 0 and len(connected_components(g)) == 1


def articulation_points(g: Graph, node_set: Iterable[int]) -> set[int]:
    """Cut vertices of the induced subgraph on ``node_set`` (assumed connected).

    Removing any member NOT in the returned set keeps the rest connected.
    """
    members = set(node_set)
    if not members:
        return set()
    root = min(members)
    disc: dict[int, int] = {}
    low: dict[int, int] = {}
    parent: dict[int, int | None] = {root: None}
    cuts: set[int] = set()
    counter = 0
    # Iterative Tarjan lowlink; stack entries are (node, neighbor iterator).
    stack = [(root, iter(g.neighbors[root]))]
    disc[root] = low[root] = counter
    counter += 1
    root_children = 0
    while stack:
        v, it = stack[-1]
        advanced = False
        for u in it:
            if u not in members:
                continue
            if u not in disc:
                parent[u] = v
                disc[u] = low[u] = counter
                counter += 1
                if v == root:
                    root_children += 1
                stack.append((u, iter(g.neighbors[u])))
                advanced = True
                break
            elif u != parent[v]:
                low[v] = min(low[v], disc[u])
        if not advanced:
            stack.pop()
            p = parent[v]
            if p is not None:
                low[p] = min(low[p], low[v])
                if p != root and low[v] >= disc[p]:
                    cuts.add(p)
    if root_children > 1:
        cuts.add(root)
    return cuts


def erdos_renyi(n: int, d: float, seed) -> Graph:
    """G(n, d) random graph: each candidate edge kept independently with probability d.

    Node features are a zero-width placeholder; callers installing the graph
    somewhere meaningful assign features themselves. ``seed`` is anything
    ``numpy.random.default_rng`` accepts.
    """
    if n < 2:
        raise ValueError(f"need at least 2 nodes, got {n}")
    if not (0.0 <= d <= 1.0):
        raise ValueError(f"edge probability must be in [0, 1], got {d}")
    rng = np.random.default_rng(seed)
    pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
    keep = rng.random(len(pairs)) < d
    edges = tuple(p for p, k in zip(pairs, keep) if k)
    return Graph(num_nodes=n, edges=edges, node_features=np.zeros((n, 0)))


# --- TU-format parsing -------------------------------------------------------


def _read_lines(path: Path) -> list[tuple[int, str]]:
    """Non-blank lines with their 1-based line numbers; tolerates CRLF and padding."""
    out = []
    with open(path, "r", newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.strip()
            if text:
                out.append((lineno, text))
    return out


def _parse_int(token: str, path: Path, lineno: int) -> int:
    try:
        return int(token.strip())
    except ValueError:
        raise TuLexicalError(
            f"{path.name}:{lineno}: expected an integer, got {token.strip()!r}"
        ) from None


def _read_int_column(path: Path) -> list[int]:
    return [_parse_int(text, path, lineno) for lineno, text in _read_lines(path)]


def _read_edge_pairs(path: Path) -> list[tuple[int, int]]:
    pairs = []
    for lineno, text in _read_lines(path):
        tokens = text.split(",")
        if len(tokens) != 2:
            raise TuLexicalError(
                f"{path.name}:{lineno}: expected 'i, j', got {text!r}"
            )
        pairs.append((_parse_int(tokens[0], path, lineno), _parse_int(tokens[1], path, lineno)))
    return pairs


def _dense_remap(values: list[int]) -> tuple[list[int], tuple[int, ...]]:
    """Map arbitrary integer labels onto 0..k-1 (sorted order); returns (dense, originals)."""
    distinct = tuple(sorted(set(values)))
    index = {v: i for i, v in enumerate(distinct)}
    return [index[v] for v in values], distinct


def parse_tu_dataset(root_path, name: str) -> Dataset:
    """Load a TU-format dataset from ``root_path``.

    Node ids are renumbered 0-based per graph, both-direction edge entries are
    merged into one undirected edge (one-directional entries are accepted and
    counted in ``parse_warnings``), and graph labels are remapped onto a dense
    0-based range. Features are one-hot node labels when ``<name>_node_labels.txt``
    exists, degree buckets otherwise.
    """
    root = Path(root_path)
    paths = {
        key: root / f"{name}_{key}.txt"
        for key in ("A", "graph_indicator", "graph_labels", "node_labels")
    }
    for key in ("A", "graph_indicator", "graph_labels"):
        if not paths[key].exists():
            raise TuMissingFileError(f"missing mandatory file {paths[key]}")

    indicator = _read_int_column(paths["graph_indicator"])
    if not indicator:
        raise TuStructuralError(f"{paths['graph_indicator'].name}: no nodes")
    num_graphs = max(indicator)
    if min(indicator) < 1:
        raise TuStructuralError(f"{paths['graph_indicator'].name}: graph ids are 1-based")

    # Global node id (1-based) -> (graph index, local id); locals ascending in
    # global-id order within each graph.
    graph_nodes: list[list[int]] = [[] for _ in range(num_graphs)]
    for global_id, gid in enumerate(indicator, start=1):
        graph_nodes[gid - 1].append(global_id)
    node_home = {}
    for gi, members in enumerate(graph_nodes):
        for local, global_id in enumerate(members):
            node_home[global_id] = (gi, local)

    raw_labels = _read_int_column(paths["graph_labels"])
    if len(raw_labels) != num_graphs:
        raise TuStructuralError(
            f"{paths['graph_labels'].name}: {len(raw_labels)} labels for {num_graphs} graphs"
        )
    labels, label_values = _dense_remap(raw_labels)

    pairs = _read_edge_pairs(paths["A"])
    directed: set[tuple[int, int]] = set()
    undirected: list[set[tuple[int, int]]] = [set() for _ in range(num_graphs)]
    for i, j in pairs:
        if i not in node_home or j not in node_home:
            missing = i if i not in node_home else j
            raise TuStructuralError(
                f"{paths['A'].name}: node {missing} not listed in the indicator file"
            )
        gi, li = node_home[i]
        gj, lj = node_home[j]
        if gi != gj:
            raise TuStructuralError(
                f"{paths['A'].name}: edge ({i}, {j}) crosses graphs {gi + 1} and {gj + 1}"
            )
        if li == lj:
            raise TuStructuralError(f"{paths['A'].name}: self-loop on node {i}")
        directed.add((i, j))
        undirected[gi].add((min(li, lj), max(li, lj)))
    one_directional = sum(1 for i, j in directed if (j, i) not in directed)

    node_label_values: tuple[int, ...] | None = None
    features_per_graph: list[np.ndarray]
    if paths["node_labels"].exists():
        raw_node_labels = _read_int_column(paths["node_labels"])
        if len(raw_node_labels) != len(indicator):
            raise TuStructuralError(
                f"{paths['node_labels'].name}: {len(raw_node_labels)} labels for "
                f"{len(indicator)} nodes"
            )
        dense_node_labels, node_label_values = _dense_remap(raw_node_labels)
        vocab = len(node_label_values)
        per_node = {gid: dense_node_labels[gid - 1] for gid in node_home}
        features_per_graph = [
            one_hot_features([per_node[gid] for gid in members], vocab)
            for members in graph_nodes
        ]
        feature_dim = vocab
    else:
        feature_dim = DEGREE_BUCKET_CAP + 1
        features_per_graph = []
        for gi, members in enumerate(graph_nodes):
            degs = [0] * len(members)
            for u, v in undirected[gi]:
                degs[u] += 1
                degs[v] += 1
            features_per_graph.append(degree_bucket_features(degs))

    graphs = tuple(
        Graph(
            num_nodes=len(graph_nodes[gi]),
            edges=tuple(sorted(undirected[gi])),
            node_features=features_per_graph[gi],
            label=labels[gi],
        )
        for gi in range(num_graphs)
    )
    return Dataset(
        graphs=graphs,
        num_classes=len(label_values),
        feature_dim=feature_dim,
        name=name,
        label_values=label_values,
        node_label_values=node_label_values,
        parse_warnings=one_directional,
        source_edge_lines=tuple(pairs),
    )


def write_tu_dataset(dataset: Dataset, root_path, name: str | None = None) -> None:
    """Serialize ``dataset`` to TU-format files under ``root_path``.

    A dataset that still carries its source edge-line memo is written with the
    original line order (round-trips byte-for-byte modulo whitespace); anything
    else gets canonical order: per graph, undirected edges ascending, each
    emitted as "u, v" then "v, u". Node labels are emitted only when the
    dataset is backed by a node-label vocabulary.
    """
    root = Path(root_path)
    root.mkdir(parents=True, exist_ok=True)
    name = name or dataset.name
    if not name:
        raise ValueError("dataset has no name and none was given")

    offsets = np.cumsum([0] + [g.num_nodes for g in dataset.graphs])

    if dataset.source_edge_lines is not None:
        edge_lines = list(dataset.source_edge_lines)
    else:
        edge_lines = []
        for gi, g in enumerate(dataset.graphs):
            base = int(offsets[gi]) + 1
            for u, v in g.edges:
                edge_lines.append((base + u, base + v))
                edge_lines.append((base + v, base + u))
    with open(root / f"{name}_A.txt", "w") as fh:
        fh.writelines(f"{i}, {j}\n" for i, j in edge_lines)

    with open(root / f"{name}_graph_indicator.txt", "w") as fh:
        for gi, g in enumerate(dataset.graphs, start=1):
            fh.writelines(f"{gi}\n" for _ in range(g.num_nodes))

    values = dataset.label_values or tuple(range(dataset.num_classes))
    with open(root / f"{name}_graph_labels.txt", "w") as fh:
        fh.writelines(f"{values[g.label]}\n" for g in dataset.graphs)

    if dataset.node_label_values is not None:
        if dataset.feature_dim != len(dataset.node_label_values):
            raise ValueError("feature width does not match the node-label vocabulary")
        with open(root / f"{name}_node_labels.txt", "w") as fh:
            for g in dataset.graphs:
                feats = g.node_features
                if not np.array_equal(feats.sum(axis=1), np.ones(g.num_nodes)) or (
                    feats.size and feats.max(initial=0.0) > 1.0
                ):
                    raise ValueError("node features are not one-hot rows; cannot emit labels")
                for row in feats.argmax(axis=1):
                    fh.write(f"{dataset.node_label_values[int(row)]}\n")
