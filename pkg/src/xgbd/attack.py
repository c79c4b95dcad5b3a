"""Poisoning a graph-classification training set with subgraph triggers.

A connected Erdos-Renyi trigger of ``round(N_avg * trigger_size)`` nodes is
spliced into ``round(injection_ratio * n)`` victim graphs: the victim node
subset's internal edges are replaced by the trigger's edges, its feature rows
by the trigger's features, and the graph label by the target label. Edges
between the victim subset and the rest of the graph are preserved. Victim
subsets are chosen uniformly at random (badgraph) or as the top-k most
important nodes under a surrogate model's explanation (exa).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .gin import GinParams, ModelConfig, forward, predict, train_standard
from .graphs import (
    Dataset,
    Graph,
    erdos_renyi,
    induced_subgraph,
    is_connected,
    write_tu_dataset,
)

ATTACK_METHODS = ("badgraph", "exa")

MANIFEST_FORMAT = "poison-manifest/1"

MAX_TRIGGER_ATTEMPTS = 100

# Independent seed streams derived from AttackConfig.seed.
_TRIGGER_STREAM = 10
_FEATURE_STREAM = 11
_VICTIM_STREAM = 12
_PLACEMENT_STREAM = 13


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class AttackConfig:
    method: str = "badgraph"
    trigger_size: float = 0.2
    trigger_density: float = 0.8
    injection_ratio: float = 0.1
    target_label: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.method not in ATTACK_METHODS:
            raise ValueError(f"unknown attack method {self.method!r}")
        if not (0 < self.trigger_size < 1):
            raise ValueError("trigger_size must be in (0, 1)")
        if not (0 <= self.trigger_density <= 1):
            raise ValueError("trigger_density must be in [0, 1]")
        if not (0 < self.injection_ratio < 1):
            raise ValueError("injection_ratio must be in (0, 1)")
        if self.target_label < 0:
            raise ValueError("target_label must be a class index")


@dataclass(frozen=True)
class TriggerGraph:
    """A connected trigger topology with its per-node feature rows installed."""

    graph: Graph

    def __post_init__(self):
        if self.graph.num_nodes < 2:
            raise ValueError("a trigger needs at least 2 nodes")
        if not is_connected(self.graph):
            raise ValueError("a trigger must be connected")

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes

    @property
    def features(self) -> np.ndarray:
        return self.graph.node_features


@dataclass(frozen=True)
class PoisonRecord:
    graph_index: int
    poisoned_nodes: tuple[int, ...]
    original_label: int

    def __post_init__(self):
        object.__setattr__(self, "poisoned_nodes", tuple(sorted(self.poisoned_nodes)))


@dataclass(frozen=True)
class PoisonedDataset:
    dataset: Dataset
    records: tuple[PoisonRecord, ...]
    trigger: TriggerGraph
    config: AttackConfig

    def poison_mask(self) -> np.ndarray:
        mask = np.zeros(len(self.dataset), dtype=bool)
        mask[[r.graph_index for r in self.records]] = True
        return mask

    @property
    def victim_indices(self) -> tuple[int, ...]:
        return tuple(r.graph_index for r in self.records)


def trigger_node_count(dataset: Dataset, config: AttackConfig) -> int:
    return _round_half_up(dataset.mean_num_nodes * config.trigger_size)


def make_trigger(dataset: Dataset, config: AttackConfig) -> TriggerGraph:
    """Connected ER trigger sized off the dataset's average node count.

    Resamples (fresh derived seed) until connected, at most
    ``MAX_TRIGGER_ATTEMPTS`` times. Trigger node features are one-hot rows
    drawn once from the dataset's empirical node-feature distribution.
    """
    size = trigger_node_count(dataset, config)
    if size < 2:
        raise ValueError(
            f"trigger would have {size} node(s); trigger_size {config.trigger_size} "
            f"is too small for this dataset"
        )
    topology = None
    for attempt in range(MAX_TRIGGER_ATTEMPTS):
        candidate = erdos_renyi(
            size, config.trigger_density,
            np.random.SeedSequence((config.seed, _TRIGGER_STREAM, attempt)),
        )
        if is_connected(candidate):
            topology = candidate
            break
    if topology is None:
        raise RuntimeError(
            f"no connected trigger after {MAX_TRIGGER_ATTEMPTS} attempts "
            f"(density {config.trigger_density})"
        )
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, _FEATURE_STREAM)))
    all_rows = np.vstack([g.node_features for g in dataset.graphs])
    rows = all_rows[rng.integers(0, all_rows.shape[0], size=size)]
    return TriggerGraph(graph=replace(topology, node_features=rows))


def select_victims(dataset: Dataset, config: AttackConfig) -> list[int]:
    """Seeded uniform sample of round(eta * n) eligible graph indices, ascending.

    Graphs already carrying the target label, or too small to host the
    trigger, are not eligible.
    """
    if config.target_label >= dataset.num_classes:
        raise ValueError(
            f"target label {config.target_label} outside [0, {dataset.num_classes})"
        )
    size = trigger_node_count(dataset, config)
    count = _round_half_up(config.injection_ratio * len(dataset))
    eligible = [
        i for i, g in enumerate(dataset.graphs)
        if g.label != config.target_label and g.num_nodes >= size
    ]
    if len(eligible) < count:
        raise ValueError(
            f"need {count} victims but only {len(eligible)} graphs are eligible "
            f"(short by {count - len(eligible)})"
        )
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, _VICTIM_STREAM)))
    chosen = rng.choice(len(eligible), size=count, replace=False)
    return sorted(eligible[i] for i in chosen)


def poison_graph(g: Graph, trigger: TriggerGraph, victim_nodes, target: int) -> Graph:
    """Replace the subgraph on ``victim_nodes`` with the trigger.

    Internal victim edges go away, trigger edges come in under the ascending
    id-order bijection, edges to the rest of the graph stay, victim feature
    rows become the trigger's rows, and the label flips to the target.
    """
    victims = tuple(sorted(set(victim_nodes)))
    if len(victims) != trigger.num_nodes:
        raise ValueError(
            f"{len(victims)} victim nodes for a {trigger.num_nodes}-node trigger"
        )
    if victims[0] < 0 or victims[-1] >= g.num_nodes:
        raise ValueError(f"victim ids invalid for graph with {g.num_nodes} nodes")
    if trigger.features.shape[1] != g.feature_dim:
        raise ValueError(
            f"trigger feature width {trigger.features.shape[1]} does not match "
            f"the graph's {g.feature_dim}"
        )
    victim_set = set(victims)
    kept = [e for e in g.edges if not (e[0] in victim_set and e[1] in victim_set)]
    installed = [(victims[u], victims[v]) for u, v in trigger.graph.edges]
    features = g.node_features.copy()
    features[list(victims)] = trigger.features
    return Graph(
        num_nodes=g.num_nodes,
        edges=tuple(kept + installed),
        node_features=features,
        label=target,
    )


def _build_poisoned(dataset: Dataset, config: AttackConfig, trigger: TriggerGraph,
                    placements: dict[int, tuple[int, ...]]) -> PoisonedDataset:
    graphs = list(dataset.graphs)
    records = []
    for idx in sorted(placements):
        g = dataset.graphs[idx]
        records.append(PoisonRecord(
            graph_index=idx,
            poisoned_nodes=placements[idx],
            original_label=g.label,
        ))
        graphs[idx] = poison_graph(g, trigger, placements[idx], config.target_label)
    return PoisonedDataset(
        dataset=dataset.with_graphs(graphs),
        records=tuple(records),
        trigger=trigger,
        config=config,
    )


def inject_badgraph(dataset: Dataset, config: AttackConfig) -> PoisonedDataset:
    """One shared trigger, placed on a uniformly random node subset per victim."""
    trigger = make_trigger(dataset, config)
    victims = select_victims(dataset, config)
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, _PLACEMENT_STREAM)))
    placements = {
        idx: tuple(sorted(
            rng.choice(dataset.graphs[idx].num_nodes, size=trigger.num_nodes,
                       replace=False).tolist()
        ))
        for idx in victims
    }
    return _build_poisoned(dataset, config, trigger, placements)


def occlusion_importance(params: GinParams, g: Graph) -> np.ndarray:
    """Per-node importance: drop in the predicted class's probability when the
    node is removed."""
    probs = forward(params, g)
    cls = int(np.argmax(probs))
    base = probs[cls]
    if g.num_nodes == 1:
        return np.zeros(1)
    scores = np.empty(g.num_nodes)
    for v in range(g.num_nodes):
        rest = [u for u in range(g.num_nodes) if u != v]
        scores[v] = base - forward(params, induced_subgraph(g, rest))[cls]
    return scores


def train_exa_surrogate(dataset: Dataset, seed: int = 0) -> GinParams:
    """The standard 100-epoch model the explanation-guided attack consults."""
    config = ModelConfig(num_classes=dataset.num_classes, seed=seed)
    return train_standard(dataset, config).params


def inject_exa(dataset: Dataset, config: AttackConfig,
               surrogate: GinParams | None = None,
               explainer: Callable[[GinParams, Graph], np.ndarray] | None = None,
               ) -> PoisonedDataset:
    """Like badgraph, but victims give up their k most important nodes.

    Importance comes from ``explainer(surrogate, graph)`` (one score per
    node); the default is the occlusion score under a standard-trained
    surrogate, trained here when none is supplied. Ties break toward lower
    node ids.
    """
    trigger = make_trigger(dataset, config)
    victims = select_victims(dataset, config)
    if surrogate is None:
        surrogate = train_exa_surrogate(dataset, config.seed)
    scorer = explainer or occlusion_importance
    placements = {}
    for idx in victims:
        g = dataset.graphs[idx]
        importance = np.asarray(scorer(surrogate, g), dtype=float)
        if importance.shape != (g.num_nodes,):
            raise ValueError("explainer must return one importance per node")
        order = sorted(range(g.num_nodes), key=lambda v: (-importance[v], v))
        placements[idx] = tuple(sorted(order[:trigger.num_nodes]))
    return _build_poisoned(dataset, config, trigger, placements)


def inject(dataset: Dataset, config: AttackConfig, **kwargs) -> PoisonedDataset:
    if config.method == "badgraph":
        return inject_badgraph(dataset, config)
    return inject_exa(dataset, config, **kwargs)


def stamp_trigger(g: Graph, trigger: TriggerGraph, target: int, seed) -> Graph:
    """Install the trigger at a random placement; used for efficacy checks."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    nodes = tuple(sorted(
        rng.choice(g.num_nodes, size=trigger.num_nodes, replace=False).tolist()
    ))
    return poison_graph(g, trigger, nodes, target)


def attack_success_rate(params: GinParams, poisoned: PoisonedDataset,
                        clean_dataset: Dataset, seed: int = 0) -> float | None:
    """Fraction of trigger-stamped non-victim graphs predicted as the target.

    Stamps the clean versions of every graph that was not poisoned (and whose
    true label is not already the target); None when no graph qualifies.
    """
    config = poisoned.config
    trigger = poisoned.trigger
    victims = set(poisoned.victim_indices)
    hits = 0
    total = 0
    for idx, g in enumerate(clean_dataset.graphs):
        if idx in victims or g.label == config.target_label:
            continue
        if g.num_nodes < trigger.num_nodes:
            continue
        stamped = stamp_trigger(g, trigger, config.target_label, (seed, idx))
        total += 1
        hits += predict(params, stamped) == config.target_label
    return None if total == 0 else hits / total


# --- persistence ----------------------------------------------------------------


def manifest_to_dict(poisoned: PoisonedDataset) -> dict:
    return {
        "format": MANIFEST_FORMAT,
        "config": asdict(poisoned.config),
        "num_graphs": len(poisoned.dataset),
        "trigger": {
            "num_nodes": poisoned.trigger.num_nodes,
            "edges": [list(e) for e in poisoned.trigger.graph.edges],
            "features": poisoned.trigger.features.tolist(),
        },
        "records": [
            {
                "graph_index": r.graph_index,
                "poisoned_nodes": list(r.poisoned_nodes),
                "original_label": r.original_label,
            }
            for r in poisoned.records
        ],
    }


@dataclass(frozen=True)
class PoisonManifest:
    """The detection ground truth: which samples were poisoned, and how."""

    config: AttackConfig
    trigger: TriggerGraph
    records: tuple[PoisonRecord, ...]
    num_graphs: int

    def poison_mask(self) -> np.ndarray:
        mask = np.zeros(self.num_graphs, dtype=bool)
        mask[[r.graph_index for r in self.records]] = True
        return mask


def manifest_from_dict(d: dict) -> PoisonManifest:
    if d.get("format") != MANIFEST_FORMAT:
        raise ValueError(f"not a {MANIFEST_FORMAT} document")
    trig = d["trigger"]
    features = np.asarray(trig["features"], dtype=float)
    graph = Graph(
        num_nodes=trig["num_nodes"],
        edges=tuple(tuple(e) for e in trig["edges"]),
        node_features=features,
    )
    return PoisonManifest(
        config=AttackConfig(**d["config"]),
        trigger=TriggerGraph(graph=graph),
        records=tuple(
            PoisonRecord(
                graph_index=r["graph_index"],
                poisoned_nodes=tuple(r["poisoned_nodes"]),
                original_label=r["original_label"],
            )
            for r in d["records"]
        ),
        num_graphs=d["num_graphs"],
    )


def save_poisoned_dataset(poisoned: PoisonedDataset, out_dir, name: str | None = None) -> Path:
    """Write the poisoned TU files plus the JSON manifest; returns the manifest path."""
    out = Path(out_dir)
    name = name or poisoned.dataset.name
    write_tu_dataset(poisoned.dataset, out, name)
    manifest_path = out / f"{name}_poison_manifest.json"
    manifest_path.write_text(json.dumps(manifest_to_dict(poisoned), indent=2) + "\n")
    return manifest_path


def load_poison_manifest(path) -> PoisonManifest:
    return manifest_from_dict(json.loads(Path(path).read_text()))
