import numpy as np
import pytest

from xgbd.attack import (
    AttackConfig,
    TriggerGraph,
    inject_badgraph,
    inject_exa,
    load_poison_manifest,
    make_trigger,
    manifest_from_dict,
    manifest_to_dict,
    occlusion_importance,
    poison_graph,
    save_poisoned_dataset,
    select_victims,
    trigger_node_count,
)
from xgbd.gin import ModelConfig, init_params
from xgbd.graphs import Dataset, Graph, induced_subgraph, is_connected, parse_tu_dataset

from conftest import make_graph


def small_dataset(n_graphs=20, nodes=8, feat_dim=3, num_classes=2):
    graphs = []
    rng = np.random.default_rng(1)
    for i in range(n_graphs):
        pairs = [(u, v) for u in range(nodes) for v in range(u + 1, nodes)]
        edges = tuple(e for e, k in zip(pairs, rng.random(len(pairs)) < 0.4) if k)
        feats = np.zeros((nodes, feat_dim))
        feats[np.arange(nodes), rng.integers(0, feat_dim, nodes)] = 1.0
        graphs.append(Graph(num_nodes=nodes, edges=edges, node_features=feats,
                            label=i % num_classes))
    return Dataset(graphs=tuple(graphs), num_classes=num_classes,
                   feature_dim=feat_dim, name="small")


# --- trigger construction -------------------------------------------------------


def test_trigger_size_mutag(mutag):
    cfg = AttackConfig(trigger_size=0.2)
    assert trigger_node_count(mutag, cfg) == 4  # round(17.93 * 0.2) = round(3.586)
    trig = make_trigger(mutag, cfg)
    assert trig.num_nodes == 4
    assert is_connected(trig.graph)
    assert trig.features.shape == (4, 7)
    # features drawn from MUTAG's one-hot rows stay one-hot
    assert np.array_equal(trig.features.sum(axis=1), np.ones(4))


def test_trigger_size_enzymes():
    ds = parse_tu_dataset("data/ENZYMES", "ENZYMES")
    assert trigger_node_count(ds, AttackConfig(trigger_size=0.2)) == 7


def test_trigger_two_nodes_full_density(mutag):
    cfg = AttackConfig(trigger_size=2 / mutag.mean_num_nodes * 0.999,
                       trigger_density=1.0)
    trig = make_trigger(mutag, cfg)
    assert trig.num_nodes == 2
    assert trig.graph.edges == ((0, 1),)


def test_trigger_too_small_rejected(mutag):
    with pytest.raises(ValueError, match="too small"):
        make_trigger(mutag, AttackConfig(trigger_size=0.01))


def test_trigger_deterministic(mutag):
    cfg = AttackConfig(seed=7)
    t1 = make_trigger(mutag, cfg)
    t2 = make_trigger(mutag, cfg)
    assert t1.graph == t2.graph


def test_trigger_wrapper_validates():
    with pytest.raises(ValueError, match="connected"):
        TriggerGraph(graph=make_graph(3, [(0, 1)]))


# --- victim selection -------------------------------------------------------------


def test_victims_mutag_count(mutag):
    victims = select_victims(mutag, AttackConfig(injection_ratio=0.1, target_label=0))
    assert len(victims) == 19  # round(18.8)
    assert victims == sorted(victims)
    assert all(mutag.graphs[i].label != 0 for i in victims)


def test_victims_exact_product():
    ds = small_dataset(n_graphs=40)
    victims = select_victims(ds, AttackConfig(injection_ratio=0.1, target_label=0))
    assert len(victims) == 4


def test_victims_all_target_labeled_errors():
    ds = small_dataset(num_classes=1)
    with pytest.raises(ValueError, match="eligible"):
        select_victims(ds, AttackConfig(injection_ratio=0.5, target_label=0))


def test_victims_respect_trigger_size():
    # graphs smaller than the trigger are never victims
    tiny = [make_graph(2, [(0, 1)], label=1, feat_dim=3) for _ in range(10)]
    big = [make_graph(9, [(i, i + 1) for i in range(8)], label=1, feat_dim=3)
           for _ in range(10)]
    ds = Dataset(graphs=tuple(tiny + big) + (make_graph(9, [], label=0, feat_dim=3),),
                 num_classes=2, feature_dim=3, name="mixed")
    cfg = AttackConfig(injection_ratio=0.3, target_label=0, trigger_size=0.5)
    assert trigger_node_count(ds, cfg) >= 3
    victims = select_victims(ds, cfg)
    assert all(ds.graphs[i].num_nodes >= 3 for i in victims)


# --- poisoning a single graph -------------------------------------------------------


def edge_trigger(feat_dim=3):
    feats = np.zeros((2, feat_dim))
    feats[:, 0] = 1.0
    return TriggerGraph(graph=Graph(num_nodes=2, edges=((0, 1),),
                                    node_features=feats))


def test_poison_adds_single_edge(path4):
    # victims {0, 2} have no internal edge in the path 0-1-2-3
    poisoned = poison_graph(path4, edge_trigger(), {0, 2}, target=1)
    assert poisoned.num_nodes == 4
    assert (0, 2) in poisoned.edges
    assert set(poisoned.edges) == set(path4.edges) | {(0, 2)}
    assert poisoned.label == 1


def test_poison_replaces_internal_edges(triangle):
    poisoned = poison_graph(triangle, edge_trigger(), {0, 1}, target=0)
    # internal edge (0,1) replaced by the trigger's single edge; boundary kept
    assert set(poisoned.edges) == {(0, 1), (0, 2), (1, 2)}


def test_poisoned_subgraph_isomorphic_to_trigger(mutag):
    cfg = AttackConfig(seed=3)
    trig = make_trigger(mutag, cfg)
    g = mutag.graphs[0]
    victims = (1, 4, 7, 11)
    poisoned = poison_graph(g, trig, victims, target=0)
    sub = induced_subgraph(poisoned, victims)
    assert sub.edges == trig.graph.edges  # ascending-id bijection
    assert np.array_equal(sub.node_features, trig.features)


def test_poison_edge_count_delta(mutag):
    cfg = AttackConfig(seed=5)
    trig = make_trigger(mutag, cfg)
    g = mutag.graphs[2]
    victims = (0, 2, 5, 9)
    prior_internal = sum(1 for u, v in g.edges
                         if u in set(victims) and v in set(victims))
    poisoned = poison_graph(g, trig, victims, target=0)
    assert poisoned.num_edges - g.num_edges == trig.graph.num_edges - prior_internal


def test_poison_size_mismatch(path4):
    with pytest.raises(ValueError, match="victim nodes"):
        poison_graph(path4, edge_trigger(), {0, 1, 2}, target=1)


# --- full injection -----------------------------------------------------------------


def test_inject_badgraph_mutag_defaults(mutag):
    cfg = AttackConfig(seed=0, target_label=0)
    poisoned = inject_badgraph(mutag, cfg)
    assert len(poisoned.records) == 19
    for r in poisoned.records:
        assert len(r.poisoned_nodes) == 4
        assert poisoned.dataset.graphs[r.graph_index].label == 0
        assert r.original_label != 0
    # conservation and untouched non-victims
    victims = set(poisoned.victim_indices)
    for i, (a, b) in enumerate(zip(mutag.graphs, poisoned.dataset.graphs)):
        assert a.num_nodes == b.num_nodes
        if i not in victims:
            assert a == b


def test_inject_single_victim():
    ds = small_dataset(n_graphs=10)
    cfg = AttackConfig(injection_ratio=0.1, target_label=0, trigger_size=0.3)
    poisoned = inject_badgraph(ds, cfg)
    assert len(poisoned.records) == 1


def test_inject_deterministic(mutag):
    cfg = AttackConfig(seed=11, target_label=0)
    p1 = inject_badgraph(mutag, cfg)
    p2 = inject_badgraph(mutag, cfg)
    assert p1.records == p2.records
    for a, b in zip(p1.dataset.graphs, p2.dataset.graphs):
        assert a == b


def test_injection_ratio_within_rounding(mutag):
    for eta in (0.05, 0.1, 0.2):
        poisoned = inject_badgraph(mutag, AttackConfig(injection_ratio=eta,
                                                       target_label=0))
        assert abs(len(poisoned.records) - eta * len(mutag)) <= 0.5


def test_poisoned_subgraphs_match_trigger_everywhere(mutag):
    poisoned = inject_badgraph(mutag, AttackConfig(seed=2, target_label=0))
    for r in poisoned.records:
        sub = induced_subgraph(poisoned.dataset.graphs[r.graph_index],
                               r.poisoned_nodes)
        assert sub.edges == poisoned.trigger.graph.edges
        assert np.array_equal(sub.node_features, poisoned.trigger.features)


# --- explanation-guided injection ----------------------------------------------------


def test_exa_uses_top_k_importance():
    ds = small_dataset(n_graphs=20, nodes=10)
    cfg = AttackConfig(method="exa", injection_ratio=0.1, target_label=0,
                       trigger_size=0.4)
    k = trigger_node_count(ds, cfg)

    def fake_importance(_params, g):
        scores = np.zeros(g.num_nodes)
        scores[[2, 5, 7, 9]] = [4.0, 3.0, 2.0, 1.0]
        return scores

    surrogate = init_params(ModelConfig(num_classes=2), ds.feature_dim)
    poisoned = inject_exa(ds, cfg, surrogate=surrogate, explainer=fake_importance)
    assert k == 4
    for r in poisoned.records:
        assert r.poisoned_nodes == (2, 5, 7, 9)


def test_exa_tie_break_lowest_ids():
    ds = small_dataset(n_graphs=20, nodes=10)
    cfg = AttackConfig(method="exa", injection_ratio=0.1, target_label=0,
                       trigger_size=0.4)
    surrogate = init_params(ModelConfig(num_classes=2), ds.feature_dim)
    poisoned = inject_exa(ds, cfg, surrogate=surrogate,
                          explainer=lambda p, g: np.zeros(g.num_nodes))
    for r in poisoned.records:
        assert r.poisoned_nodes == (0, 1, 2, 3)


def test_exa_differs_from_badgraph(mutag):
    cfg_bad = AttackConfig(seed=4, target_label=0)
    cfg_exa = AttackConfig(method="exa", seed=4, target_label=0)
    surrogate = init_params(
        ModelConfig(num_classes=2, seed=1), mutag.feature_dim)
    for a in surrogate.arrays:
        a += np.random.default_rng(0).normal(scale=0.2, size=a.shape)
    p_bad = inject_badgraph(mutag, cfg_bad)
    p_exa = inject_exa(mutag, cfg_exa, surrogate=surrogate)
    assert p_bad.victim_indices == p_exa.victim_indices  # same victim stream
    same = sum(a.poisoned_nodes == b.poisoned_nodes
               for a, b in zip(p_bad.records, p_exa.records))
    assert same < len(p_bad.records)


def test_occlusion_importance_shape(mutag):
    surrogate = init_params(ModelConfig(num_classes=2), mutag.feature_dim)
    g = mutag.graphs[0]
    imp = occlusion_importance(surrogate, g)
    assert imp.shape == (g.num_nodes,)


# --- manifest -------------------------------------------------------------------------


def test_manifest_round_trip(tmp_path, mutag):
    poisoned = inject_badgraph(mutag, AttackConfig(seed=1, target_label=0))
    path = save_poisoned_dataset(poisoned, tmp_path)
    manifest = load_poison_manifest(path)
    assert manifest.config == poisoned.config
    assert manifest.records == poisoned.records
    assert manifest.trigger.graph == poisoned.trigger.graph
    assert manifest.num_graphs == len(mutag)
    assert np.array_equal(manifest.poison_mask(), poisoned.poison_mask())


def test_manifest_rejects_other_formats():
    with pytest.raises(ValueError, match="poison-manifest"):
        manifest_from_dict({"format": "nope"})


def test_poisoned_tu_files_reload(tmp_path, mutag):
    poisoned = inject_badgraph(mutag, AttackConfig(seed=6, target_label=0))
    save_poisoned_dataset(poisoned, tmp_path)
    again = parse_tu_dataset(tmp_path, "MUTAG")
    for a, b in zip(poisoned.dataset.graphs, again.graphs):
        assert a == b
