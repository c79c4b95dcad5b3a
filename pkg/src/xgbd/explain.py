"""Post-hoc subgraph explanations of per-graph predictions.

Three routes to an explanatory node set:

* ``explain_subgraphx``  - MCTS over node prunings scored by Monte-Carlo
  Shapley values (the default in the detection pipeline),
* ``explain_gnnexplainer`` - a continuous per-edge mask optimized by gradient
  ascent, discretized greedily,
* ``explain_bruteforce`` - exact enumeration of small graphs, used as the
  oracle the search methods are judged against.

All explanations are connected node sets of at most ``omega`` nodes
(whenever the graph itself is larger than that).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .gin import GinParams, PROB_FLOOR, _backward, _forward_cached, forward_raw
from .graphs import (
    Graph,
    articulation_points,
    connected_components,
    neighbor_set,
)

# Contexts at most this large are scored by exact permutation enumeration
# instead of Monte-Carlo sampling.
EXACT_SHAPLEY_PLAYERS = 5


@dataclass(frozen=True)
class ExplainerConfig:
    omega: int = 4
    mcts_rollouts: int = 200
    exploration_c: float = 5.0
    shapley_samples: int = 100
    lambda_reg: float = 0.01
    mask_steps: int = 200
    mask_lr: float = 0.1

    def __post_init__(self):
        if self.omega < 1:
            raise ValueError("omega must be >= 1")
        if self.mcts_rollouts < 1:
            raise ValueError("mcts_rollouts must be >= 1")
        if self.shapley_samples < 1:
            raise ValueError("shapley_samples must be >= 1")
        if self.lambda_reg < 0:
            raise ValueError("lambda_reg must be >= 0")


@dataclass(frozen=True)
class Explanation:
    node_set: tuple[int, ...]
    score: float
    method: str

    def __post_init__(self):
        if not self.node_set:
            raise ValueError("an explanation cannot be empty")
        object.__setattr__(self, "node_set", tuple(sorted(self.node_set)))


class _SubsetScorer:
    """p_y of the induced subgraph on a node subset, memoized per subset."""

    def __init__(self, params: GinParams, g: Graph, y: int):
        self.params = params
        self.g = g
        self.y = y
        self.num_classes = params.b_out.size
        self._adj = g.adjacency
        self._feats = g.node_features
        self._cache: dict[frozenset, float] = {}

    def prob(self, subset: frozenset) -> float:
        """Uniform 1/C for the empty coalition (the model is undefined there)."""
        if not subset:
            return 1.0 / self.num_classes
        hit = self._cache.get(subset)
        if hit is not None:
            return hit
        members = sorted(subset)
        ix = np.ix_(members, members)
        p = float(forward_raw(self.params, self._adj[ix], self._feats[members])[self.y])
        self._cache[subset] = p
        return p


def fidelity_score(model: GinParams, g: Graph, node_set: Iterable[int], y: int) -> float:
    """Probability of label ``y`` when the model sees only the induced subgraph."""
    members = sorted(set(node_set))
    if not members:
        raise ValueError("node set is empty")
    if members[0] < 0 or members[-1] >= g.num_nodes:
        raise ValueError(f"node ids invalid for graph with {g.num_nodes} nodes")
    ix = np.ix_(members, members)
    probs = forward_raw(model, g.adjacency[ix], g.node_features[members])
    if not (0 <= y < probs.size):
        raise ValueError(f"label {y} outside [0, {probs.size})")
    return float(probs[y])


def _context_players(g: Graph, subset: frozenset) -> tuple[int, ...]:
    """The 1-hop neighborhood of the subset; nodes further out never join a coalition."""
    return tuple(sorted(neighbor_set(g, subset) - subset))


def _shapley_monte_carlo(scorer: _SubsetScorer, subset: frozenset,
                         context: tuple[int, ...], samples: int,
                         rng: np.random.Generator) -> float:
    k = len(context)
    ids = np.asarray(context)
    total = 0.0
    for _ in range(samples):
        perm = rng.permutation(k + 1)  # slot k stands for the subset itself
        pred = frozenset(ids[p] for p in perm[:int(np.nonzero(perm == k)[0][0])])
        total += scorer.prob(pred | subset) - scorer.prob(pred)
    return total / samples


def _shapley_exact(scorer: _SubsetScorer, subset: frozenset,
                   context: tuple[int, ...]) -> float:
    k = len(context)
    denom = math.factorial(k + 1)
    value = 0.0
    for size in range(k + 1):
        weight = math.factorial(size) * math.factorial(k - size) / denom
        for combo in itertools.combinations(context, size):
            pred = frozenset(combo)
            value += weight * (scorer.prob(pred | subset) - scorer.prob(pred))
    return value


def shapley_score(model: GinParams, g: Graph, node_set: Iterable[int], y: int,
                  samples: int = 100, seed=0) -> float:
    """Monte-Carlo Shapley value of the node set against its 1-hop context.

    The set plays as a single player; every node of its 1-hop neighborhood is
    another player. Each sample draws one uniform permutation of the players
    and takes the set's marginal contribution to the coalition preceding it.
    """
    subset = frozenset(node_set)
    if not subset:
        raise ValueError("node set is empty")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    scorer = _SubsetScorer(model, g, y)
    context = _context_players(g, subset)
    if not context:
        return scorer.prob(subset) - 1.0 / scorer.num_classes
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    return _shapley_monte_carlo(scorer, subset, context, samples, rng)


def shapley_score_exact(model: GinParams, g: Graph, node_set: Iterable[int], y: int) -> float:
    """Exact permutation-enumerated Shapley value (oracle for the MC estimate)."""
    subset = frozenset(node_set)
    if not subset:
        raise ValueError("node set is empty")
    scorer = _SubsetScorer(model, g, y)
    context = _context_players(g, subset)
    if not context:
        return scorer.prob(subset) - 1.0 / scorer.num_classes
    return _shapley_exact(scorer, subset, context)


# --- MCTS search (SubgraphX style) -------------------------------------------


class _MctsState:
    __slots__ = ("visits", "total", "children")

    def __init__(self):
        self.visits = 0
        self.total = 0.0
        self.children: tuple[tuple[int, ...], ...] | None = None


def _children_of(g: Graph, state: tuple[int, ...]) -> tuple[tuple[int, ...], ...]:
    """Prune one node while keeping the remainder connected and nonempty."""
    if len(state) <= 1:
        return ()
    cuts = articulation_points(g, state)
    return tuple(
        tuple(u for u in state if u != v) for v in state if v not in cuts
    )


def _mcts_component(g: Graph, scorer: _SubsetScorer, root: tuple[int, ...],
                    cfg: ExplainerConfig, rng: np.random.Generator,
                    candidates: dict[tuple[int, ...], float]) -> None:
    """Run rollouts below one connected root, scoring every visited small set.

    Each rollout walks by UCB from the root down to a single node (every
    pruning keeps the remainder connected); states of size <= omega met along
    the way are evaluated once by their Shapley score and recorded as
    candidate explanations. The backed-up reward is the best value met on the
    walk, steering later rollouts toward regions holding strong small sets.
    """
    stats: dict[tuple[int, ...], _MctsState] = {root: _MctsState()}
    values: dict[tuple[int, ...], float] = {}

    def state_value(state: tuple[int, ...]) -> float:
        value = values.get(state)
        if value is None:
            subset = frozenset(state)
            context = _context_players(g, subset)
            if not context:
                value = scorer.prob(subset) - 1.0 / scorer.num_classes
            elif len(context) <= EXACT_SHAPLEY_PLAYERS:
                value = _shapley_exact(scorer, subset, context)
            else:
                value = _shapley_monte_carlo(scorer, subset, context,
                                             cfg.shapley_samples, rng)
            values[state] = value
            if len(state) <= cfg.omega:
                candidates[state] = value
        return value

    for _ in range(cfg.mcts_rollouts):
        path = [root]
        state = root
        while len(state) > 1:
            node = stats[state]
            if node.children is None:
                node.children = _children_of(g, state)
            if not node.children:
                break
            for child in node.children:
                if child not in stats:
                    stats[child] = _MctsState()
            unvisited = [c for c in node.children if stats[c].visits == 0]
            if unvisited:
                state = unvisited[0]
            else:
                # transpositions can reach a fresh state whose children are
                # all known, so the parent count may still be zero
                log_parent = math.log(node.visits + 1)
                state = max(
                    node.children,
                    key=lambda c: (stats[c].total / stats[c].visits
                                   + cfg.exploration_c
                                   * math.sqrt(log_parent / stats[c].visits)),
                )
            path.append(state)
        small = [s for s in path if len(s) <= cfg.omega]
        if small:
            reward = max(state_value(s) for s in small)
        else:
            reward = state_value(path[-1])  # stuck above omega; guide only
        for s in path:
            st = stats[s]
            st.visits += 1
            st.total += reward


def explain_subgraphx(model: GinParams, g: Graph, y: int, cfg: ExplainerConfig,
                      seed=0) -> Explanation:
    """MCTS over the node-pruning tree, leaves scored by Shapley values.

    The root holds every node; each action removes one node while keeping the
    remainder connected; sets of at most ``cfg.omega`` nodes are leaves. The
    best-scoring visited leaf wins (ties: smaller, then lexicographically
    earlier). Deterministic for a fixed seed. A graph no larger than omega is
    its own explanation. Disconnected graphs are searched per component.
    """
    if g.num_nodes < 1:
        raise ValueError("cannot explain an empty graph")
    scorer = _SubsetScorer(model, g, y)
    all_nodes = tuple(range(g.num_nodes))
    if g.num_nodes <= cfg.omega:
        subset = frozenset(all_nodes)
        score = scorer.prob(subset) - 1.0 / scorer.num_classes
        return Explanation(node_set=all_nodes, score=score, method="subgraphx")

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    candidates: dict[tuple[int, ...], float] = {}
    for comp in connected_components(g):
        if len(comp) <= cfg.omega:
            subset = frozenset(comp)
            context = _context_players(g, subset)  # empty: comp is a component
            candidates[comp] = scorer.prob(subset) - 1.0 / scorer.num_classes
        else:
            _mcts_component(g, scorer, comp, cfg, rng, candidates)

    best = min(candidates.items(), key=lambda kv: (-kv[1], len(kv[0]), kv[0]))
    return Explanation(node_set=best[0], score=best[1], method="subgraphx")


# --- exact oracle -------------------------------------------------------------

BRUTEFORCE_MAX_NODES = 14


def connected_node_subsets(g: Graph, max_size: int) -> list[tuple[int, ...]]:
    """Every connected node subset of size <= max_size, each exactly once.

    ESU-style enumeration: subsets are rooted at their smallest member and
    extended only through exclusive neighbors with larger ids.
    """
    out: list[tuple[int, ...]] = []

    def extend(sub: tuple[int, ...], ext: list[int], root: int, closed: frozenset[int]):
        out.append(sub)
        if len(sub) == max_size:
            return
        ext = list(ext)
        while ext:
            w = ext.pop(0)
            fresh = [u for u in g.neighbors[w] if u > root and u not in closed]
            extend(tuple(sorted(sub + (w,))), ext + fresh, root,
                   closed | frozenset(fresh) | {w})
        return

    for v in range(g.num_nodes):
        start_ext = [u for u in g.neighbors[v] if u > v]
        extend((v,), start_ext, v, frozenset([v]) | frozenset(start_ext))
    return out


def explain_bruteforce(model: GinParams, g: Graph, y: int, omega: int) -> Explanation:
    """Exhaustive argmax of fidelity over connected subsets of size <= omega.

    Guarded to small graphs; ties broken by smaller size, then lexicographic
    node ids.
    """
    if g.num_nodes > BRUTEFORCE_MAX_NODES:
        raise ValueError(
            f"brute force is limited to {BRUTEFORCE_MAX_NODES} nodes, got {g.num_nodes}"
        )
    if g.num_nodes < 1:
        raise ValueError("cannot explain an empty graph")
    scorer = _SubsetScorer(model, g, y)
    best_set: tuple[int, ...] | None = None
    best_key = None
    for sub in connected_node_subsets(g, omega):
        key = (-scorer.prob(frozenset(sub)), len(sub), sub)
        if best_key is None or key < best_key:
            best_key = key
            best_set = sub
    return Explanation(node_set=best_set, score=-best_key[0], method="bruteforce")


# --- edge-mask explainer (GNNExplainer style) ---------------------------------


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def mask_objective_and_grad(model: GinParams, g: Graph, y: int, theta: np.ndarray,
                            lambda_reg: float) -> tuple[float, np.ndarray]:
    """Objective log p_y(masked graph) - lambda * sum(mask) and its exact
    gradient w.r.t. the mask logits ``theta`` (one logit per undirected edge).

    Each neighbor message is scaled by its edge mask, i.e. the aggregation
    matrix carries sigmoid(theta_e) in both directions of edge e.
    """
    mask = _sigmoid(theta)
    n = g.num_nodes
    masked_adj = np.zeros((n, n))
    for m, (u, v) in zip(mask, g.edges):
        masked_adj[u, v] = m
        masked_adj[v, u] = m
    probs, pooled, cache = _forward_cached(model, masked_adj, g.node_features)
    objective = float(np.log(max(probs[y], PROB_FLOOR)) - lambda_reg * mask.sum())
    d_logits = -probs
    d_logits[y] += 1.0  # d log p_y / d logits = e_y - p
    _, d_adj = _backward(model, masked_adj, d_logits, pooled, cache,
                         want_adjacency_grad=True)
    d_mask = np.array([d_adj[u, v] + d_adj[v, u] for u, v in g.edges]) - lambda_reg
    return objective, d_mask * mask * (1.0 - mask)


def _grow_region(g: Graph, mask: np.ndarray, omega: int) -> tuple[int, ...]:
    """Greedy discretization: seed at the strongest edge, grow along the
    strongest incident edge until omega nodes are covered."""
    ranked = sorted(range(len(g.edges)), key=lambda e: (-mask[e], g.edges[e]))
    u0, v0 = g.edges[ranked[0]]
    region = {u0, v0}
    while len(region) < omega:
        best = None
        for e in ranked:
            u, v = g.edges[e]
            if (u in region) != (v in region):
                best = v if u in region else u
                break
        if best is None:
            break
        region.add(best)
    return tuple(sorted(region))


def explain_gnnexplainer(model: GinParams, g: Graph, y: int, cfg: ExplainerConfig,
                         seed=0) -> Explanation:
    """Continuous edge mask optimized by gradient ascent, then discretized.

    Maximizes log p_y under the mask-weighted forward pass minus
    ``lambda_reg`` times the mask total. The returned node set is the
    omega-node connected region grown greedily from the strongest edge,
    scored by its fidelity.
    """
    if g.num_edges == 0:
        raise ValueError("the edge-mask explainer needs at least one edge")
    theta = np.zeros(g.num_edges)
    for _ in range(cfg.mask_steps):
        _, grad = mask_objective_and_grad(model, g, y, theta, cfg.lambda_reg)
        theta += cfg.mask_lr * grad
    node_set = _grow_region(g, _sigmoid(theta), cfg.omega)
    score = fidelity_score(model, g, node_set, y)
    return Explanation(node_set=node_set, score=score, method="gnnexplainer")


EXPLAINERS: dict[str, Callable[..., Explanation]] = {
    "subgraphx": explain_subgraphx,
    "gnnexplainer": explain_gnnexplainer,
}


def explain_graph(method: str, model: GinParams, g: Graph, y: int,
                  cfg: ExplainerConfig, seed=0) -> Explanation:
    """Dispatch by method id; ``bruteforce`` is accepted for small graphs."""
    if method == "bruteforce":
        return explain_bruteforce(model, g, y, cfg.omega)
    try:
        fn = EXPLAINERS[method]
    except KeyError:
        raise ValueError(f"unknown explainer {method!r}") from None
    return fn(model, g, y, cfg, seed=seed)


# --- persistence ---------------------------------------------------------------


def save_explanations(path, rows: Iterable[tuple[int, Explanation, int]]) -> None:
    """JSON lines: {graph_index, method, node_set, score, seed}."""
    with open(path, "w") as fh:
        for graph_index, expl, seed in rows:
            fh.write(json.dumps({
                "graph_index": graph_index,
                "method": expl.method,
                "node_set": list(expl.node_set),
                "score": expl.score,
                "seed": seed,
            }) + "\n")


def load_explanations(path) -> list[dict]:
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line:
            rows.append(json.loads(line))
    return rows
