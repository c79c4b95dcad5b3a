"""Built-in sanity checks behind the ``selftest`` CLI subcommand.

Quick finite-difference and oracle comparisons that should pass on any
machine; each check returns (name, passed, detail).
"""

from __future__ import annotations

import numpy as np

from . import explain, gin, metrics
from .graphs import Graph, erdos_renyi


def _random_graph(rng: np.random.Generator, n: int, m: int) -> Graph:
    g = erdos_renyi(n, 0.5, rng.integers(0, 2**31))
    feats = rng.normal(size=(n, m))
    return Graph(num_nodes=n, edges=g.edges, node_features=feats,
                 label=int(rng.integers(0, 2)))


def _fd_gradient(fn, vec: np.ndarray, step: float = 1e-5) -> np.ndarray:
    out = np.empty_like(vec)
    for i in range(vec.size):
        up = vec.copy()
        up[i] += step
        down = vec.copy()
        down[i] -= step
        out[i] = (fn(up) - fn(down)) / (2 * step)
    return out


def _max_rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.abs(numeric), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_loss_gradients(instances: int = 6, tol: float = 1e-4):
    rng = np.random.default_rng(7)
    worst = 0.0
    for k in range(instances):
        g = _random_graph(rng, 5, 3)
        config = gin.ModelConfig(num_layers=2, hidden_dim=4, num_classes=2, seed=k)
        params = gin.init_params(config, 3)
        for p in params.arrays:
            p += rng.normal(scale=0.3, size=p.shape)
        kind = ("standard", "trap", "lga")[k % 3]
        analytic = gin.gradients(params, g, g.label, kind, gamma=0.4).flatten()

        def scalar(vec):
            probs = gin.forward(params.unflatten(vec), g)
            ce = -np.log(max(probs[g.label], gin.PROB_FLOOR))
            if kind == "trap":
                return (ce - 0.4) ** 2
            if kind == "lga":
                return (ce - 0.4) * ce
            return ce

        worst = max(worst, _max_rel_err(analytic, _fd_gradient(scalar, params.flatten())))
    return "loss gradients vs finite differences", worst < tol, f"max rel err {worst:.2e}"


def check_mask_gradient(tol: float = 1e-4):
    rng = np.random.default_rng(11)
    g = _random_graph(rng, 5, 3)
    config = gin.ModelConfig(num_layers=2, hidden_dim=4, num_classes=2, seed=3)
    params = gin.init_params(config, 3)
    for p in params.arrays:
        p += rng.normal(scale=0.3, size=p.shape)
    theta = rng.normal(scale=0.5, size=g.num_edges)
    _, analytic = explain.mask_objective_and_grad(params, g, g.label, theta, 0.05)
    numeric = _fd_gradient(
        lambda v: explain.mask_objective_and_grad(params, g, g.label, v, 0.05)[0],
        theta,
    )
    err = _max_rel_err(analytic, numeric)
    return "edge-mask gradient vs finite differences", err < tol, f"max rel err {err:.2e}"


def check_shapley_estimate(tol: float = 0.02):
    rng = np.random.default_rng(13)
    g = _random_graph(rng, 6, 3)
    config = gin.ModelConfig(num_layers=2, hidden_dim=4, num_classes=2, seed=5)
    params = gin.init_params(config, 3)
    subset = (0,)
    exact = explain.shapley_score_exact(params, g, subset, g.label)
    mc = explain.shapley_score(params, g, subset, g.label, samples=2000, seed=1)
    return "Monte-Carlo Shapley vs exact", abs(exact - mc) < tol, \
        f"|{exact:.4f} - {mc:.4f}| = {abs(exact - mc):.4f}"


def check_auc_oracle():
    rng = np.random.default_rng(17)
    scores = rng.normal(size=40)
    truth = rng.random(40) < 0.4
    if truth.all() or not truth.any():
        truth[0] = True
        truth[1] = False
    got = metrics.roc_auc(scores, truth)
    pos = scores[truth]
    neg = scores[~truth]
    pairs = sum((p > q) + 0.5 * (p == q) for p in pos for q in neg)
    want = pairs / (len(pos) * len(neg))
    return "rank AUC vs pairwise counting", abs(got - want) < 1e-12, \
        f"{got:.6f} vs {want:.6f}"


def check_er_frequency(seeds: int = 2000, tol: float = 0.05):
    d = 0.6
    hits = np.zeros(6)  # 4 nodes -> 6 candidate edges
    for s in range(seeds):
        g = erdos_renyi(4, d, s)
        for u, v in g.edges:
            hits[[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)].index((u, v))] += 1
    worst = float(np.max(np.abs(hits / seeds - d)))
    return "ER per-edge frequency", worst < tol, f"max deviation {worst:.3f}"


ALL_CHECKS = (
    check_loss_gradients,
    check_mask_gradient,
    check_shapley_estimate,
    check_auc_oracle,
    check_er_frequency,
)


def run_selftest(echo=print) -> bool:
    ok = True
    for check in ALL_CHECKS:
        name, passed, detail = check()
        ok &= passed
        echo(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
    return ok
