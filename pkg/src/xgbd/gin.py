"""A small GIN graph classifier with exact analytic gradients.

Message passing uses the sum aggregator with epsilon fixed at zero,
so one round is ``a = (I + A) h``; each round feeds a one-hidden-layer
MLP with ReLU activations. Graph embedding is the node-wise sum of the
final round, followed by a linear head and softmax. Everything is plain
numpy so gradients can be written (and finite-difference checked) by hand.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .graphs import Dataset, Graph

PROB_FLOOR = 1e-12  # clamp before log so a saturated softmax never yields -inf

CHECKPOINT_FORMAT = "gin-checkpoint/1"

LOSS_KINDS = ("standard", "trap", "lga")


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 3
    hidden_dim: int = 32
    num_classes: int = 2
    learning_rate: float = 0.01
    epochs: int = 100
    seed: int = 0
    batch_size: int = 32
    # Quadratic objectives scale per-sample gradients by an unbounded factor
    # (a sample pinned at the probability floor contributes ~54x a plain one),
    # which blows up plain gradient descent; clipping the batch gradient norm
    # keeps every training regime stable.
    max_grad_norm: float = 5.0

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.max_grad_norm <= 0:
            raise ValueError("max_grad_norm must be positive")


@dataclass
class GinLayer:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass
class GinParams:
    """All trainable weights; also doubles as the gradient container."""

    layers: list[GinLayer]
    w_out: np.ndarray
    b_out: np.ndarray

    @property
    def arrays(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend([layer.w1, layer.b1, layer.w2, layer.b2])
        out.extend([self.w_out, self.b_out])
        return out

    def copy(self) -> "GinParams":
        return GinParams(
            layers=[GinLayer(l.w1.copy(), l.b1.copy(), l.w2.copy(), l.b2.copy())
                    for l in self.layers],
            w_out=self.w_out.copy(),
            b_out=self.b_out.copy(),
        )

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays])

    def unflatten(self, vec: np.ndarray) -> "GinParams":
        """New params with this one's shapes and ``vec``'s values."""
        out = self.copy()
        pos = 0
        for a in out.arrays:
            a[...] = vec[pos:pos + a.size].reshape(a.shape)
            pos += a.size
        if pos != vec.size:
            raise ValueError(f"expected {pos} values, got {vec.size}")
        return out


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_in, fan_out))


def init_params(config: ModelConfig, feature_dim: int) -> GinParams:
    """Seeded Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 1)))
    layers = []
    width_in = feature_dim
    for _ in range(config.num_layers):
        layers.append(GinLayer(
            w1=_glorot(rng, width_in, config.hidden_dim),
            b1=np.zeros(config.hidden_dim),
            w2=_glorot(rng, config.hidden_dim, config.hidden_dim),
            b2=np.zeros(config.hidden_dim),
        ))
        width_in = config.hidden_dim
    return GinParams(
        layers=layers,
        w_out=_glorot(rng, config.hidden_dim, config.num_classes),
        b_out=np.zeros(config.num_classes),
    )


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max())
    return z / z.sum()


def forward_raw(params: GinParams, adjacency: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Prediction distribution from a dense adjacency and feature matrix."""
    h = features
    if h.shape[1] != params.layers[0].w1.shape[0]:
        raise ValueError(
            f"feature width {h.shape[1]} does not match the model "
            f"(expects {params.layers[0].w1.shape[0]})"
        )
    for layer in params.layers:
        a = h + adjacency @ h
        r = np.maximum(a @ layer.w1 + layer.b1, 0.0)
        h = np.maximum(r @ layer.w2 + layer.b2, 0.0)
    logits = h.sum(axis=0) @ params.w_out + params.b_out
    return _softmax(logits)


def forward(params: GinParams, g: Graph) -> np.ndarray:
    """Prediction distribution over classes for one graph."""
    return forward_raw(params, g.adjacency, g.node_features)


def predict(params: GinParams, g: Graph) -> int:
    return int(np.argmax(forward(params, g)))


def sample_loss(params: GinParams, g: Graph, y: int) -> float:
    """Cross-entropy of the true label: -log p_y, clamped at the numeric floor."""
    probs = forward(params, g)
    if not (0 <= y < probs.size):
        raise ValueError(f"label {y} outside [0, {probs.size})")
    return float(-np.log(max(probs[y], PROB_FLOOR)))


def _forward_cached(params: GinParams, adjacency: np.ndarray, features: np.ndarray):
    """Forward pass keeping every intermediate needed for backprop."""
    h = features
    cache = []
    for layer in params.layers:
        a = h + adjacency @ h
        z1 = a @ layer.w1 + layer.b1
        r = np.maximum(z1, 0.0)
        z2 = r @ layer.w2 + layer.b2
        h_next = np.maximum(z2, 0.0)
        cache.append((h, a, z1, r, z2))
        h = h_next
    pooled = h.sum(axis=0)
    logits = pooled @ params.w_out + params.b_out
    probs = _softmax(logits)
    return probs, pooled, cache


def _backward(params: GinParams, adjacency: np.ndarray, d_logits: np.ndarray,
              pooled: np.ndarray, cache, want_adjacency_grad: bool = False):
    """Chain rule from d(loss)/d(logits) back to every parameter.

    Optionally also returns d(loss)/d(adjacency), needed when the aggregation
    matrix carries trainable edge masks.
    """
    grads = GinParams(
        layers=[GinLayer(np.zeros_like(l.w1), np.zeros_like(l.b1),
                         np.zeros_like(l.w2), np.zeros_like(l.b2))
                for l in params.layers],
        w_out=np.outer(pooled, d_logits),
        b_out=d_logits.copy(),
    )
    d_pooled = params.w_out @ d_logits
    n = adjacency.shape[0]
    d_h = np.broadcast_to(d_pooled, (n, d_pooled.size)).copy()
    d_adj = np.zeros_like(adjacency) if want_adjacency_grad else None
    for layer, grad, (h, a, z1, r, z2) in zip(
        reversed(params.layers), reversed(grads.layers), reversed(cache)
    ):
        d_z2 = d_h * (z2 > 0)
        grad.w2[...] = r.T @ d_z2
        grad.b2[...] = d_z2.sum(axis=0)
        d_r = d_z2 @ layer.w2.T
        d_z1 = d_r * (z1 > 0)
        grad.w1[...] = a.T @ d_z1
        grad.b1[...] = d_z1.sum(axis=0)
        d_a = d_z1 @ layer.w1.T
        if want_adjacency_grad:
            d_adj += d_a @ h.T
        d_h = d_a + adjacency.T @ d_a
    return grads, d_adj


def _loss_scale(kind: str, ce_loss: float, gamma: float) -> float:
    """d(objective)/d(cross-entropy) for each supported per-sample objective."""
    if kind == "standard":
        return 1.0
    if kind == "trap":  # (ce - gamma)^2
        return 2.0 * (ce_loss - gamma)
    if kind == "lga":  # (ce - gamma) * ce
        return 2.0 * ce_loss - gamma
    raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")


def gradients(params: GinParams, g: Graph, y: int, kind: str = "standard",
              gamma: float = 0.5) -> GinParams:
    """Exact gradient of the chosen per-sample loss w.r.t. every parameter."""
    probs, pooled, cache = _forward_cached(params, g.adjacency, g.node_features)
    if not (0 <= y < probs.size):
        raise ValueError(f"label {y} outside [0, {probs.size})")
    d_logits = probs.copy()
    d_logits[y] -= 1.0
    ce = float(-np.log(max(probs[y], PROB_FLOOR)))
    scale = _loss_scale(kind, ce, gamma)
    grads, _ = _backward(params, g.adjacency, scale * d_logits, pooled, cache)
    return grads


@dataclass
class TrainResult:
    """Final parameters plus the cross-entropy of every sample after every epoch.

    ``loss_trace[e, i]`` is sample i's plain cross-entropy evaluated after
    epoch e finished, whatever objective drove the updates.
    """

    params: GinParams
    loss_trace: np.ndarray


def train_model(dataset: Dataset | Iterable[Graph], config: ModelConfig,
                loss_kind: str = "standard", gamma: float = 0.5) -> TrainResult:
    """Seeded minibatch gradient descent on the chosen objective.

    The trap and LGA objectives are applied at the batch level: with
    ``m = mean cross-entropy of the batch``, a step descends
    ``(m - gamma)^2`` (trap) or ``(m - gamma) * m`` (LGA), i.e. the standard
    batch gradient rescaled by the objective's derivative at ``m``. Per-batch
    gradient accumulation runs in ascending sample order and the batch
    gradient norm is clipped, so runs are reproducible and stable.
    """
    graphs = list(dataset)
    if not graphs:
        raise ValueError("cannot train on an empty dataset")
    if loss_kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {loss_kind!r}; expected one of {LOSS_KINDS}")
    params = init_params(config, graphs[0].feature_dim)
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 2)))
    n = len(graphs)
    trace = np.zeros((config.epochs, n))
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = sorted(order[start:start + config.batch_size])
            accum = None
            ce_total = 0.0
            for i in batch:
                probs, pooled, cache = _forward_cached(
                    params, graphs[i].adjacency, graphs[i].node_features)
                y = graphs[i].label
                ce_total += float(-np.log(max(probs[y], PROB_FLOOR)))
                d_logits = probs.copy()
                d_logits[y] -= 1.0
                grad, _ = _backward(params, graphs[i].adjacency, d_logits,
                                    pooled, cache)
                if accum is None:
                    accum = grad
                else:
                    for acc, arr in zip(accum.arrays, grad.arrays):
                        acc += arr
            scale = _loss_scale(loss_kind, ce_total / len(batch), gamma)
            step = config.learning_rate * scale / len(batch)
            norm = abs(scale) * np.sqrt(
                sum(float(np.sum(a * a)) for a in accum.arrays)) / len(batch)
            if norm > config.max_grad_norm:
                step *= config.max_grad_norm / norm
            for p, acc in zip(params.arrays, accum.arrays):
                p -= step * acc
        trace[epoch] = [sample_loss(params, g, g.label) for g in graphs]
    return TrainResult(params=params, loss_trace=trace)


def train_standard(dataset, config: ModelConfig) -> TrainResult:
    """Minimize mean cross-entropy."""
    return train_model(dataset, config, "standard")


def train_trap(dataset, config: ModelConfig, gamma: float = 0.5) -> TrainResult:
    """Minimize the quadratic trap objective (ce - gamma)^2.

    Pins most samples' loss near gamma while samples the model finds easy
    escape below it.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return train_model(dataset, config, "trap", gamma)


# --- checkpointing -----------------------------------------------------------


def save_checkpoint(path, params: GinParams, config: ModelConfig) -> None:
    """Single-file .npz checkpoint: a JSON header plus every weight tensor."""
    header = {
        "format": CHECKPOINT_FORMAT,
        "config": {
            "num_layers": config.num_layers,
            "hidden_dim": config.hidden_dim,
            "num_classes": config.num_classes,
            "learning_rate": config.learning_rate,
            "epochs": config.epochs,
            "seed": config.seed,
            "batch_size": config.batch_size,
        },
        "shapes": [list(a.shape) for a in params.arrays],
    }
    arrays = {}
    for i, layer in enumerate(params.layers):
        arrays[f"layer{i}_w1"] = layer.w1
        arrays[f"layer{i}_b1"] = layer.b1
        arrays[f"layer{i}_w2"] = layer.w2
        arrays[f"layer{i}_b2"] = layer.b2
    np.savez(path, header=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8),
             w_out=params.w_out, b_out=params.b_out, **arrays)


def load_checkpoint(path) -> tuple[GinParams, ModelConfig]:
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"not a {CHECKPOINT_FORMAT} checkpoint: {path}")
        cfg = ModelConfig(**header["config"])
        layers = [
            GinLayer(data[f"layer{i}_w1"], data[f"layer{i}_b1"],
                     data[f"layer{i}_w2"], data[f"layer{i}_b2"])
            for i in range(cfg.num_layers)
        ]
        params = GinParams(layers=layers, w_out=data["w_out"], b_out=data["b_out"])
    expected = [tuple(s) for s in header["shapes"]]
    actual = [tuple(a.shape) for a in params.arrays]
    if expected != actual:
        raise ValueError("checkpoint shapes do not match its header")
    return params, cfg
