"""The detection pipeline: trap-train, explain, expand, score, threshold.

Also carries the two reference baselines (plain loss isolation after one
epoch, and LGA training with bottom-k flagging) and JSON/CSV persistence of
detection reports.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .explain import Explanation, ExplainerConfig, explain_graph
from .gin import (
    GinParams,
    ModelConfig,
    TrainResult,
    sample_loss,
    train_model,
    train_standard,
    train_trap,
)
from .graphs import Dataset, Graph, induced_subgraph, neighbor_set

log = logging.getLogger(__name__)

REPORT_FORMAT = "detection-report/1"


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class DetectionConfig:
    tau: float = 1e-5
    gamma: float = 0.5
    explainer: str = "subgraphx"
    omega: int = 4
    model_config: ModelConfig = field(default_factory=ModelConfig)
    seed: int = 0
    explainer_config: ExplainerConfig | None = None
    # Ablation switches; the full pipeline keeps all three on.
    use_explanation: bool = True
    use_expansion: bool = True
    use_trap_loss: bool = True

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")

    def resolved_explainer_config(self) -> ExplainerConfig:
        """The explainer knobs with this config's omega taking precedence."""
        base = self.explainer_config or ExplainerConfig()
        return replace(base, omega=self.omega)


@dataclass(frozen=True)
class SampleVerdict:
    graph_index: int
    explanation_nodes: tuple[int, ...]
    expanded_nodes: tuple[int, ...]
    subgraph_loss: float
    flagged: bool
    error: str | None = None


@dataclass(frozen=True)
class DetectionReport:
    per_sample: tuple[SampleVerdict, ...]
    config: DetectionConfig
    timings: dict[str, float]

    @property
    def flagged_set(self) -> tuple[int, ...]:
        return tuple(sorted(v.graph_index for v in self.per_sample if v.flagged))

    @property
    def flags(self) -> np.ndarray:
        return np.array([v.flagged for v in self.per_sample], dtype=bool)

    @property
    def losses(self) -> np.ndarray:
        return np.array([v.subgraph_loss for v in self.per_sample])


def expand_one_hop(g: Graph, node_set: Iterable[int]) -> Graph:
    """Grow an explanation by its immediate neighborhood.

    Keeps the explanation nodes plus all their neighbors, and every edge of
    the original graph with at least one endpoint inside the explanation
    (edges running between two neighborhood-only nodes are left out).
    """
    core = set(node_set)
    if not core:
        raise ValueError("cannot expand an empty node set")
    members = sorted(core | neighbor_set(g, core))
    local = {orig: i for i, orig in enumerate(members)}
    edges = tuple(
        (local[u], local[v]) for u, v in g.edges if u in core or v in core
    )
    return Graph(
        num_nodes=len(members),
        edges=edges,
        node_features=g.node_features[members],
        label=g.label,
    )


def expanded_node_set(g: Graph, node_set: Iterable[int]) -> tuple[int, ...]:
    core = set(node_set)
    return tuple(sorted(core | neighbor_set(g, core)))


def subgraph_loss(model: GinParams, g_expanded: Graph, y: int) -> float:
    """Cross-entropy of the (expanded) subgraph against the sample's label."""
    return sample_loss(model, g_expanded, y)


# Worker-side state for the parallel explanation map; set once per worker so
# model parameters are not re-pickled for every task.
_WORKER: dict = {}


def _init_explain_worker(params: GinParams, method: str, cfg: ExplainerConfig,
                         base_seed: int) -> None:
    _WORKER.update(params=params, method=method, cfg=cfg, base_seed=base_seed)


def _explain_task(task: tuple[int, Graph]) -> tuple[int, tuple[int, ...], float, str | None]:
    idx, g = task
    try:
        expl = explain_graph(_WORKER["method"], _WORKER["params"], g, g.label,
                             _WORKER["cfg"], seed=(_WORKER["base_seed"], idx))
        return idx, expl.node_set, expl.score, None
    except Exception as exc:  # recorded per sample; the run must not abort
        return idx, (), float("nan"), f"{type(exc).__name__}: {exc}"


def _explain_all(dataset: Dataset, params: GinParams, method: str,
                 cfg: ExplainerConfig, base_seed: int, jobs: int):
    tasks = list(enumerate(dataset.graphs))
    if jobs > 1:
        with ProcessPoolExecutor(
            max_workers=jobs,
            initializer=_init_explain_worker,
            initargs=(params, method, cfg, base_seed),
        ) as pool:
            return list(pool.map(_explain_task, tasks, chunksize=4))
    _init_explain_worker(params, method, cfg, base_seed)
    return [_explain_task(t) for t in tasks]


def run_xgbd(dataset: Dataset, cfg: DetectionConfig, jobs: int = 1,
             params: GinParams | None = None,
             explanations: dict[int, tuple[int, ...]] | None = None) -> DetectionReport:
    """Full detection run over a (possibly poisoned) training set.

    Trains the detector with the trap objective, explains every sample,
    expands each explanation one hop, scores the expanded subgraph's loss,
    and flags samples at or below ``cfg.tau``. Per-sample explanation
    failures are logged and left unflagged. ``params`` and ``explanations``
    allow staging the run from precomputed artifacts.
    """
    if len(dataset) == 0:
        raise ValueError("cannot run detection on an empty dataset")
    model_config = cfg.model_config
    if model_config.num_classes != dataset.num_classes:
        model_config = replace(model_config, num_classes=dataset.num_classes)
    timings: dict[str, float] = {}

    t0 = time.perf_counter()
    if params is None:
        if cfg.use_trap_loss:
            params = train_trap(dataset, model_config, cfg.gamma).params
        else:
            params = train_standard(dataset, model_config).params
    timings["train"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if not cfg.use_explanation:
        results = [(i, tuple(range(g.num_nodes)), float("nan"), None)
                   for i, g in enumerate(dataset.graphs)]
    elif explanations is not None:
        results = [(i, tuple(explanations[i]), float("nan"), None)
                   for i in range(len(dataset))]
    else:
        results = _explain_all(dataset, params, cfg.explainer,
                               cfg.resolved_explainer_config(), cfg.seed, jobs)
    timings["explain"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    verdicts = []
    for (idx, node_set, _score, error), g in zip(results, dataset.graphs):
        if error is not None:
            log.warning("explanation of sample %d failed (%s); treated as clean",
                        idx, error)
            verdicts.append(SampleVerdict(
                graph_index=idx, explanation_nodes=(), expanded_nodes=(),
                subgraph_loss=float("inf"), flagged=False, error=error,
            ))
            continue
        if cfg.use_expansion:
            expanded = expanded_node_set(g, node_set)
            sub = expand_one_hop(g, node_set)
        else:
            expanded = node_set
            sub = induced_subgraph(g, node_set)
        loss = subgraph_loss(params, sub, g.label)
        verdicts.append(SampleVerdict(
            graph_index=idx, explanation_nodes=node_set, expanded_nodes=expanded,
            subgraph_loss=loss, flagged=loss <= cfg.tau,
        ))
    timings["score"] = time.perf_counter() - t0

    return DetectionReport(per_sample=tuple(verdicts), config=cfg, timings=timings)


def re_threshold(report: DetectionReport, tau: float) -> DetectionReport:
    """Re-flag an existing report at a different threshold; nothing is re-run."""
    per_sample = tuple(
        replace(v, flagged=(v.error is None and v.subgraph_loss <= tau))
        for v in report.per_sample
    )
    return DetectionReport(
        per_sample=per_sample,
        config=replace(report.config, tau=tau),
        timings=dict(report.timings),
    )


# --- baselines ----------------------------------------------------------------


@dataclass(frozen=True)
class BaselineResult:
    """Flagged indices plus the per-sample losses that ranked them.

    The losses are what AUC-style comparisons against the main pipeline
    consume (lower loss reads as more backdoor-like).
    """

    flagged: tuple[int, ...]
    per_sample_loss: np.ndarray


def _flag_bottom_k(losses: np.ndarray, k_fraction: float) -> tuple[int, ...]:
    n = losses.size
    count = _round_half_up(k_fraction * n)
    order = sorted(range(n), key=lambda i: (losses[i], i))
    return tuple(sorted(order[:count]))


def baseline_loss_isolation(dataset: Dataset, model_config: ModelConfig,
                            k_fraction: float) -> BaselineResult:
    """Flag the k lowest-loss samples after a single standard epoch."""
    if not (0 < k_fraction < 1):
        raise ValueError("k_fraction must be in (0, 1)")
    config = replace(model_config, epochs=1, num_classes=dataset.num_classes)
    result = train_standard(dataset, config)
    losses = result.loss_trace[0]
    return BaselineResult(_flag_bottom_k(losses, k_fraction), losses)


def baseline_abl(dataset: Dataset, model_config: ModelConfig, gamma: float = 0.5,
                 k_fraction: float = 0.1) -> BaselineResult:
    """Train 20 epochs on LGA = (loss - gamma) * loss, flag the bottom k by
    final cross-entropy."""
    if not (0 < k_fraction < 1):
        raise ValueError("k_fraction must be in (0, 1)")
    config = replace(model_config, epochs=20, num_classes=dataset.num_classes)
    result = train_model(dataset, config, "lga", gamma)
    losses = result.loss_trace[-1]
    return BaselineResult(_flag_bottom_k(losses, k_fraction), losses)


# --- persistence ----------------------------------------------------------------


def detection_config_to_dict(cfg: DetectionConfig) -> dict:
    out = asdict(cfg)
    return out


def detection_config_from_dict(d: dict) -> DetectionConfig:
    d = dict(d)
    d["model_config"] = ModelConfig(**d["model_config"])
    if d.get("explainer_config") is not None:
        d["explainer_config"] = ExplainerConfig(**d["explainer_config"])
    return DetectionConfig(**d)


def report_to_dict(report: DetectionReport) -> dict:
    return {
        "format": REPORT_FORMAT,
        "config": detection_config_to_dict(report.config),
        "timings": report.timings,
        "flagged_set": list(report.flagged_set),
        "per_sample": [
            {
                "graph_index": v.graph_index,
                "explanation_nodes": list(v.explanation_nodes),
                "expanded_nodes": list(v.expanded_nodes),
                "subgraph_loss": v.subgraph_loss,
                "flagged": v.flagged,
                "error": v.error,
            }
            for v in report.per_sample
        ],
    }


def report_from_dict(d: dict) -> DetectionReport:
    if d.get("format") != REPORT_FORMAT:
        raise ValueError(f"not a {REPORT_FORMAT} document")
    per_sample = tuple(
        SampleVerdict(
            graph_index=row["graph_index"],
            explanation_nodes=tuple(row["explanation_nodes"]),
            expanded_nodes=tuple(row["expanded_nodes"]),
            subgraph_loss=row["subgraph_loss"],
            flagged=row["flagged"],
            error=row.get("error"),
        )
        for row in d["per_sample"]
    )
    return DetectionReport(
        per_sample=per_sample,
        config=detection_config_from_dict(d["config"]),
        timings=dict(d["timings"]),
    )


def save_report(path, report: DetectionReport) -> None:
    Path(path).write_text(json.dumps(report_to_dict(report), indent=2) + "\n")


def load_report(path) -> DetectionReport:
    return report_from_dict(json.loads(Path(path).read_text()))


def save_report_csv(path, report: DetectionReport,
                    poison_truth: Iterable[bool] | None = None) -> None:
    """Per-sample table; gains an is_poisoned column when ground truth is given."""
    truth = None if poison_truth is None else list(poison_truth)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["graph_index", "loss", "flagged"]
        if truth is not None:
            header.append("is_poisoned")
        writer.writerow(header)
        for v in report.per_sample:
            row = [v.graph_index, f"{v.subgraph_loss:.9g}", int(v.flagged)]
            if truth is not None:
                row.append(int(truth[v.graph_index]))
            writer.writerow(row)
