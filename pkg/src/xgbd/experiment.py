"""Seeded experiment harness: poison -> detect -> score, with sweeps and repeats.

Each run cell is fully determined by (dataset, attack config, detection
config, seed = base_seed + repeat). Per-run rows and mean/std aggregates are
emitted as CSV; re-thresholding reuses a run's per-sample losses instead of
re-running the expensive explanation stage.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .attack import ATTACK_METHODS, AttackConfig, PoisonedDataset, inject
from .detect import DetectionConfig, DetectionReport, re_threshold, run_xgbd
from .detect import baseline_abl, baseline_loss_isolation
from .explain import ExplainerConfig
from .gin import ModelConfig
from .graphs import Dataset, parse_tu_dataset
from .metrics import detection_accuracy, isolation_precision, roc_auc

SWEEPABLE = ("trigger_size", "trigger_density", "injection_ratio", "tau", "gamma")
_ATTACK_SWEEPS = ("trigger_size", "trigger_density", "injection_ratio")

RUN_COLUMNS = [
    "run_id", "dataset", "attack", "sweep_param", "sweep_value", "seed",
    "accuracy", "auc", "precision", "n_flagged", "n_poisoned", "wall_seconds",
    "status",
]

AGGREGATE_COLUMNS = [
    "sweep_param", "sweep_value", "n_runs", "n_failed",
    "accuracy_mean", "accuracy_std", "auc_mean", "auc_std",
    "precision_mean", "precision_std", "wall_seconds_mean",
]

CONFIG_VERSION = 1


@dataclass(frozen=True)
class ExperimentSpec:
    dataset_name: str
    data_root: str
    attack: AttackConfig = field(default_factory=AttackConfig)
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    sweep_param: str | None = None
    sweep_values: tuple = ()
    repeats: int = 5
    base_seed: int = 0
    include_baselines: bool = False
    baseline_k_fraction: float = 0.1

    def __post_init__(self):
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.sweep_param is not None and self.sweep_param not in SWEEPABLE:
            raise ValueError(
                f"sweep parameter must be one of {SWEEPABLE}, got {self.sweep_param!r}"
            )
        if self.sweep_param is not None and not self.sweep_values:
            raise ValueError("a sweep needs at least one value")


@dataclass
class RunOutcome:
    """One detection run scored against the poison manifest."""

    run_id: str
    sweep_value: float | None
    seed: int
    accuracy: float | None = None
    auc: float | None = None
    precision: float | None = None
    n_flagged: int = 0
    n_poisoned: int = 0
    wall_seconds: float = 0.0
    error: str | None = None
    report: DetectionReport | None = None
    poisoned: PoisonedDataset | None = None
    baselines: dict | None = None


def score_report(report: DetectionReport, truth: np.ndarray) -> dict:
    """Accuracy / AUC / precision of a detection report against ground truth.

    AUC scores samples by negated subgraph loss so higher means more
    backdoor-like (failed samples carry loss = +inf, i.e. least suspicious).
    """
    flags = report.flags
    losses = report.losses
    scores = np.where(np.isfinite(losses), -losses, -np.inf)
    return {
        "accuracy": detection_accuracy(flags, truth),
        "auc": roc_auc(scores, truth) if 0 < truth.sum() < truth.size else None,
        "precision": isolation_precision(flags, truth),
        "n_flagged": int(flags.sum()),
        "n_poisoned": int(truth.sum()),
    }


def _apply_sweep(attack: AttackConfig, detection: DetectionConfig,
                 param: str | None, value):
    if param is None:
        return attack, detection
    if param in _ATTACK_SWEEPS:
        return replace(attack, **{param: value}), detection
    return attack, replace(detection, **{param: value})


def run_single(dataset: Dataset, attack: AttackConfig, detection: DetectionConfig,
               jobs: int = 1) -> tuple[PoisonedDataset, DetectionReport, dict]:
    """Poison a clean dataset, run detection, and score against the manifest."""
    poisoned = inject(dataset, attack)
    report = run_xgbd(poisoned.dataset, detection, jobs=jobs)
    return poisoned, report, score_report(report, poisoned.poison_mask())


def run_experiment(spec: ExperimentSpec, out_dir=None, jobs: int = 1,
                   dataset: Dataset | None = None) -> list[RunOutcome]:
    """Execute every sweep-value x repeat cell; optionally write CSV reports.

    Sweeping tau only re-thresholds stored per-sample losses. Failures are
    captured per row and skipped by the aggregate (with a failure count).
    """
    if dataset is None:
        dataset = parse_tu_dataset(spec.data_root, spec.dataset_name)
    outcomes: list[RunOutcome] = []

    for repeat in range(spec.repeats):
        seed = spec.base_seed + repeat
        base_attack = replace(spec.attack, seed=seed)
        base_detection = replace(
            spec.detection, seed=seed,
            model_config=replace(spec.detection.model_config, seed=seed),
        )
        if spec.sweep_param == "tau":
            # One full run per repeat; each tau value re-flags its losses.
            outcome = _run_cell(dataset, spec, base_attack, base_detection,
                                None, seed, repeat, jobs)
            for value in spec.sweep_values:
                if outcome.error is not None:
                    outcomes.append(replace_outcome(outcome, value, spec, repeat))
                    continue
                sub = re_threshold(outcome.report, value)
                scores = score_report(sub, outcome.poisoned.poison_mask())
                outcomes.append(RunOutcome(
                    run_id=f"{spec.dataset_name}-{spec.attack.method}-tau{value}-r{repeat}",
                    sweep_value=value, seed=seed, wall_seconds=outcome.wall_seconds,
                    report=sub, poisoned=outcome.poisoned,
                    baselines=outcome.baselines, **scores,
                ))
        else:
            values = spec.sweep_values if spec.sweep_param else (None,)
            for value in values:
                attack, detection = _apply_sweep(base_attack, base_detection,
                                                 spec.sweep_param, value)
                outcomes.append(_run_cell(dataset, spec, attack, detection,
                                          value, seed, repeat, jobs))

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "runs.csv").write_text(runs_csv(spec, outcomes))
        (out / "aggregate.csv").write_text(aggregate_csv(spec, outcomes))
    return outcomes


def replace_outcome(outcome: RunOutcome, value, spec: ExperimentSpec,
                    repeat: int) -> RunOutcome:
    return RunOutcome(
        run_id=f"{spec.dataset_name}-{spec.attack.method}-tau{value}-r{repeat}",
        sweep_value=value, seed=outcome.seed, error=outcome.error,
    )


def _run_cell(dataset: Dataset, spec: ExperimentSpec, attack: AttackConfig,
              detection: DetectionConfig, value, seed: int, repeat: int,
              jobs: int) -> RunOutcome:
    tag = "" if value is None else f"-{spec.sweep_param}{value}"
    run_id = f"{spec.dataset_name}-{attack.method}{tag}-r{repeat}"
    started = time.perf_counter()
    try:
        poisoned, report, scores = run_single(dataset, attack, detection, jobs)
        baselines = None
        if spec.include_baselines:
            truth = poisoned.poison_mask()
            iso = baseline_loss_isolation(poisoned.dataset, detection.model_config,
                                          spec.baseline_k_fraction)
            abl = baseline_abl(poisoned.dataset, detection.model_config,
                               detection.gamma, spec.baseline_k_fraction)
            flags = np.zeros(len(poisoned.dataset), dtype=bool)
            flags[list(iso.flagged)] = True
            abl_flags = np.zeros(len(poisoned.dataset), dtype=bool)
            abl_flags[list(abl.flagged)] = True
            baselines = {
                "isolation_precision": isolation_precision(flags, truth),
                "isolation_auc": roc_auc(-iso.per_sample_loss, truth),
                "abl_precision": isolation_precision(abl_flags, truth),
                "abl_auc": roc_auc(-abl.per_sample_loss, truth),
            }
        return RunOutcome(
            run_id=run_id, sweep_value=value, seed=seed,
            wall_seconds=time.perf_counter() - started,
            report=report, poisoned=poisoned, baselines=baselines, **scores,
        )
    except Exception as exc:
        return RunOutcome(
            run_id=run_id, sweep_value=value, seed=seed,
            wall_seconds=time.perf_counter() - started,
            error=f"{type(exc).__name__}: {exc}",
        )


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.6f}"
    return str(x)


def runs_csv(spec: ExperimentSpec, outcomes: list[RunOutcome]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(RUN_COLUMNS)
    for o in outcomes:
        writer.writerow([
            o.run_id, spec.dataset_name, spec.attack.method,
            spec.sweep_param or "", _fmt(o.sweep_value), o.seed,
            _fmt(o.accuracy), _fmt(o.auc), _fmt(o.precision),
            o.n_flagged, o.n_poisoned, _fmt(o.wall_seconds),
            "ok" if o.error is None else f"failed: {o.error}",
        ])
    return buf.getvalue()


def aggregate_csv(spec: ExperimentSpec, outcomes: list[RunOutcome]) -> str:
    """Mean and sample std per sweep value, computed over successful runs."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(AGGREGATE_COLUMNS)
    values = sorted({o.sweep_value for o in outcomes}, key=lambda v: (v is None, v))
    for value in values:
        cell = [o for o in outcomes if o.sweep_value == value]
        good = [o for o in cell if o.error is None]

        def stats(attr):
            xs = [getattr(o, attr) for o in good if getattr(o, attr) is not None]
            if not xs:
                return None, None
            mean = float(np.mean(xs))
            std = float(np.std(xs, ddof=1)) if len(xs) > 1 else 0.0
            return mean, std

        acc_m, acc_s = stats("accuracy")
        auc_m, auc_s = stats("auc")
        pre_m, pre_s = stats("precision")
        wall_m, _ = stats("wall_seconds")
        writer.writerow([
            spec.sweep_param or "", _fmt(value), len(cell), len(cell) - len(good),
            _fmt(acc_m), _fmt(acc_s), _fmt(auc_m), _fmt(auc_s),
            _fmt(pre_m), _fmt(pre_s), _fmt(wall_m),
        ])
    return buf.getvalue()


# --- strict JSON configuration --------------------------------------------------


def _check_keys(section: dict, allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ValueError(f"unknown key(s) in {where}: {sorted(unknown)}")


def config_sections_from_dict(doc: dict) -> dict:
    """Validate a config document and build the typed config objects.

    Returns a dict with any of: model (ModelConfig), explainer
    (ExplainerConfig), attack (AttackConfig), detection (DetectionConfig).
    Unknown keys anywhere are rejected.
    """
    _check_keys(doc, {"version", "model", "explainer", "attack", "detection"},
                "config")
    version = doc.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ValueError(f"unsupported config version {version}")
    out: dict = {}
    if "model" in doc:
        _check_keys(doc["model"], {f for f in ModelConfig.__dataclass_fields__},
                    "config.model")
        out["model"] = ModelConfig(**doc["model"])
    if "explainer" in doc:
        _check_keys(doc["explainer"],
                    {f for f in ExplainerConfig.__dataclass_fields__},
                    "config.explainer")
        out["explainer"] = ExplainerConfig(**doc["explainer"])
    if "attack" in doc:
        _check_keys(doc["attack"], {f for f in AttackConfig.__dataclass_fields__},
                    "config.attack")
        out["attack"] = AttackConfig(**doc["attack"])
    if "detection" in doc:
        allowed = {f for f in DetectionConfig.__dataclass_fields__} - {
            "model_config", "explainer_config"}
        _check_keys(doc["detection"], allowed, "config.detection")
        out["detection"] = DetectionConfig(
            **doc["detection"],
            model_config=out.get("model", ModelConfig()),
            explainer_config=out.get("explainer"),
        )
    return out


def load_config_file(path) -> dict:
    return config_sections_from_dict(json.loads(Path(path).read_text()))


def experiment_spec_from_dict(doc: dict) -> ExperimentSpec:
    _check_keys(doc, {"version", "dataset", "model", "explainer", "attack",
                      "detection", "sweep", "repeats", "base_seed",
                      "include_baselines", "baseline_k_fraction"},
                "experiment spec")
    if "dataset" not in doc:
        raise ValueError("experiment spec needs a dataset section")
    _check_keys(doc["dataset"], {"name", "root"}, "spec.dataset")
    sections = config_sections_from_dict({
        k: v for k, v in doc.items()
        if k in ("version", "model", "explainer", "attack", "detection")
    })
    sweep_param = None
    sweep_values: tuple = ()
    if "sweep" in doc:
        _check_keys(doc["sweep"], {"param", "values"}, "spec.sweep")
        sweep_param = doc["sweep"]["param"]
        sweep_values = tuple(doc["sweep"]["values"])
    detection = sections.get("detection")
    if detection is None:
        detection = DetectionConfig(model_config=sections.get("model", ModelConfig()),
                                    explainer_config=sections.get("explainer"))
    return ExperimentSpec(
        dataset_name=doc["dataset"]["name"],
        data_root=doc["dataset"]["root"],
        attack=sections.get("attack", AttackConfig()),
        detection=detection,
        sweep_param=sweep_param,
        sweep_values=sweep_values,
        repeats=doc.get("repeats", 5),
        base_seed=doc.get("base_seed", 0),
        include_baselines=doc.get("include_baselines", False),
        baseline_k_fraction=doc.get("baseline_k_fraction", 0.1),
    )


def load_experiment_spec(path) -> ExperimentSpec:
    return experiment_spec_from_dict(json.loads(Path(path).read_text()))
