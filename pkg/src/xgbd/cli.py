"""Command-line interface.

Subcommands: poison, train, explain, detect, eval, experiment, selftest.
Usage errors exit 2 (argparse), runtime failures exit 1, success exits 0.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .attack import (
    AttackConfig,
    attack_success_rate,
    inject,
    load_poison_manifest,
    save_poisoned_dataset,
)
from .detect import (
    DetectionConfig,
    load_report,
    run_xgbd,
    save_report,
    save_report_csv,
)
from .explain import ExplainerConfig, explain_graph, save_explanations
from .experiment import (
    load_config_file,
    load_experiment_spec,
    run_experiment,
    score_report,
)
from .gin import (
    ModelConfig,
    load_checkpoint,
    save_checkpoint,
    train_standard,
    train_trap,
)
from .graphs import parse_tu_dataset
from .selfcheck import run_selftest


def _say(args, message: str) -> None:
    if not args.quiet:
        print(message)


def _load_dataset(args):
    root = Path(args.dataset)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    name = getattr(args, "name", None) or root.name
    return parse_tu_dataset(root, name)


def _sections(args) -> dict:
    return load_config_file(args.config) if args.config else {}


def _attack_config(args, sections) -> AttackConfig:
    cfg = sections.get("attack", AttackConfig())
    overrides = {}
    for flag, name in [("method", "method"), ("trigger_size", "trigger_size"),
                       ("trigger_density", "trigger_density"),
                       ("injection_ratio", "injection_ratio"),
                       ("target_label", "target_label")]:
        value = getattr(args, flag, None)
        if value is not None:
            overrides[name] = value
    if args.seed is not None:
        overrides["seed"] = args.seed
    return replace(cfg, **overrides)


def _model_config(args, sections, num_classes: int) -> ModelConfig:
    cfg = sections.get("model", ModelConfig())
    overrides = {"num_classes": num_classes}
    if getattr(args, "epochs", None) is not None:
        overrides["epochs"] = args.epochs
    if args.seed is not None:
        overrides["seed"] = args.seed
    return replace(cfg, **overrides)


def _detection_config(args, sections, num_classes: int) -> DetectionConfig:
    cfg = sections.get("detection", DetectionConfig())
    overrides = {"model_config": _model_config(args, sections, num_classes)}
    if cfg.explainer_config is None and "explainer" in sections:
        overrides["explainer_config"] = sections["explainer"]
    for flag in ("tau", "gamma", "explainer", "omega"):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[flag] = value
    if args.seed is not None:
        overrides["seed"] = args.seed
    return replace(cfg, **overrides)


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_poison(args) -> int:
    dataset = _load_dataset(args)
    config = _attack_config(args, _sections(args))
    poisoned = inject(dataset, config)
    out = _out_dir(args)
    manifest = save_poisoned_dataset(poisoned, out)
    _say(args, f"poisoned {len(poisoned.records)} of {len(dataset)} graphs "
               f"({config.method}); manifest: {manifest}")
    if args.check_efficacy:
        result = train_standard(poisoned.dataset,
                                _model_config(args, _sections(args), dataset.num_classes))
        rate = attack_success_rate(result.params, poisoned, dataset,
                                   seed=config.seed)
        _say(args, f"attack success rate on stamped non-victims: {rate:.3f}")
    return 0


def cmd_train(args) -> int:
    dataset = _load_dataset(args)
    sections = _sections(args)
    config = _model_config(args, sections, dataset.num_classes)
    if args.loss == "trap":
        result = train_trap(dataset, config, args.gamma)
    else:
        result = train_standard(dataset, config)
    out = _out_dir(args)
    ckpt = out / args.checkpoint
    save_checkpoint(ckpt, result.params, config)
    if result.loss_trace.size:
        _say(args, f"final mean loss {result.loss_trace[-1].mean():.4f}; "
                   f"checkpoint: {ckpt}")
    else:
        _say(args, f"no epochs run; checkpoint: {ckpt}")
    if args.trace:
        np.savetxt(out / args.trace, result.loss_trace, delimiter=",", fmt="%.9g")
    return 0


def cmd_explain(args) -> int:
    dataset = _load_dataset(args)
    params, _ = load_checkpoint(args.model)
    sections = _sections(args)
    cfg = sections.get("explainer", ExplainerConfig())
    if args.omega is not None:
        cfg = replace(cfg, omega=args.omega)
    seed = args.seed or 0
    rows = []
    started = time.perf_counter()
    for idx, g in enumerate(dataset.graphs):
        expl = explain_graph(args.method, params, g, g.label, cfg, seed=(seed, idx))
        rows.append((idx, expl, seed))
    out = _out_dir(args)
    path = out / args.output
    save_explanations(path, rows)
    _say(args, f"explained {len(rows)} graphs with {args.method} in "
               f"{time.perf_counter() - started:.1f}s; wrote {path}")
    return 0


def cmd_detect(args) -> int:
    dataset = _load_dataset(args)
    sections = _sections(args)
    cfg = _detection_config(args, sections, dataset.num_classes)
    params = None
    if args.model:
        params, _ = load_checkpoint(args.model)
    explanations = None
    if args.explanations:
        from .explain import load_explanations
        explanations = {row["graph_index"]: tuple(row["node_set"])
                        for row in load_explanations(args.explanations)}
    report = run_xgbd(dataset, cfg, jobs=args.jobs, params=params,
                      explanations=explanations)
    out = _out_dir(args)
    truth = None
    if args.attack_manifest:
        manifest = load_poison_manifest(args.attack_manifest)
        truth = manifest.poison_mask()
    save_report(out / "report.json", report)
    save_report_csv(out / "report.csv", report, truth)
    _say(args, f"flagged {len(report.flagged_set)} of {len(dataset)} samples "
               f"(tau={cfg.tau:g}); report: {out / 'report.json'}")
    if truth is not None:
        scores = score_report(report, truth)
        _say(args, f"accuracy={scores['accuracy']:.4f} "
                   f"auc={_opt(scores['auc'])} precision={_opt(scores['precision'])}")
    return 0


def _opt(x) -> str:
    return "n/a" if x is None else f"{x:.4f}"


def cmd_eval(args) -> int:
    report = load_report(args.report)
    manifest = load_poison_manifest(args.manifest)
    truth = manifest.poison_mask()
    if truth.size != len(report.per_sample):
        raise ValueError(
            f"report covers {len(report.per_sample)} samples but the manifest "
            f"says {truth.size}"
        )
    scores = score_report(report, truth)
    line = (f"accuracy={scores['accuracy']:.4f} auc={_opt(scores['auc'])} "
            f"precision={_opt(scores['precision'])} "
            f"n_flagged={scores['n_flagged']} n_poisoned={scores['n_poisoned']}")
    print(line)
    if args.out:
        out = _out_dir(args)
        (out / "metrics.json").write_text(json.dumps(scores, indent=2) + "\n")
    return 0


def cmd_experiment(args) -> int:
    spec = load_experiment_spec(args.spec)
    if args.seed is not None:
        spec = replace(spec, base_seed=args.seed)
    out = _out_dir(args)
    outcomes = run_experiment(spec, out_dir=out, jobs=args.jobs)
    failed = sum(1 for o in outcomes if o.error is not None)
    _say(args, f"{len(outcomes)} runs ({failed} failed); reports in {out}")
    return 0


def cmd_selftest(args) -> int:
    ok = run_selftest(echo=(lambda *_: None) if args.quiet else print)
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xgbd",
        description="Explanation-guided detection of backdoored graph training samples",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="base RNG seed")
    common.add_argument("--config", default=None, help="JSON config file")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--jobs", type=int, default=1,
                        help="parallel workers for the explanation stage")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("poison", parents=[common],
                       help="inject a subgraph-trigger backdoor into a dataset")
    p.add_argument("--dataset", required=True, help="TU dataset directory")
    p.add_argument("--name", default=None, help="dataset name (default: directory name)")
    p.add_argument("--method", choices=["badgraph", "exa"], default=None)
    p.add_argument("--trigger-size", dest="trigger_size", type=float, default=None)
    p.add_argument("--trigger-density", dest="trigger_density", type=float, default=None)
    p.add_argument("--injection-ratio", dest="injection_ratio", type=float, default=None)
    p.add_argument("--target-label", dest="target_label", type=int, default=None)
    p.add_argument("--check-efficacy", action="store_true",
                   help="also train a standard model and report attack success")
    p.set_defaults(func=cmd_poison)

    p = sub.add_parser("train", parents=[common], help="train the GIN classifier")
    p.add_argument("--dataset", required=True)
    p.add_argument("--name", default=None)
    p.add_argument("--loss", choices=["standard", "trap"], default="standard")
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--checkpoint", default="model.npz", help="checkpoint filename")
    p.add_argument("--trace", default=None, help="also write the per-epoch loss trace CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("explain", parents=[common],
                       help="extract explanatory subgraphs for every sample")
    p.add_argument("--dataset", required=True)
    p.add_argument("--name", default=None)
    p.add_argument("--model", required=True, help="model checkpoint (.npz)")
    p.add_argument("--method", choices=["subgraphx", "gnnexplainer", "bruteforce"],
                   default="subgraphx")
    p.add_argument("--omega", type=int, default=None, help="max explanation size")
    p.add_argument("--output", default="explanations.jsonl")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("detect", parents=[common],
                       help="run the full detection pipeline")
    p.add_argument("--dataset", required=True)
    p.add_argument("--name", default=None)
    p.add_argument("--attack-manifest", dest="attack_manifest", default=None)
    p.add_argument("--model", default=None, help="skip training, use this checkpoint")
    p.add_argument("--explanations", default=None,
                   help="skip explaining, use this JSONL file")
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--explainer", choices=["subgraphx", "gnnexplainer", "bruteforce"],
                   default=None)
    p.add_argument("--omega", type=int, default=None)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", parents=[common],
                       help="score a detection report against a poison manifest")
    p.add_argument("--report", required=True)
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", parents=[common],
                       help="run a sweep/repeat experiment from a spec file")
    p.add_argument("--spec", required=True)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("selftest", parents=[common],
                       help="run built-in gradient and oracle checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
