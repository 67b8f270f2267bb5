"""Command-line entry point.

Subcommands cover the whole pipeline: `gen` emits a synthetic dataset,
`train` runs either training procedure and writes checkpoints plus a
metrics report, `eval` re-scores checkpoints on a dataset, `explain`
emits the attribution graph artifacts for one instance, and `report`
tabulates metrics across run directories.

Exit codes: 0 success, 2 usage error, 3 input validation error,
4 numerical failure. XNESYL_SEED serves as a fallback seed when --seed
is not given.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

from .alignment import WeightScheme, build_sag, sag_to_dot, sag_to_json
from .classifier import load_classifier, save_classifier
from .datagen import GeneratorConfig, generate_dataset, read_dataset, split_dataset, write_dataset
from .detector import aggregate, detect, load_detector, save_detector
from .errors import NumericalError, ValidationError
from .kg import load_kg
from .shapley import shap_matrix, shap_summary, write_summary_csv
from .training import (
    RunArtifacts,
    TrainConfig,
    config_echo,
    config_from_echo,
    evaluate,
    metrics_report,
    rebuild_background,
    train_shap_backprop,
    train_standard,
)

_SCHEME_FLAGS = {
    "linear-bbox": "linear_bbox",
    "exp-bbox": "exp_bbox",
    "linear-instance": "linear_instance",
    "exp-instance": "exp_instance",
}


def _render_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _resolve_seed(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get("XNESYL_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise ValidationError(f"XNESYL_SEED must be an integer, got {env!r}") from None


def _parse_regions(text: str) -> tuple[int, int]:
    try:
        lo, hi = text.split(":")
        return int(lo), int(hi)
    except ValueError:
        raise ValidationError(f"--regions expects LO:HI, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xnesyl")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic dataset")
    gen.add_argument("--kg", required=True)
    gen.add_argument("--out", required=True)
    gen.add_argument("--count", type=int, required=True)
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("--noise", type=float, default=0.0)
    gen.add_argument("--dim", type=int, default=8)
    gen.add_argument("--sep", type=float, default=6.0)
    gen.add_argument("--regions", default="2:6")

    train = sub.add_parser("train", help="train and evaluate a run")
    train.add_argument("--kg", required=True)
    train.add_argument("--data", required=True)
    train.add_argument("--out-dir", required=True)
    train.add_argument("--mode", choices=["standard", "shap-backprop"], default="standard")
    train.add_argument("--scheme", choices=sorted(_SCHEME_FLAGS), default=None)
    train.add_argument("--agg", choices=["frcnn", "retina"], default="frcnn")
    train.add_argument("--epochs-det", type=int, default=10)
    train.add_argument("--epochs-clf", type=int, default=60)
    train.add_argument("--lr-det", type=float, default=0.5)
    train.add_argument("--lr-clf", type=float, default=0.05)
    train.add_argument("--h", type=float, default=1.0)
    train.add_argument("--s", type=float, default=0.05)
    train.add_argument("--v-threshold", type=float, default=0.0)
    train.add_argument("--shap", choices=["exact", "kernel"], default="kernel")
    train.add_argument("--shap-samples", type=int, default=512)
    train.add_argument("--bg-size", type=int, default=100)
    train.add_argument("--seed", type=int, default=None)

    ev = sub.add_parser("eval", help="re-evaluate checkpoints on a dataset")
    ev.add_argument("--kg", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--checkpoints", required=True)
    ev.add_argument("--out", default=None)

    explain = sub.add_parser("explain", help="emit attribution graph artifacts for one instance")
    explain.add_argument("--kg", required=True)
    explain.add_argument("--data", required=True)
    explain.add_argument("--checkpoints", required=True)
    explain.add_argument("--instance-id", required=True)
    explain.add_argument("--out-dir", default=None)

    report = sub.add_parser("report", help="tabulate metrics across run directories")
    report.add_argument("--runs", required=True)
    report.add_argument("--out", default=None)
    return parser


def _cmd_gen(args) -> int:
    kg = load_kg(args.kg)
    cfg = GeneratorConfig(
        seed=_resolve_seed(args.seed),
        feature_dim=args.dim,
        regions_per_instance=_parse_regions(args.regions),
        noise_rate=args.noise,
        separation=args.sep,
    )
    instances = generate_dataset(kg, cfg, args.count)
    write_dataset(instances, args.out)
    print(f"wrote {len(instances)} instances to {args.out}")
    return 0


def _load_run_dir(checkpoints: str):
    cp = Path(checkpoints)
    det = load_detector(cp / "detector.json")
    clf = load_classifier(cp / "classifier.json")
    report_path = cp / "metrics.json"
    if not report_path.exists():
        raise ValidationError(f"missing metrics report: {report_path}")
    echo = json.loads(report_path.read_text(encoding="utf-8"))["config"]
    return det, clf, config_from_echo(echo)


def _cmd_train(args, parser: argparse.ArgumentParser) -> int:
    if args.mode == "standard" and args.scheme is not None:
        parser.error("--scheme requires --mode shap-backprop")
    if args.mode == "shap-backprop" and args.scheme is None:
        parser.error("--mode shap-backprop requires --scheme")
    kg = load_kg(args.kg)
    dataset = read_dataset(args.data, kg)
    splits = split_dataset(dataset)
    scheme = None
    if args.scheme is not None:
        scheme = WeightScheme(_SCHEME_FLAGS[args.scheme], args.h)
    cfg = TrainConfig(
        seed=_resolve_seed(args.seed),
        epochs_det=args.epochs_det,
        epochs_clf=args.epochs_clf,
        lr_det=args.lr_det,
        lr_clf=args.lr_clf,
        scheme=scheme,
        s=args.s,
        v_threshold=args.v_threshold,
        background_size=args.bg_size,
        shap_mode=args.shap,
        shap_samples=args.shap_samples,
        aggregation=args.agg,
    )
    runner = train_standard if cfg.scheme is None else train_shap_backprop
    artifacts = runner(kg, splits, cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_detector(artifacts.detector, out / "detector.json")
    save_classifier(artifacts.classifier, out / "classifier.json")
    (out / "metrics.json").write_text(
        _render_json(metrics_report(artifacts)), encoding="utf-8"
    )
    ged_report = dict(sorted(artifacts.ged_per_instance.items()))
    ged_report["mean"] = artifacts.metrics["mean_shap_ged"]
    (out / "ged_report.json").write_text(_render_json(ged_report), encoding="utf-8")
    sys.stdout.write(_render_json({"metrics": artifacts.metrics}))
    return 0


def _cmd_eval(args) -> int:
    kg = load_kg(args.kg)
    dataset = read_dataset(args.data, kg)
    train_split, _, test_split = split_dataset(dataset)
    det, clf, cfg = _load_run_dir(args.checkpoints)
    background = rebuild_background(kg, det, train_split, cfg)
    artifacts = RunArtifacts(det, clf, {}, [], cfg, background)
    metrics = evaluate(artifacts, test_split, kg)
    rendered = _render_json({"config": config_echo(cfg), "metrics": metrics})
    out_path = Path(args.out) if args.out else Path(args.checkpoints) / "eval_metrics.json"
    out_path.write_text(rendered, encoding="utf-8")
    sys.stdout.write(rendered)
    return 0


def _cmd_explain(args) -> int:
    kg = load_kg(args.kg)
    dataset = read_dataset(args.data, kg)
    matches = [inst for inst in dataset if inst.id == args.instance_id]
    if not matches:
        raise ValidationError(f"--instance-id {args.instance_id!r} not found in {args.data}")
    inst = matches[0]
    det, clf, cfg = _load_run_dir(args.checkpoints)
    train_split, _, _ = split_dataset(dataset)
    background = rebuild_background(kg, det, train_split, cfg)
    v = aggregate(detect(det, inst), cfg.aggregation).values
    values = shap_matrix(
        clf.predict_proba, v, background, cfg.shap_mode, cfg.shap_samples, seed=cfg.seed
    )
    sag = build_sag(kg, v, values, cfg.s)
    out_dir = Path(args.out_dir) if args.out_dir else Path(args.checkpoints)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"sag-{inst.id}"
    (out_dir / f"{stem}.dot").write_text(sag_to_dot(sag, kg), encoding="utf-8")
    (out_dir / f"{stem}.json").write_text(sag_to_json(sag), encoding="utf-8")
    summaries = [
        shap_summary(values[None, :, :], v[None, :], kg, label)
        for label in kg.object_classes
    ]
    write_summary_csv(summaries, out_dir / f"{stem}.csv")
    print(f"wrote {stem}.dot, {stem}.json, {stem}.csv to {out_dir}")
    return 0


def _cmd_report(args) -> int:
    runs_dir = Path(args.runs)
    if not runs_dir.is_dir():
        raise ValidationError(f"--runs directory not found: {runs_dir}")
    rows = []
    for run in sorted(p for p in runs_dir.iterdir() if p.is_dir()):
        report_path = run / "metrics.json"
        if not report_path.exists():
            continue
        doc = json.loads(report_path.read_text(encoding="utf-8"))
        cfg, metrics = doc["config"], doc["metrics"]
        rows.append(
            [
                run.name,
                cfg["mode"],
                cfg["scheme"] or "",
                repr(metrics["part_macro_accuracy"]),
                repr(metrics["accuracy"]),
                repr(metrics["mean_shap_ged"]),
            ]
        )
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(
        ["run", "mode", "scheme", "part_macro_accuracy", "accuracy", "mean_shap_ged"]
    )
    writer.writerows(rows)
    text = buffer.getvalue()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "gen":
        return _cmd_gen(args)
    if args.command == "train":
        return _cmd_train(args, parser)
    if args.command == "eval":
        return _cmd_eval(args)
    if args.command == "explain":
        return _cmd_explain(args)
    if args.command == "report":
        return _cmd_report(args)
    parser.error(f"unknown command {args.command!r}")
    return 2


def main(argv: list[str] | None = None) -> int:
    try:
        return run(argv)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
