"""Command-line entry point: synth, train, eval, attn-report.

Exit codes: 0 success, 2 usage error (bad flags, missing input files,
unknown config keys), 1 runtime failure. Every command is deterministic
under a fixed seed and fixed inputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .alignment import AlignmentError
from .autodiff import ShapeError
from .fusion import FusionError
from .metrics import MetricsReport
from .models import STRATEGIES, ModelConfig
from .trackio import (
    ManifestError,
    SyntheticSpec,
    TrackFormatError,
    load_manifest,
    make_synthetic,
)
from .training import (
    TrainConfig,
    derive_splits,
    evaluate_samples,
    load_checkpoint,
    load_records,
    model_from_checkpoint,
    save_checkpoint,
    train,
)

__all__ = ["main"]


class UsageError(Exception):
    pass


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _parse_overrides(pairs) -> dict:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise UsageError(f"--set expects key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        out[key.strip()] = _parse_value(raw)
    return out


def _require_file(path, what: str) -> Path:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"{what} not found: {path}")
    return path


def _load_config_file(path) -> tuple[dict, dict]:
    doc = json.loads(_require_file(path, "config file").read_text())
    unknown = set(doc) - {"train", "model"}
    if unknown:
        raise UsageError(f"unknown config sections: {sorted(unknown)} (expected 'train'/'model')")
    return dict(doc.get("train", {})), dict(doc.get("model", {}))


def _resolve_configs(args) -> tuple[TrainConfig, ModelConfig]:
    train_doc, model_doc = ({}, {})
    if args.config:
        train_doc, model_doc = _load_config_file(args.config)
    for key, value in _parse_overrides(args.set).items():
        if key.startswith("train."):
            train_doc[key[len("train."):]] = value
        elif key.startswith("model."):
            model_doc[key[len("model."):]] = value
        elif key in TrainConfig.__dataclass_fields__:
            train_doc[key] = value
        elif key in ModelConfig.__dataclass_fields__:
            model_doc[key] = value
        else:
            raise UsageError(f"unknown config key {key!r}")
    if args.strategy is not None:
        train_doc["strategy"] = args.strategy
    if args.lambda_entropy is not None:
        train_doc["lambda_entropy"] = args.lambda_entropy
    if args.seed is not None:
        train_doc["seed"] = args.seed
    try:
        model_cfg = ModelConfig.from_dict(model_doc) if model_doc else ModelConfig()
    except TypeError as exc:
        raise UsageError(f"bad model config: {exc}") from None
    try:
        train_cfg = TrainConfig.from_dict(train_doc)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad train config: {exc}") from None
    return train_cfg, model_cfg


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    doc = json.loads(_require_file(args.spec, "spec file").read_text())
    doc.update(_parse_overrides(args.set))
    spec = SyntheticSpec.from_dict(doc)
    manifest_path = make_synthetic(spec, args.out)
    print(manifest_path)
    return 0


def cmd_train(args) -> int:
    manifest, base = load_manifest(_require_file(args.manifest, "manifest"))
    train_cfg, model_cfg = _resolve_configs(args)
    if "task" not in _collect_explicit_train_keys(args):
        train_cfg.task = manifest.task
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    run = train(manifest, base, train_cfg, model_cfg)
    (out_dir / "epochs.csv").write_text(run.log_text())
    save_checkpoint(out_dir / "checkpoint.blfc", run)

    summary = {
        "best_epoch": run.best_epoch,
        "best_val_metric": run.best_metric,
        "stop_reason": run.stop_reason,
        "epochs_run": len(run.epochs),
        "train_config": run.config.to_dict(),
        "model_config": run.model_meta["config"],
    }
    test_records = derive_splits(manifest, train_cfg.seed)["test"]
    if test_records:
        model = model_from_checkpoint(load_checkpoint(out_dir / "checkpoint.blfc"))
        result = evaluate_samples(model, load_records(test_records, base, {}), train_cfg.task)
        metric_name = "spearman" if train_cfg.task == "regression" else "accuracy"
        report = MetricsReport(metric=metric_name, value=result.metric,
                               sample_count=len(test_records), split="test")
        (out_dir / "test_metrics.json").write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
        summary["test_metric"] = {metric_name: result.metric}
    (out_dir / "run.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"run written to {out_dir} (best val metric {run.best_metric!r}, "
          f"stop: {run.stop_reason})")
    return 0


def _collect_explicit_train_keys(args) -> set:
    keys = set()
    if args.config:
        keys |= set(_load_config_file(args.config)[0])
    for key in _parse_overrides(args.set):
        if key.startswith("train."):
            keys.add(key[len("train."):])
        elif key in TrainConfig.__dataclass_fields__:
            keys.add(key)
    return keys


def _load_eval_inputs(args):
    header = load_checkpoint(_require_file(args.checkpoint, "checkpoint"))
    manifest, base = load_manifest(_require_file(args.manifest, "manifest"))
    model = model_from_checkpoint(header)
    for key, want in model.dims.items():
        rec = manifest.samples[0]
        got = _track_dim(base / rec.tracks[key])
        if got != want:
            raise ManifestError(
                f"{key} track dim {got} in manifest does not match checkpoint dim {want}")
    seed = header["train_config"]["seed"]
    records = derive_splits(manifest, seed)[args.split]
    if not records:
        raise ManifestError(f"split {args.split!r} is empty")
    samples = load_records(records, base, {})
    return header, model, manifest, samples


def _track_dim(path) -> int:
    from .trackio import read_track
    return read_track(path).dim


def cmd_eval(args) -> int:
    header, model, manifest, samples = _load_eval_inputs(args)
    task = header["train_config"]["task"]
    result = evaluate_samples(model, samples, task)
    metric_name = "spearman" if task == "regression" else "accuracy"
    report = MetricsReport(metric=metric_name, value=result.metric,
                           sample_count=len(samples), split=args.split)
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    print(text)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"metrics_{args.split}.json").write_text(text + "\n")
    return 0


def cmd_attn_report(args) -> int:
    header, model, manifest, samples = _load_eval_inputs(args)
    strategy = header["model"]["strategy"]
    if strategy not in ("mil", "mil_token"):
        raise UsageError(
            f"attention report needs a gated-attention checkpoint (mil or mil_token), "
            f"got strategy {strategy!r}")
    task = header["train_config"]["task"]
    result = evaluate_samples(model, samples, task)

    lines = ["sample_id,alpha_dna,alpha_rna,alpha_prot,entropy"]
    from .fusion import attention_entropy
    for sample_id, alpha in result.sample_alphas:
        row_entropy = attention_entropy(alpha)
        a = [float(x) for x in alpha]
        lines.append(f"{sample_id},{a[0]!r},{a[1]!r},{a[2]!r},{row_entropy!r}")
    csv_text = "\n".join(lines) + "\n"

    alphas = np.array([a for _, a in result.sample_alphas])
    means = [float(x) for x in alphas.mean(axis=0)]
    stds = [float(x) for x in alphas.std(axis=0)]
    summary = "\n".join([
        f"split: {args.split}",
        f"samples: {len(samples)}",
        f"alpha_mean: dna={means[0]!r} rna={means[1]!r} prot={means[2]!r}",
        f"alpha_std: dna={stds[0]!r} rna={stds[1]!r} prot={stds[2]!r}",
        f"mean_entropy: {result.mean_entropy!r}",
    ]) + "\n"

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"alpha_{args.split}.csv").write_text(csv_text)
    (out_dir / f"alpha_{args.split}_summary.txt").write_text(summary)
    print(summary, end="")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="codonfusion",
        description="Codon-aligned fusion of DNA/RNA/protein embedding tracks.")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a planted-modality synthetic dataset")
    synth.add_argument("--spec", required=True, help="JSON synthetic-dataset spec")
    synth.add_argument("--out", required=True, help="output directory")
    synth.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a spec field")
    synth.set_defaults(func=cmd_synth)

    tr = sub.add_parser("train", help="train one fusion strategy on a manifest")
    tr.add_argument("--manifest", required=True)
    tr.add_argument("--strategy", choices=STRATEGIES)
    tr.add_argument("--lambda", dest="lambda_entropy", type=float,
                    help="attention entropy penalty weight")
    tr.add_argument("--seed", type=int)
    tr.add_argument("--config", help="JSON file with 'train' and 'model' sections")
    tr.add_argument("--set", action="append", metavar="KEY=VALUE",
                    help="override train.* or model.* config keys")
    tr.add_argument("--out", required=True, help="run output directory")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--manifest", required=True)
    ev.add_argument("--split", default="test", choices=("train", "val", "test"))
    ev.add_argument("--out", help="optional directory for the metrics file")
    ev.set_defaults(func=cmd_eval)

    ar = sub.add_parser("attn-report", help="per-sample modality attention weights")
    ar.add_argument("--checkpoint", required=True)
    ar.add_argument("--manifest", required=True)
    ar.add_argument("--split", default="test", choices=("train", "val", "test"))
    ar.add_argument("--out", required=True, help="directory for CSV and summary")
    ar.set_defaults(func=cmd_attn_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ManifestError, TrackFormatError, FusionError, AlignmentError,
            ShapeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
