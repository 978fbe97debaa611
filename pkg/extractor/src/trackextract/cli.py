"""Extractor command line: sequence CSV in, track files + manifest out."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .encoders import DEFAULT_MODEL_IDS, EXPECTED_DIMS, HfEncoder, StubEncoder
from .extract import ExtractionJob, run_extraction
from .sequences import SequenceError

__all__ = ["main"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trackextract",
        description="Extract DNA/RNA/protein embedding tracks from coding sequences.")
    parser.add_argument("--input", required=True,
                        help="CSV with columns id, sequence, label[, split]")
    parser.add_argument("--out", required=True, help="output dataset directory")
    parser.add_argument("--task", default="regression",
                        choices=("regression", "classification"))
    parser.add_argument("--max-nt", type=int, default=999,
                        help="truncate mRNA beyond this many nucleotides (in frame)")
    for key in ("dna", "rna", "protein"):
        parser.add_argument(f"--model-{key}", default=DEFAULT_MODEL_IDS[key],
                            help=f"pretrained model id for the {key} track")
    parser.add_argument("--stub", action="store_true",
                        help="use deterministic stub encoders (no model downloads); "
                             "for pipeline dry runs and tests")
    return parser


def _build_encoders(args) -> dict:
    if args.stub:
        return {key: StubEncoder(key, EXPECTED_DIMS[key]) for key in DEFAULT_MODEL_IDS}
    model_ids = {key: getattr(args, f"model_{key}") for key in DEFAULT_MODEL_IDS}
    return {key: HfEncoder(key, model_id) for key, model_id in model_ids.items()}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    input_path = Path(args.input)
    if not input_path.is_file():
        print(f"error: input CSV not found: {input_path}", file=sys.stderr)
        return 2
    try:
        job = ExtractionJob.from_csv(input_path, task=args.task, max_nt=args.max_nt)
        encoders = _build_encoders(args)
        manifest_path, log = run_extraction(job, encoders, args.out)
    except (SequenceError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ImportError as exc:
        print(f"error: pretrained encoders need the [models] extra ({exc}); "
              f"use --stub for a dry run", file=sys.stderr)
        return 1
    for warning in log.dim_warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(manifest_path)
    print(f"kept {log.kept} samples, skipped {len(log.skipped)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
